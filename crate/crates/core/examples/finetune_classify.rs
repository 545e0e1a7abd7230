//! Pretrains with MRS, fine-tunes on the few labeled pixels and reports
//! accuracy, next to a model trained from scratch.
//!
//! Usage: `cargo run --release --example finetune_classify [SEED]`

use mrs::autonet::init_params;
use mrs::cli::{self, ConfigMap, Experiment};
use mrs::masking::Strategy;

fn main() -> mrs::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(1);
    let exp = Experiment::from_map(ConfigMap::default())?;
    let (scene, labels) = cli::load_data(&exp)?;
    let data = cli::prepare(&exp, &scene, &labels, seed)?;
    println!(
        "{} pretraining patches, {} labeled, {} test",
        data.pretrain.len(),
        data.train.len(),
        data.test.len()
    );
    let init = init_params(exp.train.dims(scene.bands(), exp.patch_size, data.classes), seed);

    for arm in [None, Some(Strategy::Mrs)] {
        let row = cli::compare_arm(&exp.train, &init, &data, arm, seed)?;
        let per_class: Vec<String> = row
            .per_class
            .iter()
            .map(|a| a.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into()))
            .collect();
        println!("{:>5}: OA {:.4}  per class [{}]", row.arm_name(), row.oa, per_class.join(" "));
    }
    Ok(())
}
