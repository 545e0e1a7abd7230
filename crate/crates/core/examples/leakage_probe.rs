//! Pretrains with random and MRS masks, then scores both models on held-out
//! patches under MRS masks, where no near-duplicate of a hidden band is left.
//!
//! Usage: `cargo run --release --example leakage_probe [SEED]`

use mrs::autonet::init_params;
use mrs::cli::{self, ConfigMap, Experiment};
use mrs::leakage;
use mrs::masking::Strategy;
use mrs::trainer;

fn main() -> mrs::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(1);
    let exp = Experiment::from_map(ConfigMap::default())?;
    let (scene, labels) = cli::load_data(&exp)?;
    let data = cli::prepare(&exp, &scene, &labels, seed)?;
    let init = init_params(exp.train.dims(scene.bands(), exp.patch_size, data.classes), seed);

    let mut trained = Vec::new();
    for strategy in [Strategy::SpectralRandom, Strategy::Mrs] {
        let mut config = exp.train.clone();
        config.seed = seed;
        config.strategy = strategy;
        trained.push(trainer::pretrain(&config, init.clone(), &data.pretrain)?.0);
    }
    let probe = leakage::leakage_probe(&trained[0], &trained[1], &data.test, exp.train.ratio, seed)?;
    println!("held-out patches: {}", probe.per_patch.len());
    println!("random-pretrained masked MSE: {:.4}", probe.random_mse);
    println!("MRS-pretrained masked MSE:    {:.4}", probe.mrs_mse);
    println!("ratio: {:.3}", probe.ratio);
    Ok(())
}
