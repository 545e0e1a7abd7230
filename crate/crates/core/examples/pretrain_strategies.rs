//! Pretrains the same initialization with each masking strategy and prints
//! the loss curves.
//!
//! Usage: `cargo run --release --example pretrain_strategies [SEED] [KEY=VALUE ...]`

use mrs::autonet::init_params;
use mrs::cli::{self, ConfigMap, Experiment};
use mrs::masking::Strategy;
use mrs::trainer;

fn main() -> mrs::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let mut map = ConfigMap::default();
    for kv in args {
        let (k, v) = kv.split_once('=').expect("overrides are KEY=VALUE");
        map.set(k, v)?;
    }
    let exp = Experiment::from_map(map)?;
    let (scene, labels) = cli::load_data(&exp)?;
    let data = cli::prepare(&exp, &scene, &labels, seed)?;
    let init = init_params(exp.train.dims(scene.bands(), exp.patch_size, data.classes), seed);

    for strategy in Strategy::ALL {
        let mut config = exp.train.clone();
        config.seed = seed;
        config.strategy = strategy;
        let (_, report) = trainer::pretrain(&config, init.clone(), &data.pretrain)?;
        let curve: Vec<String> = report
            .pretrain_loss
            .iter()
            .step_by((report.pretrain_loss.len() / 10).max(1))
            .map(|l| format!("{l:.3}"))
            .collect();
        println!(
            "{:>15}: final {:.4} in {:.1}s  [{}]",
            strategy.as_str(),
            report.final_pretrain_loss().unwrap_or(f64::NAN),
            report.wall_seconds,
            curve.join(" ")
        );
    }
    Ok(())
}
