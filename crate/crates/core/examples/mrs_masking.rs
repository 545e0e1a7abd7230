//! Draws MRS and random spectral masks on one patch and counts how often each
//! hides a duplicate pair together.
//!
//! Usage: `cargo run --example mrs_masking [RATIO]`

use mrs::cli::{self, ConfigMap, Experiment};
use mrs::leakage;
use mrs::masking::{self, Strategy};
use mrs::rng;

fn main() -> mrs::Result<()> {
    let ratio: f64 = std::env::args()
        .nth(1)
        .map(|r| r.parse().expect("ratio must be a number"))
        .unwrap_or(0.25);
    let exp = Experiment::from_map(ConfigMap::default())?;
    let (scene, labels) = cli::load_data(&exp)?;
    let patch = &cli::prepare(&exp, &scene, &labels, 1)?.pretrain[0];

    let mut r = rng::stream(7, &[]);
    for _ in 0..4 {
        let plan = masking::mrs_mask(patch, ratio, &mut r)?;
        let sim = masking::cosine_similarity(patch, plan.base_band.unwrap())?;
        let scores: Vec<String> = plan
            .masked_bands
            .iter()
            .map(|&b| format!("{b}:{:.3}", sim.values[b]))
            .collect();
        println!("mrs    {}  [{}]", plan.to_csv_line(), scores.join(" "));
    }
    for _ in 0..2 {
        println!("random {}", masking::spectral_random_mask(patch.bands(), ratio, &mut r)?.to_csv_line());
    }

    let trials = 5000;
    for strategy in [Strategy::SpectralRandom, Strategy::Mrs] {
        let stats = leakage::comask_stats(strategy, patch, ratio, (0, 1), trials, 3)?;
        println!(
            "{:>15}: pair (0, 1) hidden together in {:.3} of {trials} draws, {} when the base is in the pair",
            strategy.as_str(),
            stats.rate(),
            stats
                .conditional_rate()
                .map(|c| format!("{c:.3}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}
