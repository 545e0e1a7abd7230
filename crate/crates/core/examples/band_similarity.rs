//! Similarity matrix of one patch, redundancy groups, and a PGM heatmap.
//!
//! Usage: `cargo run --example band_similarity [THRESHOLD]`

use mrs::cli::{self, ConfigMap, Experiment};
use mrs::leakage;

fn main() -> mrs::Result<()> {
    let threshold: f64 = std::env::args()
        .nth(1)
        .map(|t| t.parse().expect("threshold must be a number"))
        .unwrap_or(leakage::DEFAULT_THRESHOLD);
    let exp = Experiment::from_map(ConfigMap::default())?;
    let (scene, labels) = cli::load_data(&exp)?;
    let data = cli::prepare(&exp, &scene, &labels, 1)?;
    let patch = &data.pretrain[0];

    let matrix = leakage::similarity_matrix(patch);
    println!("patch at {:?}, {} bands", patch.origin(), patch.bands());
    for i in 0..matrix.size() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:5.2}")).collect();
        println!("{i:2} {}", row.join(" "));
    }
    for group in leakage::redundancy_groups(&matrix, threshold)? {
        if group.members.len() > 1 {
            println!("group {:?} (min cos {:.4})", group.members, group.min_similarity);
        }
    }
    let path = std::env::temp_dir().join("mrs-similarity.pgm");
    matrix.write_pgm(&path)?;
    println!("heatmap written to {}", path.display());
    Ok(())
}
