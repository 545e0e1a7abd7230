//! Generates the default redundant scene, writes it to disk and reads it back.
//!
//! Usage: `cargo run --example synthetic_scene [OUT_DIR]`

use std::path::PathBuf;

use mrs::cli::{ConfigMap, Experiment};
use mrs::cube;
use mrs::leakage;

fn main() -> mrs::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mrs-scene"));
    std::fs::create_dir_all(&out)?;

    let exp = Experiment::from_map(ConfigMap::default())?;
    let spec = &exp.synthetic;
    let (scene, labels) = cube::gen_synthetic(spec)?;
    cube::write_cube(&scene, out.join("cube.spc"))?;
    cube::write_labels(&labels, out.join("labels.spl"))?;
    let back = cube::read_cube(out.join("cube.spc"))?;
    assert_eq!(back, scene);

    println!(
        "{} bands, {}x{} pixels, {} classes, groups {:?}",
        scene.bands(),
        scene.height(),
        scene.width(),
        labels.classes(),
        spec.groups
    );
    for (k, stats) in cube::compute_stats(&scene, None)?.iter().enumerate() {
        println!("band {k:2}: mean {:.4} sd {:.4}", stats.mean, stats.stddev);
    }

    // Whole-scene similarity of each duplicate pair.
    let normalized = cube::normalize(&scene, &cube::compute_stats(&scene, None)?)?;
    let bands: Vec<&[f64]> = (0..scene.bands()).map(|b| normalized.band(b)).collect();
    let matrix = leakage::similarity_of_bands(&bands);
    for group in &spec.groups {
        if let [a, b] = group[..] {
            println!("cos(band {a}, band {b}) = {:.4}", matrix.get(a, b));
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
