use mrs::autonet::{init_params, ModelParams};
use mrs::cli::{self, ConfigMap, Experiment};
use mrs::cube::{self, BlockLayout, Patch, SyntheticSpec};
use mrs::error::Error;
use mrs::leakage::{self, SimilarityMatrix};
use mrs::masking::{self, Strategy};
use mrs::rng;
use mrs::trainer;
use rand::Rng;

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Probability that a fixed pair is inside a uniform `m`-subset of `n`.
fn pair_oracle(n: u64, m: u64) -> f64 {
    binomial(n - 2, m - 2) / binomial(n, m)
}

fn random_patch(bands: usize, size: usize, seed: u64) -> Patch {
    let mut r = rng::stream(seed, &[]);
    let data = (0..bands * size * size).map(|_| r.gen_range(-1.0..1.0)).collect();
    Patch::from_data(bands, size, data).unwrap()
}

#[test]
fn matrix_rows_match_similarity_vectors() {
    for seed in 0..20 {
        let patch = random_patch(9, 4, seed);
        let m = leakage::similarity_matrix(&patch);
        for i in 0..9 {
            let v = masking::cosine_similarity(&patch, i).unwrap();
            for (a, b) in m.row(i).iter().zip(&v.values) {
                assert!((a - b).abs() < 1e-12);
            }
            for j in 0..9 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn noise_free_groups_are_recovered() {
    let spec = SyntheticSpec {
        bands: 4,
        height: 12,
        width: 12,
        classes: 1,
        groups: vec![vec![0, 1], vec![2, 3]],
        gain_range: (0.5, 2.0),
        noise_sigma: 0.0,
        layout: BlockLayout { rows: 1, cols: 1 },
        base_level: 0.0,
        class_spread: 0.0,
        texture: 1.0,
        wavelength: 5.0,
        seed: 3,
    };
    let (scene, _) = cube::gen_synthetic(&spec).unwrap();
    let bands: Vec<&[f64]> = (0..4).map(|b| scene.band(b)).collect();
    let groups = leakage::redundancy_groups(&leakage::similarity_of_bands(&bands), 0.99).unwrap();
    let members: Vec<Vec<usize>> = groups.into_iter().map(|g| g.members).collect();
    assert_eq!(members, vec![vec![0, 1], vec![2, 3]]);
}

#[test]
fn single_link_chains() {
    let a = [1.0, 0.0, 0.0];
    let b = [0.95, 0.312_249_9, 0.0];
    let c = [0.8, 0.6, 0.0];
    let m = leakage::similarity_of_bands(&[&a, &b, &c]);
    assert!(m.get(0, 2) < 0.9 && m.get(0, 1) >= 0.9 && m.get(1, 2) >= 0.9);
    let groups = leakage::redundancy_groups(&m, 0.9).unwrap();
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].members, vec![0, 1, 2]);
    assert!(leakage::redundancy_groups(&m, 0.0).is_err());
    let singles = leakage::redundancy_groups(&m, 1.0).unwrap();
    assert_eq!(singles.len(), 3);
}

#[test]
fn random_comask_matches_hypergeometric() {
    let patch = random_patch(10, 3, 1);
    for (ratio, m) in [(0.2, 2u64), (0.5, 5), (0.9, 9)] {
        let rate = leakage::comask_rate(Strategy::SpectralRandom, &patch, ratio, (0, 1), 10_000, 5).unwrap();
        let expected = pair_oracle(10, m);
        assert!((rate - expected).abs() <= 0.01, "m={m}: {rate} vs {expected}");
    }
    // m = C_T − 1
    assert!((pair_oracle(10, 9) - 0.8).abs() < 1e-12);
}

#[test]
fn mrs_co_masks_exact_duplicates() {
    let base = random_patch(6, 3, 2);
    let mut data = Vec::new();
    for b in 0..6 {
        data.extend_from_slice(base.band(b));
        data.extend_from_slice(base.band(b));
    }
    let patch = Patch::from_data(12, 3, data).unwrap();
    for ratio in [0.1, 0.25, 0.5] {
        for k in 0..6 {
            let stats = leakage::comask_stats(Strategy::Mrs, &patch, ratio, (2 * k, 2 * k + 1), 600, 8).unwrap();
            assert_eq!(stats.conditional_rate(), Some(1.0));
        }
    }
}

#[test]
fn report_lists_every_redundant_pair() {
    let base = random_patch(3, 3, 4);
    let mut data = Vec::new();
    for b in 0..3 {
        data.extend_from_slice(base.band(b));
        data.extend(base.band(b).iter().map(|v| 2.0 * v));
    }
    let patch = Patch::from_data(6, 3, data).unwrap();
    let report = leakage::redundancy_report(&patch, 0.95, 0.34, 200, 1).unwrap();
    assert_eq!(report.groups.len(), 3);
    assert_eq!(report.comask.len(), 6);
}

#[test]
fn probe_of_equal_models_is_one() {
    let exp = Experiment::from_map(ConfigMap::default()).unwrap();
    let dims = exp.train.dims(16, 5, 4);
    let patches: Vec<Patch> = (0..5).map(|s| random_patch(16, 5, s)).collect();
    let p = init_params(dims, 1);
    assert_eq!(leakage::leakage_probe(&p, &p, &patches, 0.25, 2).unwrap().ratio, 1.0);
    let zero = ModelParams::zeros(dims);
    assert_eq!(leakage::leakage_probe(&zero, &zero, &patches, 0.25, 2).unwrap().ratio, 1.0);
    let mut other = dims;
    other.width += 1;
    assert!(matches!(
        leakage::leakage_probe(&p, &init_params(other, 1), &patches, 0.25, 2),
        Err(Error::Comparison(_))
    ));
}

#[test]
fn random_pretrained_model_suffers_under_mrs_masks() {
    let exp = Experiment::from_map(ConfigMap::default()).unwrap();
    let (scene, labels) = cli::load_data(&exp).unwrap();
    let mut wins = 0;
    for seed in 1..=5 {
        let data = cli::prepare(&exp, &scene, &labels, seed).unwrap();
        let init = init_params(exp.train.dims(16, exp.patch_size, data.classes), seed);
        let mut trained = Vec::new();
        for strategy in [Strategy::SpectralRandom, Strategy::Mrs] {
            let mut config = exp.train.clone();
            config.seed = seed;
            config.strategy = strategy;
            trained.push(trainer::pretrain(&config, init.clone(), &data.pretrain).unwrap().0);
        }
        let probe = leakage::leakage_probe(&trained[0], &trained[1], &data.test[..200], 0.25, seed).unwrap();
        wins += (probe.random_mse > probe.mrs_mse) as usize;
    }
    assert!(wins >= 4, "random-pretrained model worse under MRS masks in {wins}/5 seeds");
}

#[test]
fn heatmap_encoding() {
    let m = leakage::similarity_of_bands(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
    let pgm = m.to_pgm();
    let header = b"P5\n3 3\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(&pgm[header.len()..], &[255, 128, 0, 128, 255, 128, 0, 128, 255]);
    let mean = SimilarityMatrix::mean(&[m.clone(), m.clone()]).unwrap();
    assert_eq!(mean, m);
}
