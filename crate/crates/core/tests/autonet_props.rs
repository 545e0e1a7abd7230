use mrs::autonet::{self, init_params, Block, Dims, ModelParams};
use mrs::cube::Patch;
use mrs::masking::{self, MaskPlan, Strategy};
use mrs::rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn dims() -> Dims {
    Dims {
        bands: 6,
        patch: 3,
        width: 5,
        hidden: 4,
        classes: 3,
    }
}

fn random_params(dims: Dims, seed: u64) -> ModelParams {
    let mut p = init_params(dims, seed);
    let mut r = rng::stream(seed, &[41]);
    for v in p.values_mut() {
        *v += r.gen_range(-0.7..0.7);
    }
    p
}

fn random_patch(dims: Dims, r: &mut impl Rng) -> Patch {
    let n = dims.bands * dims.cells();
    Patch::from_data(dims.bands, dims.patch, (0..n).map(|_| r.gen_range(-2.0..2.0)).collect())
        .unwrap()
}

/// Row-major `rows × cols` weights followed by biases, as plain loops.
fn slow_affine(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let mut out = Vec::new();
    for (row, b) in bias.iter().enumerate() {
        let mut acc = *b;
        for col in 0..cols {
            acc += weights[row * cols + col] * x[col];
        }
        out.push(acc);
    }
    out
}

/// Forward pass written directly from the model equations.
fn slow_reconstruction(params: &ModelParams, patch: &Patch, plan: &MaskPlan) -> Vec<f64> {
    let d = params.dims().width;
    let embed = |b: usize| params.block(Block::BandEmbed)[b * d..(b + 1) * d].to_vec();
    let input = |b: usize| -> Vec<f64> {
        let data = patch.band(b).to_vec();
        if plan.is_spectral() {
            return data;
        }
        let mut data = data;
        for &(i, j) in &plan.masked_cells {
            data[i * patch.size() + j] = 0.0;
        }
        data
    };
    let mut h = vec![None; patch.bands()];
    for (b, slot) in h.iter_mut().enumerate() {
        if plan.is_spectral() && plan.is_band_masked(b) {
            continue;
        }
        let z = slow_affine(params.block(Block::TokenWeight), params.block(Block::TokenBias), &input(b));
        *slot = Some(z.iter().zip(embed(b)).map(|(a, e)| (a + e).tanh()).collect::<Vec<f64>>());
    }
    let visible: Vec<&Vec<f64>> = h.iter().flatten().collect();
    let context: Vec<f64> = (0..d)
        .map(|k| visible.iter().map(|v| v[k]).sum::<f64>() / visible.len() as f64)
        .collect();
    let mut out = Vec::new();
    for (b, slot) in h.iter().enumerate() {
        let mut u = match slot {
            Some(v) => v.clone(),
            None => params
                .block(Block::MaskToken)
                .iter()
                .zip(embed(b))
                .map(|(m, e)| m + e)
                .collect(),
        };
        u.extend_from_slice(&context);
        let z: Vec<f64> = slow_affine(params.block(Block::MixWeight), params.block(Block::MixBias), &u)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let g: Vec<f64> = slow_affine(params.block(Block::HiddenWeight), params.block(Block::HiddenBias), &z)
            .into_iter()
            .map(f64::tanh)
            .collect();
        out.extend(slow_affine(params.block(Block::OutWeight), params.block(Block::OutBias), &g));
    }
    out
}

#[test]
fn decode_matches_slow_reference() {
    let mut r = rng::stream(2, &[]);
    for seed in 0..20 {
        let params = random_params(dims(), seed);
        let patch = random_patch(dims(), &mut r);
        for strategy in Strategy::ALL {
            let plan = masking::draw_plan(strategy, &patch, 0.4, &mut r).unwrap();
            let masked = masking::apply_mask(&patch, &plan).unwrap();
            let feats = autonet::encode(&params, &masked).unwrap();
            let fast = autonet::decode(&params, &feats, &plan).unwrap();
            let slow = slow_reconstruction(&params, &patch, &plan);
            for (a, b) in fast.data.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{strategy}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn visible_order_does_not_matter() {
    let mut r = rng::stream(3, &[]);
    for seed in 0..20 {
        let params = random_params(dims(), seed);
        let patch = random_patch(dims(), &mut r);
        let plan = masking::mrs_mask(&patch, 0.3, &mut r).unwrap();
        let masked = masking::apply_mask(&patch, &plan).unwrap();
        let mut order: Vec<usize> = (0..masked.rows()).collect();
        order.shuffle(&mut r);
        let shuffled = masked.reordered(&order).unwrap();
        let a = autonet::encode(&params, &masked).unwrap();
        let b = autonet::encode(&params, &shuffled).unwrap();
        for (x, y) in a.context.iter().zip(&b.context) {
            assert!((x - y).abs() < 1e-12);
        }
        let ra = autonet::decode(&params, &a, &plan).unwrap();
        let rb = autonet::decode(&params, &b, &plan).unwrap();
        for (x, y) in ra.data.iter().zip(&rb.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn context_is_mean_of_embeddings() {
    let mut r = rng::stream(4, &[]);
    let params = random_params(dims(), 9);
    let patch = random_patch(dims(), &mut r);
    let plan = masking::spectral_random_mask(6, 0.5, &mut r).unwrap();
    let feats = autonet::encode(&params, &masking::apply_mask(&patch, &plan).unwrap()).unwrap();
    for k in 0..5 {
        let mean = feats.embeddings.iter().map(|h| h[k]).sum::<f64>() / feats.embeddings.len() as f64;
        assert!((feats.context[k] - mean).abs() < 1e-12);
    }
}

#[test]
fn classify_is_a_distribution() {
    let mut r = rng::stream(5, &[]);
    for seed in 0..100 {
        let params = random_params(dims(), seed);
        let probs = autonet::classify(&params, &random_patch(dims(), &mut r)).unwrap();
        assert_eq!(probs.len(), 3);
        assert!(probs.iter().all(|&p| p >= 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn logit_shift_leaves_probabilities() {
    let mut r = rng::stream(6, &[]);
    let params = random_params(dims(), 1);
    let patch = random_patch(dims(), &mut r);
    let mut shifted = params.clone();
    shifted.block_mut(Block::ClassBias).iter_mut().for_each(|b| *b += 3.7);
    let a = autonet::classify(&params, &patch).unwrap();
    let b = autonet::classify(&shifted, &patch).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    let zero = ModelParams::zeros(dims());
    assert!(autonet::classify(&zero, &patch).unwrap().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn init_respects_glorot_bound_and_seed() {
    let d = dims();
    let a = init_params(d, 12);
    assert_eq!(a, init_params(d, 12));
    let bound = (6.0 / (d.cells() + d.width) as f64).sqrt();
    assert!(a.block(Block::TokenWeight).iter().all(|w| w.abs() <= bound));
    for block in [Block::BandEmbed, Block::TokenBias, Block::MaskToken, Block::OutBias] {
        assert!(a.block(block).iter().all(|&v| v == 0.0));
    }
    let tiny = Dims {
        bands: 1,
        patch: 1,
        width: 1,
        hidden: 1,
        classes: 1,
    };
    let p = ModelParams::zeros(tiny);
    assert_eq!(p.block(Block::TokenWeight).len() + p.block(Block::TokenBias).len(), 2);
}

#[test]
fn checkpoint_round_trip() {
    let params = random_params(dims(), 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.param");
    autonet::write_params(&params, &path).unwrap();
    assert_eq!(autonet::read_params(&path).unwrap(), params);
}

#[test]
fn hand_loss() {
    let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 2, vec![0], None).unwrap();
    let target = Patch::from_data(2, 1, vec![0.0, 0.0]).unwrap();
    let recon = autonet::Reconstruction {
        data: vec![3.0, 999.0],
        bands: 2,
        cells: 1,
    };
    assert_eq!(autonet::recon_loss(&recon, &target, &plan).unwrap(), 9.0);
}
