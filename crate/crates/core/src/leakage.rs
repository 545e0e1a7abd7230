//! Band redundancy and information-leakage measurements.
//!
//! A masked band leaks when a near-duplicate of it stays visible: the model
//! can rebuild it by copying. These tools measure how redundant the bands of a
//! patch are, how often each masking strategy hides redundant pairs together,
//! and how well trained models rebuild bands whose twins are hidden too.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::autonet::{self, ModelParams, Objective};
use crate::cube::Patch;
use crate::error::{Error, Result};
use crate::masking::{self, cosine, Strategy};
use crate::rng::{self, tag};

/// Default cosine threshold for calling two bands redundant.
pub const DEFAULT_THRESHOLD: f64 = 0.95;

/// Pairwise band cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
    /// Bands with zero norm; their row and column are all 0.
    degenerate: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn degenerate(&self) -> &[usize] {
        &self.degenerate
    }

    /// Element-wise mean of several matrices of the same size.
    pub fn mean(matrices: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Data("no similarity matrices to average".into()))?;
        if matrices.iter().any(|m| m.size != first.size) {
            return Err(Error::Shape("similarity matrices differ in size".into()));
        }
        let n = matrices.len() as f64;
        let mut values = vec![0.0; first.values.len()];
        for m in matrices {
            for (v, x) in values.iter_mut().zip(&m.values) {
                *v += x;
            }
        }
        values.iter_mut().for_each(|v| *v /= n);
        let degenerate = (0..first.size)
            .filter(|&i| matrices.iter().all(|m| m.degenerate.contains(&i)))
            .collect();
        Ok(SimilarityMatrix {
            size: first.size,
            values,
            degenerate,
        })
    }

    /// One row per band, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Binary 8-bit PGM heatmap, pixel value `round(255·(s + 1)/2)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(
            self.values
                .iter()
                .map(|&s| (255.0 * (s + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8),
        );
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_pgm())
    }
}

/// Cosine similarity of the flattened bands of one sample.
pub fn similarity_of_bands(bands: &[&[f64]]) -> SimilarityMatrix {
    let n = bands.len();
    let nonzero: Vec<bool> = bands.iter().map(|b| b.iter().any(|&v| v != 0.0)).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        if nonzero[i] {
            values[i * n + i] = 1.0;
        }
        for j in i + 1..n {
            let s = cosine(bands[i], bands[j]);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix {
        size: n,
        values,
        degenerate: (0..n).filter(|&i| !nonzero[i]).collect(),
    }
}

pub fn similarity_matrix(patch: &Patch) -> SimilarityMatrix {
    let bands: Vec<&[f64]> = (0..patch.bands()).map(|b| patch.band(b)).collect();
    similarity_of_bands(&bands)
}

/// Bands linked (directly or through a chain) by similarity ≥ threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGroup {
    pub members: Vec<usize>,
    /// Smallest pairwise similarity inside the group (1 for singletons).
    pub min_similarity: f64,
}

/// Single-link clustering of bands over edges with similarity ≥ `threshold`.
///
/// Groups are sorted by their smallest member; members are ascending.
pub fn redundancy_groups(matrix: &SimilarityMatrix, threshold: f64) -> Result<Vec<BandGroup>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "redundancy threshold {threshold} is outside (0, 1]"
        )));
    }
    let n = matrix.size();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if matrix.get(i, j) >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    Ok(groups
        .into_iter()
        .map(|members| {
            let mut min_similarity: f64 = 1.0;
            for (k, &a) in members.iter().enumerate() {
                for &b in &members[k + 1..] {
                    min_similarity = min_similarity.min(matrix.get(a, b));
                }
            }
            BandGroup {
                members,
                min_similarity,
            }
        })
        .collect())
}

/// Outcome of repeated mask draws for one band pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComaskStats {
    pub trials: usize,
    /// Trials that hid both bands.
    pub both_masked: usize,
    /// Trials whose base band (MRS only) was one of the pair.
    pub base_in_pair: usize,
    /// Of those, trials that hid both bands.
    pub both_given_base: usize,
}

impl ComaskStats {
    pub fn rate(&self) -> f64 {
        self.both_masked as f64 / self.trials as f64
    }

    /// Co-mask rate among trials whose base band is in the pair, if any were.
    pub fn conditional_rate(&self) -> Option<f64> {
        (self.base_in_pair > 0).then(|| self.both_given_base as f64 / self.base_in_pair as f64)
    }
}

/// Draws `trials` plans under `strategy` and counts how often both bands of
/// `pair` are hidden. Trial `k` uses its own stream derived from `seed`.
pub fn comask_stats(
    strategy: Strategy,
    patch: &Patch,
    ratio: f64,
    pair: (usize, usize),
    trials: usize,
    seed: u64,
) -> Result<ComaskStats> {
    if trials == 0 {
        return Err(Error::Config("comask needs at least one trial".into()));
    }
    let (i, j) = pair;
    if i >= patch.bands() || j >= patch.bands() {
        return Err(Error::Bounds(format!(
            "pair ({i}, {j}) outside {} bands",
            patch.bands()
        )));
    }
    let mut stats = ComaskStats {
        trials,
        both_masked: 0,
        base_in_pair: 0,
        both_given_base: 0,
    };
    for k in 0..trials {
        let mut r = rng::stream(seed, &[tag::TRIAL, k as u64]);
        let plan = masking::draw_plan(strategy, patch, ratio, &mut r)?;
        let both = plan.is_band_masked(i) && plan.is_band_masked(j);
        stats.both_masked += both as usize;
        if plan.base_band.is_some_and(|b| b == i || b == j) {
            stats.base_in_pair += 1;
            stats.both_given_base += both as usize;
        }
    }
    Ok(stats)
}

/// Empirical probability that both bands of `pair` are masked.
pub fn comask_rate(
    strategy: Strategy,
    patch: &Patch,
    ratio: f64,
    pair: (usize, usize),
    trials: usize,
    seed: u64,
) -> Result<f64> {
    comask_stats(strategy, patch, ratio, pair, trials, seed).map(|s| s.rate())
}

/// Redundant bands of a sample and how each strategy treats them.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyReport {
    pub threshold: f64,
    pub groups: Vec<BandGroup>,
    /// `(strategy, pair, stats)` for every pair inside a multi-band group.
    pub comask: Vec<(Strategy, (usize, usize), ComaskStats)>,
}

pub fn redundancy_report(
    patch: &Patch,
    threshold: f64,
    ratio: f64,
    trials: usize,
    seed: u64,
) -> Result<RedundancyReport> {
    let groups = redundancy_groups(&similarity_matrix(patch), threshold)?;
    let mut comask = Vec::new();
    for group in groups.iter().filter(|g| g.members.len() > 1) {
        for (k, &a) in group.members.iter().enumerate() {
            for &b in &group.members[k + 1..] {
                for strategy in [Strategy::SpectralRandom, Strategy::Mrs] {
                    let stats = comask_stats(strategy, patch, ratio, (a, b), trials, seed)?;
                    comask.push((strategy, (a, b), stats));
                }
            }
        }
    }
    Ok(RedundancyReport {
        threshold,
        groups,
        comask,
    })
}

/// Masked-band reconstruction error of two models under shared MRS masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Mean masked MSE of the model pretrained with random spectral masks.
    pub random_mse: f64,
    /// Mean masked MSE of the model pretrained with MRS masks.
    pub mrs_mse: f64,
    /// `random_mse / mrs_mse` (1 when both are equal, including 0/0).
    pub ratio: f64,
    pub per_patch: Vec<(f64, f64)>,
}

/// Evaluates both parameter sets on `eval_patches`, each patch hidden by one
/// MRS plan drawn from a stream fixed by `seed` and the patch index.
pub fn leakage_probe(
    params_random: &ModelParams,
    params_mrs: &ModelParams,
    eval_patches: &[Patch],
    ratio: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if params_random.dims() != params_mrs.dims() {
        return Err(Error::Comparison(format!(
            "models differ in shape: {:?} vs {:?}",
            params_random.dims(),
            params_mrs.dims()
        )));
    }
    if eval_patches.is_empty() {
        return Err(Error::Data("leakage probe needs at least one patch".into()));
    }
    let mut per_patch = Vec::with_capacity(eval_patches.len());
    for (k, patch) in eval_patches.iter().enumerate() {
        let mut r = rng::stream(seed, &[tag::PROBE, k as u64]);
        let plan = masking::mrs_mask(patch, ratio, &mut r)?;
        let objective = Objective::Reconstruction(&plan);
        per_patch.push((
            autonet::objective_value(params_random, patch, objective)?,
            autonet::objective_value(params_mrs, patch, objective)?,
        ));
    }
    let n = per_patch.len() as f64;
    let random_mse = per_patch.iter().map(|p| p.0).sum::<f64>() / n;
    let mrs_mse = per_patch.iter().map(|p| p.1).sum::<f64>() / n;
    let ratio = if random_mse == mrs_mse {
        1.0
    } else {
        random_mse / mrs_mse
    };
    Ok(ProbeReport {
        random_mse,
        mrs_mse,
        ratio,
        per_patch,
    })
}
