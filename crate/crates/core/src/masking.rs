//! Mask plans for masked image modeling.
//!
//! Three strategies are supported:
//!
//! * [`Strategy::SpatialRandom`] hides a random subset of the `P × P` cells in
//!   every band.
//! * [`Strategy::SpectralRandom`] hides a uniformly random subset of whole
//!   bands.
//! * [`Strategy::Mrs`] draws one base band at random, ranks every band by its
//!   cosine similarity to the base, and hides the base together with the most
//!   similar bands. Near-duplicate bands are therefore hidden together and the
//!   model cannot rebuild a hidden band by copying a visible twin.
//!
//! For a ratio `R`, spectral plans always hide `⌈R·C_T⌉` bands, so the two
//! spectral strategies produce inputs of identical shape.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::cube::Patch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    SpatialRandom,
    SpectralRandom,
    Mrs,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::SpatialRandom,
        Strategy::SpectralRandom,
        Strategy::Mrs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SpatialRandom => "spatial_random",
            Strategy::SpectralRandom => "spectral_random",
            Strategy::Mrs => "mrs",
        }
    }

    pub fn is_spectral(self) -> bool {
        !matches!(self, Strategy::SpatialRandom)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_random" => Ok(Strategy::SpatialRandom),
            "spectral_random" => Ok(Strategy::SpectralRandom),
            "mrs" => Ok(Strategy::Mrs),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected spatial_random, spectral_random or mrs)"
            ))),
        }
    }
}

/// Number of units hidden at ratio `ratio` out of `total`: `⌈ratio·total⌉`.
///
/// The product is nudged down by 1e-9 before rounding up so that ratios such
/// as 0.3 × 10 (which evaluates to 3.0000000000000004) give 3, not 4.
pub fn masked_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Validates `ratio` and returns the masked count for `total` units.
pub fn checked_count(ratio: f64, total: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Ratio(format!("R = {ratio} is outside (0, 1)")));
    }
    let m = masked_count(ratio, total);
    if m == 0 || m >= total {
        return Err(Error::Ratio(format!(
            "R = {ratio} masks {m} of {total} units; need 1 <= m < {total}"
        )));
    }
    Ok(m)
}

/// Cosine similarity of every band to one base band.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
    pub base_band: usize,
}

/// Cosine of `a` and `b`, or 0 when either has zero norm.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // sqrt of the product (not product of sqrts) keeps cos(v, v) == 1 exactly.
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity between the flattened `base_band` and every band of `patch`.
///
/// The base entry is exactly 1 whenever the base band has nonzero norm; any
/// band with zero norm gets similarity 0.
pub fn cosine_similarity(patch: &Patch, base_band: usize) -> Result<SimilarityVector> {
    if base_band >= patch.bands() {
        return Err(Error::Bounds(format!(
            "base band {base_band} out of range for {} bands",
            patch.bands()
        )));
    }
    let base = patch.band(base_band);
    let base_nonzero = base.iter().any(|&v| v != 0.0);
    let values = (0..patch.bands())
        .map(|i| {
            if i == base_band && base_nonzero {
                1.0
            } else {
                cosine(base, patch.band(i))
            }
        })
        .collect();
    Ok(SimilarityVector { values, base_band })
}

/// Which bands (or cells) are hidden for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub strategy: Strategy,
    pub ratio: f64,
    /// Sorted ascending; empty for spatial plans.
    pub masked_bands: Vec<usize>,
    /// Sorted `(row, col)` cells of the `P × P` grid; empty for spectral plans.
    pub masked_cells: Vec<(usize, usize)>,
    pub total_bands: usize,
    /// Grid side for spatial plans, 0 for spectral ones.
    pub patch_size: usize,
    pub base_band: Option<usize>,
}

impl MaskPlan {
    /// Builds a spectral plan from an explicit band set, checking it against
    /// the cardinality rule for `ratio`.
    pub fn spectral(
        strategy: Strategy,
        ratio: f64,
        total_bands: usize,
        mut masked_bands: Vec<usize>,
        base_band: Option<usize>,
    ) -> Result<Self> {
        if !strategy.is_spectral() {
            return Err(Error::Shape("spectral plan needs a spectral strategy".into()));
        }
        let m = checked_count(ratio, total_bands)?;
        masked_bands.sort_unstable();
        masked_bands.dedup();
        if masked_bands.len() != m {
            return Err(Error::Shape(format!(
                "{} masked bands, ratio {ratio} over {total_bands} bands requires {m}",
                masked_bands.len()
            )));
        }
        if masked_bands.last().is_some_and(|&b| b >= total_bands) {
            return Err(Error::Bounds(format!(
                "masked band outside 0..{total_bands}"
            )));
        }
        if let Some(base) = base_band {
            if masked_bands.binary_search(&base).is_err() {
                return Err(Error::Shape(format!("base band {base} is not masked")));
            }
        }
        Ok(Self {
            strategy,
            ratio,
            masked_bands,
            masked_cells: Vec::new(),
            total_bands,
            patch_size: 0,
            base_band,
        })
    }

    pub fn is_spectral(&self) -> bool {
        self.strategy.is_spectral()
    }

    pub fn is_band_masked(&self, band: usize) -> bool {
        self.masked_bands.binary_search(&band).is_ok()
    }

    /// Unmasked band count `C_T^M`.
    pub fn visible_bands(&self) -> usize {
        self.total_bands - self.masked_bands.len()
    }

    /// Unmasked band counts `(C_H^M, C_X^M)` on either side of the modality
    /// split.
    pub fn visible_per_modality(&self, split: usize) -> (usize, usize) {
        let masked_h = self.masked_bands.iter().filter(|&&b| b < split).count();
        let masked_x = self.masked_bands.len() - masked_h;
        let split = split.min(self.total_bands);
        (split - masked_h, self.total_bands - split - masked_x)
    }

    /// One audit line: `strategy,R,base_band,masked_indices`.
    ///
    /// Masked indices are band numbers for spectral plans and row-major cell
    /// numbers (`row·P + col`) for spatial ones, joined by `;`.
    pub fn to_csv_line(&self) -> String {
        let base = self.base_band.map(|b| b.to_string()).unwrap_or_default();
        let indices: Vec<String> = if self.is_spectral() {
            self.masked_bands.iter().map(|b| b.to_string()).collect()
        } else {
            self.masked_cells
                .iter()
                .map(|&(i, j)| (i * self.patch_size + j).to_string())
                .collect()
        };
        format!("{},{},{},{}", self.strategy, self.ratio, base, indices.join(";"))
    }
}

/// Hides the `⌈R·C_T⌉` bands most similar to the base band.
///
/// Ties are broken by lower band index; the base band is always included.
pub fn mask_top(ratio: f64, similarity: &SimilarityVector) -> Result<MaskPlan> {
    let total = similarity.values.len();
    let m = checked_count(ratio, total)?;
    let base = similarity.base_band;
    if base >= total {
        return Err(Error::Bounds(format!("base band {base} out of range")));
    }
    let mut order: Vec<usize> = (0..total).filter(|&i| i != base).collect();
    order.sort_by(|&a, &b| {
        similarity.values[b]
            .total_cmp(&similarity.values[a])
            .then(a.cmp(&b))
    });
    let mut masked: Vec<usize> = std::iter::once(base)
        .chain(order.into_iter().take(m - 1))
        .collect();
    masked.sort_unstable();
    Ok(MaskPlan {
        strategy: Strategy::Mrs,
        ratio,
        masked_bands: masked,
        masked_cells: Vec::new(),
        total_bands: total,
        patch_size: 0,
        base_band: Some(base),
    })
}

/// Draws a base band uniformly and masks it with its most similar bands.
pub fn mrs_mask<R: Rng + ?Sized>(patch: &Patch, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    checked_count(ratio, patch.bands())?;
    let base = rng.gen_range(0..patch.bands());
    mask_top(ratio, &cosine_similarity(patch, base)?)
}

pub fn spectral_random_mask<R: Rng + ?Sized>(
    total_bands: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    let m = checked_count(ratio, total_bands)?;
    let mut masked = index::sample(rng, total_bands, m).into_vec();
    masked.sort_unstable();
    Ok(MaskPlan {
        strategy: Strategy::SpectralRandom,
        ratio,
        masked_bands: masked,
        masked_cells: Vec::new(),
        total_bands,
        patch_size: 0,
        base_band: None,
    })
}

/// Hides `⌈R·P²⌉` uniformly chosen cells of the `P × P` grid in every band.
///
/// `total_bands` is recorded on the plan so it can be checked against the
/// patch it is applied to.
pub fn spatial_random_mask<R: Rng + ?Sized>(
    patch_size: usize,
    total_bands: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    let cells = patch_size * patch_size;
    let m = checked_count(ratio, cells)?;
    let mut picked = index::sample(rng, cells, m).into_vec();
    picked.sort_unstable();
    Ok(MaskPlan {
        strategy: Strategy::SpatialRandom,
        ratio,
        masked_bands: Vec::new(),
        masked_cells: picked
            .into_iter()
            .map(|c| (c / patch_size, c % patch_size))
            .collect(),
        total_bands,
        patch_size,
        base_band: None,
    })
}

/// Draws a plan for `patch` under `strategy`.
pub fn draw_plan<R: Rng + ?Sized>(
    strategy: Strategy,
    patch: &Patch,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    match strategy {
        Strategy::SpatialRandom => spatial_random_mask(patch.size(), patch.bands(), ratio, rng),
        Strategy::SpectralRandom => spectral_random_mask(patch.bands(), ratio, rng),
        Strategy::Mrs => mrs_mask(patch, ratio, rng),
    }
}

/// Model input after masking.
///
/// Spectral plans drop the hidden bands (`visible` has one row per kept band,
/// ascending); spatial plans keep every band and zero the hidden cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPatch {
    visible: Vec<f64>,
    kept_band_index: Vec<usize>,
    patch_size: usize,
    plan: MaskPlan,
}

impl MaskedPatch {
    pub fn visible(&self) -> &[f64] {
        &self.visible
    }

    /// Row `r` of the visible data (one flattened band).
    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.cells();
        &self.visible[r * n..(r + 1) * n]
    }

    pub fn rows(&self) -> usize {
        self.kept_band_index.len()
    }

    /// Original band index of each visible row.
    pub fn kept_band_index(&self) -> &[usize] {
        &self.kept_band_index
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn cells(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn plan(&self) -> &MaskPlan {
        &self.plan
    }

    /// Reorders the visible rows; `order[k]` is the current row placed at
    /// position `k`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.rows()];
        for &o in order {
            if o >= self.rows() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Shape("row order is not a permutation".into()));
            }
        }
        if order.len() != self.rows() {
            return Err(Error::Shape("row order is not a permutation".into()));
        }
        Ok(Self {
            visible: order.iter().flat_map(|&o| self.row(o).to_vec()).collect(),
            kept_band_index: order.iter().map(|&o| self.kept_band_index[o]).collect(),
            patch_size: self.patch_size,
            plan: self.plan.clone(),
        })
    }

    /// Writes the visible rows back into a `C_T × P²` buffer at their original
    /// band positions; masked bands stay at `fill`.
    pub fn scatter(&self, fill: f64) -> Vec<f64> {
        let n = self.cells();
        let mut out = vec![fill; self.plan.total_bands * n];
        for (r, &b) in self.kept_band_index.iter().enumerate() {
            out[b * n..(b + 1) * n].copy_from_slice(self.row(r));
        }
        out
    }
}

/// Hides what `plan` selects from `patch`, leaving `patch` untouched.
pub fn apply_mask(patch: &Patch, plan: &MaskPlan) -> Result<MaskedPatch> {
    if plan.total_bands != patch.bands() {
        return Err(Error::Shape(format!(
            "plan for {} bands applied to a {}-band patch",
            plan.total_bands,
            patch.bands()
        )));
    }
    let n = patch.cells();
    if plan.is_spectral() {
        let kept: Vec<usize> = (0..patch.bands())
            .filter(|&b| !plan.is_band_masked(b))
            .collect();
        let visible = kept.iter().flat_map(|&b| patch.band(b).iter().copied()).collect();
        Ok(MaskedPatch {
            visible,
            kept_band_index: kept,
            patch_size: patch.size(),
            plan: plan.clone(),
        })
    } else {
        if plan.patch_size != patch.size() {
            return Err(Error::Shape(format!(
                "spatial plan for P={} applied to P={}",
                plan.patch_size,
                patch.size()
            )));
        }
        let mut visible = patch.data().to_vec();
        for b in 0..patch.bands() {
            for &(i, j) in &plan.masked_cells {
                visible[b * n + i * patch.size() + j] = 0.0;
            }
        }
        Ok(MaskedPatch {
            visible,
            kept_band_index: (0..patch.bands()).collect(),
            patch_size: patch.size(),
            plan: plan.clone(),
        })
    }
}
