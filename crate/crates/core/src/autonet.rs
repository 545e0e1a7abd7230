//! Minimal per-band masked autoencoder with a classifier head.
//!
//! Every band of a patch is one token: its `P²` pixels are projected to width
//! `d`, the band's learned embedding is added, and `tanh` is applied. The
//! encoder output is the set of visible band features plus their mean (the
//! context).
//!
//! The decoder rebuilds every band slot. A visible slot starts from its own
//! feature; a masked slot starts from the shared mask token plus the band's
//! embedding. Each slot token is concatenated with the context, mixed through
//! `tanh(W_mix·[u; c] + b_mix)`, and decoded by a two-layer head
//! (`d → d_h → P²`, `tanh` between). The context is the only path by which a
//! hidden band can see the visible ones, so a model that can copy from
//! redundant visible bands will.
//!
//! The classifier reads the context of the fully visible patch.
//!
//! Parameters live in one flat vector in a fixed block order (see [`Block`]);
//! gradients use the same layout.

use rand::Rng;

use crate::cube::Patch;
use crate::error::{Error, Result};
use crate::masking::{MaskPlan, MaskedPatch};
use crate::rng;

/// Model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Band count `C_T`.
    pub bands: usize,
    /// Patch side `P`.
    pub patch: usize,
    /// Feature width `d`.
    pub width: usize,
    /// Decoder hidden width `d_h`.
    pub hidden: usize,
    /// Class count `K`.
    pub classes: usize,
}

impl Dims {
    pub fn cells(&self) -> usize {
        self.patch * self.patch
    }
}

/// Parameter blocks in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    BandEmbed,
    TokenWeight,
    TokenBias,
    MaskToken,
    MixWeight,
    MixBias,
    HiddenWeight,
    HiddenBias,
    OutWeight,
    OutBias,
    ClassWeight,
    ClassBias,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::BandEmbed,
        Block::TokenWeight,
        Block::TokenBias,
        Block::MaskToken,
        Block::MixWeight,
        Block::MixBias,
        Block::HiddenWeight,
        Block::HiddenBias,
        Block::OutWeight,
        Block::OutBias,
        Block::ClassWeight,
        Block::ClassBias,
    ];

    /// Blocks that make up the encoder.
    pub const ENCODER: [Block; 3] = [Block::BandEmbed, Block::TokenWeight, Block::TokenBias];

    pub fn name(self) -> &'static str {
        match self {
            Block::BandEmbed => "band_embed",
            Block::TokenWeight => "token_proj.weight",
            Block::TokenBias => "token_proj.bias",
            Block::MaskToken => "mask_token",
            Block::MixWeight => "context_mix.weight",
            Block::MixBias => "context_mix.bias",
            Block::HiddenWeight => "decoder_head.hidden.weight",
            Block::HiddenBias => "decoder_head.hidden.bias",
            Block::OutWeight => "decoder_head.out.weight",
            Block::OutBias => "decoder_head.out.bias",
            Block::ClassWeight => "classifier_head.weight",
            Block::ClassBias => "classifier_head.bias",
        }
    }

    /// `(rows, cols)` of the block; vectors have one column.
    fn shape(self, d: &Dims) -> (usize, usize) {
        match self {
            Block::BandEmbed => (d.bands, d.width),
            Block::TokenWeight => (d.width, d.cells()),
            Block::TokenBias | Block::MaskToken | Block::MixBias => (d.width, 1),
            Block::MixWeight => (d.width, 2 * d.width),
            Block::HiddenWeight => (d.hidden, d.width),
            Block::HiddenBias => (d.hidden, 1),
            Block::OutWeight => (d.cells(), d.hidden),
            Block::OutBias => (d.cells(), 1),
            Block::ClassWeight => (d.classes, d.width),
            Block::ClassBias => (d.classes, 1),
        }
    }

    fn is_weight(self) -> bool {
        matches!(
            self,
            Block::TokenWeight
                | Block::MixWeight
                | Block::HiddenWeight
                | Block::OutWeight
                | Block::ClassWeight
        )
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    dims: Dims,
    offsets: [usize; 13],
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        let mut offsets = [0; 13];
        for (i, b) in Block::ALL.iter().enumerate() {
            let (r, c) = b.shape(&dims);
            offsets[i + 1] = offsets[i] + r * c;
        }
        Self { dims, offsets }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.offsets[12]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let i = block as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Block containing flat index `index`.
    pub fn block_of(&self, index: usize) -> Option<Block> {
        Block::ALL.into_iter().find(|&b| self.range(b).contains(&index))
    }
}

/// All learnable values of the model in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let layout = Layout::new(dims);
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(dims);
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} parameter values for a model of {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite parameter at index {i} ({})",
                layout.block_of(i).map(Block::name).unwrap_or("?")
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.layout.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.layout.range(block);
        &mut self.values[r]
    }

    fn band_embed(&self, band: usize) -> &[f64] {
        let d = self.dims().width;
        &self.block(Block::BandEmbed)[band * d..(band + 1) * d]
    }

    fn check_patch(&self, bands: usize, size: usize) -> Result<()> {
        let dims = self.dims();
        if bands != dims.bands || size != dims.patch {
            return Err(Error::Shape(format!(
                "model built for {} bands at P={}, input has {bands} bands at P={size}",
                dims.bands, dims.patch
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights; biases, mask token and band embeddings start at 0.
pub fn init_params(dims: Dims, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(dims);
    let mut rng = rng::stream(seed, &[rng::tag::INIT]);
    for block in Block::ALL.into_iter().filter(|b| b.is_weight()) {
        let (fan_out, fan_in) = block.shape(&dims);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in params.block_mut(block) {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// `out = W·x + b` with row-major `W` of shape `(b.len(), x.len())`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .zip(w.chunks_exact(cols))
        .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// `dW += g ⊗ x`, `db += g`, returns `Wᵀ·g`.
fn affine_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let cols = x.len();
    let mut dx = vec![0.0; cols];
    for (o, &go) in g.iter().enumerate() {
        db[o] += go;
        let row = &w[o * cols..(o + 1) * cols];
        let drow = &mut dw[o * cols..(o + 1) * cols];
        for i in 0..cols {
            drow[i] += go * x[i];
            dx[i] += go * row[i];
        }
    }
    dx
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// Encoder output for the visible bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// One `d`-vector per visible row, in the masked patch's row order.
    pub embeddings: Vec<Vec<f64>>,
    /// Original band index of each embedding.
    pub bands: Vec<usize>,
    /// Mean of the embeddings.
    pub context: Vec<f64>,
}

impl Features {
    fn embedding_of(&self, band: usize) -> Option<&[f64]> {
        self.bands
            .iter()
            .position(|&b| b == band)
            .map(|r| self.embeddings[r].as_slice())
    }
}

fn encode_rows<'a>(
    params: &ModelParams,
    rows: impl Iterator<Item = (usize, &'a [f64])>,
) -> Features {
    let d = params.dims().width;
    let w = params.block(Block::TokenWeight);
    let b = params.block(Block::TokenBias);
    let mut embeddings = Vec::new();
    let mut bands = Vec::new();
    for (band, pixels) in rows {
        let mut h = affine(w, b, pixels);
        for (x, e) in h.iter_mut().zip(params.band_embed(band)) {
            *x += e;
        }
        tanh_in_place(&mut h);
        embeddings.push(h);
        bands.push(band);
    }
    let mut context = vec![0.0; d];
    for h in &embeddings {
        for (c, x) in context.iter_mut().zip(h) {
            *c += x;
        }
    }
    let count = embeddings.len().max(1) as f64;
    context.iter_mut().for_each(|c| *c /= count);
    Features {
        embeddings,
        bands,
        context,
    }
}

pub fn encode(params: &ModelParams, masked: &MaskedPatch) -> Result<Features> {
    params.check_patch(masked.plan().total_bands, masked.patch_size())?;
    if masked.rows() == 0 {
        return Err(Error::Shape("no visible bands to encode".into()));
    }
    let rows = (0..masked.rows()).map(|r| (masked.kept_band_index()[r], masked.row(r)));
    Ok(encode_rows(params, rows))
}

fn encode_full(params: &ModelParams, patch: &Patch) -> Result<Features> {
    params.check_patch(patch.bands(), patch.size())?;
    Ok(encode_rows(params, (0..patch.bands()).map(|b| (b, patch.band(b)))))
}

/// Predicted bands `T'`, always all `C_T` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub data: Vec<f64>,
    pub bands: usize,
    pub cells: usize,
}

impl Reconstruction {
    pub fn band(&self, band: usize) -> &[f64] {
        &self.data[band * self.cells..(band + 1) * self.cells]
    }
}

/// Intermediate values of one decoder slot.
struct SlotTrace {
    input: Vec<f64>,
    mixed: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

fn slot_token(params: &ModelParams, feats: &Features, plan: &MaskPlan, band: usize) -> Vec<f64> {
    let visible = !plan.is_spectral() || !plan.is_band_masked(band);
    match (visible, feats.embedding_of(band)) {
        (true, Some(h)) => h.to_vec(),
        _ => params
            .block(Block::MaskToken)
            .iter()
            .zip(params.band_embed(band))
            .map(|(m, e)| m + e)
            .collect(),
    }
}

fn decode_slot(params: &ModelParams, token: Vec<f64>, context: &[f64]) -> SlotTrace {
    let mut input = token;
    input.extend_from_slice(context);
    let mut mixed = affine(
        params.block(Block::MixWeight),
        params.block(Block::MixBias),
        &input,
    );
    tanh_in_place(&mut mixed);
    let mut hidden = affine(
        params.block(Block::HiddenWeight),
        params.block(Block::HiddenBias),
        &mixed,
    );
    tanh_in_place(&mut hidden);
    let output = affine(
        params.block(Block::OutWeight),
        params.block(Block::OutBias),
        &hidden,
    );
    SlotTrace {
        input,
        mixed,
        hidden,
        output,
    }
}

fn check_plan(params: &ModelParams, feats: &Features, plan: &MaskPlan) -> Result<()> {
    let dims = params.dims();
    if plan.total_bands != dims.bands {
        return Err(Error::Shape(format!(
            "plan covers {} bands, model has {}",
            plan.total_bands, dims.bands
        )));
    }
    if feats.context.len() != dims.width {
        return Err(Error::Shape("features do not match model width".into()));
    }
    Ok(())
}

pub fn decode(params: &ModelParams, feats: &Features, plan: &MaskPlan) -> Result<Reconstruction> {
    check_plan(params, feats, plan)?;
    let dims = params.dims();
    let mut data = Vec::with_capacity(dims.bands * dims.cells());
    for band in 0..dims.bands {
        let token = slot_token(params, feats, plan, band);
        data.extend(decode_slot(params, token, &feats.context).output);
    }
    Ok(Reconstruction {
        data,
        bands: dims.bands,
        cells: dims.cells(),
    })
}

/// Positions that count towards the reconstruction loss, as
/// `(band, [cell indices])`.
fn loss_positions(plan: &MaskPlan, cells: usize) -> Vec<(usize, Vec<usize>)> {
    if plan.is_spectral() {
        plan.masked_bands
            .iter()
            .map(|&b| (b, (0..cells).collect()))
            .collect()
    } else {
        let idx: Vec<usize> = plan
            .masked_cells
            .iter()
            .map(|&(i, j)| i * plan.patch_size + j)
            .collect();
        (0..plan.total_bands).map(|b| (b, idx.clone())).collect()
    }
}

/// Mean squared error over the masked positions only.
pub fn recon_loss(recon: &Reconstruction, target: &Patch, plan: &MaskPlan) -> Result<f64> {
    if recon.bands != target.bands() || recon.cells != target.cells() {
        return Err(Error::Shape(format!(
            "reconstruction is {}x{}, target is {}x{}",
            recon.bands,
            recon.cells,
            target.bands(),
            target.cells()
        )));
    }
    let positions = loss_positions(plan, recon.cells);
    let (mut sum, mut count) = (0.0, 0usize);
    for (b, cells) in &positions {
        let (pred, truth) = (recon.band(*b), target.band(*b));
        for &c in cells {
            sum += (pred[c] - truth[c]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Shape("plan masks no positions".into()));
    }
    Ok(sum / count as f64)
}

fn logits(params: &ModelParams, context: &[f64]) -> Vec<f64> {
    affine(
        params.block(Block::ClassWeight),
        params.block(Block::ClassBias),
        context,
    )
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for an unmasked patch; entry `k` is class `k + 1`.
pub fn classify(params: &ModelParams, patch: &Patch) -> Result<Vec<f64>> {
    let feats = encode_full(params, patch)?;
    Ok(softmax(&logits(params, &feats.context)))
}

/// Most probable class label (1-based).
pub fn predict(params: &ModelParams, patch: &Patch) -> Result<u16> {
    let probs = classify(params, patch)?;
    let best = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
    Ok(best.0 as u16 + 1)
}

/// Scalar objective differentiated by [`backward`].
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Masked-region MSE under the given plan.
    Reconstruction(&'a MaskPlan),
    /// Cross-entropy of the unmasked patch against a 1-based label.
    Classification(u16),
}

/// Gradient in the canonical parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
        }
    }
}

struct GradBlocks<'a> {
    layout: &'a Layout,
    values: &'a mut [f64],
}

impl GradBlocks<'_> {
    fn block(&mut self, block: Block) -> &mut [f64] {
        let r = self.layout.range(block);
        &mut self.values[r]
    }

    /// Two disjoint blocks at once (weight, bias).
    fn pair(&mut self, a: Block, b: Block) -> (&mut [f64], &mut [f64]) {
        let (ra, rb) = (self.layout.range(a), self.layout.range(b));
        debug_assert!(ra.end <= rb.start);
        let (lo, hi) = self.values.split_at_mut(rb.start);
        (&mut lo[ra], &mut hi[..rb.end - rb.start])
    }
}

/// Back-propagates `dcontext` and per-row `dembed` through the encoder.
fn encoder_backward(
    params: &ModelParams,
    feats: &Features,
    rows: &[&[f64]],
    mut dembed: Vec<Vec<f64>>,
    dcontext: &[f64],
    grad: &mut GradBlocks<'_>,
) {
    let d = params.dims().width;
    let share = 1.0 / feats.embeddings.len() as f64;
    for (r, h) in feats.embeddings.iter().enumerate() {
        let dh = &mut dembed[r];
        for k in 0..d {
            dh[k] += dcontext[k] * share;
        }
        let dpre: Vec<f64> = dh.iter().zip(h).map(|(g, y)| g * (1.0 - y * y)).collect();
        let (dw, db) = grad.pair(Block::TokenWeight, Block::TokenBias);
        affine_backward(params.block(Block::TokenWeight), rows[r], &dpre, dw, db);
        let band = feats.bands[r];
        let de = &mut grad.block(Block::BandEmbed)[band * d..(band + 1) * d];
        for (e, g) in de.iter_mut().zip(&dpre) {
            *e += g;
        }
    }
}

/// Objective value and its exact gradient with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    patch: &Patch,
    objective: Objective<'_>,
) -> Result<(f64, Gradient)> {
    let layout = params.layout();
    let dims = params.dims();
    let d = dims.width;
    let mut gradient = Gradient::zeros(layout);
    let mut grad = GradBlocks {
        layout,
        values: &mut gradient.values,
    };

    let loss = match objective {
        Objective::Classification(label) => {
            if label == 0 || label as usize > dims.classes {
                return Err(Error::Data(format!(
                    "label {label} outside 1..={}",
                    dims.classes
                )));
            }
            let feats = encode_full(params, patch)?;
            let probs = softmax(&logits(params, &feats.context));
            let target = label as usize - 1;
            let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
            let mut dlogit = probs;
            dlogit[target] -= 1.0;
            let (dw, db) = grad.pair(Block::ClassWeight, Block::ClassBias);
            let dcontext =
                affine_backward(params.block(Block::ClassWeight), &feats.context, &dlogit, dw, db);
            let rows: Vec<&[f64]> = (0..patch.bands()).map(|b| patch.band(b)).collect();
            let dembed = vec![vec![0.0; d]; rows.len()];
            encoder_backward(params, &feats, &rows, dembed, &dcontext, &mut grad);
            loss
        }
        Objective::Reconstruction(plan) => {
            let masked = crate::masking::apply_mask(patch, plan)?;
            let feats = encode(params, &masked)?;
            check_plan(params, &feats, plan)?;
            let positions = loss_positions(plan, dims.cells());
            let count: usize = positions.iter().map(|(_, c)| c.len()).sum();
            let scale = 2.0 / count as f64;

            let mut dembed = vec![vec![0.0; d]; feats.embeddings.len()];
            let mut dcontext = vec![0.0; d];
            let mut loss = 0.0;
            for (band, cells) in &positions {
                let token = slot_token(params, &feats, plan, *band);
                let trace = decode_slot(params, token, &feats.context);
                let truth = patch.band(*band);
                let mut dout = vec![0.0; dims.cells()];
                for &c in cells {
                    let err = trace.output[c] - truth[c];
                    loss += err * err;
                    dout[c] = scale * err;
                }
                let (dw, db) = grad.pair(Block::OutWeight, Block::OutBias);
                let dhidden =
                    affine_backward(params.block(Block::OutWeight), &trace.hidden, &dout, dw, db);
                let dpre: Vec<f64> = dhidden
                    .iter()
                    .zip(&trace.hidden)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                let (dw, db) = grad.pair(Block::HiddenWeight, Block::HiddenBias);
                let dmixed =
                    affine_backward(params.block(Block::HiddenWeight), &trace.mixed, &dpre, dw, db);
                let dpre: Vec<f64> = dmixed
                    .iter()
                    .zip(&trace.mixed)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                let (dw, db) = grad.pair(Block::MixWeight, Block::MixBias);
                let dinput =
                    affine_backward(params.block(Block::MixWeight), &trace.input, &dpre, dw, db);
                let (dtoken, dctx) = dinput.split_at(d);
                for (c, g) in dcontext.iter_mut().zip(dctx) {
                    *c += g;
                }
                let visible = !plan.is_spectral() || !plan.is_band_masked(*band);
                match feats.bands.iter().position(|b| b == band) {
                    Some(r) if visible => {
                        for (e, g) in dembed[r].iter_mut().zip(dtoken) {
                            *e += g;
                        }
                    }
                    _ => {
                        for (m, g) in grad.block(Block::MaskToken).iter_mut().zip(dtoken) {
                            *m += g;
                        }
                        let de = &mut grad.block(Block::BandEmbed)[band * d..(band + 1) * d];
                        for (e, g) in de.iter_mut().zip(dtoken) {
                            *e += g;
                        }
                    }
                }
            }
            let rows: Vec<&[f64]> = (0..masked.rows()).map(|r| masked.row(r)).collect();
            encoder_backward(params, &feats, &rows, dembed, &dcontext, &mut grad);
            loss / count as f64
        }
    };
    Ok((loss, gradient))
}

/// Objective value without the gradient.
pub fn objective_value(params: &ModelParams, patch: &Patch, objective: Objective<'_>) -> Result<f64> {
    match objective {
        Objective::Reconstruction(plan) => {
            let masked = crate::masking::apply_mask(patch, plan)?;
            let feats = encode(params, &masked)?;
            let recon = decode(params, &feats, plan)?;
            recon_loss(&recon, patch, plan)
        }
        Objective::Classification(label) => {
            let k = params.dims().classes;
            if label == 0 || label as usize > k {
                return Err(Error::Data(format!("label {label} outside 1..={k}")));
            }
            let probs = classify(params, patch)?;
            Ok(-probs[label as usize - 1].max(f64::MIN_POSITIVE).ln())
        }
    }
}

const PARAM_MAGIC: &str = "SPECPARAM1";

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamHeader {
    #[serde(rename = "C_T")]
    bands: usize,
    #[serde(rename = "P")]
    patch: usize,
    d: usize,
    d_h: usize,
    #[serde(rename = "K")]
    classes: usize,
}

/// `SPECPARAM1 {json}\n` followed by little-endian `f64` values.
pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let header = ParamHeader {
        bands: dims.bands,
        patch: dims.patch,
        d: dims.width,
        d_h: dims.hidden,
        classes: dims.classes,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 12 + params.values.len() * 8);
    out.extend_from_slice(PARAM_MAGIC.as_bytes());
    out.push(b' ');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("header", "missing header newline"))?;
    let line = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format("header", "header is not UTF-8"))?;
    let json = line
        .strip_prefix(PARAM_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::format("magic", format!("expected `{PARAM_MAGIC} ` prefix")))?;
    let h: ParamHeader =
        serde_json::from_str(json).map_err(|e| Error::format("header", e.to_string()))?;
    let dims = Dims {
        bands: h.bands,
        patch: h.patch,
        width: h.d,
        hidden: h.d_h,
        classes: h.classes,
    };
    let expected = Layout::new(dims).len();
    let payload = &bytes[newline + 1..];
    if payload.len() != expected * 8 {
        return Err(Error::Truncated {
            expected,
            found: payload.len() / 8,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ModelParams::from_values(dims, values)
}

pub fn write_params(params: &ModelParams, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn read_params(path: impl AsRef<std::path::Path>) -> Result<ModelParams> {
    decode_params(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{apply_mask, MaskPlan, Strategy};

    fn dims(bands: usize, patch: usize, width: usize, hidden: usize, classes: usize) -> Dims {
        Dims {
            bands,
            patch,
            width,
            hidden,
            classes,
        }
    }

    #[test]
    fn token_proj_size_at_unit_dims() {
        let p = init_params(dims(3, 1, 1, 2, 2), 0);
        assert_eq!(p.block(Block::TokenWeight).len() + p.block(Block::TokenBias).len(), 2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let d = dims(4, 3, 5, 6, 3);
        assert_eq!(init_params(d, 7), init_params(d, 7));
        assert_ne!(init_params(d, 7), init_params(d, 8));
        let p = init_params(d, 7);
        let bound = (6.0f64 / (9 + 5) as f64).sqrt();
        assert!(p.block(Block::TokenWeight).iter().all(|w| w.abs() <= bound));
        for b in [Block::BandEmbed, Block::TokenBias, Block::MaskToken, Block::OutBias] {
            assert!(p.block(b).iter().all(|&v| v == 0.0), "{}", b.name());
        }
    }

    #[test]
    fn layout_length_is_closed_form() {
        let d = dims(5, 3, 4, 7, 2);
        let n = 9;
        let expected = 5 * 4 + 4 * n + 4 + 4 + 4 * 8 + 4 + 7 * 4 + 7 + n * 7 + n + 2 * 4 + 2;
        assert_eq!(Layout::new(d).len(), expected);
        let layout = Layout::new(d);
        assert_eq!(layout.block_of(0), Some(Block::BandEmbed));
        assert_eq!(layout.block_of(expected - 1), Some(Block::ClassBias));
        assert_eq!(layout.block_of(expected), None);
    }

    #[test]
    fn one_visible_band_context_is_its_embedding() {
        let params = init_params(dims(2, 1, 3, 2, 2), 1);
        let patch = Patch::from_data(2, 1, vec![0.7, -0.2]).unwrap();
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 2, vec![1], None).unwrap();
        let feats = encode(&params, &apply_mask(&patch, &plan).unwrap()).unwrap();
        assert_eq!(feats.context, feats.embeddings[0]);
    }

    #[test]
    fn zero_band_zero_params_encode_to_zero() {
        let params = ModelParams::zeros(dims(2, 2, 3, 2, 2));
        let patch = Patch::from_data(2, 2, vec![0.0; 8]).unwrap();
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 2, vec![0], None).unwrap();
        let feats = encode(&params, &apply_mask(&patch, &plan).unwrap()).unwrap();
        assert_eq!(feats.embeddings[0], vec![0.0; 3]);
    }

    #[test]
    fn two_band_context_by_hand() {
        // d = 2, P = 1: h = tanh(w·x + e_band).
        let d = dims(3, 1, 2, 1, 2);
        let mut params = ModelParams::zeros(d);
        params.block_mut(Block::TokenWeight).copy_from_slice(&[0.5, -1.0]);
        params.block_mut(Block::BandEmbed).copy_from_slice(&[0.1, 0.2, 0.0, 0.0, -0.3, 0.4]);
        let patch = Patch::from_data(3, 1, vec![1.0, 9.0, 2.0]).unwrap();
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.3, 3, vec![1], None).unwrap();
        let feats = encode(&params, &apply_mask(&patch, &plan).unwrap()).unwrap();
        let h0 = [(0.5f64 + 0.1).tanh(), (-1.0f64 + 0.2).tanh()];
        let h2 = [(1.0f64 - 0.3).tanh(), (-2.0f64 + 0.4).tanh()];
        let expected = [(h0[0] + h2[0]) / 2.0, (h0[1] + h2[1]) / 2.0];
        for k in 0..2 {
            assert!((feats.context[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_params_reconstruct_zero() {
        let params = ModelParams::zeros(dims(4, 2, 3, 3, 2));
        let patch = Patch::from_data(4, 2, (0..16).map(|v| v as f64).collect()).unwrap();
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 4, vec![0, 3], None).unwrap();
        let feats = encode(&params, &apply_mask(&patch, &plan).unwrap()).unwrap();
        let recon = decode(&params, &feats, &plan).unwrap();
        assert_eq!(recon.data, vec![0.0; 16]);
    }

    #[test]
    fn masked_slots_share_path_at_equal_embeddings() {
        let params = init_params(dims(4, 2, 3, 3, 2), 3);
        let patch = Patch::from_data(4, 2, (0..16).map(|v| (v as f64).sin()).collect()).unwrap();
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 4, vec![1, 2], None).unwrap();
        let feats = encode(&params, &apply_mask(&patch, &plan).unwrap()).unwrap();
        let recon = decode(&params, &feats, &plan).unwrap();
        assert_eq!(recon.band(1), recon.band(2));

        let mut distinct = params.clone();
        distinct.block_mut(Block::BandEmbed)[3] = 0.5;
        let recon = decode(&distinct, &feats, &plan).unwrap();
        assert_ne!(recon.band(1), recon.band(2));
    }

    #[test]
    fn recon_loss_single_masked_position() {
        let patch = Patch::from_data(2, 1, vec![0.0, 0.0]).unwrap();
        let recon = Reconstruction {
            data: vec![3.0, 999.0],
            bands: 2,
            cells: 1,
        };
        let plan = MaskPlan::spectral(Strategy::SpectralRandom, 0.5, 2, vec![0], None).unwrap();
        assert_eq!(recon_loss(&recon, &patch, &plan).unwrap(), 9.0);
    }

    #[test]
    fn recon_loss_spatial_counts_cells_in_all_bands() {
        let patch = Patch::from_data(2, 2, vec![0.0; 8]).unwrap();
        let recon = Reconstruction {
            data: vec![1.0, 5.0, 5.0, 5.0, 3.0, 5.0, 5.0, 5.0],
            bands: 2,
            cells: 4,
        };
        let plan = MaskPlan {
            strategy: Strategy::SpatialRandom,
            ratio: 0.25,
            masked_bands: vec![],
            masked_cells: vec![(0, 0)],
            total_bands: 2,
            patch_size: 2,
            base_band: None,
        };
        assert_eq!(recon_loss(&recon, &patch, &plan).unwrap(), 5.0);
    }

    #[test]
    fn zero_params_classify_uniform() {
        let params = ModelParams::zeros(dims(3, 2, 4, 2, 5));
        let patch = Patch::from_data(3, 2, vec![1.0; 12]).unwrap();
        let probs = classify(&params, &patch).unwrap();
        assert!(probs.iter().all(|&p| p == 0.2));
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_fit_has_zero_output_bias_gradient() {
        // Zero params predict zero; an all-zero target is then a global minimum.
        let params = ModelParams::zeros(dims(4, 2, 3, 3, 2));
        let patch = Patch::from_data(4, 2, vec![0.0; 16]).unwrap();
        let plan = MaskPlan::spectral(Strategy::Mrs, 0.5, 4, vec![0, 1], Some(0)).unwrap();
        let (loss, grad) = backward(&params, &patch, Objective::Reconstruction(&plan)).unwrap();
        assert_eq!(loss, 0.0);
        let r = params.layout().range(Block::OutBias);
        assert!(grad.values[r].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn classification_rejects_bad_label() {
        let params = ModelParams::zeros(dims(2, 1, 2, 2, 2));
        let patch = Patch::from_data(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            backward(&params, &patch, Objective::Classification(0)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            backward(&params, &patch, Objective::Classification(3)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = init_params(dims(3, 2, 4, 5, 2), 9);
        let bytes = encode_params(&params);
        assert!(bytes.starts_with(b"SPECPARAM1 {\"C_T\":3,\"P\":2,\"d\":4,\"d_h\":5,\"K\":2}\n"));
        assert_eq!(decode_params(&bytes).unwrap(), params);
        assert!(matches!(
            decode_params(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let params = ModelParams::zeros(dims(3, 2, 2, 2, 2));
        let patch = Patch::from_data(2, 2, vec![0.0; 8]).unwrap();
        assert!(matches!(classify(&params, &patch), Err(Error::Shape(_))));
    }
}
