//! GRU encoder/decoder, skip-filtering connection and highway enhancement.
//!
//! Every layer is expressed as graph operations so the same code serves
//! inference and training. Rows are time steps; columns are features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform Glorot bound for a `rows`×`cols` weight matrix.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// `rows`×`cols` matrix drawn from U(-b, b) with b = √(6/(rows+cols)).
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    glorot_with(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn glorot_with(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let b = glorot_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.random_range(-b..=b)).collect();
    Tensor::matrix(rows, cols, data).expect("finite draws")
}

/// Weights of one GRU: update (z), reset (r) and candidate (h) gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

const GRU_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(input_dim, hidden_dim);
        let u = || Tensor::zeros(hidden_dim, hidden_dim);
        let b = || Tensor::zeros(1, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    fn glorot(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        p.w_z = glorot_with(input_dim, hidden_dim, rng);
        p.u_z = glorot_with(hidden_dim, hidden_dim, rng);
        p.w_r = glorot_with(input_dim, hidden_dim, rng);
        p.u_r = glorot_with(hidden_dim, hidden_dim, rng);
        p.w_h = glorot_with(input_dim, hidden_dim, rng);
        p.u_h = glorot_with(hidden_dim, hidden_dim, rng);
        p
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn register<'a>(&'a self, g: &mut Graph<'a>) -> GruVars {
        let t = self.tensors().map(|t| g.param(t));
        GruVars::from_slice(&t, self.input_dim, self.hidden_dim)
    }
}

/// Graph handles for a [`GruParams`].
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_h: Var,
    u_h: Var,
    b_h: Var,
}

impl GruVars {
    fn all(&self) -> [Var; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }

    fn from_slice(v: &[Var], input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        }
    }
}

fn affine(g: &mut Graph<'_>, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

/// One GRU step on row vectors:
/// z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
/// h̃ = tanh(xW_h + (r⊙h)U_h + b_h), h' = (1−z)⊙h + z⊙h̃.
pub fn gru_step(g: &mut Graph<'_>, p: &GruVars, x: Var, h_prev: Var) -> Result<Var> {
    if g.shape(x).1 != p.input_dim || g.shape(h_prev).1 != p.hidden_dim {
        return Err(Error::ShapeMismatch(format!(
            "gru_step: input {:?}, hidden {:?} for {}->{}",
            g.shape(x),
            g.shape(h_prev),
            p.input_dim,
            p.hidden_dim
        )));
    }
    let z = affine(g, x, p.w_z, h_prev, p.u_z, p.b_z)?;
    let z = g.sigmoid(z)?;
    let r = affine(g, x, p.w_r, h_prev, p.u_r, p.b_r)?;
    let r = g.sigmoid(r)?;
    let rh = g.hadamard(r, h_prev)?;
    let cand = affine(g, x, p.w_h, rh, p.u_h, p.b_h)?;
    let cand = g.tanh(cand)?;
    // (1−z)⊙h + z⊙h̃ written as h + z⊙(h̃ − h)
    let diff = g.sub(cand, h_prev)?;
    let step = g.hadamard(z, diff)?;
    g.add(h_prev, step)
}

fn run_gru(g: &mut Graph<'_>, p: &GruVars, inputs: impl Iterator<Item = Var>) -> Result<Vec<Var>> {
    let mut h = g.constant(vec![0.0; p.hidden_dim], 1, p.hidden_dim)?;
    let mut out = Vec::new();
    for x in inputs {
        h = gru_step(g, p, x, h)?;
        out.push(h);
    }
    Ok(out)
}

/// Bidirectional encoder with residual connections. `rows` are the T input
/// rows (each 1×N). Row t of the T×2N output is
/// `[h_t + y_t, h⃖_t + y⃖_t]`, where `y⃖_t` is row t of the reversed input.
pub fn bigru_encode(g: &mut Graph<'_>, fwd: &GruVars, bwd: &GruVars, rows: &[Var]) -> Result<Var> {
    let n = rows.first().map(|&r| g.shape(r).1).unwrap_or(0);
    if fwd.hidden_dim != n || bwd.hidden_dim != n {
        return Err(Error::ShapeMismatch(format!(
            "residual encoder needs hidden == input width ({n}), got {} and {}",
            fwd.hidden_dim, bwd.hidden_dim
        )));
    }
    let hf = run_gru(g, fwd, rows.iter().copied())?;
    let hb = run_gru(g, bwd, rows.iter().rev().copied())?;
    let t_len = rows.len();
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let a = g.add(hf[t], rows[t])?;
        let b = g.add(hb[t], rows[t_len - 1 - t])?;
        out.push(g.concat_cols(a, b)?);
    }
    g.stack_rows(&out)
}

/// Decoder GRU over the rows of `h_enc` (T×2N) producing T×N.
pub fn decode(g: &mut Graph<'_>, dec: &GruVars, h_enc: Var) -> Result<Var> {
    let (t_len, width) = g.shape(h_enc);
    if width != dec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects width {}, got {width}",
            dec.input_dim
        )));
    }
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        steps.push(g.slice_rows(h_enc, t, t + 1)?);
    }
    let hs = run_gru(g, dec, steps.into_iter())?;
    g.stack_rows(&hs)
}

/// Drops `context` time steps from both ends.
pub fn subsample(g: &mut Graph<'_>, h_dec: Var, context: usize) -> Result<Var> {
    let t_len = g.shape(h_dec).0;
    if t_len <= 2 * context {
        return Err(Error::ContextExceedsSegment { frames: t_len, context });
    }
    g.slice_rows(h_dec, context, t_len - context)
}

/// `input ⊙ |mask|`.
pub fn skip_filter(g: &mut Graph<'_>, input: Var, mask: Var) -> Result<Var> {
    if g.shape(input) != g.shape(mask) {
        return Err(Error::ShapeMismatch(format!(
            "skip_filter: {:?} vs {:?}",
            g.shape(input),
            g.shape(mask)
        )));
    }
    let m = g.abs_val(mask)?;
    g.hadamard(input, m)
}

/// Highway layer weights (gating path `h`, transform path `tr`).
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayParams {
    pub size: usize,
    pub w_h: Tensor,
    pub b_h: Tensor,
    pub w_tr: Tensor,
    pub b_tr: Tensor,
}

const HIGHWAY_NAMES: [&str; 4] = ["w_h", "b_h", "w_tr", "b_tr"];

impl HighwayParams {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            w_h: Tensor::zeros(size, size),
            b_h: Tensor::zeros(1, size),
            w_tr: Tensor::zeros(size, size),
            b_tr: Tensor::zeros(1, size),
        }
    }

    fn glorot(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(size);
        p.w_h = glorot_with(size, size, rng);
        p.w_tr = glorot_with(size, size, rng);
        p
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_h, &self.b_h, &self.w_tr, &self.b_tr]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w_h, &mut self.b_h, &mut self.w_tr, &mut self.b_tr]
    }

    pub fn register<'a>(&'a self, g: &mut Graph<'a>) -> HighwayVars {
        let [w_h, b_h, w_tr, b_tr] = self.tensors().map(|t| g.param(t));
        HighwayVars { w_h, b_h, w_tr, b_tr }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HighwayVars {
    w_h: Var,
    b_h: Var,
    w_tr: Var,
    b_tr: Var,
}

/// σ(YW^h + b^h) ⊙ relu(YW^tr + b^tr) + Y ⊙ (1 − σ(YW^tr + b^tr)),
/// with the same weights applied to every row.
pub fn highway(g: &mut Graph<'_>, hw: &HighwayVars, y: Var) -> Result<Var> {
    let gate = g.matmul(y, hw.w_h)?;
    let gate = g.add_row(gate, hw.b_h)?;
    let gate = g.sigmoid(gate)?;
    let tr = g.matmul(y, hw.w_tr)?;
    let tr = g.add_row(tr, hw.b_tr)?;
    let transform = g.relu(tr)?;
    let carry_gate = g.sigmoid(tr)?;
    let gated = g.hadamard(gate, transform)?;
    let carried = g.hadamard(y, carry_gate)?;
    let keep = g.sub(y, carried)?;
    g.add(gated, keep)
}

/// Model dimensions: bins N, segment frames T, context L.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelHyper {
    pub bins: usize,
    pub frames: usize,
    pub context: usize,
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::InvalidParameter("bins must be positive".into()));
        }
        if self.frames <= 2 * self.context {
            return Err(Error::ContextExceedsSegment {
                frames: self.frames,
                context: self.context,
            });
        }
        Ok(())
    }

    pub fn trimmed(&self) -> usize {
        self.frames - 2 * self.context
    }
}

/// Every trainable weight of the separator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub dec: GruParams,
    pub highway: HighwayParams,
    pub hyper: ModelHyper,
}

/// Handles for a registered [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub enc_fwd: GruVars,
    pub enc_bwd: GruVars,
    pub dec: GruVars,
    pub highway: HighwayVars,
    pub hyper: ModelHyper,
}

/// Graph handles for one segment's two estimates (both T'×N).
#[derive(Debug, Clone, Copy)]
pub struct SegmentOutput {
    /// Skip-filtered magnitude, Ỹ_in ⊙ |H̃_dec|.
    pub filtered: Var,
    /// Highway-enhanced magnitude.
    pub enhanced: Var,
    /// |H̃_dec|, the implied mask.
    pub mask: Var,
}

impl ModelParams {
    pub fn zeros(hyper: ModelHyper) -> Result<Self> {
        hyper.validate()?;
        let n = hyper.bins;
        Ok(Self {
            enc_fwd: GruParams::zeros(n, n),
            enc_bwd: GruParams::zeros(n, n),
            dec: GruParams::zeros(2 * n, n),
            highway: HighwayParams::zeros(n),
            hyper,
        })
    }

    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(hyper: ModelHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let n = hyper.bins;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            enc_fwd: GruParams::glorot(n, n, &mut rng),
            enc_bwd: GruParams::glorot(n, n, &mut rng),
            dec: GruParams::glorot(2 * n, n, &mut rng),
            highway: HighwayParams::glorot(n, &mut rng),
            hyper,
        })
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::with_capacity(31);
        v.extend(self.enc_fwd.tensors());
        v.extend(self.enc_bwd.tensors());
        v.extend(self.dec.tensors());
        v.extend(self.highway.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::with_capacity(31);
        v.extend(self.enc_fwd.tensors_mut());
        v.extend(self.enc_bwd.tensors_mut());
        v.extend(self.dec.tensors_mut());
        v.extend(self.highway.tensors_mut());
        v
    }

    /// Names matching [`ModelParams::tensors`].
    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::with_capacity(31);
        for block in ["enc_fwd", "enc_bwd", "dec"] {
            names.extend(GRU_NAMES.iter().map(|n| format!("{block}.{n}")));
        }
        names.extend(HIGHWAY_NAMES.iter().map(|n| format!("highway.{n}")));
        names
    }

    /// Rebuilds a model from tensors in canonical order.
    pub fn from_tensors(hyper: ModelHyper, tensors: Vec<Tensor>) -> Result<Self> {
        let mut m = Self::zeros(hyper)?;
        if tensors.len() != 31 {
            return Err(Error::ShapeMismatch(format!(
                "expected 31 tensors, got {}",
                tensors.len()
            )));
        }
        for (slot, t) in m.tensors_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(m)
    }

    pub fn register<'a>(&'a self, g: &mut Graph<'a>) -> ModelVars {
        ModelVars {
            enc_fwd: self.enc_fwd.register(g),
            enc_bwd: self.enc_bwd.register(g),
            dec: self.dec.register(g),
            highway: self.highway.register(g),
            hyper: self.hyper,
        }
    }

    /// Sum of every weight and bias scalar.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Runs one segment without recording gradients. Returns the skip-filtered
    /// and enhanced T'×N estimates.
    pub fn forward_segment(&self, segment: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let out = segment_forward(&mut g, &vars, segment)?;
        Ok((g.value(out.filtered).to_vec(), g.value(out.enhanced).to_vec()))
    }
}

impl ModelVars {
    /// Handles in [`ModelParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::with_capacity(31);
        v.extend(self.enc_fwd.all());
        v.extend(self.enc_bwd.all());
        v.extend(self.dec.all());
        v.extend([self.highway.w_h, self.highway.b_h, self.highway.w_tr, self.highway.b_tr]);
        v
    }

    /// Handles from vars registered in [`ModelParams::tensors`] order.
    pub fn from_slice(vars: &[Var], hyper: ModelHyper) -> Result<Self> {
        if vars.len() != 31 {
            return Err(Error::ShapeMismatch(format!("expected 31 vars, got {}", vars.len())));
        }
        let n = hyper.bins;
        Ok(Self {
            enc_fwd: GruVars::from_slice(&vars[0..9], n, n),
            enc_bwd: GruVars::from_slice(&vars[9..18], n, n),
            dec: GruVars::from_slice(&vars[18..27], 2 * n, n),
            highway: HighwayVars {
                w_h: vars[27],
                b_h: vars[28],
                w_tr: vars[29],
                b_tr: vars[30],
            },
            hyper,
        })
    }
}

/// Closed-form parameter count at bin count `n`.
pub fn count_params(n: usize) -> usize {
    2 * (3 * (n * n + n * n + n)) + 3 * ((2 * n) * n + n * n + n) + 2 * (n * n + n)
}

/// Full per-segment chain on a T×N input segment:
/// encode → decode → subsample → skip_filter → highway.
pub fn segment_forward(g: &mut Graph<'_>, m: &ModelVars, segment: &[f64]) -> Result<SegmentOutput> {
    let ModelHyper {
        bins: n,
        frames: t_len,
        context: l,
    } = m.hyper;
    if segment.len() != t_len * n {
        return Err(Error::ShapeMismatch(format!(
            "segment has {} values, model expects {t_len}x{n}",
            segment.len()
        )));
    }
    let mut rows = Vec::with_capacity(t_len);
    for row in segment.chunks_exact(n) {
        rows.push(g.constant(row.to_vec(), 1, n)?);
    }
    let h_enc = bigru_encode(g, &m.enc_fwd, &m.enc_bwd, &rows)?;
    let h_dec = decode(g, &m.dec, h_enc)?;
    let h_sub = subsample(g, h_dec, l)?;
    let trimmed = g.constant(segment[l * n..(t_len - l) * n].to_vec(), t_len - 2 * l, n)?;
    let mask = g.abs_val(h_sub)?;
    let filtered = skip_filter(g, trimmed, h_sub)?;
    let enhanced = highway(g, &m.highway, filtered)?;
    Ok(SegmentOutput {
        filtered,
        enhanced,
        mask,
    })
}
