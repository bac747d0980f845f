//! The unrolled architecture: each layer mixes neighbor weights through a
//! polynomial graph filter and subtracts a shared single-layer perceptron
//! update computed from a local mini-batch. A star variant routes
//! aggregation through a server node that owns no data and no perceptron.

use ndarray::{Array1, Array2, Axis};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{sample_layer_batches, FLDataset, LayerBatch};
use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::seed::{self, Stream};
use crate::task::StackedWeights;

/// Initialization scale of the perceptron tensors.
const PERCEPTRON_INIT_STD: f64 = 0.01;

/// Topology mode of the unrolled network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Decentralized,
    /// Node 0 is a data-free server: filter-only aggregation, one hop.
    Star,
}

/// One layer's learnable tensors: K+1 filter taps, a d×(d+b) perceptron
/// matrix applied to [own weights ∥ own batch], and a length-d bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub h: Array1<f64>,
    pub m: Array2<f64>,
    pub c: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(k: usize, d: usize, b: usize) -> LayerParams {
        LayerParams {
            h: Array1::zeros(k + 1),
            m: Array2::zeros((d, d + b)),
            c: Array1::zeros(d),
        }
    }
}

/// The full parameter stack of an L-layer unrolled network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct UnrolledParams {
    pub layers: Vec<LayerParams>,
    pub k: usize,
    pub mode: Mode,
}

impl UnrolledParams {
    pub fn new(layers: Vec<LayerParams>, k: usize, mode: Mode) -> Result<UnrolledParams> {
        if mode == Mode::Star && k != 1 {
            return Err(Error::config(format!("star mode requires K=1, got K={k}")));
        }
        if let Some(first) = layers.first() {
            let d = first.m.nrows();
            let cols = first.m.ncols();
            for (l, lp) in layers.iter().enumerate() {
                if lp.h.len() != k + 1 {
                    return Err(Error::config(format!(
                        "layer {l}: {} taps, expected {}",
                        lp.h.len(),
                        k + 1
                    )));
                }
                if lp.m.nrows() != d || lp.m.ncols() != cols || lp.c.len() != d {
                    return Err(Error::config(format!("layer {l}: inconsistent shapes")));
                }
                if cols <= d {
                    return Err(Error::config(format!(
                        "layer {l}: perceptron must take a batch wider than zero"
                    )));
                }
            }
        }
        Ok(UnrolledParams { layers, k, mode })
    }

    pub fn l(&self) -> usize {
        self.layers.len()
    }

    /// Classifier dimension d, if there is at least one layer.
    pub fn d(&self) -> Option<usize> {
        self.layers.first().map(|lp| lp.m.nrows())
    }

    /// Flattened batch width b, if there is at least one layer.
    pub fn b(&self) -> Option<usize> {
        self.layers.first().map(|lp| lp.m.ncols() - lp.m.nrows())
    }

    /// Shift applications (hence communication rounds) of one forward pass.
    pub fn comm_rounds(&self) -> usize {
        self.l() * self.k
    }
}

/// Exact-round-trip JSON layout of [`UnrolledParams`].
#[derive(Serialize, Deserialize, Clone)]
struct ParamsFile {
    schema_version: u32,
    l: usize,
    k: usize,
    d: usize,
    b: usize,
    mode: Mode,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize, Clone)]
struct LayerFile {
    h: Vec<f64>,
    m: Vec<f64>,
    c: Vec<f64>,
}

impl From<UnrolledParams> for ParamsFile {
    fn from(p: UnrolledParams) -> ParamsFile {
        let d = p.d().unwrap_or(0);
        let b = p.b().unwrap_or(0);
        ParamsFile {
            schema_version: 1,
            l: p.l(),
            k: p.k,
            d,
            b,
            mode: p.mode,
            layers: p
                .layers
                .into_iter()
                .map(|lp| LayerFile {
                    h: lp.h.to_vec(),
                    m: lp.m.iter().cloned().collect(),
                    c: lp.c.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ParamsFile> for UnrolledParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<UnrolledParams> {
        if f.schema_version != 1 {
            return Err(Error::config(format!(
                "unsupported checkpoint schema {}",
                f.schema_version
            )));
        }
        if f.layers.len() != f.l {
            return Err(Error::config("layer count does not match header"));
        }
        let mut layers = Vec::with_capacity(f.l);
        for (l, lf) in f.layers.into_iter().enumerate() {
            if lf.h.len() != f.k + 1 || lf.m.len() != f.d * (f.d + f.b) || lf.c.len() != f.d {
                return Err(Error::config(format!("layer {l}: tensor sizes disagree with dims")));
            }
            layers.push(LayerParams {
                h: Array1::from(lf.h),
                m: Array2::from_shape_vec((f.d, f.d + f.b), lf.m)
                    .map_err(|e| Error::config(format!("layer {l}: {e}")))?,
                c: Array1::from(lf.c),
            });
        }
        UnrolledParams::new(layers, f.k, f.mode)
    }
}

/// Everything reverse mode needs from one layer's forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// S^k applied to the layer input, k = 0..=K.
    pub shift_powers: Vec<Array2<f64>>,
    /// Perceptron pre-activation Z; the server row stays zero in star mode.
    pub preact: Array2<f64>,
}

/// The stacked-weight sequence W_0..W_L of one forward pass.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub w_seq: Vec<StackedWeights>,
    pub batches: Vec<LayerBatch>,
    pub cache: Option<Vec<LayerCache>>,
    pub mode: Mode,
}

impl Trajectory {
    pub fn final_weights(&self) -> &StackedWeights {
        self.w_seq.last().expect("trajectory always holds W_0")
    }

    pub fn l(&self) -> usize {
        self.w_seq.len() - 1
    }
}

/// Initial stacked weights with i.i.d. N(mu0, sigma0²) entries.
pub fn init_w0(n: usize, d: usize, mu0: f64, sigma0: f64, seed: u64) -> Result<StackedWeights> {
    if sigma0 < 0.0 {
        return Err(Error::parameter(format!("sigma0 must be nonnegative, got {sigma0}")));
    }
    let mut rng = seed::rng(seed, Stream::WeightInit, 0);
    let mut w = Array2::<f64>::zeros((n, d));
    for v in w.iter_mut() {
        let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
        *v = mu0 + sigma0 * z;
    }
    Ok(w)
}

/// Near-consensus initialization: uniform taps 1/(K+1), perceptron
/// tensors i.i.d. N(0, 0.01²).
pub fn init_params(
    l_layers: usize,
    k: usize,
    d: usize,
    b: usize,
    mode: Mode,
    seed: u64,
) -> Result<UnrolledParams> {
    for (name, v) in [("L", l_layers), ("K", k), ("d", d), ("b", b)] {
        if v == 0 {
            return Err(Error::parameter(format!("{name} must be positive")));
        }
    }
    let mut layers = Vec::with_capacity(l_layers);
    for l in 0..l_layers {
        let mut rng = seed::rng(seed, Stream::ParamInit, l as u64);
        let mut lp = LayerParams::zeros(k, d, b);
        lp.h.fill(1.0 / (k as f64 + 1.0));
        for v in lp.m.iter_mut() {
            let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
            *v = PERCEPTRON_INIT_STD * z;
        }
        for v in lp.c.iter_mut() {
            let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
            *v = PERCEPTRON_INIT_STD * z;
        }
        layers.push(lp);
    }
    UnrolledParams::new(layers, k, mode)
}

/// [W, SW, S²W, ..] by iterated application; K shift uses = K rounds.
pub fn shift_powers(s: &ShiftOperator, w: &StackedWeights, k: usize) -> Vec<Array2<f64>> {
    let mut powers = Vec::with_capacity(k + 1);
    powers.push(w.clone());
    for _ in 0..k {
        let next = s.matrix().dot(powers.last().unwrap());
        powers.push(next);
    }
    powers
}

fn combine_taps(h: &Array1<f64>, w_own: &StackedWeights, powers: &[Array2<f64>]) -> Array2<f64> {
    let mut y = w_own * h[0];
    for (k, p) in powers.iter().enumerate().skip(1) {
        y.scaled_add(h[k], p);
    }
    y
}

/// Polynomial filter Σ h_k S^k applied to distinct own/transmitted
/// signals: the self tap reads `w_own`, every hop diffuses `w_transmit`.
/// With identical arguments this is the plain filter; passing a lagged
/// transmit matrix models agents whose broadcasts are stale.
pub fn filter_with_transmit(
    s: &ShiftOperator,
    h: &Array1<f64>,
    w_own: &StackedWeights,
    w_transmit: &StackedWeights,
) -> Result<StackedWeights> {
    if h.is_empty() {
        return Err(Error::parameter("need at least the k=0 tap"));
    }
    if w_own.dim() != w_transmit.dim() || s.n() != w_own.nrows() {
        return Err(Error::parameter("filter dimension mismatch"));
    }
    let powers = shift_powers(s, w_transmit, h.len() - 1);
    Ok(combine_taps(h, w_own, &powers))
}

/// Graph filter Σ_{k=0..K} h_k S^k W.
pub fn graph_filter(
    s: &ShiftOperator,
    w: &StackedWeights,
    h: &Array1<f64>,
) -> Result<StackedWeights> {
    filter_with_transmit(s, h, w, w)
}

fn check_layer_shapes(
    w_prev: &StackedWeights,
    batch: &LayerBatch,
    lp: &LayerParams,
    s: &ShiftOperator,
    mode: Mode,
) -> Result<()> {
    let n = w_prev.nrows();
    let d = w_prev.ncols();
    if s.n() != n {
        return Err(Error::parameter(format!(
            "shift operator is {}×{} but weights have {n} rows",
            s.n(),
            s.n()
        )));
    }
    if lp.m.nrows() != d || lp.c.len() != d {
        return Err(Error::parameter("perceptron output width must equal d"));
    }
    let b = lp.m.ncols() - d;
    if batch.matrix.ncols() != b {
        return Err(Error::parameter(format!(
            "batch width {} does not match perceptron input {b}",
            batch.matrix.ncols()
        )));
    }
    let expected_rows = match mode {
        Mode::Decentralized => n,
        Mode::Star => n - 1,
    };
    if batch.matrix.nrows() != expected_rows {
        return Err(Error::parameter(format!(
            "batch has {} rows, expected {expected_rows}",
            batch.matrix.nrows()
        )));
    }
    if mode == Mode::Star && lp.h.len() != 2 {
        return Err(Error::config(format!(
            "star mode requires K=1, got {} taps",
            lp.h.len()
        )));
    }
    Ok(())
}

/// One layer forward pass; `w_transmit` carries the rows other agents
/// actually receive (equal to `w_prev` in the synchronous case).
fn layer_step(
    w_prev: &StackedWeights,
    w_transmit: &StackedWeights,
    batch: &LayerBatch,
    lp: &LayerParams,
    s: &ShiftOperator,
    mode: Mode,
    record: bool,
) -> Result<(StackedWeights, Option<LayerCache>)> {
    check_layer_shapes(w_prev, batch, lp, s, mode)?;
    let n = w_prev.nrows();
    let d = w_prev.ncols();
    let k = lp.h.len() - 1;
    let powers = shift_powers(s, w_transmit, k);
    let filtered = combine_taps(&lp.h, w_prev, &powers);
    let m_w = lp.m.slice(ndarray::s![.., ..d]);
    let m_b = lp.m.slice(ndarray::s![.., d..]);
    let mut preact = Array2::<f64>::zeros((n, d));
    match mode {
        Mode::Decentralized => {
            preact = w_prev.dot(&m_w.t()) + batch.matrix.dot(&m_b.t());
            preact += &lp.c.view().insert_axis(Axis(0));
        }
        Mode::Star => {
            // the server row keeps a zero pre-activation, so its ReLU
            // update and its reverse-mode mask both vanish
            let leaves = w_prev.slice(ndarray::s![1.., ..]);
            let mut z = leaves.dot(&m_w.t()) + batch.matrix.dot(&m_b.t());
            z += &lp.c.view().insert_axis(Axis(0));
            preact.slice_mut(ndarray::s![1.., ..]).assign(&z);
        }
    }
    let mut out = filtered;
    out.zip_mut_with(&preact, |o, &z| *o -= z.max(0.0));
    if mode == Mode::Star {
        // no self tap at the server: row 0 is h₁ times its aggregate only
        let server = powers[1].row(0).mapv(|v| lp.h[1] * v);
        out.row_mut(0).assign(&server);
    }
    let cache = record.then(|| LayerCache { shift_powers: powers, preact });
    Ok((out, cache))
}

/// One U-DGD layer: graph-filter aggregation minus the shared
/// perceptron's ReLU update (server row is filter-only in star mode).
pub fn udgd_layer(
    w_prev: &StackedWeights,
    batch: &LayerBatch,
    lp: &LayerParams,
    s: &ShiftOperator,
    mode: Mode,
) -> Result<StackedWeights> {
    layer_step(w_prev, w_prev, batch, lp, s, mode, false).map(|(w, _)| w)
}

/// [`udgd_layer`] with an explicit transmit stack: hops k ≥ 1 diffuse
/// `w_transmit` while the self tap and the perceptron read `w_prev`.
/// Equal arguments reproduce the synchronous layer exactly.
pub fn udgd_layer_with_transmit(
    w_prev: &StackedWeights,
    w_transmit: &StackedWeights,
    batch: &LayerBatch,
    lp: &LayerParams,
    s: &ShiftOperator,
    mode: Mode,
) -> Result<StackedWeights> {
    layer_step(w_prev, w_transmit, batch, lp, s, mode, false).map(|(w, _)| w)
}

/// Forward pass over pre-sampled batches.
pub fn unrolled_forward_with_batches(
    w0: StackedWeights,
    batches: Vec<LayerBatch>,
    theta: &UnrolledParams,
    s: &ShiftOperator,
    record: bool,
) -> Result<Trajectory> {
    if batches.len() != theta.l() {
        return Err(Error::parameter(format!(
            "{} batches for {} layers",
            batches.len(),
            theta.l()
        )));
    }
    let mut w_seq = Vec::with_capacity(theta.l() + 1);
    let mut cache = record.then(|| Vec::with_capacity(theta.l()));
    w_seq.push(w0);
    for (lp, batch) in theta.layers.iter().zip(&batches) {
        let prev = w_seq.last().unwrap();
        let (w, c) = layer_step(prev, prev, batch, lp, s, theta.mode, record)?;
        w_seq.push(w);
        if let (Some(cs), Some(c)) = (cache.as_mut(), c) {
            cs.push(c);
        }
    }
    Ok(Trajectory { w_seq, batches, cache, mode: theta.mode })
}

/// Forward pass that samples its own per-layer batches from the dataset.
pub fn unrolled_forward(
    w0: StackedWeights,
    dataset: &FLDataset,
    theta: &UnrolledParams,
    s: &ShiftOperator,
    batch_seed: u64,
    record: bool,
) -> Result<Trajectory> {
    let expected_rows = match theta.mode {
        Mode::Decentralized => dataset.n(),
        Mode::Star => dataset.n() + 1,
    };
    if w0.nrows() != expected_rows {
        return Err(Error::parameter(format!(
            "initial weights have {} rows, expected {expected_rows}",
            w0.nrows()
        )));
    }
    if theta.l() == 0 {
        return Ok(Trajectory {
            w_seq: vec![w0],
            batches: vec![],
            cache: record.then(Vec::new),
            mode: theta.mode,
        });
    }
    let b = theta.b().unwrap();
    let width = dataset.p() + dataset.c();
    if b % width == 0 && b > 0 {
        let b_count = b / width;
        let batches = sample_layer_batches(dataset, theta.l(), b_count, batch_seed)?;
        unrolled_forward_with_batches(w0, batches, theta, s, record)
    } else {
        Err(Error::config(format!(
            "perceptron batch width {b} is not a multiple of p+C={width}"
        )))
    }
}
