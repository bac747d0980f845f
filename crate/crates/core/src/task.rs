//! The downstream problem each agent solves: multinomial softmax
//! regression with a bias input. Everything here is analytic, including
//! the Hessian-vector product needed to backpropagate through gradient
//! norms, so no autodiff framework is involved.

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Shard;
use crate::error::{Error, Result};

/// Stacked per-agent classifier weights, n×d with d = (p+1)·C.
/// Row i is agent i's (p+1)×C weight matrix flattened row-major; the
/// last input row is a bias fixed to 1.
pub type StackedWeights = Array2<f64>;

/// Norms below this are treated as the nonsmooth point of ‖·‖.
pub const TOL_NORM: f64 = 1e-10;

/// Where a gradient sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchId {
    Unspecified,
    TrainShard,
    TestShard,
    Layer(usize),
}

/// A stochastic gradient of the global objective together with its norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub g: Array2<f64>,
    pub norm: f64,
    pub batch_id: BatchId,
}

impl GradEstimate {
    pub fn tag(mut self, batch_id: BatchId) -> GradEstimate {
        self.batch_id = batch_id;
        self
    }
}

/// Output of [`grad_norm_backward`]: the gradient of ‖∇f‖, with the
/// zero-by-convention case flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct NormBackward {
    pub value: Array2<f64>,
    /// True when ‖∇f‖ fell below [`TOL_NORM`] and the zero subgradient
    /// convention was applied.
    pub degenerate: bool,
}

struct Dims {
    n: usize,
    p: usize,
    c: usize,
}

fn dims(w: &StackedWeights, shards: &[Shard]) -> Result<Dims> {
    let n = shards.len();
    if n == 0 {
        return Err(Error::parameter("no shards"));
    }
    if w.nrows() != n {
        return Err(Error::parameter(format!(
            "weights have {} rows but there are {n} shards",
            w.nrows()
        )));
    }
    let p = shards[0].x.ncols();
    for (i, s) in shards.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::parameter(format!("agent {i} has an empty shard")));
        }
        if s.x.ncols() != p {
            return Err(Error::parameter(format!("agent {i} has feature width {}", s.x.ncols())));
        }
    }
    let d = w.ncols();
    if d % (p + 1) != 0 || d == 0 {
        return Err(Error::parameter(format!(
            "weight width {d} is not a multiple of p+1={}",
            p + 1
        )));
    }
    Ok(Dims { n, p, c: d / (p + 1) })
}

/// Class probabilities for one example: logits z = Θᵀ[x;1] with Θ the
/// row-major reshape of `w_i`, then max-subtracted softmax.
fn probs_into(w_i: &[f64], x: &[f64], p: usize, c: usize, out: &mut [f64]) {
    for (col, o) in out.iter_mut().enumerate() {
        let mut z = w_i[p * c + col];
        for (r, &xr) in x.iter().enumerate() {
            z += xr * w_i[r * c + col];
        }
        *o = z;
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax class probabilities of one agent's classifier on one input.
pub fn predict(w_i: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let p = x.len();
    let d = w_i.len();
    if d % (p + 1) != 0 || d == 0 {
        return Err(Error::parameter(format!(
            "weight length {d} is not a multiple of p+1={}",
            p + 1
        )));
    }
    let c = d / (p + 1);
    let w = w_i
        .as_slice()
        .map(|s| s.to_vec())
        .unwrap_or_else(|| w_i.iter().cloned().collect());
    let xv: Vec<f64> = x.iter().cloned().collect();
    let mut out = vec![0.0; c];
    probs_into(&w, &xv, p, c, &mut out);
    Ok(Array1::from(out))
}

/// Log-sum-exp cross-entropy of one example, max-subtracted.
fn example_ce(w_i: &[f64], x: &[f64], y: usize, p: usize, c: usize) -> f64 {
    let mut z = vec![0.0; c];
    for (col, zc) in z.iter_mut().enumerate() {
        let mut v = w_i[p * c + col];
        for (r, &xr) in x.iter().enumerate() {
            v += xr * w_i[r * c + col];
        }
        *zc = v;
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[y]
}

/// Global objective: (1/n) Σ_i mean cross-entropy of agent i on shard i.
pub fn global_loss(w: &StackedWeights, shards: &[Shard]) -> Result<f64> {
    let Dims { n, p, c } = dims(w, shards)?;
    let mut total = 0.0;
    for (i, shard) in shards.iter().enumerate() {
        let w_i = w.row(i);
        let w_i = w_i.as_slice().unwrap();
        let mut local = 0.0;
        for e in 0..shard.len() {
            let x = shard.x.row(e);
            local += example_ce(w_i, x.as_slice().unwrap(), shard.y[e], p, c);
        }
        total += local / shard.len() as f64;
    }
    Ok(total / n as f64)
}

/// Mean over agents of per-agent argmax accuracy, each agent scoring its
/// own shard with its own weight row. Ties resolve to the lowest class.
pub fn mean_accuracy(w: &StackedWeights, shards: &[Shard]) -> Result<f64> {
    let Dims { n, p, c } = dims(w, shards)?;
    let mut total = 0.0;
    let mut pe = vec![0.0; c];
    for (i, shard) in shards.iter().enumerate() {
        let w_i = w.row(i);
        let w_i = w_i.as_slice().unwrap();
        let mut hits = 0usize;
        for e in 0..shard.len() {
            let x = shard.x.row(e);
            probs_into(w_i, x.as_slice().unwrap(), p, c, &mut pe);
            let mut best = 0;
            for k in 1..c {
                if pe[k] > pe[best] {
                    best = k;
                }
            }
            if best == shard.y[e] {
                hits += 1;
            }
        }
        total += hits as f64 / shard.len() as f64;
    }
    Ok(total / n as f64)
}

/// Exact gradient of [`global_loss`]: row i is
/// (1/n)(1/m_i) Σ_e x̃_e (p_e − y_e)ᵀ flattened row-major.
pub fn global_grad(w: &StackedWeights, shards: &[Shard]) -> Result<GradEstimate> {
    let Dims { n, p, c } = dims(w, shards)?;
    let d = w.ncols();
    let mut g = Array2::<f64>::zeros((n, d));
    let mut pe = vec![0.0; c];
    for (i, shard) in shards.iter().enumerate() {
        let w_i = w.row(i);
        let w_i = w_i.as_slice().unwrap();
        let scale = 1.0 / (n as f64 * shard.len() as f64);
        for e in 0..shard.len() {
            let x = shard.x.row(e);
            let x = x.as_slice().unwrap();
            probs_into(w_i, x, p, c, &mut pe);
            pe[shard.y[e]] -= 1.0;
            for r in 0..p {
                let xr = x[r] * scale;
                for (col, &pc) in pe.iter().enumerate() {
                    g[[i, r * c + col]] += xr * pc;
                }
            }
            for (col, &pc) in pe.iter().enumerate() {
                g[[i, p * c + col]] += scale * pc;
            }
        }
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(GradEstimate { g, norm, batch_id: BatchId::Unspecified })
}

/// Block-diagonal Hessian-vector product of [`global_loss`]:
/// for agent i, (1/n)(1/m_i) Σ_e x̃_e [(diag(p_e) − p_e p_eᵀ)(Ṽᵀ x̃_e)]ᵀ.
pub fn hessian_vector(
    w: &StackedWeights,
    shards: &[Shard],
    v: &Array2<f64>,
) -> Result<Array2<f64>> {
    let Dims { n, p, c } = dims(w, shards)?;
    if v.dim() != w.dim() {
        return Err(Error::parameter(format!(
            "direction shape {:?} does not match weights {:?}",
            v.dim(),
            w.dim()
        )));
    }
    let d = w.ncols();
    let mut out = Array2::<f64>::zeros((n, d));
    let mut pe = vec![0.0; c];
    let mut a = vec![0.0; c];
    for (i, shard) in shards.iter().enumerate() {
        let w_i = w.row(i);
        let w_i = w_i.as_slice().unwrap();
        let v_i = v.row(i);
        let v_i = v_i.as_slice().unwrap();
        let scale = 1.0 / (n as f64 * shard.len() as f64);
        for e in 0..shard.len() {
            let x = shard.x.row(e);
            let x = x.as_slice().unwrap();
            probs_into(w_i, x, p, c, &mut pe);
            // a = Ṽᵀ x̃
            for (col, ac) in a.iter_mut().enumerate() {
                let mut s = v_i[p * c + col];
                for (r, &xr) in x.iter().enumerate() {
                    s += xr * v_i[r * c + col];
                }
                *ac = s;
            }
            // b = (diag(p) − p pᵀ) a, written into a
            let dot: f64 = pe.iter().zip(&a).map(|(&pc, &ac)| pc * ac).sum();
            for (ac, &pc) in a.iter_mut().zip(&pe) {
                *ac = pc * (*ac - dot);
            }
            for r in 0..p {
                let xr = x[r] * scale;
                for (col, &bc) in a.iter().enumerate() {
                    out[[i, r * c + col]] += xr * bc;
                }
            }
            for (col, &bc) in a.iter().enumerate() {
                out[[i, p * c + col]] += scale * bc;
            }
        }
    }
    Ok(out)
}

/// Frobenius norm of the global gradient.
pub fn grad_norm(w: &StackedWeights, shards: &[Shard]) -> Result<f64> {
    Ok(global_grad(w, shards)?.norm)
}

/// Gradient of W ↦ ‖∇f(W)‖, namely H(W)·∇f(W)/‖∇f(W)‖. At norms below
/// [`TOL_NORM`] the zero subgradient is returned and flagged.
pub fn grad_norm_backward(w: &StackedWeights, shards: &[Shard]) -> Result<NormBackward> {
    let est = global_grad(w, shards)?;
    if est.norm <= TOL_NORM {
        return Ok(NormBackward { value: Array2::zeros(w.dim()), degenerate: true });
    }
    let hv = hessian_vector(w, shards, &est.g)?;
    Ok(NormBackward { value: hv / est.norm, degenerate: false })
}
