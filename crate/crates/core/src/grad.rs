//! Reverse-mode differentiation of the empirical Lagrangian through the
//! unrolled trajectory. The objective and every gradient-norm constraint
//! are evaluated on the dataset's held-out test split; constraint terms
//! backpropagate through ‖∇f‖ via analytic Hessian-vector products.

use ndarray::{s, Array1, Array2};

use crate::data::{FLDataset, LayerBatch, Shard};
use crate::error::{Error, Result};
use crate::graph::ShiftOperator;
use crate::task::{self, BatchId, GradEstimate, NormBackward, StackedWeights, TOL_NORM};
use crate::unroll::{
    unrolled_forward, LayerCache, LayerParams, Mode, Trajectory, UnrolledParams,
};

/// Per-layer parameter gradients, shaped exactly like [`UnrolledParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub h: Array1<f64>,
    pub m: Array2<f64>,
    pub c: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    /// Coordinates in layer order, h then M then c within a layer.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lg in &self.layers {
            out.extend(lg.h.iter());
            out.extend(lg.m.iter());
            out.extend(lg.c.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|lg| lg.h.iter().chain(lg.m.iter()).chain(lg.c.iter()).all(|v| v.is_finite()))
    }
}

/// Signed constraint residuals s_l = ‖∇f(W_l)‖ − (1−ε)‖∇f(W_{l−1})‖.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSlacks {
    pub s: Vec<f64>,
}

/// Everything one Lagrangian gradient evaluation produces.
#[derive(Debug, Clone)]
pub struct LagrangianGrad {
    pub grads: ParamGrads,
    pub slacks: ConstraintSlacks,
    /// L̂ = f(W_L) + Σ λ_l s_l.
    pub value: f64,
    /// The unconstrained objective f(W_L) alone.
    pub objective: f64,
    /// ‖∇f(W_l)‖ on the test shard for l = 0..=L.
    pub norms: Vec<f64>,
    /// How many ‖∇f(W_l)‖ fell below tolerance and used the zero subgradient.
    pub degenerate_norms: usize,
}

/// Global loss with the star server row excluded (it holds no data).
pub fn fl_loss(w: &StackedWeights, shards: &[Shard], mode: Mode) -> Result<f64> {
    match mode {
        Mode::Decentralized => task::global_loss(w, shards),
        Mode::Star => task::global_loss(&w.slice(s![1.., ..]).to_owned(), shards),
    }
}

/// Global gradient; in star mode the server row is zero by construction.
pub fn fl_grad(w: &StackedWeights, shards: &[Shard], mode: Mode) -> Result<GradEstimate> {
    match mode {
        Mode::Decentralized => task::global_grad(w, shards),
        Mode::Star => {
            let est = task::global_grad(&w.slice(s![1.., ..]).to_owned(), shards)?;
            let mut g = Array2::<f64>::zeros(w.dim());
            g.slice_mut(s![1.., ..]).assign(&est.g);
            Ok(GradEstimate { g, norm: est.norm, batch_id: est.batch_id })
        }
    }
}

fn fl_hvp(
    w: &StackedWeights,
    shards: &[Shard],
    v: &Array2<f64>,
    mode: Mode,
) -> Result<Array2<f64>> {
    match mode {
        Mode::Decentralized => task::hessian_vector(w, shards, v),
        Mode::Star => {
            let hv = task::hessian_vector(
                &w.slice(s![1.., ..]).to_owned(),
                shards,
                &v.slice(s![1.., ..]).to_owned(),
            )?;
            let mut out = Array2::<f64>::zeros(w.dim());
            out.slice_mut(s![1.., ..]).assign(&hv);
            Ok(out)
        }
    }
}

/// ∂‖∇f(W)‖/∂W from an already-computed gradient estimate.
fn norm_backward_from(
    w: &StackedWeights,
    shards: &[Shard],
    est: &GradEstimate,
    mode: Mode,
) -> Result<NormBackward> {
    if est.norm <= TOL_NORM {
        return Ok(NormBackward { value: Array2::zeros(w.dim()), degenerate: true });
    }
    let hv = fl_hvp(w, shards, &est.g, mode)?;
    Ok(NormBackward { value: hv / est.norm, degenerate: false })
}

/// Test-shard gradient estimates along the whole trajectory.
fn trajectory_estimates(traj: &Trajectory, dataset: &FLDataset) -> Result<Vec<GradEstimate>> {
    traj.w_seq
        .iter()
        .map(|w| Ok(fl_grad(w, dataset.test_shards(), traj.mode)?.tag(BatchId::TestShard)))
        .collect()
}

fn slacks_from_norms(norms: &[f64], epsilon: f64) -> ConstraintSlacks {
    let s = norms
        .windows(2)
        .map(|pair| pair[1] - (1.0 - epsilon) * pair[0])
        .collect();
    ConstraintSlacks { s }
}

/// The L slack values of a recorded trajectory on the test shard.
pub fn constraint_slacks(
    traj: &Trajectory,
    dataset: &FLDataset,
    epsilon: f64,
) -> Result<ConstraintSlacks> {
    check_epsilon(epsilon)?;
    let norms: Vec<f64> = trajectory_estimates(traj, dataset)?
        .iter()
        .map(|e| e.norm)
        .collect();
    Ok(slacks_from_norms(&norms, epsilon))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::parameter(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    Ok(())
}

fn check_lambda(lambda: &[f64], l: usize) -> Result<()> {
    if lambda.len() != l {
        return Err(Error::parameter(format!(
            "{} multipliers for {l} layers",
            lambda.len()
        )));
    }
    if let Some(bad) = lambda.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::parameter(format!("multipliers must be nonnegative, got {bad}")));
    }
    Ok(())
}

/// Empirical Lagrangian of one dataset: value, slacks, and the recorded
/// trajectory. Batches are sampled once from `batch_seed` and the same
/// fixed realization is what [`lagrangian_grad`] differentiates.
pub fn lagrangian(
    theta: &UnrolledParams,
    lambda: &[f64],
    dataset: &FLDataset,
    s: &ShiftOperator,
    epsilon: f64,
    w0: &StackedWeights,
    batch_seed: u64,
) -> Result<(f64, ConstraintSlacks, Trajectory)> {
    check_epsilon(epsilon)?;
    check_lambda(lambda, theta.l())?;
    let traj = unrolled_forward(w0.clone(), dataset, theta, s, batch_seed, true)?;
    let objective = fl_loss(traj.final_weights(), dataset.test_shards(), traj.mode)?;
    let slacks = constraint_slacks(&traj, dataset, epsilon)?;
    let value = objective
        + lambda.iter().zip(&slacks.s).map(|(l, s)| l * s).sum::<f64>();
    Ok((value, slacks, traj))
}

/// Reverse of one unrolled layer. Given ∂L/∂W_l, returns ∂L/∂W_{l−1}
/// and the gradients of that layer's parameters.
pub fn layer_vjp(
    upstream: &Array2<f64>,
    cache: &LayerCache,
    batch: &LayerBatch,
    lp: &LayerParams,
    s: &ShiftOperator,
    mode: Mode,
) -> Result<(Array2<f64>, LayerGrads)> {
    let k = lp.h.len() - 1;
    if cache.shift_powers.len() != k + 1 {
        return Err(Error::state(format!(
            "cache holds {} powers for K={k}",
            cache.shift_powers.len()
        )));
    }
    let d = lp.m.nrows();
    let w_prev = &cache.shift_powers[0];
    if upstream.dim() != w_prev.dim() {
        return Err(Error::parameter("upstream shape does not match layer input"));
    }

    // filter taps: ∂/∂h_k = ⟨S^k W_{l−1}, upstream⟩; the star server row
    // carries no self tap, so it is excluded from the k=0 inner product
    let mut grad_h = Array1::<f64>::zeros(k + 1);
    for ki in 0..=k {
        let p = &cache.shift_powers[ki];
        grad_h[ki] = if ki == 0 && mode == Mode::Star {
            p.slice(s![1.., ..])
                .iter()
                .zip(upstream.slice(s![1.., ..]).iter())
                .map(|(a, b)| a * b)
                .sum()
        } else {
            p.iter().zip(upstream.iter()).map(|(a, b)| a * b).sum()
        };
    }

    // downstream through the filter: Σ_k h_k (Sᵀ)^k upstream
    let mut down = upstream * lp.h[0];
    if mode == Mode::Star {
        down.row_mut(0).fill(0.0);
    }
    let mut t = upstream.clone();
    for ki in 1..=k {
        t = s.matrix().t().dot(&t);
        down.scaled_add(lp.h[ki], &t);
    }

    // perceptron path: out -= ReLU(Z), mask = 1 at Z > 0
    let mut gz = Array2::<f64>::zeros(upstream.dim());
    gz.zip_mut_with(&cache.preact, |g, &z| *g = if z > 0.0 { -1.0 } else { 0.0 });
    gz *= upstream;
    let grad_c = gz.sum_axis(ndarray::Axis(0));
    let mut grad_m = Array2::<f64>::zeros(lp.m.dim());
    let m_w = lp.m.slice(s![.., ..d]);
    match mode {
        Mode::Decentralized => {
            grad_m.slice_mut(s![.., ..d]).assign(&gz.t().dot(w_prev));
            grad_m.slice_mut(s![.., d..]).assign(&gz.t().dot(&batch.matrix));
        }
        Mode::Star => {
            let gz_leaves = gz.slice(s![1.., ..]);
            grad_m
                .slice_mut(s![.., ..d])
                .assign(&gz_leaves.t().dot(&w_prev.slice(s![1.., ..])));
            grad_m
                .slice_mut(s![.., d..])
                .assign(&gz_leaves.t().dot(&batch.matrix));
        }
    }
    // the server row of gz stays zero, so this add is mode-agnostic
    down += &gz.dot(&m_w);

    Ok((down, LayerGrads { h: grad_h, m: grad_m, c: grad_c }))
}

/// Gradient of the empirical Lagrangian with respect to every layer
/// parameter, by one reverse sweep over the recorded trajectory.
pub fn lagrangian_grad(
    theta: &UnrolledParams,
    lambda: &[f64],
    dataset: &FLDataset,
    s: &ShiftOperator,
    epsilon: f64,
    w0: &StackedWeights,
    batch_seed: u64,
) -> Result<LagrangianGrad> {
    check_epsilon(epsilon)?;
    check_lambda(lambda, theta.l())?;
    let traj = unrolled_forward(w0.clone(), dataset, theta, s, batch_seed, true)?;
    let caches = traj
        .cache
        .as_ref()
        .ok_or_else(|| Error::state("trajectory recorded without cache"))?;
    let shards = dataset.test_shards();
    let ests = trajectory_estimates(&traj, dataset)?;
    let norms: Vec<f64> = ests.iter().map(|e| e.norm).collect();
    let slacks = slacks_from_norms(&norms, epsilon);
    let objective = fl_loss(traj.final_weights(), shards, traj.mode)?;
    let value = objective
        + lambda.iter().zip(&slacks.s).map(|(l, s)| l * s).sum::<f64>();

    let l_count = theta.l();
    let mut degenerate = 0usize;
    let mut layers: Vec<Option<LayerGrads>> = vec![None; l_count];

    if l_count > 0 {
        // seed: ∂f/∂W_L plus the last constraint's norm term; multiplier
        // coefficients of exactly zero skip their Hessian product entirely,
        // so the unconstrained path is bitwise identical to plain backprop
        let mut upstream = ests[l_count].g.clone();
        if lambda[l_count - 1] != 0.0 {
            let nb = norm_backward_from(&traj.w_seq[l_count], shards, &ests[l_count], traj.mode)?;
            degenerate += nb.degenerate as usize;
            upstream.scaled_add(lambda[l_count - 1], &nb.value);
        }
        for l in (1..=l_count).rev() {
            let (mut down, lg) = layer_vjp(
                &upstream,
                &caches[l - 1],
                &traj.batches[l - 1],
                &theta.layers[l - 1],
                s,
                traj.mode,
            )?;
            layers[l - 1] = Some(lg);
            if l > 1 {
                // direct dependence of L̂ on the intermediate W_{l−1}
                let coeff = lambda[l - 2] - lambda[l - 1] * (1.0 - epsilon);
                if coeff != 0.0 {
                    let nb =
                        norm_backward_from(&traj.w_seq[l - 1], shards, &ests[l - 1], traj.mode)?;
                    degenerate += nb.degenerate as usize;
                    down.scaled_add(coeff, &nb.value);
                }
            }
            upstream = down;
        }
    }

    let grads = ParamGrads { layers: layers.into_iter().map(|g| g.unwrap()).collect() };
    if !grads.is_finite() {
        return Err(Error::state("non-finite parameter gradient"));
    }
    Ok(LagrangianGrad { grads, slacks, value, objective, norms, degenerate_norms: degenerate })
}
