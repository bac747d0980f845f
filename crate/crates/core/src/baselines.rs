//! Classical iterative optimizers run for a fixed number of
//! communication rounds: DGD, DSGD, DFedAvgM on a mixing graph and a
//! FedAvg-style method on a star server. One mixing (or one server
//! exchange) is one round, so round counts compare directly against an
//! unrolled network's L·K.
//!
//! Per-agent gradients here descend each agent's own objective f_i and
//! deliberately omit the 1/n global factor, so their norms are not
//! directly comparable to the stacked global gradient.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{FLDataset, Shard};
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, Graph};
use crate::seed::{self, Stream};
use crate::task::{self, StackedWeights};
use crate::unroll::init_w0;

/// Deviation of the Gaussian initial weights drawn inside `*_run`.
pub const BASELINE_W0_STD: f64 = 0.3;

/// Offset separating participant sampling from batch sampling inside
/// the shared baseline seed stream.
const PARTICIPANT_TAG: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dgd,
    Dsgd,
    Dfedavgm,
    FedavgStar,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dgd => "dgd",
            Method::Dsgd => "dsgd",
            Method::Dfedavgm => "dfedavgm",
            Method::FedavgStar => "fedavg-star",
        }
    }
}

/// Quantities logged after each communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    /// max_i ‖w_i − w̄‖₂, the consensus residual.
    pub disagreement: f64,
}

/// Hyperparameters actually used, for the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub beta: f64,
    pub momentum: f64,
    pub local_steps: usize,
    pub batch_count: usize,
    pub participants: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub method: Method,
    /// Number of mixing (or server-exchange) applications performed.
    pub rounds: usize,
    pub w_final: StackedWeights,
    pub metrics: Vec<RoundMetrics>,
    pub hyper: Hyper,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) {
        return Err(Error::parameter(format!("step size must be nonnegative, got {beta}")));
    }
    Ok(())
}

fn check_batch_count(batch_count: usize, m: usize) -> Result<()> {
    if batch_count == 0 || batch_count > m {
        return Err(Error::parameter(format!(
            "batch_count {batch_count} must lie in 1..={m}"
        )));
    }
    Ok(())
}

/// Rows of `shard` at `idx` as a standalone shard.
fn sub_shard(shard: &Shard, idx: &[usize]) -> Shard {
    Shard {
        x: shard.x.select(Axis(0), idx),
        y: idx.iter().map(|&j| shard.y[j]).collect(),
    }
}

/// Mini-batch index draw without replacement, deterministic in
/// (seed, tag): tag encodes round, local step, and agent.
fn draw_batch(seed: u64, tag: u64, m: usize, batch_count: usize) -> Vec<usize> {
    if batch_count == m {
        return (0..m).collect();
    }
    let mut rng = seed::rng(seed, Stream::Baseline, tag);
    rand::seq::index::sample(&mut rng, m, batch_count).into_vec()
}

/// Gradient of agent i's own mean loss over the given examples (no 1/n).
fn local_grad(w_row: &[f64], shard: &Shard, idx: &[usize]) -> Result<Array1<f64>> {
    let sub = sub_shard(shard, idx);
    let w = Array2::from_shape_vec((1, w_row.len()), w_row.to_vec()).expect("row shape");
    let est = task::global_grad(&w, std::slice::from_ref(&sub))?;
    Ok(est.g.row(0).to_owned())
}

/// n×d matrix of per-agent gradients at each agent's own row.
fn per_agent_grads(
    w: &StackedWeights,
    shards: &[Shard],
    seed: u64,
    round: usize,
    local_step: usize,
    local_steps: usize,
    batch_count: usize,
) -> Result<Array2<f64>> {
    let n = shards.len();
    let mut g = Array2::<f64>::zeros(w.dim());
    for i in 0..n {
        let m = shards[i].len();
        let tag = ((round * local_steps + local_step) * n + i) as u64;
        let idx = draw_batch(seed, tag, m, batch_count.min(m));
        let w_i = w.row(i);
        let gi = local_grad(w_i.as_slice().unwrap(), &shards[i], &idx)?;
        g.row_mut(i).assign(&gi);
    }
    Ok(g)
}

fn disagreement(w: &StackedWeights) -> f64 {
    let mean = w.mean_axis(Axis(0)).expect("nonempty");
    let mut worst = 0.0f64;
    for row in w.rows() {
        let d: f64 = row
            .iter()
            .zip(mean.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(d);
    }
    worst
}

fn round_metrics(round: usize, w: &StackedWeights, dataset: &FLDataset) -> Result<RoundMetrics> {
    Ok(RoundMetrics {
        round,
        train_loss: task::global_loss(w, dataset.train_shards())?,
        test_acc: task::mean_accuracy(w, dataset.test_shards())?,
        disagreement: disagreement(w),
    })
}

fn initial_w(dataset: &FLDataset, d: usize, seed: u64) -> Result<StackedWeights> {
    init_w0(
        dataset.n(),
        d,
        0.0,
        BASELINE_W0_STD,
        seed::derive(seed, Stream::WeightInit, 0),
    )
}

fn classifier_dim(dataset: &FLDataset) -> usize {
    (dataset.p() + 1) * dataset.c()
}

/// Decentralized gradient descent from an explicit initial stack:
/// w_i(l) = Σ_j α_ij w_j(l−1) − β ∇f_i(w_i(l−1)).
pub fn dgd_run_from(
    w0: StackedWeights,
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    t_rounds: usize,
    batch_count: usize,
    seed: u64,
) -> Result<BaselineRun> {
    check_beta(beta)?;
    check_batch_count(batch_count, dataset.m_train())?;
    let mix = metropolis_weights(graph)?;
    let a = mix.matrix();
    let mut w = w0;
    let mut metrics = Vec::with_capacity(t_rounds);
    for r in 0..t_rounds {
        let g = per_agent_grads(&w, dataset.train_shards(), seed, r, 0, 1, batch_count)?;
        w = a.dot(&w) - &(g * beta);
        metrics.push(round_metrics(r + 1, &w, dataset)?);
    }
    Ok(BaselineRun {
        method: if batch_count == 1 { Method::Dsgd } else { Method::Dgd },
        rounds: t_rounds,
        w_final: w,
        metrics,
        hyper: Hyper {
            beta,
            momentum: 0.0,
            local_steps: 1,
            batch_count,
            participants: 0,
            seed,
        },
    })
}

pub fn dgd_run(
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    t_rounds: usize,
    batch_count: usize,
    seed: u64,
) -> Result<BaselineRun> {
    let w0 = initial_w(dataset, classifier_dim(dataset), seed)?;
    dgd_run_from(w0, dataset, graph, beta, t_rounds, batch_count, seed)
}

/// DGD with one-example mini-batches.
pub fn dsgd_run(
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    t_rounds: usize,
    seed: u64,
) -> Result<BaselineRun> {
    dgd_run(dataset, graph, beta, t_rounds, 1, seed)
}

pub fn dsgd_run_from(
    w0: StackedWeights,
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    t_rounds: usize,
    seed: u64,
) -> Result<BaselineRun> {
    dgd_run_from(w0, dataset, graph, beta, t_rounds, 1, seed)
}

/// Per round: `local_steps` momentum-SGD steps at every agent, then one
/// Metropolis mixing of the locally updated models. Momentum buffers
/// reset at each round start.
pub fn dfedavgm_run(
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    momentum: f64,
    local_steps: usize,
    t_rounds: usize,
    batch_count: usize,
    seed: u64,
) -> Result<BaselineRun> {
    let w0 = initial_w(dataset, classifier_dim(dataset), seed)?;
    dfedavgm_run_from(w0, dataset, graph, beta, momentum, local_steps, t_rounds, batch_count, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn dfedavgm_run_from(
    w0: StackedWeights,
    dataset: &FLDataset,
    graph: &Graph,
    beta: f64,
    momentum: f64,
    local_steps: usize,
    t_rounds: usize,
    batch_count: usize,
    seed: u64,
) -> Result<BaselineRun> {
    check_beta(beta)?;
    check_batch_count(batch_count, dataset.m_train())?;
    if local_steps == 0 {
        return Err(Error::parameter("local_steps must be at least 1"));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::parameter(format!(
            "momentum must lie in [0,1), got {momentum}"
        )));
    }
    let mix = metropolis_weights(graph)?;
    let a = mix.matrix();
    let mut w = w0;
    let mut metrics = Vec::with_capacity(t_rounds);
    for r in 0..t_rounds {
        let mut local = w.clone();
        let mut vel = Array2::<f64>::zeros(local.dim());
        for step in 0..local_steps {
            let g = per_agent_grads(
                &local,
                dataset.train_shards(),
                seed,
                r,
                step,
                local_steps,
                batch_count,
            )?;
            vel = vel * momentum + &g;
            local -= &(&vel * beta);
        }
        w = a.dot(&local);
        metrics.push(round_metrics(r + 1, &w, dataset)?);
    }
    Ok(BaselineRun {
        method: Method::Dfedavgm,
        rounds: t_rounds,
        w_final: w,
        metrics,
        hyper: Hyper {
            beta,
            momentum,
            local_steps,
            batch_count,
            participants: 0,
            seed,
        },
    })
}

/// Server-coordinated averaging with partial participation: each round a
/// random subset of agents runs `local_steps` full-batch gradient steps
/// from the server model; the server averages what comes back. Idle
/// agents contribute nothing that round.
pub fn fedavg_star_run(
    dataset: &FLDataset,
    participants_per_round: usize,
    local_steps: usize,
    beta: f64,
    t_rounds: usize,
    seed: u64,
) -> Result<BaselineRun> {
    check_beta(beta)?;
    let n = dataset.n();
    if participants_per_round == 0 || participants_per_round > n {
        return Err(Error::parameter(format!(
            "participants_per_round {participants_per_round} must lie in 1..={n}"
        )));
    }
    if local_steps == 0 {
        return Err(Error::parameter("local_steps must be at least 1"));
    }
    let d = classifier_dim(dataset);
    // the server model, broadcast to every agent between rounds
    let mut server = initial_w(dataset, d, seed)?.row(0).to_owned();
    let m = dataset.m_train();
    let mut metrics = Vec::with_capacity(t_rounds);
    for r in 0..t_rounds {
        let mut rng = seed::rng(seed, Stream::Baseline, PARTICIPANT_TAG + r as u64);
        let chosen = rand::seq::index::sample(&mut rng, n, participants_per_round).into_vec();
        let full: Vec<usize> = (0..m).collect();
        let mut sum = Array1::<f64>::zeros(d);
        for &i in &chosen {
            let mut w_i = server.clone();
            for _ in 0..local_steps {
                let g = local_grad(
                    w_i.as_slice().unwrap(),
                    &dataset.train_shards()[i],
                    &full,
                )?;
                w_i -= &(g * beta);
            }
            sum += &w_i;
        }
        server = sum / participants_per_round as f64;
        let broadcast = broadcast_rows(&server, n);
        metrics.push(round_metrics(r + 1, &broadcast, dataset)?);
    }
    Ok(BaselineRun {
        method: Method::FedavgStar,
        rounds: t_rounds,
        w_final: broadcast_rows(&server, n),
        metrics,
        hyper: Hyper {
            beta,
            momentum: 0.0,
            local_steps,
            batch_count: m,
            participants: participants_per_round,
            seed,
        },
    })
}

/// n copies of the server row, so server-side runs score with the same
/// per-agent metrics as decentralized ones.
fn broadcast_rows(row: &Array1<f64>, n: usize) -> StackedWeights {
    let d = row.len();
    let mut w = Array2::<f64>::zeros((n, d));
    for mut r in w.rows_mut() {
        r.assign(row);
    }
    w
}
