//! Meta-test evaluation, per-layer convergence diagnostics, the
//! constraints ablation, and a stale-communication robustness harness.
//! All evaluation is read-only over the layer parameters; per-dataset
//! randomness (initial weights, batches, stale sets) derives from the
//! evaluation seed and the dataset index.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FLDataset, MetaDataset, Role, Shard};
use crate::error::{Error, Result};
use crate::grad::{constraint_slacks, fl_grad, fl_loss};
use crate::graph::ShiftOperator;
use crate::seed::{self, Stream};
use crate::task::{self, StackedWeights, TOL_NORM};
use crate::unroll::{
    init_w0, udgd_layer_with_transmit, unrolled_forward, Mode, Trajectory, UnrolledParams,
};

/// Aggregated meta-test results. Per-layer vectors run l = 0..=L; the
/// constraint columns run l = 1..=L and stay empty until a diagnostics
/// pass fills them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy at W_L, one entry per meta-test dataset.
    pub per_dataset_acc: Vec<f64>,
    pub layer_loss: Vec<f64>,
    pub layer_acc: Vec<f64>,
    pub layer_grad_norm: Vec<f64>,
    /// Fraction of datasets whose slack s_l ≤ 0, length L.
    pub slack_satisfaction: Vec<f64>,
    /// Mean ‖∇f(W_l)‖/‖∇f(W_{l−1})‖ over datasets with a nondegenerate
    /// denominator; 0 when the gradient already vanished everywhere.
    pub decay_ratio: Vec<f64>,
}

/// Constraint-oriented view of the same trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub satisfaction: Vec<f64>,
    pub decay_ratio: Vec<f64>,
}

/// One point of the staleness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncReport {
    pub n_asyn: usize,
    pub mean_acc: f64,
    pub mean_loss: f64,
    pub per_dataset_acc: Vec<f64>,
}

/// Paired constrained/unconstrained evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub constrained: EvalReport,
    pub unconstrained: EvalReport,
    /// Fraction of the total accuracy gain already realized at layer L−1.
    pub gain_fraction_constrained: f64,
    pub gain_fraction_unconstrained: f64,
}

/// Mean per-agent accuracy with the star server row excluded.
pub fn fl_accuracy(w: &StackedWeights, shards: &[Shard], mode: Mode) -> Result<f64> {
    match mode {
        Mode::Decentralized => task::mean_accuracy(w, shards),
        Mode::Star => task::mean_accuracy(&w.slice(ndarray::s![1.., ..]).to_owned(), shards),
    }
}

fn check_role(meta: &MetaDataset) -> Result<()> {
    if meta.role() != Role::MetaTest {
        return Err(Error::config("evaluation expects a meta-test dataset"));
    }
    Ok(())
}

fn node_count(theta: &UnrolledParams, dataset: &FLDataset) -> usize {
    match theta.mode {
        Mode::Decentralized => dataset.n(),
        Mode::Star => dataset.n() + 1,
    }
}

/// Initial stack for dataset `idx`, shared by every evaluation mode so
/// comparisons are paired.
fn dataset_w0(
    theta: &UnrolledParams,
    dataset: &FLDataset,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
    idx: usize,
) -> Result<StackedWeights> {
    let d = theta
        .d()
        .ok_or_else(|| Error::config("cannot evaluate a network with no layers"))?;
    init_w0(
        node_count(theta, dataset),
        d,
        w0_mean,
        w0_std,
        seed::derive(seed, Stream::WeightInit, idx as u64),
    )
}

fn forward_for(
    theta: &UnrolledParams,
    dataset: &FLDataset,
    s: &ShiftOperator,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
    idx: usize,
) -> Result<Trajectory> {
    let w0 = dataset_w0(theta, dataset, w0_mean, w0_std, seed, idx)?;
    unrolled_forward(
        w0,
        dataset,
        theta,
        s,
        seed::derive(seed, Stream::Batches, idx as u64),
        false,
    )
}

struct TrajStats {
    losses: Vec<f64>,
    accs: Vec<f64>,
    norms: Vec<f64>,
}

fn traj_stats(traj: &Trajectory, dataset: &FLDataset) -> Result<TrajStats> {
    let mut losses = Vec::with_capacity(traj.w_seq.len());
    let mut accs = Vec::with_capacity(traj.w_seq.len());
    let mut norms = Vec::with_capacity(traj.w_seq.len());
    for w in &traj.w_seq {
        losses.push(fl_loss(w, dataset.test_shards(), traj.mode)?);
        accs.push(fl_accuracy(w, dataset.test_shards(), traj.mode)?);
        norms.push(fl_grad(w, dataset.test_shards(), traj.mode)?.norm);
    }
    Ok(TrajStats { losses, accs, norms })
}

/// Fraction of rows whose slack at each position is ≤ 0.
pub fn satisfaction_rates(slack_rows: &[Vec<f64>]) -> Vec<f64> {
    if slack_rows.is_empty() {
        return Vec::new();
    }
    let l = slack_rows[0].len();
    let mut rates = vec![0.0; l];
    for row in slack_rows {
        for (r, &s) in rates.iter_mut().zip(row.iter()) {
            if s <= 0.0 {
                *r += 1.0;
            }
        }
    }
    for r in rates.iter_mut() {
        *r /= slack_rows.len() as f64;
    }
    rates
}

/// Mean decay ratios over datasets, skipping degenerate denominators.
fn mean_decay(norm_rows: &[Vec<f64>]) -> Vec<f64> {
    if norm_rows.is_empty() {
        return Vec::new();
    }
    let l = norm_rows[0].len() - 1;
    let mut sums = vec![0.0; l];
    let mut counts = vec![0usize; l];
    for norms in norm_rows {
        for k in 0..l {
            if norms[k] > TOL_NORM {
                sums[k] += norms[k + 1] / norms[k];
                counts[k] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Forward every meta-test dataset and average per-layer loss, accuracy,
/// and gradient norm; constraint columns stay empty here.
pub fn meta_evaluate(
    theta: &UnrolledParams,
    meta_test: &MetaDataset,
    s: &ShiftOperator,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
) -> Result<EvalReport> {
    check_role(meta_test)?;
    let q = meta_test.len();
    let l = theta.l();
    let mut per_dataset_acc = Vec::with_capacity(q);
    let mut layer_loss = vec![0.0; l + 1];
    let mut layer_acc = vec![0.0; l + 1];
    let mut layer_grad_norm = vec![0.0; l + 1];
    let mut norm_rows = Vec::with_capacity(q);
    for (idx, dataset) in meta_test.datasets().iter().enumerate() {
        let traj = forward_for(theta, dataset, s, w0_mean, w0_std, seed, idx)?;
        let stats = traj_stats(&traj, dataset)?;
        per_dataset_acc.push(stats.accs[l]);
        for k in 0..=l {
            layer_loss[k] += stats.losses[k];
            layer_acc[k] += stats.accs[k];
            layer_grad_norm[k] += stats.norms[k];
        }
        norm_rows.push(stats.norms);
    }
    for v in layer_loss
        .iter_mut()
        .chain(layer_acc.iter_mut())
        .chain(layer_grad_norm.iter_mut())
    {
        *v /= q as f64;
    }
    Ok(EvalReport {
        per_dataset_acc,
        layer_loss,
        layer_acc,
        layer_grad_norm,
        slack_satisfaction: Vec::new(),
        decay_ratio: mean_decay(&norm_rows),
    })
}

/// Per-layer constraint satisfaction rates and mean decay ratios on the
/// meta-test datasets.
pub fn layer_diagnostics(
    theta: &UnrolledParams,
    meta_test: &MetaDataset,
    s: &ShiftOperator,
    epsilon: f64,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
) -> Result<LayerDiagnostics> {
    check_role(meta_test)?;
    let mut slack_rows = Vec::with_capacity(meta_test.len());
    let mut norm_rows = Vec::with_capacity(meta_test.len());
    for (idx, dataset) in meta_test.datasets().iter().enumerate() {
        let traj = forward_for(theta, dataset, s, w0_mean, w0_std, seed, idx)?;
        slack_rows.push(constraint_slacks(&traj, dataset, epsilon)?.s);
        let norms: Vec<f64> = traj
            .w_seq
            .iter()
            .map(|w| Ok(fl_grad(w, dataset.test_shards(), traj.mode)?.norm))
            .collect::<Result<_>>()?;
        norm_rows.push(norms);
    }
    Ok(LayerDiagnostics {
        satisfaction: satisfaction_rates(&slack_rows),
        decay_ratio: mean_decay(&norm_rows),
    })
}

/// Forward pass where the rows broadcast by `stale` agents lag one layer
/// behind: hops at layer l diffuse their rows of W_{l−2} (W_0 at l=1)
/// while their own self tap and perceptron update stay current. With no
/// stale agents this reproduces the synchronous trajectory bit for bit.
pub fn async_forward(
    w0: StackedWeights,
    dataset: &FLDataset,
    theta: &UnrolledParams,
    s: &ShiftOperator,
    batch_seed: u64,
    stale: &[usize],
) -> Result<Trajectory> {
    let n = dataset.n();
    for &i in stale {
        if i >= n {
            return Err(Error::parameter(format!("stale agent {i} out of range 0..{n}")));
        }
    }
    // sample exactly as the synchronous forward does so the n_asyn = 0
    // case is bitwise identical
    let sync = unrolled_forward(w0, dataset, theta, s, batch_seed, false)?;
    if stale.is_empty() || theta.l() == 0 {
        return Ok(sync);
    }
    let Trajectory { w_seq, batches, mode, .. } = sync;
    let w0 = w_seq.into_iter().next().expect("trajectory holds W_0");
    let mut w_seq = vec![w0];
    for (li, (lp, batch)) in theta.layers.iter().zip(&batches).enumerate() {
        let mut transmit = w_seq[li].clone();
        let lagged = &w_seq[li.saturating_sub(1)];
        for &i in stale {
            let row = match mode {
                Mode::Decentralized => i,
                Mode::Star => i + 1,
            };
            transmit.row_mut(row).assign(&lagged.row(row));
        }
        let next = udgd_layer_with_transmit(&w_seq[li], &transmit, batch, lp, s, mode)?;
        w_seq.push(next);
    }
    Ok(Trajectory { w_seq, batches, cache: None, mode })
}

/// Accuracy and loss at W_L when `n_asyn` randomly chosen agents per
/// dataset broadcast stale rows.
pub fn async_evaluate(
    theta: &UnrolledParams,
    meta_test: &MetaDataset,
    s: &ShiftOperator,
    n_asyn: usize,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
) -> Result<AsyncReport> {
    check_role(meta_test)?;
    let n = meta_test.datasets()[0].n();
    if n_asyn > n {
        return Err(Error::parameter(format!("n_asyn {n_asyn} exceeds n {n}")));
    }
    let mut per_dataset_acc = Vec::with_capacity(meta_test.len());
    let mut mean_loss = 0.0;
    for (idx, dataset) in meta_test.datasets().iter().enumerate() {
        let mut rng = seed::rng(seed, Stream::StaleSet, idx as u64);
        let stale = rand::seq::index::sample(&mut rng, n, n_asyn).into_vec();
        let w0 = dataset_w0(theta, dataset, w0_mean, w0_std, seed, idx)?;
        let traj = async_forward(
            w0,
            dataset,
            theta,
            s,
            seed::derive(seed, Stream::Batches, idx as u64),
            &stale,
        )?;
        let w_final = traj.final_weights();
        per_dataset_acc.push(fl_accuracy(w_final, dataset.test_shards(), traj.mode)?);
        mean_loss += fl_loss(w_final, dataset.test_shards(), traj.mode)?;
    }
    let q = meta_test.len() as f64;
    Ok(AsyncReport {
        n_asyn,
        mean_acc: per_dataset_acc.iter().sum::<f64>() / q,
        mean_loss: mean_loss / q,
        per_dataset_acc,
    })
}

/// Accuracy gain realized by layer L−1 as a fraction of the total gain;
/// 1 when the curve is flat.
fn gain_fraction(layer_acc: &[f64]) -> f64 {
    let l = layer_acc.len() - 1;
    if l == 0 {
        return 1.0;
    }
    let total = layer_acc[l] - layer_acc[0];
    if total.abs() < 1e-12 {
        return 1.0;
    }
    (layer_acc[l - 1] - layer_acc[0]) / total
}

/// Paired evaluation of two parameter sets on identical initial weights
/// and batches.
pub fn ablation_compare(
    theta_constrained: &UnrolledParams,
    theta_unconstrained: &UnrolledParams,
    meta_test: &MetaDataset,
    s: &ShiftOperator,
    w0_mean: f64,
    w0_std: f64,
    seed: u64,
) -> Result<AblationReport> {
    if theta_constrained.l() != theta_unconstrained.l()
        || theta_constrained.d() != theta_unconstrained.d()
        || theta_constrained.b() != theta_unconstrained.b()
        || theta_constrained.mode != theta_unconstrained.mode
    {
        return Err(Error::config("ablation requires same-shaped parameter sets"));
    }
    let constrained = meta_evaluate(theta_constrained, meta_test, s, w0_mean, w0_std, seed)?;
    let unconstrained = meta_evaluate(theta_unconstrained, meta_test, s, w0_mean, w0_std, seed)?;
    let gain_fraction_constrained = gain_fraction(&constrained.layer_acc);
    let gain_fraction_unconstrained = gain_fraction(&unconstrained.layer_acc);
    Ok(AblationReport {
        constrained,
        unconstrained,
        gain_fraction_constrained,
        gain_fraction_unconstrained,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write `{prefix}_layers.csv` and `{prefix}_summary.json`; returns the
/// paths written.
pub fn emit_report(report: &EvalReport, path_prefix: &Path) -> Result<Vec<PathBuf>> {
    let rows = report.layer_acc.len();
    if report.layer_loss.len() != rows || report.layer_grad_norm.len() != rows {
        return Err(Error::parameter("per-layer vectors must have equal length"));
    }
    let l = rows.saturating_sub(1);
    for (name, v) in [
        ("slack_satisfaction", &report.slack_satisfaction),
        ("decay_ratio", &report.decay_ratio),
    ] {
        if !v.is_empty() && v.len() != l {
            return Err(Error::parameter(format!("{name} must have length {l} or be empty")));
        }
    }
    let base = path_prefix.as_os_str().to_string_lossy().into_owned();
    let csv_path = PathBuf::from(format!("{base}_layers.csv"));
    let json_path = PathBuf::from(format!("{base}_summary.json"));

    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "layer,mean_loss,mean_acc,mean_grad_norm,slack_satisfaction,decay_ratio")?;
    for k in 0..rows {
        let slack = (k > 0).then(|| report.slack_satisfaction.get(k - 1).copied()).flatten();
        let decay = (k > 0).then(|| report.decay_ratio.get(k - 1).copied()).flatten();
        writeln!(
            w,
            "{k},{},{},{},{},{}",
            report.layer_loss[k],
            report.layer_acc[k],
            report.layer_grad_norm[k],
            fmt_cell(slack),
            fmt_cell(decay)
        )?;
    }
    w.flush()?;

    let jw = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(jw, report)?;
    Ok(vec![csv_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_meta_dataset, sample_layer_batches};
    use crate::graph::{make_regular, shift_operator, Graph, ShiftKind};
    use crate::unroll::{init_params, unrolled_forward_with_batches, LayerParams};
    use ndarray::Array2;
    use proptest::prelude::*;

    const N: usize = 6;
    const P: usize = 2;
    const C: usize = 3;
    const BC: usize = 4;

    fn meta_test(seed: u64, q: usize) -> MetaDataset {
        gen_meta_dataset(N, P, C, 8, 10, q, 1.0, 2.0, Role::MetaTest, seed).unwrap()
    }

    fn shift(seed: u64) -> ShiftOperator {
        let g = make_regular(N, 3, seed).unwrap();
        shift_operator(&g, ShiftKind::NormalizedAdjacency).unwrap()
    }

    fn theta(seed: u64, l: usize) -> UnrolledParams {
        let d = (P + 1) * C;
        init_params(l, 2, d, BC * (P + C), Mode::Decentralized, seed).unwrap()
    }

    fn identity_theta(l: usize) -> UnrolledParams {
        let d = (P + 1) * C;
        let b = BC * (P + C);
        let layers = (0..l)
            .map(|_| {
                let mut lp = LayerParams::zeros(2, d, b);
                lp.h[0] = 1.0;
                lp
            })
            .collect();
        UnrolledParams::new(layers, 2, Mode::Decentralized).unwrap()
    }

    #[test]
    fn identity_network_zero_weights_scores_chance() {
        // balanced labels, zero weights, ties resolve to class 0: the
        // accuracy is the empirical share of label 0, close to 1/C
        let meta = gen_meta_dataset(N, P, C, 8, 10, 4, 1e6, 2.0, Role::MetaTest, 11).unwrap();
        let s = shift(1);
        let report = meta_evaluate(&identity_theta(2), &meta, &s, 0.0, 0.0, 3).unwrap();
        let chance = 1.0 / C as f64;
        assert!(
            (report.layer_acc[2] - chance).abs() < 0.12,
            "acc {} vs chance {chance}",
            report.layer_acc[2]
        );
        // constant trajectory: identical metrics at every layer
        assert_eq!(report.layer_acc[0], report.layer_acc[2]);
        assert_eq!(report.layer_loss[0], report.layer_loss[2]);
    }

    #[test]
    fn report_shapes() {
        let meta = meta_test(5, 3);
        let s = shift(2);
        let report = meta_evaluate(&theta(7, 3), &meta, &s, 0.0, 0.3, 9).unwrap();
        assert_eq!(report.per_dataset_acc.len(), 3);
        assert_eq!(report.layer_acc.len(), 4);
        assert_eq!(report.layer_loss.len(), 4);
        assert_eq!(report.layer_grad_norm.len(), 4);
        assert_eq!(report.decay_ratio.len(), 3);
        assert!(report.slack_satisfaction.is_empty());
        for a in report
            .per_dataset_acc
            .iter()
            .chain(report.layer_acc.iter())
        {
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn meta_evaluate_requires_meta_test_role() {
        let meta = gen_meta_dataset(N, P, C, 8, 10, 2, 1.0, 2.0, Role::MetaTrain, 1).unwrap();
        let s = shift(3);
        assert!(meta_evaluate(&theta(1, 2), &meta, &s, 0.0, 0.3, 1).is_err());
    }

    #[test]
    fn accuracy_matches_per_example_oracle() {
        let meta = meta_test(13, 2);
        let s = shift(4);
        let th = theta(15, 2);
        let report = meta_evaluate(&th, &meta, &s, 0.0, 0.3, 17).unwrap();
        for (idx, dataset) in meta.datasets().iter().enumerate() {
            let traj = forward_for(&th, dataset, &s, 0.0, 0.3, 17, idx).unwrap();
            let w = traj.final_weights();
            let mut acc = 0.0;
            for (i, shard) in dataset.test_shards().iter().enumerate() {
                let mut hits = 0;
                for e in 0..shard.len() {
                    let probs = task::predict(w.row(i), shard.x.row(e)).unwrap();
                    let mut best = 0;
                    for k in 1..C {
                        if probs[k] > probs[best] {
                            best = k;
                        }
                    }
                    if best == shard.y[e] {
                        hits += 1;
                    }
                }
                acc += hits as f64 / shard.len() as f64;
            }
            acc /= dataset.n() as f64;
            assert!((acc - report.per_dataset_acc[idx]).abs() < 1e-15);
        }
    }

    #[test]
    fn diagnostics_identity_network_never_satisfies() {
        let meta = meta_test(19, 3);
        let s = shift(5);
        let diag =
            layer_diagnostics(&identity_theta(3), &meta, &s, 0.05, 0.0, 0.3, 21).unwrap();
        assert_eq!(diag.satisfaction, vec![0.0, 0.0, 0.0]);
        // constant trajectory: every decay ratio is exactly 1
        for r in &diag.decay_ratio {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn satisfaction_rates_halving_arithmetic() {
        // norms 1, 1/2, 1/4 with ε = 0.01: s_l = norm_l − 0.99 norm_{l−1} < 0
        let slacks = vec![vec![0.5 - 0.99, 0.25 - 0.99 * 0.5]; 7];
        assert_eq!(satisfaction_rates(&slacks), vec![1.0, 1.0]);
        // identity trajectory: slack ε‖g‖ > 0 at every layer
        let slacks = vec![vec![0.01, 0.01]; 7];
        assert_eq!(satisfaction_rates(&slacks), vec![0.0, 0.0]);
    }

    #[test]
    fn async_zero_stale_is_bitwise_sync() {
        let meta = meta_test(23, 3);
        let s = shift(6);
        let th = theta(25, 2);
        let sync = meta_evaluate(&th, &meta, &s, 0.0, 0.3, 27).unwrap();
        let asy = async_evaluate(&th, &meta, &s, 0, 0.0, 0.3, 27).unwrap();
        for (a, b) in sync.per_dataset_acc.iter().zip(asy.per_dataset_acc.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // trajectory-level check
        let dataset = &meta.datasets()[0];
        let w0 = dataset_w0(&th, dataset, 0.0, 0.3, 27, 0).unwrap();
        let bs = seed::derive(27, Stream::Batches, 0);
        let t_sync = unrolled_forward(w0.clone(), dataset, &th, &s, bs, false).unwrap();
        let t_async = async_forward(w0, dataset, &th, &s, bs, &[]).unwrap();
        for (a, b) in t_sync.w_seq.iter().zip(t_async.w_seq.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn async_identity_network_ignores_staleness() {
        let meta = meta_test(29, 2);
        let s = shift(7);
        let th = identity_theta(2);
        let dataset = &meta.datasets()[0];
        let w0 = dataset_w0(&th, dataset, 0.0, 0.3, 31, 0).unwrap();
        let all: Vec<usize> = (0..N).collect();
        let traj = async_forward(w0.clone(), dataset, &th, &s, 1, &all).unwrap();
        // constant trajectory: staleness has nothing to lag
        for (x, y) in traj.final_weights().iter().zip(w0.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn async_staleness_changes_nonconstant_trajectories() {
        let meta = meta_test(31, 2);
        let s = shift(8);
        let th = theta(33, 2);
        let dataset = &meta.datasets()[0];
        let w0 = dataset_w0(&th, dataset, 0.0, 0.3, 35, 0).unwrap();
        let sync = async_forward(w0.clone(), dataset, &th, &s, 1, &[]).unwrap();
        let stale = async_forward(w0, dataset, &th, &s, 1, &[0, 1]).unwrap();
        let diff: f64 = sync
            .final_weights()
            .iter()
            .zip(stale.final_weights().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn async_validates_range() {
        let meta = meta_test(37, 2);
        let s = shift(9);
        assert!(async_evaluate(&theta(1, 2), &meta, &s, N + 1, 0.0, 0.3, 1).is_err());
        let dataset = &meta.datasets()[0];
        let w0 = dataset_w0(&theta(1, 2), dataset, 0.0, 0.3, 1, 0).unwrap();
        assert!(async_forward(w0, dataset, &theta(1, 2), &s, 1, &[N]).is_err());
    }

    #[test]
    fn ablation_identical_params_identical_curves() {
        let meta = meta_test(41, 3);
        let s = shift(10);
        let th = theta(43, 2);
        let rep = ablation_compare(&th, &th, &meta, &s, 0.0, 0.3, 45).unwrap();
        assert_eq!(rep.constrained, rep.unconstrained);
        assert_eq!(rep.constrained.layer_acc.len(), 3);
        assert_eq!(rep.gain_fraction_constrained, rep.gain_fraction_unconstrained);
    }

    #[test]
    fn ablation_rejects_shape_mismatch() {
        let meta = meta_test(47, 2);
        let s = shift(11);
        assert!(ablation_compare(&theta(1, 2), &theta(1, 3), &meta, &s, 0.0, 0.3, 1).is_err());
    }

    #[test]
    fn gain_fraction_flat_curve_is_one() {
        assert_eq!(gain_fraction(&[0.2, 0.2, 0.2]), 1.0);
        // all gain at the last layer
        assert_eq!(gain_fraction(&[0.2, 0.2, 0.9]), 0.0);
        // all gain by the second-to-last layer
        assert_eq!(gain_fraction(&[0.2, 0.9, 0.9]), 1.0);
    }

    #[test]
    fn emit_report_row_count_and_round_trip() {
        let meta = meta_test(49, 2);
        let s = shift(12);
        let report = meta_evaluate(&theta(51, 3), &meta, &s, 0.0, 0.3, 53).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&report, &dir.path().join("run")).unwrap();
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4, "header plus L+1 rows");
        assert_eq!(
            lines[0],
            "layer,mean_loss,mean_acc,mean_grad_norm,slack_satisfaction,decay_ratio"
        );
        // layer-0 constraint cells are empty, later ones filled
        assert!(lines[1].ends_with(",,"));
        assert!(!lines[2].ends_with(",,"));

        let loaded: EvalReport =
            serde_json::from_reader(File::open(&paths[1]).unwrap()).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn emit_report_empty_is_header_only() {
        let report = EvalReport {
            per_dataset_acc: vec![],
            layer_loss: vec![],
            layer_acc: vec![],
            layer_grad_norm: vec![],
            slack_satisfaction: vec![],
            decay_ratio: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&report, &dir.path().join("empty")).unwrap();
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn satisfaction_invariant_under_agent_permutation() {
        let meta = meta_test(55, 1);
        let dataset = &meta.datasets()[0];
        let th = theta(57, 2);
        let g = make_regular(N, 3, 13).unwrap();
        let s = shift_operator(&g, ShiftKind::NormalizedAdjacency).unwrap();
        let d = (P + 1) * C;
        let w0 = init_w0(N, d, 0.0, 0.3, 59).unwrap();
        let batches = sample_layer_batches(dataset, 2, BC, 61).unwrap();
        let traj = unrolled_forward_with_batches(w0.clone(), batches.clone(), &th, &s, true)
            .unwrap();
        let slacks = constraint_slacks(&traj, dataset, 0.05).unwrap();

        // relabel agents by the cyclic shift i -> i+1
        let perm: Vec<usize> = (0..N).map(|i| (i + 1) % N).collect();
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let pg = Graph::from_edges(N, &edges).unwrap();
        let ps = shift_operator(&pg, ShiftKind::NormalizedAdjacency).unwrap();
        let mut pw0 = Array2::zeros(w0.dim());
        for i in 0..N {
            pw0.row_mut(perm[i]).assign(&w0.row(i));
        }
        let mut ptrain: Vec<Shard> = dataset.train_shards().to_vec();
        let mut ptest: Vec<Shard> = dataset.test_shards().to_vec();
        for i in 0..N {
            ptrain[perm[i]] = dataset.train_shards()[i].clone();
            ptest[perm[i]] = dataset.test_shards()[i].clone();
        }
        let pdataset = FLDataset::new(ptrain, ptest, C).unwrap();
        let pbatches: Vec<_> = batches
            .iter()
            .map(|b| {
                let mut matrix = Array2::zeros(b.matrix.dim());
                let mut indices = vec![Vec::new(); N];
                for i in 0..N {
                    matrix.row_mut(perm[i]).assign(&b.matrix.row(i));
                    indices[perm[i]] = b.indices[i].clone();
                }
                crate::data::LayerBatch { matrix, indices }
            })
            .collect();
        let ptraj = unrolled_forward_with_batches(pw0, pbatches, &th, &ps, true).unwrap();
        let pslacks = constraint_slacks(&ptraj, &pdataset, 0.05).unwrap();
        for (a, b) in slacks.s.iter().zip(pslacks.s.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn async_report_means_match_per_dataset() {
        let meta = meta_test(63, 4);
        let s = shift(14);
        let rep = async_evaluate(&theta(65, 2), &meta, &s, 2, 0.0, 0.3, 67).unwrap();
        assert_eq!(rep.n_asyn, 2);
        assert_eq!(rep.per_dataset_acc.len(), 4);
        let mean = rep.per_dataset_acc.iter().sum::<f64>() / 4.0;
        assert!((mean - rep.mean_acc).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn satisfaction_rates_always_in_unit_interval(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1.0f64..1.0, 3),
                1..8,
            )
        ) {
            let rates = satisfaction_rates(&rows);
            prop_assert_eq!(rates.len(), 3);
            prop_assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
}
