//! Primal-dual meta-training: adaptive-moment descent on the layer
//! parameters and projected gradient ascent on the constraint
//! multipliers, one randomly drawn dataset per iteration. Every
//! per-iteration random choice is derived statelessly from the config
//! seed and the iteration index, so a resumed run is bitwise identical
//! to an uninterrupted one.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MetaDataset, Role};
use crate::error::{Error, Result};
use crate::grad::lagrangian_grad;
use crate::graph::ShiftOperator;
use crate::seed::{self, Stream};
use crate::unroll::{init_params, init_w0, Mode, UnrolledParams};

/// Everything one training run needs beyond the data and the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l: usize,
    pub k: usize,
    pub epochs: usize,
    pub mu_theta: f64,
    pub mu_lambda: f64,
    pub epsilon: f64,
    pub b_count: usize,
    pub seed: u64,
    pub mode: Mode,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub constraints_enabled: bool,
    /// Mean and deviation of the Gaussian initial stacked weights.
    pub w0_mean: f64,
    pub w0_std: f64,
    /// Datasets averaged per iteration; 1 matches the reference loop.
    pub meta_batch: usize,
    /// Adaptive moments by default; false selects the plain gradient step.
    pub use_adam: bool,
}

impl TrainConfig {
    fn validate(&self, meta: &MetaDataset) -> Result<()> {
        if meta.role() != Role::MetaTrain {
            return Err(Error::config("training expects a meta-train dataset"));
        }
        if self.mu_theta <= 0.0 || self.mu_lambda <= 0.0 {
            return Err(Error::config("step sizes must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if self.l == 0 || self.k == 0 {
            return Err(Error::config("L and K must be positive"));
        }
        if self.mode == Mode::Star && self.k != 1 {
            return Err(Error::config("star mode requires K=1"));
        }
        if self.meta_batch == 0 {
            return Err(Error::config("meta_batch must be at least 1"));
        }
        let m = meta.datasets()[0].m_train();
        if self.b_count > m || self.b_count * self.l < m {
            return Err(Error::config(format!(
                "b_count {} incompatible with m_train {m} over {} layers",
                self.b_count, self.l
            )));
        }
        if self.w0_std < 0.0 {
            return Err(Error::config("w0_std must be nonnegative"));
        }
        Ok(())
    }

    /// Classifier dimension implied by the data shape.
    fn dims(&self, meta: &MetaDataset) -> (usize, usize, usize) {
        let ds = &meta.datasets()[0];
        let d = (ds.p() + 1) * ds.c();
        let b = self.b_count * (ds.p() + ds.c());
        let n_nodes = match self.mode {
            Mode::Decentralized => ds.n(),
            Mode::Star => ds.n() + 1,
        };
        (d, b, n_nodes)
    }
}

/// One training iteration's logged quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub dataset_indices: Vec<usize>,
    pub value: f64,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub lambda: Vec<f64>,
    /// ‖∇f(W_l)‖ per layer, l = 0..=L, averaged over the meta-batch.
    pub grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterRecord>,
}

/// First/second-moment buffers of the adaptive step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn zeros(len: usize) -> AdamState {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Bias-corrected adaptive-moment update applied in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    mu_theta: f64,
    betas: (f64, f64),
    eps_hat: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= mu_theta * m_hat / (v_hat.sqrt() + eps_hat);
    }
}

/// Projected dual ascent: λ'_l = [λ_l + μ_λ s_l]_+.
pub fn dual_ascent_step(lambda: &[f64], slacks: &[f64], mu_lambda: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(slacks)
        .map(|(&l, &s)| (l + mu_lambda * s).max(0.0))
        .collect()
}

/// Layer parameters as one coordinate vector (h, M, c per layer), in the
/// same order [`crate::grad::ParamGrads::flat`] uses.
pub fn flatten_params(theta: &UnrolledParams) -> Vec<f64> {
    let mut out = Vec::new();
    for lp in &theta.layers {
        out.extend(lp.h.iter());
        out.extend(lp.m.iter());
        out.extend(lp.c.iter());
    }
    out
}

/// Inverse of [`flatten_params`].
pub fn assign_flat(theta: &mut UnrolledParams, flat: &[f64]) {
    let mut it = flat.iter();
    for lp in &mut theta.layers {
        for v in lp.h.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
        for v in lp.m.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
        for v in lp.c.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
    }
    assert!(it.next().is_none(), "flat vector too long");
}

/// Mutable training state; checkpointing serializes exactly this plus
/// the config, so a resumed run continues bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: UnrolledParams,
    pub lambda: Vec<f64>,
    pub adam: AdamState,
    pub completed_iters: usize,
    pub history: TrainHistory,
}

/// Fresh state: consensus-leaning θ init, λ = 0, zero moments.
pub fn init_state(meta: &MetaDataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate(meta)?;
    let (d, b, _) = cfg.dims(meta);
    let theta = init_params(cfg.l, cfg.k, d, b, cfg.mode, cfg.seed)?;
    let n_params = flatten_params(&theta).len();
    Ok(TrainState {
        theta,
        lambda: vec![0.0; cfg.l],
        adam: AdamState::zeros(n_params),
        completed_iters: 0,
        history: TrainHistory::default(),
    })
}

/// Run meta-training from scratch.
pub fn primal_dual_train(
    meta: &MetaDataset,
    s: &ShiftOperator,
    cfg: &TrainConfig,
) -> Result<(UnrolledParams, Vec<f64>, TrainHistory)> {
    let state = init_state(meta, cfg)?;
    let state = primal_dual_train_from(meta, s, cfg, state)?;
    Ok((state.theta, state.lambda, state.history))
}

/// Continue meta-training until `epochs × Q` total iterations, starting
/// from (possibly checkpointed) state.
pub fn primal_dual_train_from(
    meta: &MetaDataset,
    s: &ShiftOperator,
    cfg: &TrainConfig,
    mut state: TrainState,
) -> Result<TrainState> {
    cfg.validate(meta)?;
    let (d, b, n_nodes) = cfg.dims(meta);
    if state.theta.l() != cfg.l
        || state.theta.d() != Some(d)
        || state.theta.b() != Some(b)
        || state.theta.mode != cfg.mode
    {
        return Err(Error::config("state shape does not match config and data"));
    }
    if s.n() != n_nodes {
        return Err(Error::config(format!(
            "graph has {} nodes, expected {n_nodes}",
            s.n()
        )));
    }
    let q = meta.len();
    let total = cfg.epochs * q;
    let mut params = flatten_params(&state.theta);

    for t in state.completed_iters..total {
        let mut chooser = seed::rng(cfg.seed, Stream::DatasetChoice, t as u64);
        let mut indices = Vec::with_capacity(cfg.meta_batch);
        let mut flat_sum: Option<Vec<f64>> = None;
        let mut value = 0.0;
        let mut objective = 0.0;
        let mut slacks = vec![0.0; cfg.l];
        let mut norms = vec![0.0; cfg.l + 1];
        let lambda_eff: Vec<f64> = if cfg.constraints_enabled {
            state.lambda.clone()
        } else {
            vec![0.0; cfg.l]
        };
        for j in 0..cfg.meta_batch {
            let idx = chooser.random_range(0..q);
            indices.push(idx);
            let dataset = &meta.datasets()[idx];
            let iter_tag = (t as u64) ^ (j as u64).rotate_left(48);
            let w0_seed = seed::derive(cfg.seed, Stream::WeightInit, iter_tag);
            let batch_seed = seed::derive(cfg.seed, Stream::Batches, iter_tag);
            let w0 = init_w0(n_nodes, d, cfg.w0_mean, cfg.w0_std, w0_seed)?;
            let out = lagrangian_grad(
                &state.theta,
                &lambda_eff,
                dataset,
                s,
                cfg.epsilon,
                &w0,
                batch_seed,
            )?;
            let flat = out.grads.flat();
            match &mut flat_sum {
                None => flat_sum = Some(flat),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&flat) {
                        *a += g;
                    }
                }
            }
            value += out.value;
            objective += out.objective;
            for (a, v) in slacks.iter_mut().zip(&out.slacks.s) {
                *a += v;
            }
            for (a, v) in norms.iter_mut().zip(&out.norms) {
                *a += v;
            }
        }
        let scale = 1.0 / cfg.meta_batch as f64;
        let mut flat_grads = flat_sum.expect("meta_batch >= 1");
        if cfg.meta_batch > 1 {
            for g in flat_grads.iter_mut() {
                *g *= scale;
            }
            value *= scale;
            objective *= scale;
            for v in slacks.iter_mut() {
                *v *= scale;
            }
            for v in norms.iter_mut() {
                *v *= scale;
            }
        }

        if cfg.use_adam {
            adam_step(
                &mut state.adam,
                &mut params,
                &flat_grads,
                cfg.mu_theta,
                cfg.adam_betas,
                cfg.adam_eps,
            );
        } else {
            for (p, g) in params.iter_mut().zip(&flat_grads) {
                *p -= cfg.mu_theta * g;
            }
        }
        assign_flat(&mut state.theta, &params);

        if cfg.constraints_enabled {
            state.lambda = dual_ascent_step(&state.lambda, &slacks, cfg.mu_lambda);
        }

        state.history.records.push(IterRecord {
            iter: t,
            dataset_indices: indices,
            value,
            objective,
            slacks,
            lambda: state.lambda.clone(),
            grad_norms: norms,
        });
        state.completed_iters = t + 1;
    }
    Ok(state)
}

/// On-disk checkpoint: config, tensors, moments, history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub state: TrainState,
}

pub const CHECKPOINT_SCHEMA: u32 = 1;

pub fn save_checkpoint(cfg: &TrainConfig, state: &TrainState, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA,
        config: cfg.clone(),
        state: state.clone(),
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = BufReader::new(File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(r)?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::config(format!(
            "unsupported checkpoint schema {}",
            ckpt.schema_version
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_meta_dataset;
    use crate::graph::{make_regular, shift_operator, ShiftKind};
    use proptest::prelude::*;

    fn toy_meta(seed: u64, n: usize, q: usize) -> MetaDataset {
        gen_meta_dataset(n, 2, 2, 8, 4, q, 1.0, 2.0, Role::MetaTrain, seed).unwrap()
    }

    fn toy_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            l: 2,
            k: 2,
            epochs: 2,
            mu_theta: 1e-2,
            mu_lambda: 1e-2,
            epsilon: 0.05,
            b_count: 4,
            seed,
            mode: Mode::Decentralized,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            constraints_enabled: true,
            w0_mean: 0.0,
            w0_std: 0.3,
            meta_batch: 1,
            use_adam: true,
        }
    }

    fn toy_shift(seed: u64, n: usize) -> ShiftOperator {
        let g = make_regular(n, 3, seed).unwrap();
        shift_operator(&g, ShiftKind::NormalizedAdjacency).unwrap()
    }

    #[test]
    fn adam_first_step_closed_form() {
        let grads = vec![0.5, -2.0, 0.0, 1e-3];
        let mut params = vec![1.0, 1.0, 1.0, 1.0];
        let mut state = AdamState::zeros(4);
        let mu = 0.01;
        let eps = 1e-8;
        adam_step(&mut state, &mut params, &grads, mu, (0.9, 0.999), eps);
        for (i, &g) in grads.iter().enumerate() {
            let expect = 1.0 - mu * g / (g.abs() + eps);
            assert!((params[i] - expect).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn adam_zero_grads_no_motion() {
        let mut params = vec![0.7, -0.2];
        let mut state = AdamState { m: vec![0.4, -0.1], v: vec![0.5, 0.2], t: 3 };
        adam_step(&mut state, &mut params, &[0.0, 0.0], 0.1, (0.9, 0.999), 1e-8);
        // moments decay toward zero, parameters still move along stale m
        assert!(state.m[0] < 0.4 && state.v[0] < 0.5);

        let mut fresh = AdamState::zeros(2);
        let mut p2 = vec![0.7, -0.2];
        adam_step(&mut fresh, &mut p2, &[0.0, 0.0], 0.1, (0.9, 0.999), 1e-8);
        assert_eq!(p2, vec![0.7, -0.2]);
    }

    #[test]
    fn adam_is_stateful() {
        // sign-flipped second gradient: carried first moments nearly cancel,
        // so the stateful second step is much smaller than a fresh one
        let g1 = vec![1.0, -0.5];
        let g2 = vec![-1.0, 0.5];
        let mut p1 = vec![0.0, 0.0];
        let mut s1 = AdamState::zeros(2);
        adam_step(&mut s1, &mut p1, &g1, 0.1, (0.9, 0.999), 1e-8);
        let before = p1.clone();
        adam_step(&mut s1, &mut p1, &g2, 0.1, (0.9, 0.999), 1e-8);
        let stateful_move = (p1[0] - before[0]).abs();

        let mut p2 = before.clone();
        let mut fresh = AdamState::zeros(2);
        adam_step(&mut fresh, &mut p2, &g2, 0.1, (0.9, 0.999), 1e-8);
        let fresh_move = (p2[0] - before[0]).abs();
        assert!(stateful_move < 0.5 * fresh_move);
    }

    #[test]
    fn dual_step_projection() {
        let l = dual_ascent_step(&[0.1, 0.0], &[-100.0, -5.0], 0.01);
        assert_eq!(l, vec![0.0, 0.0]);
        let l = dual_ascent_step(&[0.0, 0.0, 0.0], &[0.5, 0.5, 0.5], 1e-2);
        for v in &l {
            assert!((v - 5e-3).abs() < 1e-15);
        }
        let l2 = dual_ascent_step(&l, &[0.0, 0.0, 0.0], 7.0);
        assert_eq!(l, l2);
    }

    #[test]
    fn flatten_round_trip() {
        let theta = init_params(3, 2, 5, 7, Mode::Decentralized, 5).unwrap();
        let flat = flatten_params(&theta);
        let mut other = init_params(3, 2, 5, 7, Mode::Decentralized, 99).unwrap();
        assign_flat(&mut other, &flat);
        assert_eq!(theta, other);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let meta = toy_meta(1, 4, 3);
        let s = toy_shift(1, 4);
        let mut cfg = toy_cfg(2);
        cfg.epochs = 0;
        let (theta, lambda, history) = primal_dual_train(&meta, &s, &cfg).unwrap();
        let init = init_state(&meta, &cfg).unwrap();
        assert_eq!(theta, init.theta);
        assert_eq!(lambda, vec![0.0, 0.0]);
        assert!(history.records.is_empty());
    }

    #[test]
    fn full_scale_config_runs() {
        let meta = gen_meta_dataset(8, 3, 3, 20, 10, 2, 0.5, 2.0, Role::MetaTrain, 3).unwrap();
        let s = toy_shift(2, 8);
        let cfg = TrainConfig {
            l: 10,
            k: 2,
            epochs: 1,
            mu_theta: 1e-2,
            mu_lambda: 1e-2,
            epsilon: 0.01,
            b_count: 10,
            seed: 4,
            mode: Mode::Decentralized,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            constraints_enabled: true,
            w0_mean: 0.0,
            w0_std: 0.3,
            meta_batch: 1,
            use_adam: true,
        };
        let (_, lambda, history) = primal_dual_train(&meta, &s, &cfg).unwrap();
        assert_eq!(history.records.len(), 2);
        assert_eq!(lambda.len(), 10);
        assert!(history.records.iter().all(|r| r.value.is_finite()));
    }

    #[test]
    fn first_iteration_matches_unconstrained_bitwise() {
        let meta = toy_meta(5, 4, 3);
        let s = toy_shift(3, 4);
        let mut cfg = toy_cfg(6);
        cfg.epochs = 1;
        // one iteration only
        let meta1 = MetaDataset::new(vec![meta.datasets()[0].clone()], Role::MetaTrain).unwrap();
        let (ta, _, _) = primal_dual_train(&meta1, &s, &cfg).unwrap();
        let mut un = cfg.clone();
        un.constraints_enabled = false;
        let (tb, _, _) = primal_dual_train(&meta1, &s, &un).unwrap();
        for (a, b) in flatten_params(&ta).iter().zip(flatten_params(&tb).iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let meta = toy_meta(7, 4, 3);
        let s = toy_shift(4, 4);
        let cfg = toy_cfg(8);
        let (t1, l1, h1) = primal_dual_train(&meta, &s, &cfg).unwrap();
        let (t2, l2, h2) = primal_dual_train(&meta, &s, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(l1, l2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn lambda_nonnegative_throughout() {
        let meta = toy_meta(9, 4, 4);
        let s = toy_shift(5, 4);
        let cfg = toy_cfg(10);
        let (_, _, history) = primal_dual_train(&meta, &s, &cfg).unwrap();
        for r in &history.records {
            assert!(r.lambda.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn lambda_rises_under_positive_slack() {
        // identity layers never descend, so slacks stay positive and the
        // multipliers must strictly increase while training has not yet
        // reshaped the layers
        let meta = toy_meta(11, 4, 5);
        let s = toy_shift(6, 4);
        let mut cfg = toy_cfg(12);
        cfg.epochs = 2; // 10 iterations
        cfg.mu_theta = 1e-9; // hold θ nearly still
        let mut state = init_state(&meta, &cfg).unwrap();
        for lp in &mut state.theta.layers {
            lp.h.fill(0.0);
            lp.h[0] = 1.0;
            lp.m.fill(0.0);
            lp.c.fill(0.0);
        }
        let out = primal_dual_train_from(&meta, &s, &cfg, state).unwrap();
        let mut prev = vec![0.0; cfg.l];
        for r in &out.history.records {
            for l in 0..cfg.l {
                assert!(r.lambda[l] > prev[l], "iter {}: λ_{l} did not rise", r.iter);
            }
            prev = r.lambda.clone();
        }
    }

    #[test]
    fn objective_trends_down() {
        let meta = toy_meta(13, 4, 5);
        let s = toy_shift(7, 4);
        let mut cfg = toy_cfg(14);
        cfg.epochs = 12; // 60 iterations
        let (_, _, history) = primal_dual_train(&meta, &s, &cfg).unwrap();
        let vals: Vec<f64> = history.records.iter().map(|r| r.objective).collect();
        let window = vals.len() / 5;
        let head: f64 = vals[..window].iter().sum::<f64>() / window as f64;
        let tail: f64 = vals[vals.len() - window..].iter().sum::<f64>() / window as f64;
        assert!(tail <= head, "objective rose: head {head}, tail {tail}");
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let meta = toy_meta(15, 4, 3);
        let s = toy_shift(8, 4);
        let cfg = toy_cfg(16);

        // uninterrupted reference: 2 epochs = 6 iterations
        let (tref, lref, href) = primal_dual_train(&meta, &s, &cfg).unwrap();

        // interrupted: stop after epoch 1, checkpoint, reload, continue
        let mut half = cfg.clone();
        half.epochs = 1;
        let state = init_state(&meta, &half).unwrap();
        let state = primal_dual_train_from(&meta, &s, &half, state).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&cfg, &state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.state, state);
        let resumed = primal_dual_train_from(&meta, &s, &cfg, loaded.state).unwrap();

        assert_eq!(flatten_params(&resumed.theta), flatten_params(&tref));
        for (a, b) in flatten_params(&resumed.theta)
            .iter()
            .zip(flatten_params(&tref).iter())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(resumed.lambda, lref);
        assert_eq!(resumed.history, href);
    }

    #[test]
    fn checkpoint_truncated_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"schema_version\": 1, \"config\":").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn config_validation() {
        let meta = toy_meta(17, 4, 2);
        let s = toy_shift(9, 4);
        let mut cfg = toy_cfg(18);
        cfg.mu_theta = 0.0;
        assert!(matches!(primal_dual_train(&meta, &s, &cfg), Err(Error::Config(_))));
        let mut cfg = toy_cfg(18);
        cfg.b_count = 1; // cannot cover 8 examples in 2 layers
        assert!(matches!(primal_dual_train(&meta, &s, &cfg), Err(Error::Config(_))));
        let mut cfg = toy_cfg(18);
        cfg.epsilon = 1.0;
        assert!(matches!(primal_dual_train(&meta, &s, &cfg), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn dual_step_stays_nonnegative(
            lambda in proptest::collection::vec(0.0f64..10.0, 1..6),
            slack_mag in proptest::collection::vec(-10.0f64..10.0, 1..6),
            mu in 1e-4f64..1.0,
        ) {
            let len = lambda.len().min(slack_mag.len());
            let out = dual_ascent_step(&lambda[..len], &slack_mag[..len], mu);
            prop_assert!(out.iter().all(|&v| v >= 0.0));
        }
    }
}
