//! `train`: primal-dual meta-training of the unrolled optimizer, with
//! bitwise-exact resume from a checkpoint.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedunroll::data::Role;
use fedunroll::graph::{shift_operator, Graph, ShiftKind};
use fedunroll::train::{
    init_state, load_checkpoint, primal_dual_train_from, save_checkpoint, TrainHistory,
};
use fedunroll::unroll::Mode;

use crate::config::{load_config, GraphKind, TrainFileConfig};
use crate::data_io::load_meta;
use crate::manifest::{ensure_dir, RunManifest};
use crate::{config_err, core_err, data_err, run_err, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const GRAPH_FILE: &str = "graph.edges";

pub fn shift_kind(mode: Mode) -> ShiftKind {
    match mode {
        Mode::Decentralized => ShiftKind::NormalizedAdjacency,
        Mode::Star => ShiftKind::StarRow,
    }
}

fn write_graph(g: &Graph, path: &Path) -> CliResult<()> {
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| run_err(format!("cannot write graph: {e}")))?,
    );
    g.write_edge_list(&mut w).map_err(core_err)?;
    w.flush().map_err(|e| run_err(format!("cannot write graph: {e}")))?;
    Ok(())
}

fn write_history(history: &TrainHistory, l: usize, path: &Path) -> CliResult<()> {
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| run_err(format!("cannot write history: {e}")))?,
    );
    let mut header = String::from("iter,datasets,value,objective");
    for i in 1..=l {
        header.push_str(&format!(",slack_{i}"));
    }
    for i in 1..=l {
        header.push_str(&format!(",lambda_{i}"));
    }
    for i in 0..=l {
        header.push_str(&format!(",norm_{i}"));
    }
    writeln!(w, "{header}").map_err(|e| run_err(format!("history: {e}")))?;
    for r in &history.records {
        let datasets: Vec<String> = r.dataset_indices.iter().map(|i| i.to_string()).collect();
        let mut line = format!("{},{},{},{}", r.iter, datasets.join(";"), r.value, r.objective);
        for v in r.slacks.iter().chain(r.lambda.iter()).chain(r.grad_norms.iter()) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(|e| run_err(format!("history: {e}")))?;
    }
    w.flush().map_err(|e| run_err(format!("history: {e}")))?;
    Ok(())
}

pub fn run(
    config: &Path,
    data_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    no_constraints: bool,
    resume: bool,
) -> CliResult<()> {
    let mut file_cfg: TrainFileConfig = load_config(config)?;
    if let Some(s) = seed {
        file_cfg.seed = s;
    }
    if no_constraints {
        file_cfg.constraints = false;
    }
    if file_cfg.mode == Mode::Star && file_cfg.graph.kind != GraphKind::Star {
        return Err(config_err("star mode requires graph.kind = \"star\""));
    }
    let cfg = file_cfg.to_core();

    let (index, meta) = load_meta(data_dir, Role::MetaTrain)?;
    let graph = file_cfg.graph.build(index.n).map_err(core_err)?;
    let s = shift_operator(&graph, shift_kind(cfg.mode)).map_err(core_err)?;

    ensure_dir(out_dir)?;
    let snapshot = serde_json::to_value(&file_cfg).expect("config serializes");
    let mut manifest = RunManifest::new("train", Some(config), snapshot, cfg.seed, out_dir);
    manifest.write(out_dir)?;

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let state = if resume {
        let ckpt = load_checkpoint(&ckpt_path)
            .map_err(|e| data_err(format!("cannot resume from {}: {e}", ckpt_path.display())))?;
        // the epoch horizon may grow on resume; everything else is pinned
        let mut stored = ckpt.config.clone();
        stored.epochs = cfg.epochs;
        if stored != cfg {
            return Err(config_err(
                "checkpoint was trained with a different configuration",
            ));
        }
        ckpt.state
    } else {
        init_state(&meta, &cfg).map_err(core_err)?
    };

    let state = primal_dual_train_from(&meta, &s, &cfg, state).map_err(core_err)?;

    save_checkpoint(&cfg, &state, &ckpt_path).map_err(core_err)?;
    let history_path = out_dir.join(HISTORY_FILE);
    write_history(&state.history, cfg.l, &history_path)?;
    let graph_path = out_dir.join(GRAPH_FILE);
    write_graph(&graph, &graph_path)?;

    let artifacts: Vec<PathBuf> = vec![ckpt_path, history_path, graph_path];
    manifest.record_artifacts(out_dir, &artifacts)?;
    manifest.write(out_dir)?;

    let last = state.history.records.last();
    println!(
        "trained {} iterations; final objective {}",
        state.completed_iters,
        last.map(|r| r.objective.to_string()).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}
