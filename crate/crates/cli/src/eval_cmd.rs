//! `eval`: meta-test evaluation of a trained checkpoint, plus the
//! optional staleness sweep. The training run's graph is read back from
//! the checkpoint's directory so evaluation sees the same topology.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fedunroll::data::Role;
use fedunroll::eval::{async_evaluate, emit_report, layer_diagnostics, meta_evaluate};
use fedunroll::graph::{shift_operator, Graph};
use fedunroll::train::load_checkpoint;

use crate::data_io::load_meta;
use crate::manifest::{ensure_dir, RunManifest};
use crate::train_cmd::{shift_kind, GRAPH_FILE};
use crate::{core_err, data_err, run_err, CliResult};

pub fn run(
    checkpoint: &Path,
    data_dir: &Path,
    out_dir: &Path,
    seed: u64,
    async_counts: Option<&[usize]>,
) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)
        .map_err(|e| data_err(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let cfg = ckpt.config;
    let theta = ckpt.state.theta;

    let graph_path = checkpoint
        .parent()
        .map(|p| p.join(GRAPH_FILE))
        .ok_or_else(|| data_err("checkpoint path has no parent directory"))?;
    let reader = BufReader::new(File::open(&graph_path).map_err(|e| {
        data_err(format!("cannot open graph {}: {e}", graph_path.display()))
    })?);
    let graph = Graph::read_edge_list(reader)
        .map_err(|e| data_err(format!("graph {}: {e}", graph_path.display())))?;
    let s = shift_operator(&graph, shift_kind(cfg.mode)).map_err(core_err)?;

    let (_, meta) = load_meta(data_dir, Role::MetaTest)?;

    ensure_dir(out_dir)?;
    let snapshot = serde_json::to_value(&cfg).expect("config serializes");
    let mut manifest = RunManifest::new("eval", None, snapshot, seed, out_dir);
    manifest.write(out_dir)?;

    let mut report =
        meta_evaluate(&theta, &meta, &s, cfg.w0_mean, cfg.w0_std, seed).map_err(core_err)?;
    let diag = layer_diagnostics(&theta, &meta, &s, cfg.epsilon, cfg.w0_mean, cfg.w0_std, seed)
        .map_err(core_err)?;
    report.slack_satisfaction = diag.satisfaction;
    report.decay_ratio = diag.decay_ratio;
    let mut artifacts: Vec<PathBuf> =
        emit_report(&report, &out_dir.join("eval")).map_err(core_err)?;

    if let Some(counts) = async_counts {
        let path = out_dir.join("async.csv");
        let mut w = BufWriter::new(
            File::create(&path).map_err(|e| run_err(format!("cannot write async sweep: {e}")))?,
        );
        writeln!(w, "n_asyn,mean_acc,mean_loss").map_err(|e| run_err(format!("async: {e}")))?;
        for &n_asyn in counts {
            let point =
                async_evaluate(&theta, &meta, &s, n_asyn, cfg.w0_mean, cfg.w0_std, seed)
                    .map_err(core_err)?;
            writeln!(w, "{},{},{}", point.n_asyn, point.mean_acc, point.mean_loss)
                .map_err(|e| run_err(format!("async: {e}")))?;
        }
        w.flush().map_err(|e| run_err(format!("async: {e}")))?;
        artifacts.push(path);
    }

    manifest.record_artifacts(out_dir, &artifacts)?;
    manifest.write(out_dir)?;

    let mean_acc =
        report.per_dataset_acc.iter().sum::<f64>() / report.per_dataset_acc.len().max(1) as f64;
    println!("evaluated {} datasets; mean final accuracy {mean_acc}", meta.len());
    Ok(())
}
