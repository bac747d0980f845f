//! `baseline`: run a classical optimizer on every meta-test dataset and
//! emit per-round metrics averaged across datasets, with exact
//! communication-round accounting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fedunroll::baselines::{dfedavgm_run, dgd_run, dsgd_run, fedavg_star_run, Method};
use fedunroll::data::Role;

use crate::config::{load_config, BaselineFileConfig};
use crate::data_io::load_meta;
use crate::manifest::{ensure_dir, RunManifest};
use crate::{config_err, core_err, run_err, CliResult};

pub fn run(
    method: Method,
    config: &Path,
    data_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut cfg: BaselineFileConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (index, meta) = load_meta(data_dir, Role::MetaTest)?;
    let graph = match (method, &cfg.graph) {
        (Method::FedavgStar, _) => None,
        (_, Some(gc)) => Some(gc.build(index.n).map_err(core_err)?),
        (_, None) => {
            return Err(config_err(format!(
                "method {} requires a graph config",
                method.name()
            )))
        }
    };
    let batch_count = if cfg.batch_count == 0 { index.m_train } else { cfg.batch_count };

    ensure_dir(out_dir)?;
    let snapshot = serde_json::to_value(&cfg).expect("config serializes");
    let mut manifest = RunManifest::new("baseline", Some(config), snapshot, cfg.seed, out_dir);
    manifest.write(out_dir)?;

    let t = cfg.t_rounds;
    let q = meta.len() as f64;
    let mut loss = vec![0.0; t];
    let mut acc = vec![0.0; t];
    let mut dis = vec![0.0; t];
    for dataset in meta.datasets() {
        let run = match method {
            Method::Dgd => dgd_run(
                dataset,
                graph.as_ref().expect("checked above"),
                cfg.beta,
                t,
                batch_count,
                cfg.seed,
            ),
            Method::Dsgd => {
                dsgd_run(dataset, graph.as_ref().expect("checked above"), cfg.beta, t, cfg.seed)
            }
            Method::Dfedavgm => dfedavgm_run(
                dataset,
                graph.as_ref().expect("checked above"),
                cfg.beta,
                cfg.momentum,
                cfg.local_steps,
                t,
                batch_count,
                cfg.seed,
            ),
            Method::FedavgStar => fedavg_star_run(
                dataset,
                cfg.participants,
                cfg.local_steps,
                cfg.beta,
                t,
                cfg.seed,
            ),
        }
        .map_err(core_err)?;
        for (k, m) in run.metrics.iter().enumerate() {
            loss[k] += m.train_loss / q;
            acc[k] += m.test_acc / q;
            dis[k] += m.disagreement / q;
        }
    }

    let path = out_dir.join(format!("{}.csv", method.name()));
    let mut w = BufWriter::new(
        File::create(&path).map_err(|e| run_err(format!("cannot write metrics: {e}")))?,
    );
    writeln!(w, "method,round,train_loss,test_acc,disagreement")
        .map_err(|e| run_err(format!("metrics: {e}")))?;
    for k in 0..t {
        writeln!(w, "{},{},{},{},{}", method.name(), k + 1, loss[k], acc[k], dis[k])
            .map_err(|e| run_err(format!("metrics: {e}")))?;
    }
    w.flush().map_err(|e| run_err(format!("metrics: {e}")))?;

    manifest.record_artifacts(out_dir, &[path])?;
    manifest.write(out_dir)?;
    println!(
        "{} finished {} rounds over {} datasets; final mean accuracy {}",
        method.name(),
        t,
        meta.len(),
        acc.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
