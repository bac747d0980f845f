//! `gen-data`: sample the meta-train and meta-test dataset collections
//! and write them as feature CSVs plus an index.

use std::path::{Path, PathBuf};

use fedunroll::data::{gen_meta_dataset, write_features, MetaDataset, Role};

use crate::config::{load_config, DataConfig};
use crate::data_io::{write_index, DataIndex};
use crate::manifest::{ensure_dir, RunManifest};
use crate::{core_err, CliResult};

fn write_role(
    meta: &MetaDataset,
    data_dir: &Path,
    sub: &str,
) -> CliResult<(Vec<String>, Vec<PathBuf>)> {
    ensure_dir(&data_dir.join(sub))?;
    let mut rels = Vec::with_capacity(meta.len());
    let mut paths = Vec::with_capacity(meta.len());
    for (i, ds) in meta.datasets().iter().enumerate() {
        let rel = format!("{sub}/ds_{i:03}.csv");
        let path = data_dir.join(&rel);
        write_features(ds, &path).map_err(core_err)?;
        rels.push(rel);
        paths.push(path);
    }
    Ok((rels, paths))
}

pub fn run(config: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: DataConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_dir(out_dir)?;
    let snapshot = serde_json::to_value(&cfg).expect("config serializes");
    let mut manifest = RunManifest::new("gen-data", Some(config), snapshot, cfg.seed, out_dir);
    manifest.write(out_dir)?;

    let mut artifacts = Vec::new();
    let train = gen_meta_dataset(
        cfg.n,
        cfg.p,
        cfg.c,
        cfg.m_train,
        cfg.m_test,
        cfg.q_train,
        cfg.alpha,
        cfg.class_sep,
        Role::MetaTrain,
        cfg.seed,
    )
    .map_err(core_err)?;
    let (train_files, mut train_paths) = write_role(&train, out_dir, "meta_train")?;
    artifacts.append(&mut train_paths);

    let test_files = if cfg.q_test > 0 {
        let test = gen_meta_dataset(
            cfg.n,
            cfg.p,
            cfg.c,
            cfg.m_train,
            cfg.m_test,
            cfg.q_test,
            cfg.alpha,
            cfg.class_sep,
            Role::MetaTest,
            cfg.seed,
        )
        .map_err(core_err)?;
        let (files, mut paths) = write_role(&test, out_dir, "meta_test")?;
        artifacts.append(&mut paths);
        files
    } else {
        Vec::new()
    };

    let index = DataIndex {
        schema_version: 1,
        n: cfg.n,
        p: cfg.p,
        c: cfg.c,
        m_train: cfg.m_train,
        m_test: cfg.m_test,
        q_train: cfg.q_train,
        q_test: cfg.q_test,
        alpha: cfg.alpha,
        class_sep: cfg.class_sep,
        seed: cfg.seed,
        train_files,
        test_files,
    };
    artifacts.push(write_index(&index, out_dir)?);

    manifest.record_artifacts(out_dir, &artifacts)?;
    manifest.write(out_dir)?;
    println!(
        "generated {} meta-train and {} meta-test datasets in {}",
        cfg.q_train,
        cfg.q_test,
        out_dir.display()
    );
    Ok(())
}
