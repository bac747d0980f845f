//! On-disk layout of generated meta-datasets: one feature CSV per
//! dataset under `meta_train/` and `meta_test/`, plus an `index.json`
//! recording shapes and file lists.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedunroll::data::{load_features, FLDataset, MetaDataset, Role};

use crate::{data_err, CliResult};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataIndex {
    pub schema_version: u64,
    pub n: usize,
    pub p: usize,
    pub c: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub q_train: usize,
    pub q_test: usize,
    pub alpha: f64,
    pub class_sep: f64,
    pub seed: u64,
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
}

pub fn write_index(index: &DataIndex, data_dir: &Path) -> CliResult<PathBuf> {
    let path = data_dir.join(INDEX_FILE);
    let w = BufWriter::new(
        File::create(&path).map_err(|e| data_err(format!("cannot write index: {e}")))?,
    );
    serde_json::to_writer_pretty(w, index)
        .map_err(|e| data_err(format!("cannot serialize index: {e}")))?;
    Ok(path)
}

pub fn read_index(data_dir: &Path) -> CliResult<DataIndex> {
    let path = data_dir.join(INDEX_FILE);
    let r = BufReader::new(File::open(&path).map_err(|e| {
        data_err(format!("cannot open data index {}: {e}", path.display()))
    })?);
    serde_json::from_reader(r)
        .map_err(|e| data_err(format!("data index {}: {e}", path.display())))
}

/// Load all datasets of one role, validating shapes against the index.
pub fn load_meta(data_dir: &Path, role: Role) -> CliResult<(DataIndex, MetaDataset)> {
    let index = read_index(data_dir)?;
    let files = match role {
        Role::MetaTrain => &index.train_files,
        Role::MetaTest => &index.test_files,
    };
    if files.is_empty() {
        return Err(data_err(format!(
            "no {} datasets listed in {}",
            role_name(role),
            data_dir.join(INDEX_FILE).display()
        )));
    }
    let mut datasets = Vec::with_capacity(files.len());
    for f in files {
        let path = data_dir.join(f);
        let ds: FLDataset = load_features(&path)
            .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        if ds.n() != index.n || ds.p() != index.p || ds.c() != index.c {
            return Err(data_err(format!(
                "{}: shape ({}, {}, {}) does not match index ({}, {}, {})",
                path.display(),
                ds.n(),
                ds.p(),
                ds.c(),
                index.n,
                index.p,
                index.c
            )));
        }
        datasets.push(ds);
    }
    let meta = MetaDataset::new(datasets, role)
        .map_err(|e| data_err(format!("{}: {e}", data_dir.display())))?;
    Ok((index, meta))
}

pub fn role_name(role: Role) -> &'static str {
    match role {
        Role::MetaTrain => "meta-train",
        Role::MetaTest => "meta-test",
    }
}
