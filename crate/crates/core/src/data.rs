//! Synthetic class-imbalanced federated datasets and per-layer mini-batches.
//!
//! Features are Gaussian class-conditional clusters with class means shared
//! across every dataset drawn from one master seed, so meta-train and
//! meta-test tasks come from the same feature distribution and differ only
//! in their label mixtures.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// One agent's local examples: `x` is m×p, `y[e]` the class of row e.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A federated dataset: per-agent train and test shards over shared classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FLDataset {
    n: usize,
    p: usize,
    c: usize,
    m_train: usize,
    m_test: usize,
    train: Vec<Shard>,
    test: Vec<Shard>,
    /// Empirical per-agent class proportions of the train shard, n×C.
    label_distribution: Array2<f64>,
}

impl FLDataset {
    /// Assemble and validate; `c` is the class count (shards may not
    /// exhibit every class). Label proportions are recomputed from the
    /// train shards so loading a written file reproduces them exactly.
    pub fn new(train: Vec<Shard>, test: Vec<Shard>, c: usize) -> Result<FLDataset> {
        if train.is_empty() || train.len() != test.len() {
            return Err(Error::parameter("need one train and one test shard per agent"));
        }
        let n = train.len();
        let p = train[0].x.ncols();
        let m_train = train[0].len();
        let m_test = test[0].len();
        if m_train == 0 || m_test == 0 {
            return Err(Error::parameter("shards must be non-empty"));
        }
        for (i, (tr, te)) in train.iter().zip(&test).enumerate() {
            for (shard, m, name) in [(tr, m_train, "train"), (te, m_test, "test")] {
                if shard.len() != m || shard.x.nrows() != m || shard.x.ncols() != p {
                    return Err(Error::parameter(format!(
                        "agent {i}: inconsistent {name} shard shape"
                    )));
                }
                if let Some(&bad) = shard.y.iter().find(|&&y| y >= c) {
                    return Err(Error::parameter(format!(
                        "agent {i}: label {bad} out of range for C={c}"
                    )));
                }
            }
        }
        let mut label_distribution = Array2::<f64>::zeros((n, c));
        for (i, shard) in train.iter().enumerate() {
            for &y in &shard.y {
                label_distribution[[i, y]] += 1.0 / m_train as f64;
            }
        }
        Ok(FLDataset { n, p, c, m_train, m_test, train, test, label_distribution })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn m_train(&self) -> usize {
        self.m_train
    }

    pub fn m_test(&self) -> usize {
        self.m_test
    }

    pub fn train_shards(&self) -> &[Shard] {
        &self.train
    }

    pub fn test_shards(&self) -> &[Shard] {
        &self.test
    }

    pub fn label_distribution(&self) -> &Array2<f64> {
        &self.label_distribution
    }
}

/// Which phase a meta-dataset feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Role {
    MetaTrain,
    MetaTest,
}

impl Role {
    /// Disjoint seed-index ranges so the two roles never share datasets.
    fn index_offset(self) -> u64 {
        match self {
            Role::MetaTrain => 1,
            Role::MetaTest => 1 + (1u64 << 32),
        }
    }
}

/// An ordered collection of datasets sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    datasets: Vec<FLDataset>,
    role: Role,
}

impl MetaDataset {
    pub fn new(datasets: Vec<FLDataset>, role: Role) -> Result<MetaDataset> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::parameter("meta-dataset must be non-empty"))?;
        let key = (first.n, first.p, first.c, first.m_train, first.m_test);
        if let Some(q) = datasets
            .iter()
            .position(|d| (d.n, d.p, d.c, d.m_train, d.m_test) != key)
        {
            return Err(Error::parameter(format!("dataset {q} has a mismatched shape")));
        }
        Ok(MetaDataset { datasets, role })
    }

    pub fn datasets(&self) -> &[FLDataset] {
        &self.datasets
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

/// One unrolled layer's input batch, flattened per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBatch {
    /// n × b_count·(p+C); example e of agent i occupies columns
    /// [e·(p+C), (e+1)·(p+C)) of row i as feature vector then one-hot label.
    pub matrix: Array2<f64>,
    /// Train-shard indices behind each row, n×b_count, so callers can
    /// recover which samples formed the row.
    pub indices: Vec<Vec<usize>>,
}

/// One Dirichlet(alpha·1_C) draw via normalized Gamma variates.
pub fn dirichlet_proportions<R: Rng>(alpha: f64, c: usize, rng: &mut R) -> Result<Vec<f64>> {
    if alpha <= 0.0 {
        return Err(Error::parameter(format!("alpha must be positive, got {alpha}")));
    }
    if c == 0 {
        return Err(Error::parameter("need at least one class"));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::parameter(format!("gamma sampler: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..c).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // underflow to an all-zero vector is possible at tiny alpha; redraw
        if total > 0.0 {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

/// Class means used by every dataset of one master seed: random unit
/// directions in R^p scaled by `class_sep`.
fn class_means<R: Rng>(p: usize, c: usize, class_sep: f64, rng: &mut R) -> Array2<f64> {
    let mut means = Array2::<f64>::zeros((c, p));
    for mut row in means.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v * class_sep / norm);
                break;
            }
        }
    }
    means
}

fn gen_shard<R: Rng>(
    means: &Array2<f64>,
    label_dist: &WeightedIndex<f64>,
    m: usize,
    rng: &mut R,
) -> Shard {
    let p = means.ncols();
    let mut x = Array2::<f64>::zeros((m, p));
    let mut y = Vec::with_capacity(m);
    for e in 0..m {
        let class = label_dist.sample(rng);
        y.push(class);
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            x[[e, j]] = means[[class, j]] + z;
        }
    }
    Shard { x, y }
}

/// Generate Q class-imbalanced datasets with per-agent
/// Dirichlet(alpha·1_C) label mixtures and Gaussian features.
#[allow(clippy::too_many_arguments)]
pub fn gen_meta_dataset(
    n: usize,
    p: usize,
    c: usize,
    m_train: usize,
    m_test: usize,
    q: usize,
    alpha: f64,
    class_sep: f64,
    role: Role,
    master_seed: u64,
) -> Result<MetaDataset> {
    if alpha <= 0.0 {
        return Err(Error::parameter(format!("alpha must be positive, got {alpha}")));
    }
    for (name, v) in [("n", n), ("p", p), ("C", c), ("m_train", m_train), ("m_test", m_test), ("Q", q)] {
        if v == 0 {
            return Err(Error::parameter(format!("{name} must be positive")));
        }
    }
    let means = class_means(p, c, class_sep, &mut seed::rng(master_seed, Stream::DataGen, 0));
    let mut datasets = Vec::with_capacity(q);
    for qi in 0..q {
        let mut rng = seed::rng(master_seed, Stream::DataGen, role.index_offset() + qi as u64);
        let mut train = Vec::with_capacity(n);
        let mut test = Vec::with_capacity(n);
        for _ in 0..n {
            let props = dirichlet_proportions(alpha, c, &mut rng)?;
            let dist = WeightedIndex::new(&props)
                .map_err(|e| Error::state(format!("label sampler: {e}")))?;
            train.push(gen_shard(&means, &dist, m_train, &mut rng));
            test.push(gen_shard(&means, &dist, m_test, &mut rng));
        }
        datasets.push(FLDataset::new(train, test, c)?);
    }
    MetaDataset::new(datasets, role)
}

/// Sample L per-layer batches with guaranteed coverage: a random
/// permutation of each agent's train shard is dealt round-robin into L
/// buckets, then each bucket is padded to b_count from its complement.
pub fn sample_layer_batches(
    dataset: &FLDataset,
    l_layers: usize,
    b_count: usize,
    batch_seed: u64,
) -> Result<Vec<LayerBatch>> {
    let (n, p, c, m) = (dataset.n, dataset.p, dataset.c, dataset.m_train);
    if l_layers == 0 {
        return Err(Error::parameter("need at least one layer"));
    }
    if b_count > m {
        return Err(Error::parameter(format!(
            "b_count {b_count} exceeds train shard size {m}"
        )));
    }
    if b_count * l_layers < m {
        return Err(Error::parameter(format!(
            "b_count {b_count} too small to cover {m} examples in {l_layers} layers"
        )));
    }
    let width = p + c;
    let mut per_agent: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n);
    for agent in 0..n {
        let mut rng = seed::rng(batch_seed, Stream::Batches, agent as u64);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let mut buckets = Vec::with_capacity(l_layers);
        for l in 0..l_layers {
            let mut bucket: Vec<usize> = perm.iter().skip(l).step_by(l_layers).copied().collect();
            let need = b_count - bucket.len();
            if need > 0 {
                let mut rest: Vec<usize> = (0..m).filter(|i| !bucket.contains(i)).collect();
                let (picked, _) = rest.partial_shuffle(&mut rng, need);
                bucket.extend_from_slice(picked);
            }
            buckets.push(bucket);
        }
        per_agent.push(buckets);
    }
    let mut out = Vec::with_capacity(l_layers);
    for l in 0..l_layers {
        let mut matrix = Array2::<f64>::zeros((n, b_count * width));
        let mut indices = Vec::with_capacity(n);
        for agent in 0..n {
            let bucket = &per_agent[agent][l];
            let shard = &dataset.train[agent];
            for (e, &idx) in bucket.iter().enumerate() {
                let base = e * width;
                for j in 0..p {
                    matrix[[agent, base + j]] = shard.x[[idx, j]];
                }
                matrix[[agent, base + p + shard.y[idx]]] = 1.0;
            }
            indices.push(bucket.clone());
        }
        out.push(LayerBatch { matrix, indices });
    }
    Ok(out)
}

/// Write the CSV feature format: header `agent,split,label,f0..f{p-1}`.
pub fn write_features(dataset: &FLDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "agent,split,label")?;
    for j in 0..dataset.p {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for (agent, (train, test)) in dataset.train.iter().zip(&dataset.test).enumerate() {
        for (split, shard) in [("train", train), ("test", test)] {
            for e in 0..shard.len() {
                write!(w, "{agent},{split},{}", shard.y[e])?;
                for j in 0..dataset.p {
                    // Display prints the shortest form that parses back exactly
                    write!(w, ",{}", shard.x[[e, j]])?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a dataset written by [`write_features`]; class count is inferred
/// as the largest label plus one.
pub fn load_features(path: &Path) -> Result<FLDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(1, "empty file"))?;
    let header = header?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "agent" || cols[1] != "split" || cols[2] != "label" {
        return Err(Error::format(1, "expected header `agent,split,label,f0..`"));
    }
    let p = cols.len() - 3;
    for (j, col) in cols[3..].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(Error::format(1, format!("expected column f{j}, found {col}")));
        }
    }
    // (features, label) rows per agent per split, keyed by file order
    let mut train: Vec<(Vec<Vec<f64>>, Vec<usize>)> = Vec::new();
    let mut test: Vec<(Vec<Vec<f64>>, Vec<usize>)> = Vec::new();
    let mut c = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 3 {
            return Err(Error::format(
                lineno,
                format!("expected {} fields, found {}", p + 3, fields.len()),
            ));
        }
        let agent: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad agent id `{}`", fields[0])))?;
        let label: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad label `{}`", fields[2])))?;
        let mut x = Vec::with_capacity(p);
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(lineno, format!("bad feature value `{f}`")))?;
            x.push(v);
        }
        let store = match fields[1] {
            "train" => &mut train,
            "test" => &mut test,
            other => {
                return Err(Error::format(lineno, format!("unknown split `{other}`")));
            }
        };
        if agent >= store.len() {
            store.resize_with(agent + 1, || (Vec::new(), Vec::new()));
        }
        store[agent].0.push(x);
        store[agent].1.push(label);
        c = c.max(label + 1);
    }
    if train.is_empty() {
        return Err(Error::format(1, "no data rows"));
    }
    let build = |rows: Vec<(Vec<Vec<f64>>, Vec<usize>)>, split: &str| -> Result<Vec<Shard>> {
        let mut shards = Vec::with_capacity(rows.len());
        for (agent, (xs, ys)) in rows.into_iter().enumerate() {
            if ys.is_empty() {
                return Err(Error::format(
                    1,
                    format!("agent {agent} has no {split} rows"),
                ));
            }
            let m = ys.len();
            let mut x = Array2::<f64>::zeros((m, p));
            for (e, row) in xs.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    x[[e, j]] = v;
                }
            }
            shards.push(Shard { x, y: ys });
        }
        Ok(shards)
    };
    let train = build(train, "train")?;
    let test = build(test, "test")?;
    if train.len() != test.len() {
        return Err(Error::format(
            1,
            format!("{} agents with train rows but {} with test rows", train.len(), test.len()),
        ));
    }
    if let Some(m) = train.iter().position(|s| s.len() != train[0].len()) {
        return Err(Error::format(1, format!("agent {m} has a different train count")));
    }
    if let Some(m) = test.iter().position(|s| s.len() != test[0].len()) {
        return Err(Error::format(1, format!("agent {m} has a different test count")));
    }
    FLDataset::new(train, test, c)
}
