//! Data ingestion and synthesis: LIBSVM text, the federated binary-task
//! partitioner, and synthetic generators.
//!
//! The partitioner turns a multiclass corpus into per-client binary tasks. A
//! random subset `A` of `floor(0.3 K)` classes is merged into the positive
//! class; every client gets a disjoint share of the merged samples and one
//! single-class bucket of the same size from the remaining classes as
//! negatives. A quarter of each share (configurable) is held out for testing
//! before the `N` training samples per label are taken.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::rng::substream;

/// One labeled point of a multiclass corpus, with the line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub label: i64,
    pub x: Vec<f64>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassCorpus {
    pub samples: Vec<LabeledPoint>,
    pub dim: usize,
}

impl MulticlassCorpus {
    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<i64> {
        self.samples.iter().map(|s| s.label).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes().len()
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i64> {
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(v);
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::parse(line, format!("label {tok:?} is not an integer"))),
    }
}

/// Parses LIBSVM text: `label index:value ...` with 1-based indices. `#`
/// starts a comment, blank lines are skipped and `qid:` tokens ignored.
/// Vectors are densified to the largest index in the corpus.
pub fn parse_libsvm(text: &str) -> Result<MulticlassCorpus> {
    let mut rows: Vec<(i64, Vec<(usize, f64)>, usize)> = Vec::new();
    let mut dim = 0;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().expect("non-empty line"), line)?;
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line, format!("malformed feature {tok:?}")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| Error::parse(line, format!("malformed index in {tok:?}")))?;
            if idx <= 0 {
                return Err(Error::parse(line, format!("feature index {idx} must be at least 1")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(line, format!("malformed value in {tok:?}")))?;
            if !val.is_finite() {
                return Err(Error::parse(line, format!("non-finite value in {tok:?}")));
            }
            let idx = idx as usize;
            if !seen.insert(idx) {
                return Err(Error::parse(line, format!("duplicate feature index {idx}")));
            }
            dim = dim.max(idx);
            entries.push((idx, val));
        }
        rows.push((label, entries, line));
    }
    let samples = rows
        .into_iter()
        .map(|(label, entries, line)| {
            let mut x = vec![0.0; dim];
            for (i, v) in entries {
                x[i - 1] = v;
            }
            LabeledPoint { label, x, line }
        })
        .collect();
    Ok(MulticlassCorpus { samples, dim })
}

/// Writes nonzero entries, plus the last coordinate so the dimension survives
/// a round trip. Values use the shortest exact decimal form.
pub fn write_libsvm(corpus: &MulticlassCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.samples {
        write!(out, "{}", s.label).expect("write to string");
        for (i, &v) in s.x.iter().enumerate() {
            if v != 0.0 || i + 1 == corpus.dim {
                write!(out, " {}:{}", i + 1, v).expect("write to string");
            }
        }
        out.push('\n');
    }
    out
}

/// Reads a LIBSVM file, decompressing it first if it is gzip.
pub fn read_libsvm_file(path: &Path) -> Result<MulticlassCorpus> {
    let bytes = std::fs::read(path)?;
    let text = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut s = String::new();
        GzDecoder::new(&bytes[..]).read_to_string(&mut s)?;
        s
    } else {
        String::from_utf8(bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
    };
    parse_libsvm(&text)
}

/// One client's share of a federated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Source lines of the training and test samples, parallel to those vectors.
    pub train_lines: Vec<usize>,
    pub test_lines: Vec<usize>,
    /// Class supplying this client's negatives; `None` for synthetic data.
    pub negative_class: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub clients: Vec<ClientData>,
    /// Source coordinates routed to the global and local blocks.
    pub global_index: Vec<usize>,
    pub local_index: Vec<usize>,
    /// Classes merged into the positive class.
    pub merged_classes: Vec<i64>,
    /// Training samples per label per client.
    pub per_label: usize,
}

impl FederatedDataset {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn global_dim(&self) -> usize {
        self.clients
            .first()
            .and_then(|c| c.train.first())
            .map_or(self.global_index.len(), |s| s.x_global.len())
    }

    pub fn local_dims(&self) -> Vec<usize> {
        self.clients
            .iter()
            .map(|c| c.train.first().map_or(self.local_index.len(), |s| s.x_local.len()))
            .collect()
    }

    /// Per-client streams of `rounds` training samples. Each pass over a
    /// client's training set follows a fresh random permutation.
    pub fn streams(&self, rounds: usize, seed: u64) -> Result<Vec<Vec<Sample>>> {
        let mut rng = substream(seed, "stream-order");
        self.clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.train.is_empty() {
                    return Err(Error::config(format!("client {i} has no training data")));
                }
                let mut out = Vec::with_capacity(rounds);
                let mut order: Vec<usize> = (0..c.train.len()).collect();
                while out.len() < rounds {
                    order.shuffle(&mut rng);
                    out.extend(order.iter().take(rounds - out.len()).map(|&k| c.train[k].clone()));
                }
                Ok(out)
            })
            .collect()
    }

    /// `client,line,role` per assigned sample, for auditing a partition.
    pub fn manifest(&self) -> String {
        let mut out = String::from("client,line,role\n");
        for (i, c) in self.clients.iter().enumerate() {
            for l in &c.train_lines {
                writeln!(out, "{i},{l},train").expect("write to string");
            }
            for l in &c.test_lines {
                writeln!(out, "{i},{l},test").expect("write to string");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub clients: usize,
    /// Cap on training samples per label per client.
    pub max_per_label: usize,
    /// Share of each client's allocation held out for testing.
    pub test_fraction: f64,
}

impl PartitionConfig {
    pub fn new(clients: usize, max_per_label: usize) -> Self {
        PartitionConfig {
            clients,
            max_per_label,
            test_fraction: 0.25,
        }
    }
}

fn held_out(m: usize, fraction: f64) -> usize {
    (m as f64 * fraction).floor() as usize
}

/// Splits a multiclass corpus into per-client binary tasks.
pub fn partition_federated(corpus: &MulticlassCorpus, cfg: &PartitionConfig, seed: u64) -> Result<FederatedDataset> {
    let p = cfg.clients;
    if p == 0 {
        return Err(Error::config("need at least one client"));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::config("test fraction must lie in [0, 1)"));
    }
    let classes = corpus.classes();
    let k = classes.len();
    if k < 6 {
        return Err(Error::config(format!("corpus has {k} classes, need at least 6")));
    }
    let mut rng = substream(seed, "partition");

    let mut shuffled = classes.clone();
    shuffled.shuffle(&mut rng);
    let a_size = k * 3 / 10;
    let mut merged: Vec<i64> = shuffled[..a_size].to_vec();
    merged.sort_unstable();
    let merged_set: BTreeSet<i64> = merged.iter().copied().collect();

    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (idx, s) in corpus.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(idx);
    }
    let mut pos_pool: Vec<usize> = merged.iter().flat_map(|c| by_class[c].iter().copied()).collect();
    pos_pool.shuffle(&mut rng);
    let negatives: Vec<(i64, &Vec<usize>)> = by_class
        .iter()
        .filter(|(c, _)| !merged_set.contains(c))
        .map(|(c, v)| (*c, v))
        .collect();
    if negatives.is_empty() {
        return Err(Error::config("no classes left for negative tasks"));
    }

    let mut m = pos_pool.len() / p;
    loop {
        if m == 0 {
            return Err(Error::config(format!("too few samples to give each of {p} clients one per label")));
        }
        let n = m - held_out(m, cfg.test_fraction);
        let buckets: usize = negatives.iter().map(|(_, v)| v.len() / m).sum();
        if n <= cfg.max_per_label && buckets >= p {
            break;
        }
        m -= 1;
    }
    let n_train = m - held_out(m, cfg.test_fraction);
    if n_train == 0 {
        return Err(Error::config("allocation too small to leave any training samples"));
    }

    let mut buckets: Vec<(i64, Vec<usize>)> = Vec::new();
    for (c, idx) in &negatives {
        let mut idx = (*idx).clone();
        idx.shuffle(&mut rng);
        buckets.extend(idx.chunks_exact(m).map(|b| (*c, b.to_vec())));
    }
    buckets.shuffle(&mut rng);

    let mut perm: Vec<usize> = (0..corpus.dim).collect();
    perm.shuffle(&mut rng);
    let split = corpus.dim.div_ceil(2);
    let mut global_index = perm[..split].to_vec();
    let mut local_index = perm[split..].to_vec();
    global_index.sort_unstable();
    local_index.sort_unstable();

    let to_sample = |idx: usize, y: f64| {
        let x = &corpus.samples[idx].x;
        Sample {
            x_global: global_index.iter().map(|&j| x[j]).collect(),
            x_local: local_index.iter().map(|&j| x[j]).collect(),
            y,
        }
    };
    let clients = (0..p)
        .map(|i| {
            let pos = &pos_pool[i * m..(i + 1) * m];
            let (neg_class, neg) = &buckets[i];
            let mut c = ClientData {
                train: Vec::with_capacity(2 * n_train),
                test: Vec::with_capacity(2 * (m - n_train)),
                train_lines: Vec::new(),
                test_lines: Vec::new(),
                negative_class: Some(*neg_class),
            };
            for (ids, y) in [(pos, 1.0), (&neg[..], -1.0)] {
                for (j, &idx) in ids.iter().enumerate() {
                    let line = corpus.samples[idx].line;
                    if j < n_train {
                        c.train.push(to_sample(idx, y));
                        c.train_lines.push(line);
                    } else {
                        c.test.push(to_sample(idx, y));
                        c.test_lines.push(line);
                    }
                }
            }
            c
        })
        .collect();
    Ok(FederatedDataset {
        clients,
        global_index,
        local_index,
        merged_classes: merged,
        per_label: n_train,
    })
}

/// Clients whose labels differ only through a local shift:
/// `y = (u_global + u_i) . x + noise`, with `u_i = v` for the first
/// `floor(P / 2)` clients and `-v` for the rest. Global and local features are the
/// same standard-normal covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Example2 {
    pub clients: usize,
    pub u_global: Vec<f64>,
    pub v: Vec<f64>,
    pub noise_std: f64,
    pub train_per_client: usize,
    pub test_per_client: usize,
}

pub fn gen_example2(cfg: &Example2, seed: u64) -> Result<FederatedDataset> {
    let d = cfg.v.len();
    if cfg.clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if cfg.u_global.len() != d {
        return Err(Error::config("global and local shift vectors differ in length"));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::config("noise level must be nonnegative"));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = substream(seed, "example2");
    let clients = (0..cfg.clients)
        .map(|i| {
            let sign = if i < cfg.clients / 2 { 1.0 } else { -1.0 };
            let u: Vec<f64> = cfg.u_global.iter().zip(&cfg.v).map(|(g, v)| g + sign * v).collect();
            let mut draw = |count: usize| -> Vec<Sample> {
                (0..count)
                    .map(|_| {
                        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let y = crate::model::dot(&u, &x) + noise.sample(&mut rng);
                        Sample {
                            x_global: x.clone(),
                            x_local: x,
                            y,
                        }
                    })
                    .collect()
            };
            let train = draw(cfg.train_per_client);
            let test = draw(cfg.test_per_client);
            ClientData {
                train,
                test,
                train_lines: Vec::new(),
                test_lines: Vec::new(),
                negative_class: None,
            }
        })
        .collect();
    Ok(FederatedDataset {
        clients,
        global_index: (0..d).collect(),
        local_index: (0..d).collect(),
        merged_classes: Vec::new(),
        per_label: 0,
    })
}

/// Single-client stream fit exactly by `([0, 1], [0, 1])`:
/// `a, b ~ N(0, 1)`, `e ~ N(0, 0.25)`, `x_g = [a + e, b]`,
/// `x_l = [1 - a, 1 - b]`, `y = 1`.
pub fn gen_appendix_c(rounds: usize, seed: u64) -> Vec<Sample> {
    let mut rng = substream(seed, "appendix-c");
    let eps = Normal::new(0.0, 0.5).expect("valid normal");
    (0..rounds)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let e = eps.sample(&mut rng);
            Sample {
                x_global: vec![a + e, b],
                x_local: vec![1.0 - a, 1.0 - b],
                y: 1.0,
            }
        })
        .collect()
}
