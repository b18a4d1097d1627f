//! Dataset ingestion (TSV layout), exposure-vector construction, and text
//! checkpoints.
//!
//! Layout of a dataset directory:
//!
//! - `interactions_biased.tsv`: `user_id  item_id  rating  split` with
//!   split `train` (the observed, exposure-biased interactions).
//! - `interactions_unbiased.tsv`: same columns, splits `valid`/`test`
//!   (randomized-exposure feedback).
//! - `user_features.tsv`: `user_id  w` (categorical proxy) or
//!   `user_id  w1 .. wp` (vector proxy).
//! - `truth.tsv` (optional): `user_id  z1  z2` ground-truth confounders.
//!
//! Raw ids may be arbitrary integers; they are densified in first-occurrence
//! order and the mapping is retained for output.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub split: Split,
}

/// Raw-to-dense id mapping, dense ids assigned in first-occurrence order.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    to_dense: HashMap<u64, usize>,
    to_raw: Vec<u64>,
}

impl IdMap {
    pub fn intern(&mut self, raw: u64) -> usize {
        if let Some(&dense) = self.to_dense.get(&raw) {
            return dense;
        }
        let dense = self.to_raw.len();
        self.to_dense.insert(raw, dense);
        self.to_raw.push(raw);
        dense
    }

    pub fn dense(&self, raw: u64) -> Option<usize> {
        self.to_dense.get(&raw).copied()
    }

    pub fn raw(&self, dense: usize) -> u64 {
        self.to_raw[dense]
    }

    pub fn len(&self) -> usize {
        self.to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_raw.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
    pub user_ids: IdMap,
    pub item_ids: IdMap,
}

impl InteractionLog {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Per-user (item, rating) lists for one split, indexed by dense user id.
    pub fn user_split_items(&self, split: Split) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for rec in &self.records {
            if rec.split == split {
                out[rec.user].push((rec.item, rec.rating));
            }
        }
        out
    }
}

/// Accumulates records from several files under one shared id mapping.
#[derive(Debug, Default)]
pub struct LogLoader {
    log: InteractionLog,
    seen: HashSet<(usize, usize, Split)>,
}

impl LogLoader {
    pub fn new() -> Self {
        LogLoader::default()
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty file (missing header)".into(),
        })?;
        let expected = "user_id\titem_id\trating\tsplit";
        if header != expected {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("bad header {header:?}, expected {expected:?}"),
            });
        }
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.into(),
                line: lineno,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, got {}", fields.len())));
            }
            let raw_user: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad user id {:?}", fields[0])))?;
            let raw_item: u64 = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad item id {:?}", fields[1])))?;
            let rating: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad rating {:?}", fields[2])))?;
            if !rating.is_finite() {
                return Err(parse_err(format!("non-finite rating {rating}")));
            }
            let split = Split::parse(fields[3])
                .ok_or_else(|| parse_err(format!("bad split {:?}", fields[3])))?;
            let user = self.log.user_ids.intern(raw_user);
            let item = self.log.item_ids.intern(raw_item);
            if !self.seen.insert((user, item, split)) {
                return Err(Error::Duplicate(format!(
                    "{}:{}: (user {raw_user}, item {raw_item}, split {}) appears twice",
                    path.display(),
                    lineno,
                    split.name()
                )));
            }
            self.log.records.push(InteractionRecord {
                user,
                item,
                rating,
                split,
            });
        }
        Ok(())
    }

    pub fn finish(self) -> InteractionLog {
        self.log
    }
}

/// Parses a single interactions file.
pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let mut loader = LogLoader::new();
    loader.load_file(path)?;
    Ok(loader.finish())
}

/// Per-user binary exposure vectors: a_ui = 1 iff a train-split record
/// (u, i) exists.
pub fn build_exposure(log: &InteractionLog) -> Vec<Vec<f64>> {
    let mut exposure = vec![vec![0.0; log.num_items()]; log.num_users()];
    for rec in &log.records {
        if rec.split == Split::Train {
            exposure[rec.user][rec.item] = 1.0;
        }
    }
    exposure
}

/// Per-user proxy features: categorical levels one-hot encoded, vector
/// proxies passed through.
#[derive(Debug, Clone)]
pub struct ProxyTable {
    /// Encoded feature vector per dense user id.
    pub encoded: Vec<Vec<f64>>,
    /// For categorical proxies, the per-user level index into `categories`.
    pub levels: Option<Vec<usize>>,
    /// Sorted distinct raw category values (categorical proxies only).
    pub categories: Option<Vec<i64>>,
}

impl ProxyTable {
    pub fn dim(&self) -> usize {
        self.encoded.first().map_or(0, |v| v.len())
    }

    pub fn num_levels(&self) -> Option<usize> {
        self.categories.as_ref().map(|c| c.len())
    }
}

pub fn load_user_features(path: &Path, users: &IdMap) -> Result<ProxyTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.into(),
        line: 1,
        msg: "empty file (missing header)".into(),
    })?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "user_id" {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("bad header {header:?}, expected user_id then feature columns"),
        });
    }
    let categorical = cols.len() == 2 && cols[1] == "w";
    let feat_dim = cols.len() - 1;

    let mut raw_rows: Vec<Option<Vec<f64>>> = vec![None; users.len()];
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != feat_dim + 1 {
            return Err(parse_err(format!(
                "expected {} fields, got {}",
                feat_dim + 1,
                fields.len()
            )));
        }
        let raw_user: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad user id {:?}", fields[0])))?;
        // Feature rows for users absent from the interaction log are skipped.
        let Some(dense) = users.dense(raw_user) else {
            continue;
        };
        let mut values = Vec::with_capacity(feat_dim);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("bad feature value {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite feature value {v}")));
            }
            values.push(v);
        }
        if raw_rows[dense].is_some() {
            return Err(Error::Duplicate(format!(
                "{}:{}: user {raw_user} has two feature rows",
                path.display(),
                lineno
            )));
        }
        raw_rows[dense] = Some(values);
    }

    let missing = raw_rows.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        return Err(Error::Data(format!(
            "{}: {missing} of {} users have no feature row",
            path.display(),
            users.len()
        )));
    }
    let raw_rows: Vec<Vec<f64>> = raw_rows.into_iter().map(|r| r.unwrap()).collect();

    if categorical {
        let mut distinct: Vec<i64> = Vec::new();
        let mut values = Vec::with_capacity(raw_rows.len());
        for row in &raw_rows {
            let v = row[0];
            if v.fract() != 0.0 {
                return Err(Error::Data(format!(
                    "{}: categorical proxy value {v} is not an integer",
                    path.display()
                )));
            }
            let v = v as i64;
            values.push(v);
            if !distinct.contains(&v) {
                distinct.push(v);
            }
        }
        distinct.sort_unstable();
        let levels: Vec<usize> = values
            .iter()
            .map(|v| distinct.binary_search(v).unwrap())
            .collect();
        let dim = distinct.len();
        let encoded = levels
            .iter()
            .map(|&l| {
                let mut onehot = vec![0.0; dim];
                onehot[l] = 1.0;
                onehot
            })
            .collect();
        Ok(ProxyTable {
            encoded,
            levels: Some(levels),
            categories: Some(distinct),
        })
    } else {
        Ok(ProxyTable {
            encoded: raw_rows,
            levels: None,
            categories: None,
        })
    }
}

/// Ground-truth confounders keyed by dense user id.
#[derive(Debug, Clone)]
pub struct TruthTable {
    pub z: Vec<Vec<f64>>,
}

pub fn load_truth(path: &Path, users: &IdMap) -> Result<TruthTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.into(),
        line: 1,
        msg: "empty file (missing header)".into(),
    })?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "user_id" {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("bad header {header:?}"),
        });
    }
    let dim = cols.len() - 1;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; users.len()];
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(format!(
                "expected {} fields, got {}",
                dim + 1,
                fields.len()
            )));
        }
        let raw_user: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad user id {:?}", fields[0])))?;
        let Some(dense) = users.dense(raw_user) else {
            continue;
        };
        let mut values = Vec::with_capacity(dim);
        for f in &fields[1..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(format!("bad value {f:?}")))?,
            );
        }
        rows[dense] = Some(values);
    }
    let missing = rows.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        return Err(Error::Data(format!(
            "{}: {missing} users missing from truth table",
            path.display()
        )));
    }
    Ok(TruthTable {
        z: rows.into_iter().map(|r| r.unwrap()).collect(),
    })
}

/// A fully loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub proxies: ProxyTable,
    pub truth: Option<TruthTable>,
}

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let biased = dir.join("interactions_biased.tsv");
        let unbiased = dir.join("interactions_unbiased.tsv");
        let features = dir.join("user_features.tsv");
        let truth_path = dir.join("truth.tsv");

        let mut loader = LogLoader::new();
        loader.load_file(&biased)?;
        loader.load_file(&unbiased)?;
        let log = loader.finish();
        if log.num_users() == 0 {
            return Err(Error::Data(format!("{}: no interactions", dir.display())));
        }
        let proxies = load_user_features(&features, &log.user_ids)?;
        let truth = if truth_path.exists() {
            Some(load_truth(&truth_path, &log.user_ids)?)
        } else {
            None
        };
        Ok(Dataset {
            log,
            proxies,
            truth,
        })
    }

    pub fn exposure(&self) -> Vec<Vec<f64>> {
        build_exposure(&self.log)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_HEADER: &str = "IDCF-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.to_string(),
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn matrix(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        NamedTensor {
            name: name.to_string(),
            rows,
            cols,
            data,
        }
    }
}

/// Ordered named tensors; the order is part of the format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn push(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CKPT_HEADER);
        out.push('\n');
        for t in &self.tensors {
            let _ = writeln!(out, "{} {} {}", t.name, t.rows, t.cols);
            for r in 0..t.rows {
                let row = &t.data[r * t.cols..(r + 1) * t.cols];
                for (c, v) in row.iter().enumerate() {
                    if c > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Checkpoint> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("{}: empty file", origin.display())))?;
        if header != CKPT_HEADER {
            return Err(Error::Checkpoint(format!(
                "{}: bad version line {header:?}, expected {CKPT_HEADER:?}",
                origin.display()
            )));
        }
        let mut tensors = Vec::new();
        while let Some(head) = lines.next() {
            if head.is_empty() {
                continue;
            }
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() != 3 {
                return Err(Error::Checkpoint(format!(
                    "{}: bad tensor header {head:?}",
                    origin.display()
                )));
            }
            let name = parts[0].to_string();
            let rows: usize = parts[1].parse().map_err(|_| {
                Error::Checkpoint(format!("{}: bad row count in {head:?}", origin.display()))
            })?;
            let cols: usize = parts[2].parse().map_err(|_| {
                Error::Checkpoint(format!("{}: bad col count in {head:?}", origin.display()))
            })?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines.next().ok_or_else(|| {
                    Error::Checkpoint(format!(
                        "{}: truncated tensor {name:?}",
                        origin.display()
                    ))
                })?;
                for field in line.split(' ') {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::Checkpoint(format!(
                            "{}: bad value {field:?} in tensor {name:?}",
                            origin.display()
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Checkpoint(format!(
                            "{}: non-finite value in tensor {name:?}",
                            origin.display()
                        )));
                    }
                    data.push(v);
                }
            }
            if data.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {name:?} has {} values, expected {}",
                    origin.display(),
                    data.len(),
                    rows * cols
                )));
            }
            tensors.push(NamedTensor {
                name,
                rows,
                cols,
                data,
            });
        }
        Ok(Checkpoint { tensors })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text, path)
    }

    /// Pops the next tensor, insisting on its name: tensor order is fixed.
    pub fn take(&mut self, expected: &str) -> Result<NamedTensor> {
        if self.tensors.is_empty() {
            return Err(Error::Checkpoint(format!(
                "missing tensor {expected:?} (checkpoint exhausted)"
            )));
        }
        let t = self.tensors.remove(0);
        if t.name != expected {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expected:?}, found {:?} (tensor order is part of the format)",
                t.name
            )));
        }
        Ok(t)
    }
}

/// Writes rows of tab-separated values with a header line.
pub fn write_tsv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 16 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
