//! Interaction ingestion: parsing, k-core filtering, contiguous indexing and
//! the per-user train/validation/test split.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("no interactions survive {0}-core filtering")]
    EmptyAfterFilter(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("interaction set is empty")]
    Empty,
    #[error("unknown {kind} key {key:?} in {path}")]
    UnknownKey {
        kind: &'static str,
        key: String,
        path: PathBuf,
    },
    #[error("bad split manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: Option<i64>,
}

/// Deduplicated implicit-feedback records, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawInteractions {
    records: Vec<Interaction>,
}

impl RawInteractions {
    /// Collapses duplicate `(user, item)` pairs, keeping the first timestamp.
    /// Records with an empty key are dropped.
    pub fn from_records<I: IntoIterator<Item = Interaction>>(records: I) -> Self {
        let mut seen = HashSet::new();
        let records = records
            .into_iter()
            .filter(|r| !r.user.is_empty() && !r.item.is_empty())
            .filter(|r| seen.insert((r.user.clone(), r.item.clone())))
            .collect();
        RawInteractions { records }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.records.iter().map(|r| &r.user).collect::<HashSet<_>>().len()
    }

    pub fn n_items(&self) -> usize {
        self.records.iter().map(|r| &r.item).collect::<HashSet<_>>().len()
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Interaction> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(CorpusError::MalformedLine(line_no));
    }
    let (user, item) = (fields[0].trim(), fields[1].trim());
    if user.is_empty() || item.is_empty() {
        return Err(CorpusError::MalformedLine(line_no));
    }
    let timestamp = match fields.get(2).map(|s| s.trim()) {
        None | Some("") => None,
        Some(ts) => Some(
            ts.parse::<i64>()
                .map_err(|_| CorpusError::MalformedLine(line_no))?,
        ),
    };
    Ok(Interaction {
        user: user.to_string(),
        item: item.to_string(),
        timestamp,
    })
}

/// Reads `user<TAB>item[<TAB>timestamp]` lines. Blank lines are skipped;
/// line numbers in errors are 1-based.
pub fn load_interactions(path: &Path) -> Result<RawInteractions> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(line, n + 1)?);
    }
    Ok(RawInteractions::from_records(records))
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every survivor has at least `k`.
pub fn kcore_filter(raw: &RawInteractions, k: usize) -> Result<RawInteractions> {
    assert!(k >= 1, "k-core requires k >= 1");
    let mut alive = vec![true; raw.records.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (r, _) in raw.records.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_deg.entry(&r.user).or_default() += 1;
            *item_deg.entry(&r.item).or_default() += 1;
        }
        let mut removed = false;
        for (r, a) in raw.records.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[r.user.as_str()] < k || item_deg[r.item.as_str()] < k) {
                *a = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    let records: Vec<Interaction> = raw
        .records
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(r, _)| r.clone())
        .collect();
    if records.is_empty() {
        return Err(CorpusError::EmptyAfterFilter(k));
    }
    Ok(RawInteractions { records })
}

/// Bidirectional map between string keys and contiguous indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn get_or_insert(&mut self, key: &str) -> usize {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        let i = self.keys.len();
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), i);
        i
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Two-column `key<TAB>index` TSV.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, key) in self.keys.iter().enumerate() {
            writeln!(w, "{key}\t{i}").map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut map = IdMap::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (key, idx) = line
                .rsplit_once('\t')
                .ok_or(CorpusError::MalformedLine(n + 1))?;
            let idx: usize = idx.parse().map_err(|_| CorpusError::MalformedLine(n + 1))?;
            if idx != map.len() {
                return Err(CorpusError::MalformedLine(n + 1));
            }
            map.get_or_insert(key);
        }
        Ok(map)
    }
}

/// Boolean user x item matrix with row- and column-oriented adjacency.
///
/// `by_user[u]` and `by_item[i]` are sorted and mutually transposed.
/// Timestamps, when known, are stored aligned with `by_user`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
    timestamps: Vec<Vec<Option<i64>>>,
}

impl InteractionMatrix {
    /// Builds from `(user, item, timestamp)` triples. Duplicates collapse to
    /// the first occurrence.
    pub fn from_triples<I>(n_users: usize, n_items: usize, triples: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, Option<i64>)>,
    {
        let mut rows: Vec<Vec<(usize, Option<i64>)>> = vec![Vec::new(); n_users];
        for (u, i, ts) in triples {
            assert!(u < n_users && i < n_items, "interaction ({u},{i}) out of range");
            rows[u].push((i, ts));
        }
        let mut by_item = vec![Vec::new(); n_items];
        let mut by_user = Vec::with_capacity(n_users);
        let mut timestamps = Vec::with_capacity(n_users);
        for (u, mut row) in rows.into_iter().enumerate() {
            // stable sort keeps the first timestamp at the head of each run
            row.sort_by_key(|&(i, _)| i);
            row.dedup_by_key(|&mut (i, _)| i);
            for &(i, _) in &row {
                by_item[i].push(u);
            }
            by_user.push(row.iter().map(|&(i, _)| i).collect());
            timestamps.push(row.iter().map(|&(_, ts)| ts).collect());
        }
        InteractionMatrix {
            n_users,
            n_items,
            by_user,
            by_item,
            timestamps,
        }
    }

    pub fn from_pairs<I>(n_users: usize, n_items: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_triples(n_users, n_items, pairs.into_iter().map(|(u, i)| (u, i, None)))
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    pub fn users_of(&self, item: usize) -> &[usize] {
        &self.by_item[item]
    }

    pub fn timestamps_of(&self, user: usize) -> &[Option<i64>] {
        &self.timestamps[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.by_user[user].binary_search(&item).is_ok()
    }

    pub fn by_user(&self) -> &[Vec<usize>] {
        &self.by_user
    }

    pub fn by_item(&self) -> &[Vec<usize>] {
        &self.by_item
    }

    /// All `(user, item, timestamp)` entries in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, Option<i64>)> + '_ {
        self.by_user.iter().enumerate().flat_map(move |(u, items)| {
            items
                .iter()
                .zip(&self.timestamps[u])
                .map(move |(&i, &ts)| (u, i, ts))
        })
    }

    pub fn min_user_degree(&self) -> usize {
        self.by_user.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn min_item_degree(&self) -> usize {
        self.by_item.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// Indexed corpus: the interaction matrix plus its key maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedCorpus {
    pub matrix: InteractionMatrix,
    pub users: IdMap,
    pub items: IdMap,
}

/// Assigns indices in order of first appearance.
pub fn index(raw: &RawInteractions) -> Result<IndexedCorpus> {
    if raw.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let triples: Vec<_> = raw
        .records
        .iter()
        .map(|r| (users.get_or_insert(&r.user), items.get_or_insert(&r.item), r.timestamp))
        .collect();
    let matrix = InteractionMatrix::from_triples(users.len(), items.len(), triples);
    Ok(IndexedCorpus {
        matrix,
        users,
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios((self.train, self.valid, self.test)));
        }
        Ok(())
    }

    /// `(train, valid, test)` sizes for a user with `n` items. Train takes
    /// `ceil(train * n)` (at least one); the remainder is shared between
    /// validation and test in proportion, an odd leftover going to a side
    /// chosen by `coin`.
    pub fn sizes(&self, n: usize, coin: bool) -> (usize, usize, usize) {
        let n_train = ((self.train * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let n_train = n_train.min(n);
        let rest = n - n_train;
        let held = self.valid + self.test;
        if rest == 0 || held <= 0.0 {
            return (n_train + rest, 0, 0);
        }
        let exact = rest as f64 * self.valid / held;
        let floor = (exact + 1e-9).floor() as usize;
        let n_valid = if (exact - floor as f64).abs() > 1e-9 && coin {
            floor + 1
        } else {
            floor
        };
        let n_valid = n_valid.min(rest);
        (n_train, n_valid, rest - n_valid)
    }
}

/// Per-user partition of the filtered interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub valid: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }
}

/// Shuffles each user's items with a seeded generator and cuts them into
/// train/valid/test. Users are visited in index order from a single stream,
/// so the result depends only on `(matrix, ratios, seed)`.
pub fn split(matrix: &InteractionMatrix, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(matrix.nnz());
    let mut valid = Vec::with_capacity(matrix.n_users());
    let mut test = Vec::with_capacity(matrix.n_users());
    for u in 0..matrix.n_users() {
        let mut entries: Vec<(usize, Option<i64>)> = matrix
            .items_of(u)
            .iter()
            .copied()
            .zip(matrix.timestamps_of(u).iter().copied())
            .collect();
        entries.shuffle(&mut rng);
        let coin: bool = rng.random();
        let (n_train, n_valid, _) = ratios.sizes(entries.len(), coin);
        let mut v: Vec<usize> = entries[n_train..n_train + n_valid].iter().map(|e| e.0).collect();
        let mut t: Vec<usize> = entries[n_train + n_valid..].iter().map(|e| e.0).collect();
        v.sort_unstable();
        t.sort_unstable();
        train.extend(entries[..n_train].iter().map(|&(i, ts)| (u, i, ts)));
        valid.push(v);
        test.push(t);
    }
    Ok(DatasetSplit {
        train: InteractionMatrix::from_triples(matrix.n_users(), matrix.n_items(), train),
        valid,
        test,
        seed,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

pub const USER_IDS_FILE: &str = "user_ids.tsv";
pub const ITEM_IDS_FILE: &str = "item_ids.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const SPLIT_MANIFEST_FILE: &str = "split.json";

fn write_interactions<I>(path: &Path, users: &IdMap, items: &IdMap, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (usize, usize, Option<i64>)>,
{
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, i, ts) in rows {
        let res = match ts {
            Some(ts) => writeln!(w, "{}\t{}\t{}", users.key(u), items.key(i), ts),
            None => writeln!(w, "{}\t{}", users.key(u), items.key(i)),
        };
        res.map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

fn read_indexed(
    path: &Path,
    users: &IdMap,
    items: &IdMap,
) -> Result<Vec<(usize, usize, Option<i64>)>> {
    let raw = load_interactions(path)?;
    raw.records
        .iter()
        .map(|r| {
            let u = users.index_of(&r.user).ok_or_else(|| CorpusError::UnknownKey {
                kind: "user",
                key: r.user.clone(),
                path: path.to_path_buf(),
            })?;
            let i = items.index_of(&r.item).ok_or_else(|| CorpusError::UnknownKey {
                kind: "item",
                key: r.item.clone(),
                path: path.to_path_buf(),
            })?;
            Ok((u, i, r.timestamp))
        })
        .collect()
}

/// Writes ID maps, the three interaction files and `split.json` into `dir`.
pub fn write_split(dir: &Path, corpus: &IndexedCorpus, split: &DatasetSplit) -> Result<SplitManifest> {
    let full = &corpus.matrix;
    let ts_of = |u: usize, i: usize| {
        let pos = full.items_of(u).binary_search(&i).ok()?;
        full.timestamps_of(u)[pos]
    };
    corpus.users.write_tsv(&dir.join(USER_IDS_FILE))?;
    corpus.items.write_tsv(&dir.join(ITEM_IDS_FILE))?;
    write_interactions(&dir.join(TRAIN_FILE), &corpus.users, &corpus.items, split.train.triples())?;
    for (name, lists) in [(VALID_FILE, &split.valid), (TEST_FILE, &split.test)] {
        let rows = lists
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .map(|(u, i)| (u, i, ts_of(u, i)));
        write_interactions(&dir.join(name), &corpus.users, &corpus.items, rows)?;
    }
    let manifest = SplitManifest {
        seed: split.seed,
        ratios: split.ratios,
        n_users: split.n_users(),
        n_items: split.n_items(),
        n_train: split.train.nnz(),
        n_valid: split.valid.iter().map(Vec::len).sum(),
        n_test: split.test.iter().map(Vec::len).sum(),
    };
    let path = dir.join(SPLIT_MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| CorpusError::io(&path, e))?;
    Ok(manifest)
}

/// Persisted split plus the key maps it was indexed with.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub split: DatasetSplit,
    pub users: IdMap,
    pub items: IdMap,
}

pub fn read_split(dir: &Path) -> Result<LoadedSplit> {
    let users = IdMap::read_tsv(&dir.join(USER_IDS_FILE))?;
    let items = IdMap::read_tsv(&dir.join(ITEM_IDS_FILE))?;
    let manifest_path = dir.join(SPLIT_MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| CorpusError::io(&manifest_path, e))?;
    let manifest: SplitManifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::BadManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
    let train = read_indexed(&dir.join(TRAIN_FILE), &users, &items)?;
    let train = InteractionMatrix::from_triples(users.len(), items.len(), train);
    let held = |name: &str| -> Result<Vec<Vec<usize>>> {
        let mut lists = vec![Vec::new(); users.len()];
        for (u, i, _) in read_indexed(&dir.join(name), &users, &items)? {
            lists[u].push(i);
        }
        lists.iter_mut().for_each(|l| l.sort_unstable());
        Ok(lists)
    };
    let valid = held(VALID_FILE)?;
    let test = held(TEST_FILE)?;
    Ok(LoadedSplit {
        split: DatasetSplit {
            train,
            valid,
            test,
            seed: manifest.seed,
            ratios: manifest.ratios,
        },
        users,
        items,
    })
}
