//! Interaction datasets, dense rating grids and observation masks.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textfmt::KvDoc;

pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Maps raw string ids to dense indices in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new();
        for k in 0..n {
            m.intern(&k.to_string());
        }
        m
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&k) = self.index.get(raw) {
            return k;
        }
        let k = self.ids.len();
        self.ids.push(raw.to_string());
        self.index.insert(raw.to_string(), k);
        k
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Column layout of an interaction file; extra columns are ignored.
#[derive(Debug, Clone, Copy)]
pub struct TsvSchema {
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
}

impl Default for TsvSchema {
    fn default() -> Self {
        Self {
            user_col: 0,
            item_col: 1,
            rating_col: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Ratings collected under the logging (missing-not-at-random) policy.
    pub mnar: Vec<Interaction>,
    /// Optional ratings on uniformly sampled pairs, used for testing or calibration.
    pub mar: Option<Vec<Interaction>>,
    pub users: IdMap,
    pub items: IdMap,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_rows(text: &str, schema: TsvSchema, users: &mut IdMap, items: &mut IdMap) -> Result<Vec<Interaction>> {
    let needed = schema.user_col.max(schema.item_col).max(schema.rating_col) + 1;
    let mut seen: HashSet<Pair> = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < needed {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least {needed} tab-separated columns"),
            });
        }
        let rating: f64 = cols[schema.rating_col].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("rating {:?} is not a number", cols[schema.rating_col]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: "rating is not finite".into(),
            });
        }
        let (ru, ri) = (cols[schema.user_col], cols[schema.item_col]);
        if ru.is_empty() || ri.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty id".into(),
            });
        }
        let user = users.intern(ru);
        let item = items.intern(ri);
        if !seen.insert((user, item)) {
            return Err(Error::DuplicatePair {
                user: ru.to_string(),
                item: ri.to_string(),
            });
        }
        out.push(Interaction { user, item, rating });
    }
    Ok(out)
}

/// Loads `user<TAB>item<TAB>rating` rows, remapping ids to dense indices.
pub fn load_tsv(path: &Path) -> Result<Dataset> {
    load_tsv_with(path, TsvSchema::default())
}

pub fn load_tsv_with(path: &Path, schema: TsvSchema) -> Result<Dataset> {
    let text = read_file(path)?;
    parse_dataset(&text, schema)
}

pub fn parse_dataset(text: &str, schema: TsvSchema) -> Result<Dataset> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mnar = parse_rows(text, schema, &mut users, &mut items)?;
    Ok(Dataset {
        n_users: users.len(),
        n_items: items.len(),
        mnar,
        mar: None,
        users,
        items,
    })
}

/// Whitespace-separated rating grid, one user per line, `0` for an unrated pair.
pub fn parse_dense(text: &str) -> Result<(usize, usize, Vec<Interaction>)> {
    let mut out = Vec::new();
    let mut n_items = None;
    let mut n_users = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut width = 0;
        for (item, tok) in line.split_whitespace().enumerate() {
            let rating: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("rating {tok:?} is not a number"),
            })?;
            if !rating.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "rating is not finite".into(),
                });
            }
            if rating != 0.0 {
                out.push(Interaction {
                    user: n_users,
                    item,
                    rating,
                });
            }
            width += 1;
        }
        match n_items {
            None => n_items = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {w} columns, found {width}"),
                })
            }
            _ => {}
        }
        n_users += 1;
    }
    Ok((n_users, n_items.unwrap_or(0), out))
}

/// Loads a dense grid as distributed with Coat (`train.ascii`); ids are row and column positions.
pub fn load_dense(path: &Path) -> Result<Dataset> {
    let (nu, ni, rows) = parse_dense(&read_file(path)?)?;
    Dataset::from_interactions(nu, ni, rows)
}

impl Dataset {
    /// Reads a dense grid of uniformly sampled ratings with the same shape as this dataset.
    pub fn attach_mar_dense(&mut self, path: &Path) -> Result<()> {
        let (nu, ni, rows) = parse_dense(&read_file(path)?)?;
        if (nu, ni) != (self.n_users, self.n_items) {
            return Err(Error::DimensionMismatch {
                expected: self.n_users * self.n_items,
                got: nu * ni,
            });
        }
        self.mar = Some(rows);
        Ok(())
    }

    /// Builds a dataset over an integer-indexed grid.
    pub fn from_interactions(n_users: usize, n_items: usize, mnar: Vec<Interaction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &mnar {
            check_index(r.user, r.item, n_users, n_items)?;
            if !seen.insert((r.user, r.item)) {
                return Err(Error::DuplicatePair {
                    user: r.user.to_string(),
                    item: r.item.to_string(),
                });
            }
        }
        Ok(Self {
            n_users,
            n_items,
            mnar,
            mar: None,
            users: IdMap::identity(n_users),
            items: IdMap::identity(n_items),
        })
    }

    /// Reads uniformly sampled ratings using this dataset's id maps; unseen ids extend the grid.
    pub fn attach_mar(&mut self, path: &Path, schema: TsvSchema) -> Result<()> {
        let text = read_file(path)?;
        let rows = parse_rows(&text, schema, &mut self.users, &mut self.items)?;
        self.n_users = self.users.len();
        self.n_items = self.items.len();
        self.mar = Some(rows);
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_users * self.n_items
    }

    pub fn mask(&self) -> ObservationMask {
        let mut m = ObservationMask::new(self.n_users, self.n_items);
        for r in &self.mnar {
            m.set(r.user, r.item, true);
        }
        m
    }

    /// Sets every rating to 1 if `rating >= threshold` and 0 otherwise.
    pub fn binarize(&self, threshold: f64) -> Dataset {
        let bin = |rows: &[Interaction]| -> Vec<Interaction> {
            rows.iter()
                .map(|r| Interaction {
                    rating: binarize_value(r.rating, threshold),
                    ..*r
                })
                .collect()
        };
        Dataset {
            mnar: bin(&self.mnar),
            mar: self.mar.as_deref().map(bin),
            ..self.clone()
        }
    }

    /// Writes the logged ratings with their raw ids plus a `<path>.manifest` sidecar.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.mnar {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.users.raw(r.user),
                self.items.raw(r.item),
                r.rating
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let mut man = KvDoc::with_header("nbdebias-dataset", 1);
        man.set("n_users", self.n_users);
        man.set("n_items", self.n_items);
        man.set("n_mnar", self.mnar.len());
        man.set("n_mar", self.mar.as_ref().map_or(0, Vec::len));
        man.write(&manifest_path(path))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn binarize_value(rating: f64, threshold: f64) -> f64 {
    if rating >= threshold {
        1.0
    } else {
        0.0
    }
}

/// Shuffles `records` with `seed` and cuts consecutive blocks of the given fractions.
pub fn split<T: Clone>(records: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>> {
    if fractions.is_empty() {
        return Err(Error::invalid("no split fractions"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("split fractions must lie in [0, 1]"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("split fractions sum to {total} > 1")));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for f in fractions {
        cum += f;
        let end = ((cum * n as f64).round() as usize).min(n);
        parts.push(order[start..end].iter().map(|&k| records[k].clone()).collect());
        start = end;
    }
    Ok(parts)
}

pub(crate) fn check_index(u: usize, i: usize, n_users: usize, n_items: usize) -> Result<()> {
    if u >= n_users || i >= n_items {
        return Err(Error::OutOfRange {
            user: u,
            item: i,
            n_users,
            n_items,
        });
    }
    Ok(())
}

/// Dense row-major `n_users x n_items` grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub n_users: usize,
    pub n_items: usize,
    pub values: Vec<f64>,
}

impl RatingMatrix {
    pub fn filled(n_users: usize, n_items: usize, value: f64) -> Self {
        Self {
            n_users,
            n_items,
            values: vec![value; n_users * n_items],
        }
    }

    pub fn from_fn(n_users: usize, n_items: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_users * n_items);
        for u in 0..n_users {
            for i in 0..n_items {
                values.push(f(u, i));
            }
        }
        Self {
            n_users,
            n_items,
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_items) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Self {
            n_users: rows.len(),
            n_items,
            values: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, u: usize, i: usize) -> f64 {
        self.values[u * self.n_items + i]
    }

    #[inline]
    pub fn set(&mut self, u: usize, i: usize, v: f64) {
        self.values[u * self.n_items + i] = v;
    }

    pub fn try_get(&self, u: usize, i: usize) -> Result<f64> {
        check_index(u, i, self.n_users, self.n_items)?;
        Ok(self.get(u, i))
    }

    pub fn same_shape(&self, n_users: usize, n_items: usize) -> Result<()> {
        if self.n_users != n_users || self.n_items != n_items {
            return Err(Error::DimensionMismatch {
                expected: n_users * n_items,
                got: self.n_users * self.n_items,
            });
        }
        Ok(())
    }

    /// Writes every cell as `user<TAB>item<TAB>value`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 12);
        for u in 0..self.n_users {
            for i in 0..self.n_items {
                let _ = writeln!(out, "{u}\t{i}\t{}", self.get(u, i));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, n_users: usize, n_items: usize) -> Result<Self> {
        let text = read_file(path)?;
        let mut m = Self::filled(n_users, n_items, f64::NAN);
        for (u, i, v) in parse_index_rows(&text)? {
            check_index(u, i, n_users, n_items)?;
            m.set(u, i, v);
        }
        if let Some(k) = m.values.iter().position(|v| v.is_nan()) {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "{}: missing cell ({}, {})",
                    path.display(),
                    k / n_items.max(1),
                    k % n_items.max(1)
                ),
            });
        }
        Ok(m)
    }
}

pub(crate) fn parse_index_rows(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Parse {
            line: idx + 1,
            msg: msg.to_string(),
        };
        if cols.len() < 3 {
            return Err(bad("expected user, item and value columns"));
        }
        let u = cols[0].trim().parse().map_err(|_| bad("bad user index"))?;
        let i = cols[1].trim().parse().map_err(|_| bad("bad item index"))?;
        let v = cols[2].trim().parse().map_err(|_| bad("bad value"))?;
        rows.push((u, i, v));
    }
    Ok(rows)
}

/// Exposure indicators `o_{u,i}` on the full grid, with cached row and column counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    pub n_users: usize,
    pub n_items: usize,
    bits: Vec<bool>,
    row_counts: Vec<usize>,
    col_counts: Vec<usize>,
}

impl ObservationMask {
    pub fn new(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            bits: vec![false; n_users * n_items],
            row_counts: vec![0; n_users],
            col_counts: vec![0; n_items],
        }
    }

    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[Pair]) -> Result<Self> {
        let mut m = Self::new(n_users, n_items);
        for &(u, i) in pairs {
            check_index(u, i, n_users, n_items)?;
            m.set(u, i, true);
        }
        Ok(m)
    }

    pub fn from_fn(n_users: usize, n_items: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(n_users, n_items);
        for u in 0..n_users {
            for i in 0..n_items {
                if f(u, i) {
                    m.set(u, i, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, u: usize, i: usize) -> bool {
        self.bits[u * self.n_items + i]
    }

    pub fn set(&mut self, u: usize, i: usize, on: bool) {
        let k = u * self.n_items + i;
        if self.bits[k] == on {
            return;
        }
        self.bits[k] = on;
        if on {
            self.row_counts[u] += 1;
            self.col_counts[i] += 1;
        } else {
            self.row_counts[u] -= 1;
            self.col_counts[i] -= 1;
        }
    }

    pub fn row_count(&self, u: usize) -> usize {
        self.row_counts[u]
    }

    pub fn col_count(&self, i: usize) -> usize {
        self.col_counts[i]
    }

    pub fn n_observed(&self) -> usize {
        self.row_counts.iter().sum()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_users * self.n_items
    }

    /// Observed pairs in user-major order.
    pub fn observed_pairs(&self) -> Vec<Pair> {
        let mut out = Vec::with_capacity(self.n_observed());
        for u in 0..self.n_users {
            for i in 0..self.n_items {
                if self.get(u, i) {
                    out.push((u, i));
                }
            }
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (u, i) in self.observed_pairs() {
            let _ = writeln!(out, "{u}\t{i}\t1");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, n_users: usize, n_items: usize) -> Result<Self> {
        let text = read_file(path)?;
        let mut m = Self::new(n_users, n_items);
        for (u, i, v) in parse_index_rows(&text)? {
            check_index(u, i, n_users, n_items)?;
            m.set(u, i, v != 0.0);
        }
        Ok(m)
    }
}
