//! Interaction and tag ingestion, preprocessing, and user splits.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Bidirectional map between external string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, assigning the next dense index on first sight.
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.lookup.get(id) {
            return ix;
        }
        let ix = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), ix);
        ix
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, ix: u32) -> &str {
        &self.ids[ix as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn from_ids(ids: Vec<String>) -> Self {
        let lookup = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self { ids, lookup }
    }
}

/// Binary user-item interaction matrix stored as sorted per-user rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: Vec<Vec<u32>>,
    users: IdIndex,
    items: IdIndex,
}

impl InteractionMatrix {
    /// Builds a matrix from per-user item lists. Rows are sorted and deduplicated.
    pub fn from_rows(mut rows: Vec<Vec<u32>>, num_items: usize) -> Result<Self> {
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= num_items {
                    return Err(Error::Dimension(format!(
                        "user {u} references item {last} but num_items = {num_items}"
                    )));
                }
            }
        }
        let users = IdIndex::from_ids((0..rows.len()).map(|u| u.to_string()).collect());
        let items = IdIndex::from_ids((0..num_items).map(|i| i.to_string()).collect());
        Ok(Self { rows, users, items })
    }

    pub fn num_users(&self) -> usize {
        self.rows.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        let cells = self.num_users() as f64 * self.num_items() as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.nnz() as f64 / cells
        }
    }

    /// Interaction count per item.
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_items()];
        for row in &self.rows {
            for &i in row {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    /// Sub-matrix over the given users (in the given order), same item space.
    pub fn select_users(&self, users: &[u32]) -> InteractionMatrix {
        let rows = users.iter().map(|&u| self.rows[u as usize].clone()).collect();
        let ids = users
            .iter()
            .map(|&u| self.users.id(u).to_owned())
            .collect();
        InteractionMatrix {
            rows,
            users: IdIndex::from_ids(ids),
            items: self.items.clone(),
        }
    }

    /// Writes the matrix as an interactions TSV with value 1 on every line.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("user_id\titem_id\tvalue\n");
        for (u, row) in self.rows.iter().enumerate() {
            let uid = self.users.id(u as u32);
            for &i in row {
                out.push_str(uid);
                out.push('\t');
                out.push_str(self.items.id(i));
                out.push_str("\t1\n");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionFormat {
    ExplicitRatings,
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    /// `None` for implicit feedback.
    pub value: Option<f64>,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn check_header(line: &str, expected: &[&str], path: &Path) -> Result<()> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    let matches = fields.len() >= expected.len()
        && fields
            .iter()
            .zip(expected)
            .all(|(f, e)| f.trim().eq_ignore_ascii_case(e));
    if matches {
        Ok(())
    } else {
        Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header `{}`", expected.join("\\t")),
        })
    }
}

/// Reads an interactions TSV (`user_id\titem_id\tvalue` with header).
pub fn load_interactions(path: &Path, format: InteractionFormat) -> Result<Vec<RawRecord>> {
    parse_interactions(open(path)?, path, format)
}

pub fn parse_interactions<R: Read>(
    reader: R,
    path: &Path,
    format: InteractionFormat,
) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (ix, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = ix + 1;
        if line_no == 1 {
            check_header(&line, &["user_id", "item_id", "value"], path)?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message,
        };
        let value = match format {
            InteractionFormat::ExplicitRatings => {
                if fields.len() != 3 {
                    return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
                }
                let v: f64 = fields[2]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("invalid value `{}`", fields[2])))?;
                Some(v)
            }
            InteractionFormat::Implicit => {
                if fields.len() < 2 || fields.len() > 3 {
                    return Err(parse_err(format!(
                        "expected 2 or 3 fields, found {}",
                        fields.len()
                    )));
                }
                None
            }
        };
        records.push(RawRecord {
            user: fields[0].trim().to_owned(),
            item: fields[1].trim().to_owned(),
            value,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus(format!("{} has no records", path.display())));
    }
    Ok(records)
}

/// Keeps records with `value >= threshold` (implicit records always pass) and
/// deduplicates (user, item) pairs. Ids are indexed in first-seen order.
pub fn binarize_threshold(records: &[RawRecord], threshold: f64) -> InteractionMatrix {
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for rec in records {
        if rec.value.is_some_and(|v| v < threshold) {
            continue;
        }
        let u = users.intern(&rec.user) as usize;
        let i = items.intern(&rec.item);
        if u == rows.len() {
            rows.push(Vec::new());
        }
        rows[u].push(i);
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    InteractionMatrix { rows, users, items }
}

/// Builds a matrix over a fixed item index (users in first-seen order).
/// Every record is kept; unknown items are an error.
pub fn matrix_with_items(records: &[RawRecord], items: IdIndex, path: &Path) -> Result<InteractionMatrix> {
    let mut users = IdIndex::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (ix, rec) in records.iter().enumerate() {
        let Some(i) = items.get(&rec.item) else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: ix + 2,
                message: format!("item {} is not in the catalog", rec.item),
            });
        };
        let u = users.intern(&rec.user) as usize;
        if u == rows.len() {
            rows.push(Vec::new());
        }
        rows[u].push(i);
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    Ok(InteractionMatrix { rows, users, items })
}

/// Reads the item ids of a catalog TSV in file order.
pub fn load_catalog_ids(path: &Path) -> Result<IdIndex> {
    let mut items = IdIndex::new();
    for (ix, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if ix == 0 {
            check_header(&line, &["item_id", "title"], path)?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let id = line.split('\t').next().unwrap_or_default().trim();
        items.intern(id);
    }
    Ok(items)
}

/// Drops items with fewer than `min_item_interactions`, then users with fewer
/// than `min_user_interactions`, one pass each, and re-indexes densely while
/// preserving relative order. Users left with no interactions are always dropped.
pub fn filter_min_activity(
    x: &InteractionMatrix,
    min_item_interactions: u64,
    min_user_interactions: u64,
) -> Result<InteractionMatrix> {
    let counts = x.item_counts();
    let mut remap = vec![u32::MAX; x.num_items()];
    let mut item_ids = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c >= min_item_interactions {
            remap[i] = item_ids.len() as u32;
            item_ids.push(x.items.id(i as u32).to_owned());
        }
    }
    let mut rows = Vec::new();
    let mut user_ids = Vec::new();
    for (u, row) in x.rows.iter().enumerate() {
        let kept: Vec<u32> = row
            .iter()
            .filter_map(|&i| match remap[i as usize] {
                u32::MAX => None,
                j => Some(j),
            })
            .collect();
        if !kept.is_empty() && kept.len() as u64 >= min_user_interactions {
            rows.push(kept);
            user_ids.push(x.users.id(u as u32).to_owned());
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no users left after filtering (min_item = {min_item_interactions}, min_user = {min_user_interactions})"
        )));
    }
    Ok(InteractionMatrix {
        rows,
        users: IdIndex::from_ids(user_ids),
        items: IdIndex::from_ids(item_ids),
    })
}

/// User-disjoint train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seeded strong-generalization split: shuffle users, take the first
/// `floor(m * test_frac)` as test, the next `floor(m * val_frac)` as
/// validation, the remainder as train. Each set is returned sorted.
pub fn split_strong_generalization(
    x: &InteractionMatrix,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&test_frac)
        || !(0.0..1.0).contains(&val_frac)
        || test_frac + val_frac >= 1.0
    {
        return Err(Error::Config(format!(
            "split fractions must be non-negative with test + val < 1 (got {test_frac} + {val_frac})"
        )));
    }
    let m = x.num_users();
    let n_test = floor_frac(m, test_frac);
    let n_val = floor_frac(m, val_frac);
    if n_test + n_val >= m {
        return Err(Error::Config(format!(
            "split of {m} users leaves no training users"
        )));
    }
    let mut order: Vec<u32> = (0..m as u32).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitSpec {
        seed,
        train,
        val,
        test,
    })
}

fn floor_frac(count: usize, frac: f64) -> usize {
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    (count as f64 * frac + 1e-9).floor() as usize
}

/// Inference input and evaluation targets for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutPair {
    pub input_items: Vec<u32>,
    pub target_items: Vec<u32>,
}

/// Per-user random holdout of `max(1, floor(len * target_frac))` items.
/// Users with fewer than two interactions are skipped.
pub fn split_holdout_per_user(
    x: &InteractionMatrix,
    users: &[u32],
    target_frac: f64,
    seed: u64,
) -> Result<BTreeMap<u32, HoldoutPair>> {
    if !(target_frac > 0.0 && target_frac < 1.0) {
        return Err(Error::Config(format!(
            "target fraction must lie in (0, 1), got {target_frac}"
        )));
    }
    let mut out = BTreeMap::new();
    let mut skipped = 0usize;
    for &u in users {
        let history = x.row(u as usize);
        if history.len() < 2 {
            skipped += 1;
            continue;
        }
        let n_target = floor_frac(history.len(), target_frac).max(1);
        let mut shuffled = history.to_vec();
        rng::shuffle(&mut rng::derive(seed, u as u64), &mut shuffled);
        let mut target_items = shuffled[..n_target].to_vec();
        let mut input_items = shuffled[n_target..].to_vec();
        target_items.sort_unstable();
        input_items.sort_unstable();
        out.insert(
            u,
            HoldoutPair {
                input_items,
                target_items,
            },
        );
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} users with fewer than 2 interactions");
    }
    Ok(out)
}

/// Tag vocabulary with sparse tag-item assignment counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    tags: Vec<String>,
    /// (tag, item, count), sorted by tag then item.
    entries: Vec<(u32, u32, u64)>,
    total: u64,
    num_items: usize,
}

impl TagTable {
    /// Builds a table from assignment counts, dropping tags whose total count
    /// is below `min_count`. Tags are ordered lexicographically.
    pub fn from_counts(
        counts: &BTreeMap<(String, u32), u64>,
        num_items: usize,
        min_count: u64,
    ) -> Result<Self> {
        let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
        for ((tag, _), &c) in counts {
            *totals.entry(tag.as_str()).or_default() += c;
        }
        let tags: Vec<String> = totals
            .iter()
            .filter(|(_, &c)| c >= min_count && c > 0)
            .map(|(t, _)| (*t).to_owned())
            .collect();
        if tags.is_empty() {
            return Err(Error::EmptyTagTable { min_count });
        }
        let index: HashMap<&str, u32> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let mut entries = Vec::new();
        for ((tag, item), &c) in counts {
            if c == 0 {
                continue;
            }
            if *item as usize >= num_items {
                return Err(Error::Dimension(format!(
                    "tag `{tag}` references item {item} but num_items = {num_items}"
                )));
            }
            if let Some(&t) = index.get(tag.as_str()) {
                entries.push((t, *item, c));
            }
        }
        entries.sort_unstable();
        let total = entries.iter().map(|e| e.2).sum();
        Ok(Self {
            tags,
            entries,
            total,
            num_items,
        })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn tag_index(&self, tag: &str) -> Option<u32> {
        self.tags
            .binary_search_by(|t| t.as_str().cmp(tag))
            .ok()
            .map(|i| i as u32)
    }

    pub fn entries(&self) -> &[(u32, u32, u64)] {
        &self.entries
    }

    /// Joint probability entries `(tag, item, p_hat)`, summing to one.
    pub fn p_hat(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let total = self.total as f64;
        self.entries
            .iter()
            .map(move |&(t, i, c)| (t, i, c as f64 / total))
    }

    /// Items carrying each tag, sorted.
    pub fn items_by_tag(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.tags.len()];
        for &(t, i, _) in &self.entries {
            out[t as usize].push(i);
        }
        out
    }

    /// Tags carried by each item, sorted.
    pub fn tags_by_item(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.num_items];
        for &(t, i, _) in &self.entries {
            out[i as usize].push(t);
        }
        out
    }

    /// Writes one line per unit of count (`item_id\ttag`).
    pub fn write_tsv(&self, path: &Path, items: &IdIndex) -> Result<()> {
        let mut out = String::from("item_id\ttag\n");
        let mut rows: Vec<(u32, u32, u64)> = self.entries.clone();
        rows.sort_unstable_by_key(|&(t, i, _)| (i, t));
        for (t, i, c) in rows {
            for _ in 0..c {
                out.push_str(items.id(i));
                out.push('\t');
                out.push_str(&self.tags[t as usize]);
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Lowercases and trims a raw tag.
pub fn normalize_tag(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Reads a tags TSV (`item_id\ttag` with header), keeping assignments to items
/// present in `x` and tags with at least `min_count` assignments.
pub fn load_tags(path: &Path, x: &InteractionMatrix, min_count: u64) -> Result<TagTable> {
    let mut counts: BTreeMap<(String, u32), u64> = BTreeMap::new();
    let mut dropped = 0usize;
    for (ix, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if ix == 0 {
            check_header(&line, &["item_id", "tag"], path)?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let Some((item, tag)) = line.trim_end_matches('\r').split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: ix + 1,
                message: "expected `item_id\\ttag`".into(),
            });
        };
        let tag = normalize_tag(tag);
        if tag.is_empty() {
            continue;
        }
        match x.items().get(item.trim()) {
            Some(i) => *counts.entry((tag, i)).or_default() += 1,
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} tag assignments to unknown items");
    }
    TagTable::from_counts(&counts, x.num_items(), min_count)
}

/// Reads an item catalog (`item_id\ttitle`, header row) into per-index titles,
/// falling back to the external id for items without an entry.
pub fn load_catalog(path: &Path, items: &IdIndex) -> Result<Vec<String>> {
    let mut titles: Vec<String> = items.ids().to_vec();
    for (ix, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if ix == 0 {
            check_header(&line, &["item_id", "title"], path)?;
            continue;
        }
        if let Some((item, title)) = line.trim_end_matches('\r').split_once('\t') {
            if let Some(i) = items.get(item.trim()) {
                titles[i as usize] = title.to_owned();
            }
        }
    }
    Ok(titles)
}

pub fn write_catalog(path: &Path, items: &IdIndex, titles: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("item_id\ttitle\n");
    for (i, title) in titles.iter().enumerate() {
        out.push_str(items.id(i as u32));
        out.push('\t');
        out.push_str(title);
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
