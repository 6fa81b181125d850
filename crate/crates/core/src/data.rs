//! Dataset ingestion, the global feature-ID registry, splitting, batch
//! sampling, feature dropout and single-feature augmentation.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Blob, Container};
use crate::error::{NiaqueError, Result};
use crate::model::FeatureRow;
use crate::rng;

/// Default row cap per dataset.
pub const MAX_ROWS: usize = 20_000;
/// Targets are mapped linearly onto `[0, TARGET_SCALE]`.
pub const TARGET_SCALE: f64 = 10.0;

/// A parsed CSV: header plus string cells (`None` = empty cell).
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| NiaqueError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .map(|c| {
                        let c = c.trim();
                        (!c.is_empty()).then(|| c.to_string())
                    })
                    .collect(),
            );
        }
        Ok(RawTable { headers, rows })
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.headers)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        wtr.flush().map_err(|e| NiaqueError::io("csv output", e))?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// One manifest line: `name<TAB>csv_path<TAB>target_column`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub csv_path: PathBuf,
    pub target_column: String,
}

/// Parses a manifest; relative paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.trim().is_empty()) {
            return Err(NiaqueError::InvalidArgument(format!(
                "manifest line {}: expected `name<TAB>csv_path<TAB>target_column`",
                lineno + 1
            )));
        }
        let p = PathBuf::from(parts[1].trim());
        out.push(ManifestEntry {
            name: parts[0].trim().to_string(),
            csv_path: if p.is_absolute() { p } else { base_dir.join(p) },
            target_column: parts[2].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NiaqueError::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Reads a manifest and ingests every dataset it lists, in order.
pub fn ingest_manifest(
    path: impl AsRef<Path>,
    registry: &mut FeatureRegistry,
    opts: &IngestOptions,
) -> Result<Vec<SplitDataset>> {
    let path = path.as_ref();
    let entries = read_manifest(path)?;
    if entries.is_empty() {
        return Err(NiaqueError::InvalidArgument(format!(
            "{}: manifest lists no datasets",
            path.display()
        )));
    }
    entries.iter().map(|e| ingest(e, registry, opts)).collect()
}

/// Global `(dataset, column) → feature id` map. IDs are dense from 0 and append-only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(String, String)>", into = "Vec<(String, String)>")]
pub struct FeatureRegistry {
    entries: Vec<(String, String)>,
    index: HashMap<(String, String), usize>,
}

impl From<Vec<(String, String)>> for FeatureRegistry {
    fn from(entries: Vec<(String, String)>) -> Self {
        let index = entries.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        FeatureRegistry { entries, index }
    }
}

impl From<FeatureRegistry> for Vec<(String, String)> {
    fn from(r: FeatureRegistry) -> Self {
        r.entries
    }
}

/// Column list of one dataset, as registered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<String>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_id(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, dataset: &str, column: &str) -> Option<usize> {
        self.index.get(&(dataset.to_string(), column.to_string())).copied()
    }

    pub fn lookup(&self, id: usize) -> Option<(&str, &str)> {
        self.entries.get(id).map(|(d, c)| (d.as_str(), c.as_str()))
    }

    /// True when `other` starts with every entry of `self`.
    pub fn is_prefix_of(&self, other: &FeatureRegistry) -> bool {
        other.entries.len() >= self.entries.len() && other.entries[..self.entries.len()] == self.entries[..]
    }

    /// IDs for `columns` of `dataset`, allocating new ones for unseen pairs.
    /// Registering the same dataset again returns the same IDs.
    pub fn register_dataset(&mut self, dataset: &str, columns: &[String]) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        for c in columns {
            if !seen.insert(c) {
                return Err(NiaqueError::DuplicateRegistration {
                    dataset: dataset.into(),
                    column: c.clone(),
                });
            }
        }
        Ok(columns
            .iter()
            .map(|c| {
                let key = (dataset.to_string(), c.clone());
                if let Some(&id) = self.index.get(&key) {
                    id
                } else {
                    let id = self.entries.len();
                    self.entries.push(key.clone());
                    self.index.insert(key, id);
                    id
                }
            })
            .collect())
    }
}

/// Registers several datasets in order; a dataset listed twice is an error.
pub fn register_features(registry: &mut FeatureRegistry, schemas: &[DatasetSchema]) -> Result<()> {
    let mut names = BTreeSet::new();
    for s in schemas {
        if !names.insert(&s.name) {
            return Err(NiaqueError::DuplicateRegistration {
                dataset: s.name.clone(),
                column: "*".into(),
            });
        }
    }
    for s in schemas {
        registry.register_dataset(&s.name, &s.columns)?;
    }
    Ok(())
}

/// One feature column of an ingested dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub feature_id: usize,
    /// Sorted category labels for ordinally encoded columns.
    pub categories: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub source: String,
    pub target_column: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub columns: Vec<ColumnInfo>,
}

impl DatasetMeta {
    pub fn normalize(&self, y: f64) -> f64 {
        TARGET_SCALE * (y - self.y_min) / (self.y_max - self.y_min)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.y_min + y * (self.y_max - self.y_min) / TARGET_SCALE
    }

    /// Multiplier taking raw target units to normalised units.
    pub fn scale(&self) -> f64 {
        TARGET_SCALE / (self.y_max - self.y_min)
    }

    pub fn feature_ids(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.feature_id).collect()
    }

    pub fn column_of(&self, feature_id: usize) -> Option<&ColumnInfo> {
        self.columns.iter().find(|c| c.feature_id == feature_id)
    }

    /// Encodes new rows with this dataset's column map and category tables.
    /// Unknown categories and empty cells are dropped; the target column is
    /// used if present (normalised).
    pub fn encode_table(&self, table: &RawTable) -> Result<Vec<FeatureRow>> {
        let target_idx = table.column(&self.target_column);
        let mut cols = Vec::new();
        for c in &self.columns {
            if let Some(idx) = table.column(&c.name) {
                cols.push((idx, c));
            }
        }
        let mut out = Vec::with_capacity(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            let mut ids = Vec::new();
            let mut vals = Vec::new();
            for &(idx, c) in &cols {
                let Some(cell) = row.get(idx).and_then(|c| c.as_deref()) else { continue };
                let v = match &c.categories {
                    Some(cats) => cats.iter().position(|k| k == cell).map(|p| p as f64),
                    None => cell.parse::<f64>().ok().filter(|v| v.is_finite()),
                };
                if let Some(v) = v {
                    ids.push(c.feature_id);
                    vals.push(v);
                }
            }
            if ids.is_empty() {
                return Err(NiaqueError::Dataset {
                    name: self.name.clone(),
                    reason: format!("input row {r} has no usable features"),
                });
            }
            let target = target_idx
                .and_then(|i| row.get(i).and_then(|c| c.as_deref()))
                .and_then(|c| c.parse::<f64>().ok())
                .map(|y| self.normalize(y));
            out.push(FeatureRow::new(ids, vals, target)?);
        }
        Ok(out)
    }
}

/// One dataset after ingestion, split 80/10/10.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub meta: DatasetMeta,
    pub train: Vec<FeatureRow>,
    pub val: Vec<FeatureRow>,
    pub test: Vec<FeatureRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = NiaqueError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(NiaqueError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitDataset {
    pub fn split(&self, which: Split) -> &[FeatureRow] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all_rows(&self) -> impl Iterator<Item = &FeatureRow> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub max_rows: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            max_rows: MAX_ROWS,
            seed: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

/// Reads the CSV named by a manifest entry and ingests it.
pub fn ingest(entry: &ManifestEntry, registry: &mut FeatureRegistry, opts: &IngestOptions) -> Result<SplitDataset> {
    let table = RawTable::read_csv(&entry.csv_path)?;
    ingest_table(
        &entry.name,
        &entry.csv_path.display().to_string(),
        &table,
        &entry.target_column,
        registry,
        opts,
    )
}

/// Caps, encodes, normalises and splits a table.
pub fn ingest_table(
    name: &str,
    source: &str,
    table: &RawTable,
    target_column: &str,
    registry: &mut FeatureRegistry,
    opts: &IngestOptions,
) -> Result<SplitDataset> {
    let fail = |reason: String| NiaqueError::Dataset {
        name: name.into(),
        reason,
    };
    let target_idx = table
        .column(target_column)
        .ok_or_else(|| fail(format!("target column `{target_column}` not found")))?;
    let mut kept = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        if row.len() != table.headers.len() {
            return Err(fail(format!("row {r} has {} cells", row.len())));
        }
        if let Some(cell) = &row[target_idx] {
            let y: f64 = cell
                .parse()
                .map_err(|_| fail(format!("target `{cell}` in row {r} is not numeric")))?;
            if !y.is_finite() {
                return Err(fail(format!("target in row {r} is not finite")));
            }
            kept.push((r, y));
        }
    }
    if kept.is_empty() {
        return Err(fail("no rows with a target value".into()));
    }
    let mut cap_rng = rng::stream(opts.seed, &format!("cap:{name}"));
    if kept.len() > opts.max_rows {
        let mut pick = index::sample(&mut cap_rng, kept.len(), opts.max_rows).into_vec();
        pick.sort_unstable();
        kept = pick.into_iter().map(|i| kept[i]).collect();
    }

    let feature_cols: Vec<usize> = (0..table.headers.len()).filter(|&c| c != target_idx).collect();
    let column_names: Vec<String> = feature_cols.iter().map(|&c| table.headers[c].clone()).collect();
    let ids = registry.register_dataset(name, &column_names)?;

    // A column is categorical when any retained cell fails to parse as a number.
    let mut columns = Vec::with_capacity(feature_cols.len());
    for (k, &c) in feature_cols.iter().enumerate() {
        let cells = kept.iter().filter_map(|&(r, _)| table.rows[r][c].as_deref());
        let numeric = cells
            .clone()
            .all(|s| s.parse::<f64>().map(f64::is_finite).unwrap_or(false));
        let categories = (!numeric).then(|| {
            let set: BTreeSet<&str> = cells.collect();
            set.into_iter().map(str::to_string).collect::<Vec<_>>()
        });
        columns.push(ColumnInfo {
            name: column_names[k].clone(),
            feature_id: ids[k],
            categories,
        });
    }

    let (y_min, y_max) = kept
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    if y_max <= y_min {
        return Err(fail("target is constant".into()));
    }
    let mut meta = DatasetMeta {
        name: name.into(),
        source: source.into(),
        target_column: target_column.into(),
        n_rows: 0,
        n_features: columns.len(),
        y_min,
        y_max,
        columns,
    };

    let mut rows = Vec::with_capacity(kept.len());
    for &(r, y) in &kept {
        let mut fids = Vec::new();
        let mut vals = Vec::new();
        for (k, &c) in feature_cols.iter().enumerate() {
            let Some(cell) = table.rows[r][c].as_deref() else { continue };
            let info = &meta.columns[k];
            let v = match &info.categories {
                Some(cats) => cats.binary_search_by(|x| x.as_str().cmp(cell)).unwrap() as f64,
                None => cell.parse::<f64>().unwrap(),
            };
            fids.push(info.feature_id);
            vals.push(v);
        }
        if fids.is_empty() {
            continue;
        }
        rows.push(FeatureRow::new(fids, vals, Some(meta.normalize(y)))?);
    }
    if rows.is_empty() {
        return Err(fail("every row lacks feature values".into()));
    }
    meta.n_rows = rows.len();

    let mut split_rng = rng::stream(opts.seed, &format!("split:{name}"));
    let (train, val, test) = split_rows(rows, opts, &mut split_rng);
    Ok(SplitDataset {
        meta,
        train,
        val,
        test,
    })
}

/// Shuffled 80/10/10 partition (fractions from `opts`).
pub fn split_rows<R: Rng + ?Sized>(
    rows: Vec<FeatureRow>,
    opts: &IngestOptions,
    rng: &mut R,
) -> (Vec<FeatureRow>, Vec<FeatureRow>, Vec<FeatureRow>) {
    let n = rows.len();
    let n_train = ((n as f64) * opts.train_fraction).round() as usize;
    let n_val = (((n as f64) * opts.val_fraction).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut slots: Vec<Option<FeatureRow>> = rows.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<FeatureRow> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| slots[i].take().unwrap()).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    (train, val, test)
}

/// Train rows of several datasets viewed as one population.
#[derive(Clone, Debug)]
pub struct RowPool<'a> {
    parts: Vec<&'a [FeatureRow]>,
    cumulative: Vec<usize>,
}

impl<'a> RowPool<'a> {
    pub fn new(parts: Vec<&'a [FeatureRow]>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in &parts {
            total += p.len();
            cumulative.push(total);
        }
        if total == 0 {
            return Err(NiaqueError::EmptyInput("row pool"));
        }
        Ok(RowPool { parts, cumulative })
    }

    pub fn train_of(datasets: &'a [SplitDataset]) -> Result<Self> {
        Self::new(datasets.iter().map(|d| d.train.as_slice()).collect())
    }

    pub fn len(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(part, row)` of one uniform draw over the union.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let k = rng.random_range(0..self.len());
        let part = self.cumulative.partition_point(|&c| c <= k);
        let start = if part == 0 { 0 } else { self.cumulative[part - 1] };
        (part, k - start)
    }

    pub fn get(&self, part: usize, row: usize) -> &'a FeatureRow {
        &self.parts[part][row]
    }
}

/// `batch_size` rows drawn uniformly (with replacement) from the union of
/// train rows, so larger datasets are drawn proportionally more often.
pub fn sample_batch<R: Rng + ?Sized>(pool: &RowPool<'_>, batch_size: usize, rng: &mut R) -> Vec<FeatureRow> {
    (0..batch_size)
        .map(|_| {
            let (p, r) = pool.draw_index(rng);
            pool.get(p, r).clone()
        })
        .collect()
}

/// Batch-level feature dropout. With probability `√dp` the batch is affected;
/// then each feature id present in the batch is removed with probability `√dp`,
/// giving a marginal removal probability of `dp`. Single-feature rows are left
/// alone, and a row that would lose every feature redraws its own removal mask.
pub fn feature_dropout_batch<R: Rng + ?Sized>(batch: &mut [FeatureRow], dp: f64, rng: &mut R) {
    if dp <= 0.0 {
        return;
    }
    let p = dp.sqrt();
    if rng.random::<f64>() >= p {
        return;
    }
    let ids: BTreeSet<usize> = batch.iter().flat_map(|r| r.feature_ids().iter().copied()).collect();
    let dropped: BTreeSet<usize> = ids.into_iter().filter(|_| rng.random::<f64>() < p).collect();
    for row in batch.iter_mut() {
        if row.len() <= 1 {
            continue;
        }
        let mut next = row.retain(|id| !dropped.contains(&id));
        while next.is_none() {
            next = row.retain(|_| rng.random::<f64>() >= p);
        }
        *row = next.unwrap();
    }
}

/// Dropout applied to one row treated as its own batch.
pub fn feature_dropout<R: Rng + ?Sized>(row: &FeatureRow, dp: f64, rng: &mut R) -> FeatureRow {
    let mut b = [row.clone()];
    feature_dropout_batch(&mut b, dp, rng);
    let [r] = b;
    r
}

/// Replaces each row, with probability `ratio`, by a copy holding one uniformly
/// chosen feature. Targets are kept. Returns how many rows were replaced.
pub fn single_feature_augment<R: Rng + ?Sized>(batch: &mut [FeatureRow], ratio: f64, rng: &mut R) -> usize {
    if ratio <= 0.0 {
        return 0;
    }
    let mut n = 0;
    for row in batch.iter_mut() {
        if rng.random::<f64>() < ratio {
            let k = rng.random_range(0..row.len());
            *row = row.single(k);
            n += 1;
        }
    }
    n
}

/// Seeded subsample keeping `ceil(fraction · n)` rows (at least one), in original order.
pub fn subsample<R: Rng + ?Sized>(rows: &[FeatureRow], fraction: f64, rng: &mut R) -> Vec<FeatureRow> {
    if fraction >= 1.0 {
        return rows.to_vec();
    }
    let k = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len());
    let mut idx = index::sample(rng, rows.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

fn rows_to_blobs(c: &mut Container, prefix: &str, rows: &[FeatureRow]) -> Result<()> {
    let mut offsets = vec![0u64];
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    let mut targets = Vec::new();
    for r in rows {
        ids.extend(r.feature_ids().iter().map(|&i| i as u64));
        vals.extend_from_slice(r.values());
        offsets.push(ids.len() as u64);
        targets.push(r.target().unwrap_or(f64::NAN));
    }
    c.push(format!("{prefix}.offsets"), vec![offsets.len()], Blob::U64(offsets))?;
    if !rows.is_empty() {
        c.push(format!("{prefix}.ids"), vec![ids.len()], Blob::U64(ids))?;
        c.push(format!("{prefix}.values"), vec![vals.len()], Blob::F64(vals))?;
        c.push(format!("{prefix}.targets"), vec![targets.len()], Blob::F64(targets))?;
    }
    Ok(())
}

fn rows_from_blobs(c: &Container, prefix: &str) -> Result<Vec<FeatureRow>> {
    let offsets = c
        .get(&format!("{prefix}.offsets"))?
        .1
        .as_u64()
        .ok_or_else(|| NiaqueError::Format("offsets must be u64".into()))?
        .to_vec();
    if offsets.len() <= 1 {
        return Ok(Vec::new());
    }
    let ids = c.get(&format!("{prefix}.ids"))?.1.as_u64().map(<[u64]>::to_vec).unwrap_or_default();
    let vals = c.get(&format!("{prefix}.values"))?.1.to_f64();
    let targets = c.get(&format!("{prefix}.targets"))?.1.to_f64();
    offsets
        .windows(2)
        .zip(targets)
        .map(|(w, t)| {
            let (a, b) = (w[0] as usize, w[1] as usize);
            if b > ids.len() || a > b {
                return Err(NiaqueError::Format("row offsets out of range".into()));
            }
            FeatureRow::new(
                ids[a..b].iter().map(|&i| i as usize).collect(),
                vals[a..b].to_vec(),
                (!t.is_nan()).then_some(t),
            )
        })
        .collect()
}

/// Writes an ingested dataset to a container file.
pub fn save_store(ds: &SplitDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Container::new("dataset", serde_json::to_value(&ds.meta)?);
    rows_to_blobs(&mut c, "train", &ds.train)?;
    rows_to_blobs(&mut c, "val", &ds.val)?;
    rows_to_blobs(&mut c, "test", &ds.test)?;
    c.save(path)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let c = Container::load(path)?;
    if c.kind != "dataset" {
        return Err(NiaqueError::Format(format!("expected a dataset store, found `{}`", c.kind)));
    }
    Ok(SplitDataset {
        meta: serde_json::from_value(c.meta.clone())?,
        train: rows_from_blobs(&c, "train")?,
        val: rows_from_blobs(&c, "val")?,
        test: rows_from_blobs(&c, "test")?,
    })
}
