//! Multi-view datasets: on-disk format, synthetic generation, missing masks,
//! conflict injection and stratified splitting.
//!
//! A dataset directory holds `manifest.json`, `view_1.csv` … `view_V.csv`,
//! `labels.csv` and optionally `mask.csv`.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{labelled_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    /// One N×d_v matrix per view.
    pub views: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// N×V, 1 = observed.
    pub mask: Tensor,
    pub split: SplitTag,
    /// Row index of each sample in the dataset it was split from.
    pub row_ids: Vec<usize>,
}

impl MultiViewDataset {
    /// Builds and validates a dataset; `mask = None` means all observed.
    pub fn new(
        name: impl Into<String>,
        views: Vec<Tensor>,
        labels: Vec<usize>,
        classes: usize,
        mask: Option<Tensor>,
    ) -> Result<Self> {
        let n = labels.len();
        let mask = mask.unwrap_or_else(|| Tensor::filled(n, views.len(), 1.0));
        let ds = Self {
            name: name.into(),
            views,
            labels,
            classes,
            mask,
            split: SplitTag::All,
            row_ids: (0..n).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.views.is_empty() {
            return Err(Error::contract("a dataset needs at least one view"));
        }
        if self.classes < 2 {
            return Err(Error::contract("a dataset needs at least two classes"));
        }
        for (v, x) in self.views.iter().enumerate() {
            if x.rows() != n {
                return Err(Error::contract(format!(
                    "view {} has {} rows but there are {n} labels",
                    v + 1,
                    x.rows()
                )));
            }
        }
        if self.mask.rows() != n || self.mask.cols() != self.views.len() {
            return Err(Error::contract(format!(
                "mask is {}x{}, expected {n}x{}",
                self.mask.rows(),
                self.mask.cols(),
                self.views.len()
            )));
        }
        if self.row_ids.len() != n {
            return Err(Error::contract("row id count differs from sample count"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::contract(format!(
                "label {bad} is out of range for {} classes",
                self.classes
            )));
        }
        for i in 0..n {
            let row = self.mask.row(i);
            if row.iter().any(|&m| m != 0.0 && m != 1.0) {
                return Err(Error::contract(format!("mask row {i} is not binary")));
            }
            if row.iter().all(|&m| m == 0.0) {
                return Err(Error::contract(format!(
                    "sample {i} has no observed view; every sample needs at least one"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Tensor::cols).collect()
    }

    /// Fraction of missing view-instances.
    pub fn missing_rate(&self) -> f64 {
        let missing = self.mask.values().iter().filter(|&&m| m == 0.0).count();
        missing as f64 / self.mask.len() as f64
    }

    pub fn is_complete(&self, row: usize) -> bool {
        self.mask.row(row).iter().all(|&m| m == 1.0)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            views: self.views.iter().map(|x| x.select_rows(indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            mask: self.mask.select_rows(indices),
            split: self.split,
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn with_mask(&self, mask: Tensor) -> Result<Self> {
        let ds = Self {
            mask,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Per-view column means over observed rows (zero when a view is never observed).
    pub fn observed_view_means(&self) -> Vec<Vec<f64>> {
        self.views
            .iter()
            .enumerate()
            .map(|(v, x)| {
                let mut sum = vec![0.0; x.cols()];
                let mut count = 0usize;
                for i in 0..x.rows() {
                    if self.mask.get(i, v) == 1.0 {
                        count += 1;
                        for (s, val) in sum.iter_mut().zip(x.row(i)) {
                            *s += val;
                        }
                    }
                }
                if count > 0 {
                    sum.iter_mut().for_each(|s| *s /= count as f64);
                }
                sum
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.name.clone(),
            views: self.view_count(),
            classes: self.classes,
            dims: self.dims(),
            samples: Some(self.len()),
        }
    }

    /// Writes the dataset in the directory format read by [`load_dataset`].
    /// `mask.csv` is written only when some view is missing.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&manifest_path, manifest + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        for (v, x) in self.views.iter().enumerate() {
            write_lines(&dir.join(format!("view_{}.csv", v + 1)), x.rows(), |i| {
                join(x.row(i).iter())
            })?;
        }
        write_lines(&dir.join("labels.csv"), self.len(), |i| {
            self.labels[i].to_string()
        })?;
        let mask_path = dir.join("mask.csv");
        if self.missing_rate() > 0.0 {
            write_lines(&mask_path, self.len(), |i| {
                join(self.mask.row(i).iter().map(|&m| m as u8))
            })
        } else if mask_path.exists() {
            fs::remove_file(&mask_path).map_err(|e| Error::io(&mask_path, e))
        } else {
            Ok(())
        }
    }
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_lines(path: &Path, n: usize, line: impl Fn(usize) -> String) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..n {
        writeln!(w, "{}", line(i)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "V")]
    pub views: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub dims: Vec<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    if !path.exists() {
        return Err(Error::load(path, "file is missing"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::load(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::load(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn read_matrix(path: &Path, cols: usize) -> Result<Tensor> {
    let rows = read_csv_rows(path)?;
    let mut values = Vec::with_capacity(rows.len() * cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::load(
                path,
                format!("line {} has {} columns, expected {cols}", i + 1, row.len()),
            ));
        }
        for (j, cell) in row.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(x),
                _ => {
                    return Err(Error::load(
                        path,
                        format!(
                            "line {}, column {}: `{cell}` is not a finite number",
                            i + 1,
                            j + 1
                        ),
                    ))
                }
            }
        }
    }
    Ok(Tensor::from_rows(rows.len(), cols, values))
}

fn read_labels(path: &Path, classes: usize) -> Result<Vec<usize>> {
    let rows = read_csv_rows(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let cell = row.first().map(String::as_str).unwrap_or("");
            let y: usize = cell.parse().map_err(|_| {
                Error::load(path, format!("line {}: `{cell}` is not a class id", i + 1))
            })?;
            if row.len() != 1 || y >= classes {
                return Err(Error::load(
                    path,
                    format!(
                        "line {}: label `{cell}` is out of range for K = {classes}",
                        i + 1
                    ),
                ));
            }
            Ok(y)
        })
        .collect()
}

fn read_mask(path: &Path, views: usize) -> Result<Tensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        // Accept both `1,0,1` and `101`.
        let digits: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split("").filter(|s| !s.is_empty()).collect()
        };
        if digits.len() != views {
            return Err(Error::load(
                path,
                format!(
                    "line {} has {} entries, expected {views}",
                    i + 1,
                    digits.len()
                ),
            ));
        }
        for d in digits {
            match d {
                "0" => values.push(0.0),
                "1" => values.push(1.0),
                other => {
                    return Err(Error::load(
                        path,
                        format!("line {}: mask entry `{other}` is not 0 or 1", i + 1),
                    ))
                }
            }
        }
        if values[values.len() - views..].iter().all(|&m| m == 0.0) {
            return Err(Error::load(
                path,
                format!(
                    "line {}: sample has no observed view; every sample needs at least one",
                    i + 1
                ),
            ));
        }
        n += 1;
    }
    Ok(Tensor::from_rows(n, views, values))
}

/// Reads a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    if manifest.views == 0 || manifest.dims.len() != manifest.views {
        return Err(Error::load(
            &manifest_path,
            format!(
                "V = {} but {} dims listed",
                manifest.views,
                manifest.dims.len()
            ),
        ));
    }
    if manifest.classes < 2 {
        return Err(Error::load(&manifest_path, "K must be at least 2"));
    }
    let views = manifest
        .dims
        .iter()
        .enumerate()
        .map(|(v, &d)| read_matrix(&dir.join(format!("view_{}.csv", v + 1)), d))
        .collect::<Result<Vec<_>>>()?;
    let labels_path = dir.join("labels.csv");
    let labels = read_labels(&labels_path, manifest.classes)?;
    let n = labels.len();
    for (v, x) in views.iter().enumerate() {
        if x.rows() != n {
            return Err(Error::load(
                dir.join(format!("view_{}.csv", v + 1)),
                format!("{} rows but labels.csv has {n}", x.rows()),
            ));
        }
    }
    if let Some(expected) = manifest.samples {
        if expected != n {
            return Err(Error::load(
                &labels_path,
                format!("{n} labels but manifest declares N = {expected}"),
            ));
        }
    }
    let mask_path = dir.join("mask.csv");
    let mask = if mask_path.exists() {
        let mask = read_mask(&mask_path, manifest.views)?;
        if mask.rows() != n {
            return Err(Error::load(
                &mask_path,
                format!("{} rows but labels.csv has {n}", mask.rows()),
            ));
        }
        Some(mask)
    } else {
        None
    };
    MultiViewDataset::new(manifest.name, views, labels, manifest.classes, mask)
        .map_err(|e| Error::load(dir, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Target missing rate.
    pub eta: f64,
    pub conflict_fraction: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            eta: 0.0,
            conflict_fraction: 0.4,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self, views: usize) -> Result<()> {
        check_eta(self.eta, views)?;
        if !(0.0..=1.0).contains(&self.conflict_fraction) {
            return Err(Error::domain(format!(
                "conflict fraction {} is outside [0, 1]",
                self.conflict_fraction
            )));
        }
        Ok(())
    }

    /// Conflict injection followed by masking, each with its own seed.
    pub fn apply(&self, ds: &MultiViewDataset) -> Result<(MultiViewDataset, Vec<ConflictRecord>)> {
        self.validate(ds.view_count())?;
        let (mut out, log) = if self.conflict_fraction > 0.0 {
            inject_conflict(
                ds,
                self.conflict_fraction,
                labelled_seed(self.seed, "conflict"),
            )?
        } else {
            (ds.clone(), Vec::new())
        };
        if self.eta > 0.0 {
            if ds.missing_rate() > 0.0 {
                return Err(Error::domain(
                    "dataset already has missing views; a target missing rate applies to complete data only",
                ));
            }
            let fresh = generate_missing_mask(
                ds.len(),
                ds.view_count(),
                self.eta,
                labelled_seed(self.seed, "mask"),
            )?;
            out.mask = fresh;
        }
        Ok((out, log))
    }
}

fn check_eta(eta: f64, views: usize) -> Result<()> {
    let max = (views as f64 - 1.0) / views as f64;
    if !eta.is_finite() || eta < 0.0 || eta > max + 1e-12 {
        return Err(Error::domain(format!(
            "missing rate {eta} is infeasible for V = {views}; it must lie in [0, {max}] so that every sample keeps an observed view"
        )));
    }
    Ok(())
}

/// N×V observation mask with exactly `round(eta·N·V)` zeros and at least one
/// observed view per row.
pub fn generate_missing_mask(n: usize, views: usize, eta: f64, seed: u64) -> Result<Tensor> {
    if views == 0 {
        return Err(Error::contract("mask needs at least one view"));
    }
    check_eta(eta, views)?;
    let target = ((eta * (n * views) as f64).round() as usize).min(n * (views - 1));
    let mut mask = Tensor::filled(n, views, 1.0);
    let mut observed = vec![views; n];
    let mut cells: Vec<usize> = (0..n * views).collect();
    cells.shuffle(&mut rng_from_seed(seed));
    let mut zeros = 0;
    // One pass over shuffled cells; a cell is dropped unless it is the last
    // observed view of its row. A full pass can reach N(V-1) zeros, so the
    // target is always met.
    for cell in cells {
        if zeros == target {
            break;
        }
        let row = cell / views;
        if observed[row] > 1 {
            mask.values_mut()[cell] = 0.0;
            observed[row] -= 1;
            zeros += 1;
        }
    }
    Ok(mask)
}

/// One replaced view: `row`'s view `view` now holds `donor`'s view `view`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub row: usize,
    pub view: usize,
    pub donor: usize,
}

/// Replaces one view in `round(fraction·N)` distinct rows with the same view
/// of a row from another class.
pub fn inject_conflict(
    ds: &MultiViewDataset,
    fraction: f64,
    seed: u64,
) -> Result<(MultiViewDataset, Vec<ConflictRecord>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(format!(
            "conflict fraction {fraction} is outside [0, 1]"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if by_class.iter().filter(|rows| !rows.is_empty()).count() < 2 {
        return Err(Error::domain(
            "conflict injection needs samples from at least two classes",
        ));
    }
    let n = ds.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = rng_from_seed(seed);
    let mut victims = index::sample(&mut rng, n, count).into_vec();
    victims.sort_unstable();
    let mut out = ds.clone();
    let mut log = Vec::with_capacity(count);
    for row in victims {
        let view = rng.random_range(0..ds.view_count());
        let own = &by_class[ds.labels[row]];
        // Uniform over rows of every other class.
        let mut k = rng.random_range(0..n - own.len());
        let donor = by_class
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != ds.labels[row])
            .find_map(|(_, rows)| {
                if k < rows.len() {
                    Some(rows[k])
                } else {
                    k -= rows.len();
                    None
                }
            })
            .expect("donor index within other-class rows");
        let source = ds.views[view].row(donor).to_vec();
        out.views[view].row_mut(row).copy_from_slice(&source);
        log.push(ConflictRecord { row, view, donor });
    }
    Ok((out, log))
}

pub fn write_provenance(path: &Path, log: &[ConflictRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in log {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_provenance(path: &Path) -> Result<Vec<ConflictRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Balanced Gaussian multi-view data. Each (class, view) pair gets a seeded
/// random mean of norm `separation`; samples add unit-variance noise.
pub fn synthesize_dataset(
    n: usize,
    views: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<MultiViewDataset> {
    if classes < 2 || views == 0 || dim == 0 {
        return Err(Error::contract(
            "synthetic data needs K ≥ 2, V ≥ 1 and d ≥ 1",
        ));
    }
    if n < classes * views {
        return Err(Error::contract(format!(
            "N = {n} is below K·V = {}",
            classes * views
        )));
    }
    let mut mean_rng = rng_from_seed(labelled_seed(seed, "means"));
    let means: Vec<Vec<Vec<f64>>> = (0..classes)
        .map(|_| {
            (0..views)
                .map(|_| random_direction(&mut mean_rng, dim, separation))
                .collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng_from_seed(labelled_seed(seed, "labels")));
    let mut noise = rng_from_seed(labelled_seed(seed, "noise"));
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(n * dim); views];
    for &y in &labels {
        for (v, block) in data.iter_mut().enumerate() {
            for mu in &means[y][v] {
                let e: f64 = noise.sample(StandardNormal);
                block.push(mu + e);
            }
        }
    }
    let views = data
        .into_iter()
        .map(|values| Tensor::from_rows(n, dim, values))
        .collect();
    MultiViewDataset::new("synthetic", views, labels, classes, None)
}

fn random_direction(rng: &mut Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-12 {
            return v.into_iter().map(|x| x * norm / len).collect();
        }
    }
}

/// Stratified split; each class contributes `round(test_fraction·n_c)` test rows.
pub fn split(
    ds: &MultiViewDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(MultiViewDataset, MultiViewDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut rows) in by_class.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::contract(format!(
                "class {c} has a single sample and cannot be stratified"
            )));
        }
        rows.shuffle(&mut rng);
        let n_test =
            ((test_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let mut tr = ds.subset(&train);
    tr.split = SplitTag::Train;
    let mut te = ds.subset(&test);
    te.split = SplitTag::Test;
    Ok((tr, te))
}

/// Training-time mask: each source-observed entry is dropped with
/// probability `rate`; a row that would lose every view keeps one of its
/// observed views, chosen uniformly. Source-missing entries stay missing.
pub fn augmentation_mask(source: &Tensor, rate: f64, rng: &mut Rng) -> Tensor {
    let mut out = source.clone();
    if rate <= 0.0 {
        return out;
    }
    for i in 0..source.rows() {
        let observed: Vec<usize> = (0..source.cols())
            .filter(|&v| source.get(i, v) == 1.0)
            .collect();
        let row = out.row_mut(i);
        for &v in &observed {
            if rng.random::<f64>() < rate {
                row[v] = 0.0;
            }
        }
        if row.iter().all(|&m| m == 0.0) && !observed.is_empty() {
            row[observed[rng.random_range(0..observed.len())]] = 1.0;
        }
    }
    out
}
