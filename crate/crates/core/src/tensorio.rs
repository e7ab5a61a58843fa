//! Feature matrices and their on-disk formats.
//!
//! Binary layout (little endian):
//!
//! ```text
//! b"FEATv1\0\0"            8 bytes magic
//! N: u64, d: u64
//! has_labels: u8, 7 zero pad bytes
//! N*d f32                   row-major
//! [if has_labels] C: u64, N u32 labels
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::simplexops::powerlaw_pmf;
use crate::rng::{seeded, Stream};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FEATv1\0\0";

/// An `N × d` matrix of feature vectors with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    data: Array2<f32>,
    labels: Option<Vec<u32>>,
    num_classes: Option<usize>,
}

impl FeatureSet {
    pub fn unlabeled(data: Array2<f32>) -> Result<Self> {
        Self::new(data, None, None)
    }

    pub fn labeled(data: Array2<f32>, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        Self::new(data, Some(labels), Some(num_classes))
    }

    pub fn new(data: Array2<f32>, labels: Option<Vec<u32>>, num_classes: Option<usize>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("feature matrix must be non-empty, got {n}x{d}")));
        }
        if let Some((idx, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature {v} at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(labels) = &labels {
            let c = num_classes.ok_or_else(|| Error::invalid("labels given without a class count"))?;
            if c == 0 {
                return Err(Error::invalid("class count must be positive"));
            }
            if labels.len() != n {
                return Err(Error::invalid(format!("{} labels for {n} rows", labels.len())));
            }
            if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l as usize >= c) {
                return Err(Error::invalid(format!("label {l} at row {i} is out of range for {c} classes")));
            }
        }
        Ok(FeatureSet { data, labels, num_classes })
    }

    pub fn data(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Features widened to `f64` for the numerical code.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Drops the labels, e.g. before handing data to an unsupervised routine.
    pub fn without_labels(&self) -> FeatureSet {
        FeatureSet { data: self.data.clone(), labels: None, num_classes: None }
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            data: self.data.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    /// Number of rows per class. Requires labels.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut counts = vec![0usize; self.num_classes?];
        for &l in labels {
            counts[l as usize] += 1;
        }
        Some(counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    /// Comma separated floats; with `labels`, the last column holds the class.
    Csv { labels: bool },
}

pub fn load_features(path: &Path, format: Format) -> Result<FeatureSet> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    match format {
        Format::Binary => decode_binary(&bytes).map_err(|msg| parse_error(path, msg)),
        Format::Csv { labels } => {
            let text = String::from_utf8(bytes).map_err(|_| parse_error(path, "file is not UTF-8".into()))?;
            decode_csv(&text, labels).map_err(|msg| parse_error(path, msg))
        }
    }
}

pub fn save_features(fs: &FeatureSet, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_binary(fs),
        Format::Csv { labels } => encode_csv(fs, labels)?.into_bytes(),
    };
    write_atomic(path, &bytes)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_owned(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err)
}

fn parse_error(path: &Path, msg: String) -> Error {
    Error::Parse { path: path.to_owned(), msg }
}

pub fn encode_binary(fs: &FeatureSet) -> Vec<u8> {
    let (n, d) = fs.data.dim();
    let label_bytes = fs.labels.as_ref().map_or(0, |l| 8 + 4 * l.len());
    let mut out = Vec::with_capacity(32 + 4 * n * d + label_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(u8::from(fs.labels.is_some()));
    out.extend_from_slice(&[0u8; 7]);
    for v in fs.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let (Some(labels), Some(c)) = (&fs.labels, fs.num_classes) {
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> std::result::Result<FeatureSet, String> {
    let mut cursor = Cursor { bytes, pos: 0 };
    if cursor.take(8)? != MAGIC {
        return Err("bad magic, not a FEATv1 feature file".into());
    }
    let n = cursor.u64()? as usize;
    let d = cursor.u64()? as usize;
    let has_labels = match cursor.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(format!("has_labels byte must be 0 or 1, got {other}")),
    };
    cursor.take(7)?;
    let count = n.checked_mul(d).filter(|c| c.checked_mul(4).is_some()).ok_or("matrix size overflows")?;
    let mut data = Vec::with_capacity(count.min(bytes.len() / 4));
    for _ in 0..count {
        data.push(f32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
    }
    let (labels, num_classes) = if has_labels {
        let c = cursor.u64()? as usize;
        let mut labels = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            labels.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
        }
        (Some(labels), Some(c))
    } else {
        (None, None)
    };
    if cursor.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cursor.pos));
    }
    let data = Array2::from_shape_vec((n, d), data).map_err(|e| e.to_string())?;
    FeatureSet::new(data, labels, num_classes).map_err(|e| e.to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated file at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_csv(fs: &FeatureSet, with_labels: bool) -> Result<String> {
    let labels = match (with_labels, fs.labels()) {
        (true, None) => return Err(Error::invalid("CSV label column requested for an unlabeled feature set")),
        (true, Some(l)) => Some(l),
        (false, _) => None,
    };
    let mut out = String::new();
    for (i, row) in fs.data.outer_iter().enumerate() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            // `Display` for f32 is the shortest string that parses back exactly.
            out.push_str(&v.to_string());
        }
        if let Some(labels) = labels {
            out.push(',');
            out.push_str(&labels[i].to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// With `with_labels`, the class count is taken as `max label + 1`.
pub fn decode_csv(text: &str, with_labels: bool) -> std::result::Result<FeatureSet, String> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if with_labels {
            let raw = fields.pop().unwrap();
            let label: u32 = raw
                .parse()
                .map_err(|_| format!("line {}: label {raw:?} is not a non-negative integer", lineno + 1))?;
            labels.push(label);
        }
        if fields.is_empty() {
            return Err(format!("line {}: no feature columns", lineno + 1));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(format!("line {}: expected {w} columns, found {}", lineno + 1, fields.len()))
            }
            _ => {}
        }
        for f in fields {
            let v: f32 = f.parse().map_err(|_| format!("line {}: {f:?} is not a number", lineno + 1))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite value {f:?}", lineno + 1));
            }
            data.push(v);
        }
    }
    let d = width.ok_or("no data rows")?;
    let n = data.len() / d;
    let data = Array2::from_shape_vec((n, d), data).map_err(|e| e.to_string())?;
    let fs = if with_labels {
        let c = labels.iter().max().map_or(1, |&m| m as usize + 1);
        FeatureSet::labeled(data, labels, c)
    } else {
        FeatureSet::unlabeled(data)
    };
    fs.map_err(|e| e.to_string())
}

/// Per-class sizes following the power-law pmf, summing to `total`.
///
/// Quotas `total · pmf` are rounded by largest remainder (ties go to the
/// lower class index); classes left empty are then raised to one sample,
/// each unit taken from the currently largest class (the highest index among
/// equals, which keeps the sizes non-increasing).
pub fn powerlaw_sizes(total: usize, num_classes: usize, alpha: f64) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    if total < num_classes {
        return Err(Error::invalid(format!(
            "cannot give each of {num_classes} classes a sample out of {total}"
        )));
    }
    let pmf = powerlaw_pmf(num_classes, alpha)?;
    let quotas: Vec<f64> = pmf.iter().map(|p| p * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    // Rounding can only leave fewer than num_classes units unassigned, but
    // float error can push the floor sum one unit past total.
    if assigned <= total {
        for &c in order.iter().cycle().take(total - assigned) {
            sizes[c] += 1;
        }
    } else {
        let victims: Vec<usize> =
            order.iter().rev().copied().filter(|&c| sizes[c] > 0).take(assigned - total).collect();
        for c in victims {
            sizes[c] -= 1;
        }
    }
    for c in 0..num_classes {
        while sizes[c] == 0 {
            let largest = *sizes.iter().max().unwrap();
            let donor = (0..num_classes).rev().find(|&i| sizes[i] == largest).unwrap();
            sizes[donor] -= 1;
            sizes[c] += 1;
        }
    }
    Ok(sizes)
}

/// Row indices (ascending) of a power-law imbalanced subset of `fs`.
///
/// Class `c` (ascending index = rank, class 0 largest) receives
/// `powerlaw_sizes(T, C, alpha)[c]` rows, where `T ≤ N` is the largest total
/// for which every class has enough rows. Rows are drawn without replacement.
pub fn subsample_powerlaw_indices(fs: &FeatureSet, alpha: f64, seed: u64) -> Result<Vec<usize>> {
    let labels = fs.labels().ok_or_else(|| Error::invalid("power-law subsampling needs labels"))?;
    let c = fs.num_classes().expect("labels imply a class count");
    let available = fs.class_counts().expect("labeled");
    if let Some(empty) = available.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {empty} has no rows to sample from")));
    }
    let targets = largest_feasible_sizes(&available, alpha)?;

    let mut rng = seeded(seed, Stream::Subsample);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut picked = Vec::with_capacity(targets.iter().sum());
    for (rows, &k) in by_class.iter_mut().zip(&targets) {
        let (chosen, _) = rows.partial_shuffle(&mut rng, k);
        picked.extend_from_slice(chosen);
    }
    picked.sort_unstable();
    Ok(picked)
}

pub fn subsample_powerlaw(fs: &FeatureSet, alpha: f64, seed: u64) -> Result<FeatureSet> {
    let indices = subsample_powerlaw_indices(fs, alpha, seed)?;
    Ok(fs.select(&indices))
}

fn largest_feasible_sizes(available: &[usize], alpha: f64) -> Result<Vec<usize>> {
    let c = available.len();
    let pmf = powerlaw_pmf(c, alpha)?;
    let n: usize = available.iter().sum();
    // Start just above the bound implied by the tightest class, walk down.
    let bound = available
        .iter()
        .zip(pmf.iter())
        .map(|(&a, &p)| ((a as f64 + 1.0) / p).ceil() as usize)
        .min()
        .unwrap_or(n);
    let mut total = bound.min(n).max(c);
    loop {
        let sizes = powerlaw_sizes(total, c, alpha)?;
        if sizes.iter().zip(available).all(|(s, a)| s <= a) {
            return Ok(sizes);
        }
        if total == c {
            // Every class has at least one row, so all-ones always fits.
            unreachable!("size vector of ones must fit");
        }
        total -= 1;
    }
}

/// Parameters for isotropic Gaussian blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub class_sizes: Vec<usize>,
    /// Minimum centroid distance in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::invalid("blob spec needs at least one class and one dimension"));
        }
        if self.class_sizes.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "{} class sizes for {} classes",
                self.class_sizes.len(),
                self.num_classes
            )));
        }
        if self.class_sizes.contains(&0) {
            return Err(Error::invalid("class sizes must be positive"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be finite and >= 0"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and > 0"));
        }
        Ok(())
    }
}

/// Labeled Gaussian blobs, rows grouped by class in ascending order.
///
/// Centroids are standard normal draws rescaled so the closest pair sits at
/// exactly `separation · noise_std`.
pub fn gen_gaussian_blobs(spec: &BlobSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let (c, d) = (spec.num_classes, spec.dim);
    let mut rng = seeded(spec.seed, Stream::Blobs);
    let centroids = place_centroids(c, d, spec.separation * spec.noise_std, &mut rng);

    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let n: usize = spec.class_sizes.iter().sum();
    let mut data = Array2::<f32>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, &size) in spec.class_sizes.iter().enumerate() {
        for _ in 0..size {
            for j in 0..d {
                data[[row, j]] = (centroids[[k, j]] + noise.sample(&mut rng)) as f32;
            }
            labels.push(k as u32);
            row += 1;
        }
    }
    FeatureSet::labeled(data, labels, c)
}

/// Standard normal centroids rescaled so the closest pair is `min_distance` apart.
fn place_centroids(c: usize, d: usize, min_distance: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut centroids = Array2::<f64>::zeros((c, d));
    centroids.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
    let mut closest = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            let dist = (&centroids.row(i) - &centroids.row(j)).mapv(|x| x * x).sum().sqrt();
            closest = closest.min(dist);
        }
    }
    let scale = if c > 1 && closest > 0.0 { min_distance / closest } else { 0.0 };
    centroids *= scale;
    centroids
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    L2,
    Standardize,
}

pub fn normalize_rows(fs: &FeatureSet, mode: Normalization) -> FeatureSet {
    let mut x = fs.to_f64();
    match mode {
        Normalization::None => return fs.clone(),
        Normalization::L2 => {
            for mut row in x.outer_iter_mut() {
                let norm = row.mapv(|v| v * v).sum().sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
        }
        Normalization::Standardize => {
            let n = x.nrows() as f64;
            for mut col in x.columns_mut() {
                let mean = col.sum() / n;
                col -= mean;
                let std = (col.mapv(|v| v * v).sum() / n).sqrt();
                if std > 0.0 {
                    col /= std;
                }
            }
        }
    }
    FeatureSet { data: x.mapv(|v| v as f32), labels: fs.labels.clone(), num_classes: fs.num_classes }
}
