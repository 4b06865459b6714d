//! Datasets: generation, rotation, IDX/CSV I/O and splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seeds::derive_seed;

/// How a feature row is interpreted geometrically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    /// Plain feature vectors; rotation requires `d == 2`.
    #[default]
    Points,
    /// Square grayscale images stored row-major, `d == side * side`.
    Raster { side: usize },
}

impl Layout {
    /// Raster layout for `d` features, if `d` is a perfect square.
    pub fn raster_for(d: usize) -> Result<Layout> {
        let side = (d as f64).sqrt().round() as usize;
        if side * side != d || d == 0 {
            return Err(invalid!("raster layout requires a square feature count, got {d}"));
        }
        Ok(Layout::Raster { side })
    }
}

/// Labeled samples: `n x d` features and a class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    layout: Layout,
}

impl LabeledSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(invalid!("a labeled set needs at least one sample"));
        }
        if features.ncols() == 0 {
            return Err(invalid!("feature dimension must be positive"));
        }
        if labels.len() != features.nrows() {
            return Err(invalid!(
                "{} labels for {} feature rows",
                labels.len(),
                features.nrows()
            ));
        }
        if num_classes < 1 {
            return Err(invalid!("num_classes must be at least 1"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(invalid!("label {bad} out of range for {num_classes} classes"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            layout: Layout::Points,
        })
    }

    pub fn with_layout(mut self, layout: Layout) -> Result<Self> {
        check_layout(layout, self.dim())?;
        self.layout = layout;
        Ok(self)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Per-class sample counts, length `num_classes`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new(features, labels, self.num_classes)?;
        out.layout = self.layout;
        Ok(out)
    }

    /// Drops the labels, returning them separately (for evaluation only).
    pub fn split_labels(self) -> (UnlabeledSet, Vec<usize>) {
        let layout = self.layout;
        (
            UnlabeledSet {
                features: self.features,
                layout,
            },
            self.labels,
        )
    }

    pub fn to_unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet {
            features: self.features.clone(),
            layout: self.layout,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledSet) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(invalid!("dimension mismatch: {} vs {}", self.dim(), other.dim()));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features(), other.features()]).expect("same column count");
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        let mut out = Self::new(features, labels, self.num_classes.max(other.num_classes))?;
        out.layout = self.layout;
        Ok(out)
    }
}

/// Unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    features: Array2<f64>,
    layout: Layout,
}

impl UnlabeledSet {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(invalid!("an unlabeled set needs at least one sample"));
        }
        if features.ncols() == 0 {
            return Err(invalid!("feature dimension must be positive"));
        }
        Ok(Self {
            features,
            layout: Layout::Points,
        })
    }

    pub fn with_layout(mut self, layout: Layout) -> Result<Self> {
        check_layout(layout, self.dim())?;
        self.layout = layout;
        Ok(self)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self::new(self.features.select(Axis(0), indices))?;
        out.layout = self.layout;
        Ok(out)
    }
}

fn check_layout(layout: Layout, d: usize) -> Result<()> {
    match layout {
        Layout::Points => Ok(()),
        Layout::Raster { side } if side * side == d => Ok(()),
        Layout::Raster { side } => Err(invalid!("raster side {side} does not match feature dimension {d}")),
    }
}

/// Either kind of set, as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Labeled(LabeledSet),
    Unlabeled(UnlabeledSet),
}

/// Uniform per-sample rotation angles, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub angle_lo: f64,
    pub angle_hi: f64,
    pub seed: u64,
}

impl RotationSpec {
    pub fn new(angle_lo: f64, angle_hi: f64, seed: u64) -> Result<Self> {
        if !(angle_lo.is_finite() && angle_hi.is_finite()) || angle_lo > angle_hi {
            return Err(invalid!("rotation range [{angle_lo}, {angle_hi}] is not ordered"));
        }
        Ok(Self {
            angle_lo,
            angle_hi,
            seed,
        })
    }

    pub fn sample_angles(&self, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n)
            .map(|_| {
                if self.angle_lo == self.angle_hi {
                    self.angle_lo
                } else {
                    rng.random_range(self.angle_lo..=self.angle_hi)
                }
            })
            .collect()
    }
}

/// Two interleaved crescents: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 - cos t, 0.5 - sin t)`, `t ~ U[0, pi]`, plus isotropic Gaussian noise.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledSet> {
    if n < 2 {
        return Err(invalid!("two moons needs n >= 2, got {n}"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid!("noise must be a finite non-negative stddev, got {noise}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_upper = n - n / 2;
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..=std::f64::consts::PI);
        let (x, y, label) = if i < n_upper {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        let (nx, ny) = if noise > 0.0 {
            (noise * normal.sample(&mut rng), noise * normal.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        features[[i, 0]] = x + nx;
        features[[i, 1]] = y + ny;
        labels.push(label);
    }
    LabeledSet::new(features, labels, 2)
}

/// Labeled source and target drawn from independent moons samples, each
/// rotated by its own angle range.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTask {
    pub source: LabeledSet,
    pub target: LabeledSet,
}

impl ShiftTask {
    pub fn rotating_moons(
        n_source: usize,
        n_target: usize,
        noise: f64,
        source_angles: (f64, f64),
        target_angles: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            source: rotated_moons(n_source, noise, source_angles, derive_seed(seed, "source", 0))?,
            target: rotated_moons(n_target, noise, target_angles, derive_seed(seed, "target", 0))?,
        })
    }
}

/// A moons draw with every sample rotated by an angle from `angles`.
pub fn rotated_moons(n: usize, noise: f64, angles: (f64, f64), seed: u64) -> Result<LabeledSet> {
    let spec = RotationSpec::new(angles.0, angles.1, derive_seed(seed, "rotate", 0))?;
    rotate(&make_two_moons(n, noise, derive_seed(seed, "moons", 0))?, &spec)
}

/// Isotropic Gaussian blobs, one per class, centered at `centers`.
pub fn make_blobs(centers: &[Vec<f64>], per_class: usize, stddev: f64, seed: u64) -> Result<LabeledSet> {
    if centers.is_empty() || per_class == 0 {
        return Err(invalid!("blobs need at least one center and one sample per class"));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(invalid!("blob centers must share a positive dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = centers.len() * per_class;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for j in 0..per_class {
            let row = k * per_class + j;
            for (c, &mu) in center.iter().enumerate() {
                features[[row, c]] = mu + stddev * normal.sample(&mut rng);
            }
            labels.push(k);
        }
    }
    LabeledSet::new(features, labels, centers.len())
}

/// Rotates a 2-D point counter-clockwise by `degrees`.
pub fn rotate_point(x: f64, y: f64, degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Rotates a square raster about its center with bilinear sampling; pixels
/// sampled from outside the image read as zero.
pub fn rotate_raster(pixels: &[f64], side: usize, degrees: f64) -> Vec<f64> {
    transform_raster(pixels, side, degrees, 0, 0)
}

/// Rotation followed by an integer translation (`dx` columns, `dy` rows).
pub(crate) fn transform_raster(pixels: &[f64], side: usize, degrees: f64, dx: i64, dy: i64) -> Vec<f64> {
    debug_assert_eq!(pixels.len(), side * side);
    if degrees == 0.0 && dx == 0 && dy == 0 {
        return pixels.to_vec();
    }
    let center = (side as f64 - 1.0) / 2.0;
    let (s, c) = degrees.to_radians().sin_cos();
    let at = |r: i64, col: i64| -> f64 {
        if r < 0 || col < 0 || r >= side as i64 || col >= side as i64 {
            0.0
        } else {
            pixels[r as usize * side + col as usize]
        }
    };
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for col in 0..side {
            // Undo the translation, then apply the inverse rotation.
            let u = col as f64 - dx as f64 - center;
            let v = r as f64 - dy as f64 - center;
            let src_x = c * u + s * v + center;
            let src_y = -s * u + c * v + center;
            let x0 = src_x.floor();
            let y0 = src_y.floor();
            let fx = src_x - x0;
            let fy = src_y - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let value = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x0 + 1) * fx * (1.0 - fy)
                + at(y0 + 1, x0) * (1.0 - fx) * fy
                + at(y0 + 1, x0 + 1) * fx * fy;
            out[r * side + col] = value.clamp(0.0, 1.0);
        }
    }
    out
}

/// Rotates every row by its own angle drawn from `spec`.
fn rotate_features(features: ArrayView2<'_, f64>, layout: Layout, spec: &RotationSpec) -> Result<Array2<f64>> {
    let angles = spec.sample_angles(features.nrows());
    let mut out = features.to_owned();
    match layout {
        Layout::Points => {
            if features.ncols() != 2 {
                return Err(invalid!(
                    "point rotation needs 2-D features, got d = {}",
                    features.ncols()
                ));
            }
            for (mut row, &angle) in out.rows_mut().into_iter().zip(&angles) {
                let (x, y) = rotate_point(row[0], row[1], angle);
                row[0] = x;
                row[1] = y;
            }
        }
        Layout::Raster { side } => {
            if side * side != features.ncols() {
                return Err(invalid!("raster rotation needs a square feature count"));
            }
            for (mut row, &angle) in out.rows_mut().into_iter().zip(&angles) {
                let rotated = rotate_raster(row.as_slice().expect("standard layout"), side, angle);
                row.assign(&ArrayView1::from(&rotated));
            }
        }
    }
    Ok(out)
}

/// Each sample rotated independently by an angle from `spec`; labels kept.
pub fn rotate(set: &LabeledSet, spec: &RotationSpec) -> Result<LabeledSet> {
    let features = rotate_features(set.features(), set.layout, spec)?;
    let mut out = LabeledSet::new(features, set.labels.clone(), set.num_classes)?;
    out.layout = set.layout;
    Ok(out)
}

pub fn rotate_unlabeled(set: &UnlabeledSet, spec: &RotationSpec) -> Result<UnlabeledSet> {
    let features = rotate_features(set.features(), set.layout, spec)?;
    UnlabeledSet::new(features)?.with_layout(set.layout)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: header truncated")))
}

/// Reads an IDX image/label file pair (MNIST layout). Pixels are scaled to `[0, 1]`.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = read_be_u32(&images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let count = read_be_u32(&images, 4, "images")? as usize;
    let rows = read_be_u32(&images, 8, "images")? as usize;
    let cols = read_be_u32(&images, 12, "images")? as usize;
    if rows != cols || rows == 0 {
        return Err(Error::Format(format!("images: non-square {rows}x{cols} raster")));
    }
    let d = rows * cols;
    let body = &images[16..];
    if body.len() < count * d {
        return Err(Error::Format(format!(
            "images: header declares {count} images but only {} bytes of pixels follow",
            body.len()
        )));
    }

    let label_magic = read_be_u32(&labels, 0, "labels")?;
    if label_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {label_magic:#010x}")));
    }
    let label_count = read_be_u32(&labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::Format(format!("{count} images but {label_count} labels")));
    }
    let label_body = &labels[8..];
    if label_body.len() < count {
        return Err(Error::Format("labels: file truncated".into()));
    }
    let ys: Vec<usize> = label_body[..count].iter().map(|&b| b as usize).collect();
    if let Some((i, y)) = ys.iter().enumerate().find(|(_, &y)| y >= MNIST_CLASSES) {
        return Err(Error::Format(format!("labels: entry {i} has value {y}, expected < 10")));
    }

    let pixels: Vec<f64> = body[..count * d].iter().map(|&p| p as f64 / 255.0).collect();
    let features = Array2::from_shape_vec((count, d), pixels).expect("shape checked");
    LabeledSet::new(features, ys, MNIST_CLASSES)?.with_layout(Layout::Raster { side: rows })
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Shuffled index partition with `round(n * fraction)` indices on the left.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid!("split fraction must lie in (0, 1), got {fraction}"));
    }
    let first = round_half_up(n as f64 * fraction);
    if first == 0 || first >= n {
        return Err(invalid!("split of {n} samples at {fraction} leaves one side empty"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let right = order.split_off(first);
    Ok((order, right))
}

pub fn split(set: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let (a, b) = split_indices(set.len(), fraction, seed)?;
    Ok((set.subset(&a)?, set.subset(&b)?))
}

/// A target domain with a few labeled samples per class.
#[derive(Debug, Clone)]
pub struct SsdaSplit {
    pub labeled_target: LabeledSet,
    /// `None` when every target sample ended up labeled.
    pub unlabeled_target: Option<UnlabeledSet>,
    /// True labels of the unlabeled pool, for evaluation only.
    pub unlabeled_eval_labels: Vec<usize>,
    pub labels_per_class: usize,
}

pub fn make_ssda_split(target: &LabeledSet, labels_per_class: usize, seed: u64) -> Result<SsdaSplit> {
    if labels_per_class == 0 {
        return Err(invalid!("labels_per_class must be at least 1"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = (0..target.num_classes()).map(|k| (k, Vec::new())).collect();
    for (i, &y) in target.labels().iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; target.len()];
    let mut labeled = Vec::with_capacity(labels_per_class * target.num_classes());
    for (class, members) in &by_class {
        if members.len() < labels_per_class {
            return Err(invalid!(
                "class {class} has {} samples, fewer than the {labels_per_class} requested",
                members.len()
            ));
        }
        for &i in members.choose_multiple(&mut rng, labels_per_class) {
            chosen[i] = true;
        }
    }
    labeled.extend((0..target.len()).filter(|&i| chosen[i]));
    let rest: Vec<usize> = (0..target.len()).filter(|&i| !chosen[i]).collect();
    let labeled_target = target.subset(&labeled)?;
    let (unlabeled_target, unlabeled_eval_labels) = if rest.is_empty() {
        (None, Vec::new())
    } else {
        let (u, y) = target.subset(&rest)?.split_labels();
        (Some(u), y)
    };
    Ok(SsdaSplit {
        labeled_target,
        unlabeled_target,
        unlabeled_eval_labels,
        labels_per_class,
    })
}

const UNLABELED_SENTINEL: i64 = -1;

fn write_rows(path: &Path, features: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writer.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (i, row) in features.rows().into_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let label = labels.map_or(UNLABELED_SENTINEL, |l| l[i] as i64);
        record.push(label.to_string());
        writer.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `f0,...,f{d-1},label` with shortest round-trip float formatting.
pub fn write_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    write_rows(path, set.features(), Some(set.labels()))
}

/// Same format as [`write_csv`] with every label set to `-1`.
pub fn write_unlabeled_csv(set: &UnlabeledSet, path: &Path) -> Result<()> {
    write_rows(path, set.features(), None)
}

/// Reads a CSV written by [`write_csv`]. An all `-1` label column yields an
/// unlabeled set; otherwise `num_classes` defaults to `max(label) + 1`.
pub fn read_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_io(path, e))?,
        None => return Err(Error::Format(format!("{}: empty file", path.display()))),
    };
    let width = header.len();
    let header_ok = width >= 2
        && header.get(width - 1) == Some("label")
        && (0..width - 1).all(|j| header.get(j) == Some(format!("f{j}").as_str()));
    if !header_ok {
        return Err(Error::Format(format!(
            "{}: line 1: expected header f0,...,f{{d-1}},label",
            path.display()
        )));
    }
    let d = width - 1;
    let mut values = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_io(path, e))?;
        if record.len() != width {
            return Err(Error::Format(format!(
                "{}: line {line}: expected {width} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        for j in 0..d {
            let cell = record.get(j).unwrap_or_default().trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Format(format!("{}: line {line}: non-numeric cell {cell:?}", path.display())))?;
            values.push(v);
        }
        let cell = record.get(d).unwrap_or_default().trim();
        let y: i64 = cell
            .parse()
            .map_err(|_| Error::Format(format!("{}: line {line}: bad label {cell:?}", path.display())))?;
        if y < UNLABELED_SENTINEL {
            return Err(Error::Format(format!(
                "{}: line {line}: negative label {y}",
                path.display()
            )));
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("rows checked");
    let unlabeled = labels.iter().filter(|&&y| y == UNLABELED_SENTINEL).count();
    if unlabeled == labels.len() {
        return Ok(Dataset::Unlabeled(UnlabeledSet::new(features)?));
    }
    if unlabeled > 0 {
        return Err(Error::Format(format!(
            "{}: {unlabeled} of {} rows are unlabeled; mixed files are not supported",
            path.display(),
            labels.len()
        )));
    }
    let labels: Vec<usize> = labels.into_iter().map(|y| y as usize).collect();
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LabeledSet::new(features, labels, k)
        .map(Dataset::Labeled)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_noise_moons_lie_on_crescents() {
        let set = make_two_moons(4, 0.0, 7).unwrap();
        assert_eq!(set.class_counts(), vec![2, 2]);
        for (row, &y) in set.features().rows().into_iter().zip(set.labels()) {
            let (x, z) = (row[0], row[1]);
            let r = if y == 0 {
                (x * x + z * z).sqrt()
            } else {
                ((x - 1.0).powi(2) + (z - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12, "radius {r}");
            if y == 0 {
                assert!(z >= -1e-12);
            } else {
                assert!(z <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn moons_are_deterministic() {
        let a = make_two_moons(50, 0.1, 3).unwrap();
        let b = make_two_moons(50, 0.1, 3).unwrap();
        assert_eq!(a, b);
        assert!(make_two_moons(1, 0.1, 3).is_err());
        assert!(make_two_moons(5, -1.0, 3).is_err());
    }

    #[test]
    fn quarter_turn() {
        let set = LabeledSet::new(array![[1.0, 0.0]], vec![0], 2).unwrap();
        let out = rotate(&set, &RotationSpec::new(90.0, 90.0, 0).unwrap()).unwrap();
        assert!((out.row(0)[0] - 0.0).abs() < 1e-9);
        assert!((out.row(0)[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let set = make_two_moons(20, 0.1, 1).unwrap();
        let out = rotate(&set, &RotationSpec::new(0.0, 0.0, 9).unwrap()).unwrap();
        assert_eq!(out, set);
    }

    #[test]
    fn raster_rotation_rejects_non_square() {
        assert!(Layout::raster_for(5).is_err());
        let set = LabeledSet::new(Array2::zeros((1, 5)), vec![0], 2).unwrap();
        assert!(set.with_layout(Layout::Raster { side: 2 }).is_err());
    }

    #[test]
    fn raster_quarter_turn_moves_pixel() {
        // 3x3 with a single lit pixel at (row 0, col 1); rotated 90 degrees about the center.
        let mut px = vec![0.0; 9];
        px[1] = 1.0;
        let out = rotate_raster(&px, 3, 90.0);
        let lit: Vec<usize> = (0..9).filter(|&i| out[i] > 0.5).collect();
        assert_eq!(lit.len(), 1);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(rotate_raster(&px, 3, 0.0), px);
    }

    #[test]
    fn split_sizes() {
        let (a, b) = split_indices(10, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a, b) = split_indices(7, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (4, 3));
        assert_eq!(split_indices(7, 0.5, 1).unwrap(), split_indices(7, 0.5, 1).unwrap());
        assert!(split_indices(1, 0.5, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn ssda_split_counts() {
        let set = LabeledSet::new(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 0, 1, 1], 2).unwrap();
        let s = make_ssda_split(&set, 1, 0).unwrap();
        assert_eq!(s.labeled_target.len(), 2);
        assert_eq!(s.unlabeled_target.as_ref().unwrap().len(), 2);
        assert_eq!(s.labeled_target.class_counts(), vec![1, 1]);

        let missing = LabeledSet::new(array![[0.0], [1.0]], vec![0, 0], 2).unwrap();
        let err = make_ssda_split(&missing, 1, 0).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");

        let all = make_ssda_split(&set, 2, 0).unwrap();
        assert!(all.unlabeled_target.is_none());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let set = make_two_moons(17, 0.3, 5).unwrap();
        write_csv(&set, &path).unwrap();
        assert_eq!(read_csv(&path, Some(2)).unwrap(), Dataset::Labeled(set.clone()));

        let upath = dir.path().join("u.csv");
        write_unlabeled_csv(&set.to_unlabeled(), &upath).unwrap();
        assert!(matches!(read_csv(&upath, None).unwrap(), Dataset::Unlabeled(_)));

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "1.0,2.0,0\n").unwrap();
        assert!(matches!(read_csv(&bad, None), Err(Error::Format(_))));

        fs::write(&bad, "f0,f1,label\n1.0,2.0,0\n1.0,0\n").unwrap();
        let err = read_csv(&bad, None).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        fs::write(&bad, "f0,f1,label\n1.0,abc,0\n").unwrap();
        let err = read_csv(&bad, None).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
