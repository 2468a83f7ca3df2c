//! Datasets: IDX ingestion, synthetic generators, fold plans and CSV
//! serialization of datasets and experiment results.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxFault, Result};
use crate::rng::seeded;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    IdxFile,
    Synthetic,
    Corrupted,
    Attacked,
}

/// Feature matrix (one row per example) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// True when every feature lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.features.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance,
        }
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Appends the rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let features =
            ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
                .expect("matching column counts");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            features,
            labels,
            self.classes.max(other.classes),
            self.provenance,
        )
    }
}

fn idx_err(fault: IdxFault, path: &Path) -> Error {
    Error::Idx {
        fault,
        path: path.to_path_buf(),
    }
}

struct IdxHeader {
    dims: Vec<usize>,
    body_offset: usize,
}

fn parse_idx_header(bytes: &[u8], magic: u32, ndims: usize, path: &Path) -> Result<IdxHeader> {
    if bytes.len() < 4 {
        return Err(idx_err(IdxFault::Truncated, path));
    }
    if BigEndian::read_u32(&bytes[..4]) != magic {
        return Err(idx_err(IdxFault::BadMagic, path));
    }
    let body_offset = 4 + 4 * ndims;
    if bytes.len() < body_offset {
        return Err(idx_err(IdxFault::Truncated, path));
    }
    let dims = (0..ndims)
        .map(|d| BigEndian::read_u32(&bytes[4 + 4 * d..8 + 4 * d]) as usize)
        .collect::<Vec<_>>();
    let body: usize = dims.iter().product();
    match (bytes.len() - body_offset).cmp(&body) {
        std::cmp::Ordering::Less => Err(idx_err(IdxFault::Truncated, path)),
        std::cmp::Ordering::Greater => Err(idx_err(IdxFault::TrailingBytes, path)),
        std::cmp::Ordering::Equal => Ok(IdxHeader { dims, body_offset }),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Input {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixels are mapped to `b / 255`; images are flattened row-major.
pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let image_bytes = read_input(images)?;
    let label_bytes = read_input(labels)?;
    let ih = parse_idx_header(&image_bytes, IDX_IMAGES_MAGIC, 3, images)?;
    let lh = parse_idx_header(&label_bytes, IDX_LABELS_MAGIC, 1, labels)?;
    let (count, pixels) = (ih.dims[0], ih.dims[1] * ih.dims[2]);
    if lh.dims[0] != count {
        return Err(idx_err(IdxFault::CountMismatch, labels));
    }
    let features = Array2::from_shape_vec(
        (count, pixels),
        image_bytes[ih.body_offset..]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect(),
    )
    .expect("body length checked against header");
    let labels: Vec<usize> = label_bytes[lh.body_offset..]
        .iter()
        .map(|&b| usize::from(b))
        .collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, labels, classes, Provenance::IdxFile)
}

/// Writes a dataset as an IDX image/label pair with `rows x cols` images.
/// Features are quantized to `round(255 v)`.
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: rows * cols,
        });
    }
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    for word in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(
        dataset
            .features
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &dataset.labels {
        let byte = u8::try_from(l)
            .map_err(|_| Error::InvalidParameter(format!("label {l} does not fit in a byte")))?;
        lab.push(byte);
    }
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

/// Locates the four standard MNIST-style IDX files in `dir` and returns
/// the combined train+test dataset.
pub fn read_idx_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let train = read_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test_images = dir.join("t10k-images-idx3-ubyte");
    if !test_images.exists() {
        return Ok(train);
    }
    let test = read_idx(test_images, dir.join("t10k-labels-idx1-ubyte"))?;
    train.concat(&test)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sin x + e^x + x^(5/3)` with the real branch `sign(x) |x|^(5/3)`.
pub fn example1_kappa(x: f64) -> f64 {
    x.sin() + x.exp() + x.signum() * x.abs().powf(5.0 / 3.0)
}

/// True class posterior of the single-feature binary problem; index 0 is
/// the modelled class.
pub fn example1_posterior(x: f64) -> [f64; 2] {
    let p = logistic(example1_kappa(x));
    [p, 1.0 - p]
}

/// `x ~ N(0, 1)` with labels drawn from the posterior above.
pub fn synthetic_example1(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seeded(seed);
    let mut xs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = StandardNormal.sample(&mut rng);
        let u: f64 = rng.random();
        labels.push(if u < example1_posterior(x)[0] { 0 } else { 1 });
        xs.push(x);
    }
    let features = Array2::from_shape_vec((n, 1), xs).expect("n x 1");
    Dataset::new(features, labels, 2, Provenance::Synthetic)
}

/// Isotropic Gaussian blobs clamped to the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub std: f64,
    /// Class centres; one row per class.
    pub centers: Array2<f64>,
}

impl BlobSpec {
    /// The two-class planar toy problem: centres (0.3, 0.3) and (0.7, 0.7),
    /// standard deviation 0.06. Linearly separable in practice.
    pub fn toy(n: usize) -> Self {
        Self {
            n,
            dim: 2,
            classes: 2,
            std: 0.06,
            centers: ndarray::arr2(&[[0.3, 0.3], [0.7, 0.7]]),
        }
    }

    /// `classes` centres drawn uniformly from `[0.25, 0.75]^dim`.
    pub fn random_centers(n: usize, dim: usize, classes: usize, std: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let centers = Array2::from_shape_fn((classes, dim), |_| rng.random_range(0.25..0.75));
        Self {
            n,
            dim,
            classes,
            std,
            centers,
        }
    }
}

/// Samples a blob dataset; labels cycle through the classes so class sizes
/// differ by at most one.
pub fn synthetic_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if spec.centers.dim() != (spec.classes, spec.dim) {
        return Err(Error::DimensionMismatch {
            expected: spec.classes * spec.dim,
            got: spec.centers.len(),
        });
    }
    let mut rng = seeded(seed);
    let mut features = Array2::zeros((spec.n, spec.dim));
    let mut labels = Vec::with_capacity(spec.n);
    for (i, mut row) in features.outer_iter_mut().enumerate() {
        let class = i % spec.classes;
        for (v, c) in row.iter_mut().zip(spec.centers.row(class)) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = (c + spec.std * noise).clamp(0.0, 1.0);
        }
        labels.push(class);
    }
    // shuffle so that any prefix is class-balanced in expectation, not by construction
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.shuffle(&mut rng);
    Dataset::new(features, labels, spec.classes, Provenance::Synthetic).map(|d| d.subset(&order))
}

/// A random partition of `0..n` into `k` folds whose sizes differ by at
/// most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n} examples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let folds = (0..k)
        .map(|f| {
            let mut fold = order[f * n / k..(f + 1) * n / k].to_vec();
            fold.sort_unstable();
            fold
        })
        .collect();
    Ok(FoldPlan { k, folds, seed })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// `(train, validation)` index lists for fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        train.sort_unstable();
        (train, self.folds[f].clone())
    }

    pub fn views(&self, data: &Dataset, f: usize) -> (Dataset, Dataset) {
        let (train, test) = self.split(f);
        (data.subset(&train), data.subset(&test))
    }
}

/// Formats to six significant digits, printed in shortest round-trip form.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub loss: String,
    pub beta: f64,
    pub lambda: f64,
    /// Noise level (`eta=0.4`), attack (`fgsm`, `pgd`) or `clean`.
    pub condition: String,
    /// Fold index, or `mean` for the cross-fold average.
    pub fold: String,
    pub clean_accuracy: f64,
    pub adv_accuracy: Option<f64>,
    pub epochs: usize,
}

pub const RESULTS_HEADER: [&str; 9] = [
    "dataset",
    "loss",
    "beta",
    "lambda",
    "condition",
    "fold",
    "clean_accuracy",
    "adv_accuracy",
    "epochs",
];

pub fn write_results(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.loss.clone(),
            fmt_sig6(r.beta),
            fmt_sig6(r.lambda),
            r.condition.clone(),
            r.fold.clone(),
            fmt_sig6(r.clean_accuracy),
            r.adv_accuracy.map(fmt_sig6).unwrap_or_default(),
            r.epochs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Parse(format!(
            "unexpected results header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Paths of a dataset dump: `<prefix>.features.csv` and `<prefix>.labels.csv`.
pub fn dump_paths(prefix: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let prefix = prefix.as_ref().as_os_str().to_owned();
    let mut f = prefix.clone();
    f.push(".features.csv");
    let mut l = prefix;
    l.push(".labels.csv");
    (PathBuf::from(f), PathBuf::from(l))
}

/// Writes a features CSV (`f0..f{p-1}`) and a labels CSV (`label` plus an
/// optional 0/1 `flipped` column). Values use shortest round-trip form, so
/// reading the dump back is exact.
pub fn write_dataset_dump(
    prefix: impl AsRef<Path>,
    data: &Dataset,
    flip_mask: Option<&[bool]>,
) -> Result<()> {
    let (fpath, lpath) = dump_paths(prefix);
    let mut fw = BufWriter::new(fs::File::create(fpath)?);
    let header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    writeln!(fw, "{}", header.join(","))?;
    for row in data.features.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(fw, "{}", line.join(","))?;
    }
    fw.flush()?;
    let mut lw = BufWriter::new(fs::File::create(lpath)?);
    match flip_mask {
        Some(mask) => {
            if mask.len() != data.len() {
                return Err(Error::DimensionMismatch {
                    expected: data.len(),
                    got: mask.len(),
                });
            }
            writeln!(lw, "label,flipped")?;
            for (l, f) in data.labels.iter().zip(mask) {
                writeln!(lw, "{l},{}", u8::from(*f))?;
            }
        }
        None => {
            writeln!(lw, "label")?;
            for l in &data.labels {
                writeln!(lw, "{l}")?;
            }
        }
    }
    lw.flush()?;
    Ok(())
}

/// Reads a dump written by [`write_dataset_dump`]. Returns the flip mask
/// when the labels file carries one.
pub fn read_dataset_dump(
    prefix: impl AsRef<Path>,
    classes: usize,
    provenance: Provenance,
) -> Result<(Dataset, Option<Vec<bool>>)> {
    let (fpath, lpath) = dump_paths(prefix);
    let mut fr = csv::Reader::from_path(fpath)?;
    let dim = fr.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in fr.records() {
        let rec = rec?;
        for field in rec.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("feature `{field}`: {e}")))?,
            );
        }
        rows += 1;
    }
    let features =
        Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::Parse(e.to_string()))?;
    let mut lr = csv::Reader::from_path(lpath)?;
    let has_mask = lr.headers()?.len() == 2;
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for rec in lr.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("label `{s}`: {e}")))
        };
        labels.push(parse(&rec[0])?);
        if has_mask {
            mask.push(parse(&rec[1])? == 1);
        }
    }
    let data = Dataset::new(features, labels, classes, provenance)?;
    Ok((data, has_mask.then_some(mask)))
}
