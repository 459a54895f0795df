//! Multi-label datasets: in-memory representation, CSV interchange,
//! a prototype-proximity synthetic generator and seeded splits.
//!
//! Features CSV: header `id,f0,...,f{d-1}`. Labels CSV: header
//! `id,<class_0>,...,<class_{V-1}>` with `0`/`1` cells. Rows of the two
//! files are matched by id; loaded datasets are ordered by ascending id.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};
use crate::rng;

/// Features, (possibly noisy) labels and the retained clean labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    pub features: Array2<f64>,
    pub labels: Array2<u8>,
    /// Pre-noise truth. Only evaluation code reads this.
    pub clean_labels: Option<Array2<u8>>,
    pub class_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl MultiLabelDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Array2<u8>,
        clean_labels: Option<Array2<u8>>,
        class_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let ds = MultiLabelDataset { features, labels, clean_labels, class_names, sample_ids };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.features.ncols() < 1 {
            return Err(RcmlError::shape("feature dimension must be at least 1"));
        }
        if self.labels.ncols() < 2 {
            return Err(RcmlError::shape("at least two classes are required"));
        }
        if self.labels.nrows() != n || self.sample_ids.len() != n {
            return Err(RcmlError::shape(format!(
                "{} feature rows, {} label rows, {} ids",
                n,
                self.labels.nrows(),
                self.sample_ids.len()
            )));
        }
        if self.class_names.len() != self.labels.ncols() {
            return Err(RcmlError::shape(format!(
                "{} class names for {} label columns",
                self.class_names.len(),
                self.labels.ncols()
            )));
        }
        check_binary(&self.labels)?;
        if let Some(clean) = &self.clean_labels {
            if clean.dim() != self.labels.dim() {
                return Err(RcmlError::shape("clean_labels shape differs from labels"));
            }
            check_binary(clean)?;
        }
        if let Some(((row, col), _)) = self.features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(RcmlError::NonFinite(format!("feature at row {row}, column {col}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.labels.ncols()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Labels to evaluate against: the clean labels when retained, else the labels.
    pub fn truth(&self) -> &Array2<u8> {
        self.clean_labels.as_ref().unwrap_or(&self.labels)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> MultiLabelDataset {
        MultiLabelDataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            clean_labels: self.clean_labels.as_ref().map(|c| c.select(Axis(0), indices)),
            class_names: self.class_names.clone(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// Writes the features and labels CSV pair.
    pub fn write_csv(&self, features_path: &Path, labels_path: &Path) -> Result<()> {
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        let mut out = header.join(",");
        out.push('\n');
        for (id, row) in self.sample_ids.iter().zip(self.features.rows()) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        std::fs::write(features_path, out).map_err(|e| RcmlError::io(features_path, e))?;
        write_labels_csv(labels_path, &self.sample_ids, &self.class_names, &self.labels)
    }
}

pub fn write_labels_csv(
    path: &Path,
    sample_ids: &[String],
    class_names: &[String],
    labels: &Array2<u8>,
) -> Result<()> {
    let mut file = File::create(path).map_err(|e| RcmlError::io(path, e))?;
    let mut out = String::from("id");
    for c in class_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (id, row) in sample_ids.iter().zip(labels.rows()) {
        out.push_str(id);
        for v in row {
            out.push(',');
            out.push(if *v == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| RcmlError::io(path, e))
}

pub(crate) fn check_binary(labels: &Array2<u8>) -> Result<()> {
    match labels.indexed_iter().find(|(_, &v)| v > 1) {
        Some(((row, col), v)) => Err(RcmlError::NonBinaryLabel { row, col, value: v.to_string() }),
        None => Ok(()),
    }
}

struct CsvTable {
    header: Vec<String>,
    ids: Vec<String>,
    cells: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<CsvTable> {
    let parse_err = |msg: String| RcmlError::Parse { path: path.to_path_buf(), msg };
    let file = File::open(path).map_err(|e| RcmlError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("id") {
        return Err(parse_err("first header column must be `id`".into()));
    }
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != header.len() {
            return Err(RcmlError::shape(format!(
                "{}: row {} has {} columns, header has {}",
                path.display(),
                i,
                record.len(),
                header.len()
            )));
        }
        ids.push(record[0].to_string());
        cells.push(record.iter().skip(1).map(str::to_string).collect());
    }
    Ok(CsvTable { header, ids, cells })
}

/// Row order that sorts `ids` ascending; errors on duplicates.
fn sorted_order(ids: &[String]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    for w in order.windows(2) {
        if ids[w[0]] == ids[w[1]] {
            return Err(RcmlError::DuplicateId(ids[w[0]].clone()));
        }
    }
    Ok(order)
}

/// Loads a features/labels CSV pair. Rows are matched by id and returned
/// in ascending id order; `clean_labels` is absent.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<MultiLabelDataset> {
    let feats = read_table(features_path)?;
    let labs = read_table(labels_path)?;

    let d = feats.header.len() - 1;
    for (j, name) in feats.header.iter().skip(1).enumerate() {
        if *name != format!("f{j}") {
            return Err(RcmlError::Parse {
                path: features_path.to_path_buf(),
                msg: format!("expected feature column `f{j}`, found `{name}`"),
            });
        }
    }
    if d < 1 {
        return Err(RcmlError::shape("features file has no feature columns"));
    }
    let v = labs.header.len() - 1;
    if v < 2 {
        return Err(RcmlError::shape("labels file needs at least two class columns"));
    }

    let f_order = sorted_order(&feats.ids)?;
    let l_order = sorted_order(&labs.ids)?;
    for (&fi, &li) in f_order.iter().zip(&l_order) {
        if feats.ids[fi] != labs.ids[li] {
            return Err(RcmlError::UnmatchedId {
                features: feats.ids[fi].clone(),
                labels: labs.ids[li].clone(),
            });
        }
    }
    if f_order.len() != l_order.len() {
        return Err(RcmlError::shape(format!(
            "{} feature rows but {} label rows",
            f_order.len(),
            l_order.len()
        )));
    }

    let n = f_order.len();
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Array2::<u8>::zeros((n, v));
    for (row, (&fi, &li)) in f_order.iter().zip(&l_order).enumerate() {
        for (col, cell) in feats.cells[fi].iter().enumerate() {
            let x: f64 = cell.trim().parse().map_err(|_| RcmlError::Parse {
                path: features_path.to_path_buf(),
                msg: format!("row {row}: `{cell}` is not a number"),
            })?;
            if !x.is_finite() {
                return Err(RcmlError::NonFinite(format!("feature at row {row}, column {col}")));
            }
            features[[row, col]] = x;
        }
        for (col, cell) in labs.cells[li].iter().enumerate() {
            labels[[row, col]] = match cell.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(RcmlError::NonBinaryLabel { row, col, value: other.to_string() })
                }
            };
        }
    }
    let sample_ids = f_order.iter().map(|&i| feats.ids[i].clone()).collect();
    let class_names = labs.header[1..].to_vec();
    MultiLabelDataset::new(features, labels, None, class_names, sample_ids)
}

/// Parameters of the prototype-proximity generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub prototypes_per_class: usize,
    pub label_radius: f64,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The reference benchmark shape: 2000 samples, 8 classes, 16 features.
    pub fn reference(seed: u64) -> Self {
        SyntheticSpec {
            n: 2000,
            num_classes: 8,
            dim: 16,
            prototypes_per_class: 2,
            label_radius: 2.4,
            feature_noise_sigma: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(RcmlError::config("num_classes must be at least 2"));
        }
        if self.dim < 1 || self.prototypes_per_class < 1 {
            return Err(RcmlError::config("dim and prototypes_per_class must be positive"));
        }
        if !(self.label_radius > 0.0 && self.label_radius.is_finite()) {
            return Err(RcmlError::config("label_radius must be positive"));
        }
        if !(self.feature_noise_sigma > 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(RcmlError::config("feature_noise_sigma must be positive"));
        }
        Ok(())
    }
}

/// Prototype points, `prototypes[v]` holding the points of class `v`.
pub fn synthetic_prototypes(spec: &SyntheticSpec) -> Vec<Array2<f64>> {
    let mut rng = rng::seeded(rng::derive(spec.seed, "prototypes", 0));
    (0..spec.num_classes)
        .map(|_| {
            Array2::from_shape_fn((spec.prototypes_per_class, spec.dim), |_| {
                rng.gen_range(-1.0..1.0)
            })
        })
        .collect()
}

/// Labels a point: class `v` is on iff the point lies within `radius` of
/// some prototype of `v`.
pub fn proximity_labels(point: ArrayView1<f64>, prototypes: &[Array2<f64>], radius: f64) -> Vec<u8> {
    let r2 = radius * radius;
    prototypes
        .iter()
        .map(|protos| {
            let hit = protos.rows().into_iter().any(|p| {
                let d2: f64 = p.iter().zip(point.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 <= r2
            });
            u8::from(hit)
        })
        .collect()
}

const MAX_RESAMPLE: usize = 10_000;

/// Draws a synthetic dataset. Each sample is a random convex mixture of one
/// to three prototypes plus isotropic Gaussian noise; labels follow
/// [`proximity_labels`]. Samples with no label are redrawn.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiLabelDataset> {
    spec.validate()?;
    let prototypes = synthetic_prototypes(spec);
    let all: Vec<ArrayView1<f64>> = prototypes.iter().flat_map(|p| p.rows().into_iter()).collect();
    let noise = Normal::new(0.0, spec.feature_noise_sigma)
        .map_err(|e| RcmlError::config(e.to_string()))?;
    let mut rng = rng::seeded(rng::derive(spec.seed, "samples", 0));

    let mut features = Array2::<f64>::zeros((spec.n, spec.dim));
    let mut labels = Array2::<u8>::zeros((spec.n, spec.num_classes));
    let max_mix = all.len().min(3);
    for i in 0..spec.n {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_RESAMPLE {
                return Err(RcmlError::config(
                    "label_radius too small: could not draw a sample with at least one label",
                ));
            }
            let k = rng.gen_range(1..=max_mix);
            let chosen: Vec<&ArrayView1<f64>> = all.choose_multiple(&mut rng, k).collect();
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut x = ndarray::Array1::<f64>::zeros(spec.dim);
            for (p, w) in chosen.iter().zip(&weights) {
                x.scaled_add(w / total, p);
            }
            x.mapv_inplace(|v| v + noise.sample(&mut rng));
            let y = proximity_labels(x.view(), &prototypes, spec.label_radius);
            if y.contains(&1) {
                features.row_mut(i).assign(&x);
                labels.row_mut(i).assign(&ndarray::Array1::from(y));
                break;
            }
        }
    }
    let width = spec.n.max(1).to_string().len();
    let sample_ids = (0..spec.n).map(|i| format!("s{i:0width$}")).collect();
    let class_names = (0..spec.num_classes).map(|v| format!("class_{v}")).collect();
    MultiLabelDataset::new(features, labels.clone(), Some(labels), class_names, sample_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(RcmlError::config("split fractions must lie in [0, 1]"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(RcmlError::config("split fractions must sum to 1"));
        }
        Ok(())
    }

    /// Index sets of the three parts, each sorted ascending.
    pub fn indices(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        self.validate()?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::seeded(self.seed));
        let n_train = ((self.train_fraction * n as f64).round() as usize).min(n);
        let n_val = ((self.val_fraction * n as f64).round() as usize).min(n - n_train);
        let mut train = perm[..n_train].to_vec();
        let mut val = perm[n_train..n_train + n_val].to_vec();
        let mut test = perm[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok([train, val, test])
    }
}

/// Splits into (train, val, test).
pub fn split(
    ds: &MultiLabelDataset,
    spec: &SplitSpec,
) -> Result<(MultiLabelDataset, MultiLabelDataset, MultiLabelDataset)> {
    let [train, val, test] = spec.indices(ds.len())?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&test)))
}

/// Positive rate per class.
pub fn prevalence(labels: &Array2<u8>) -> Vec<f64> {
    let n = labels.nrows().max(1) as f64;
    labels.columns().into_iter().map(|c| c.iter().map(|&v| f64::from(v)).sum::<f64>() / n).collect()
}
