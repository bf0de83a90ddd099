//! Datasets, CSV ingestion, the synthetic shifted-Gaussian generator and
//! seeded mini-batch division.
//!
//! CSV layout: header `f0,...,f{d-1}` optionally followed by `label`. A label
//! of `-1` marks an unlabeled row; a file is either fully labeled or fully
//! unlabeled.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};
use crate::io::{create, csv_error, fmt_f64};
use crate::numeric::{FeatureMatrix, Matrix};
use crate::rng::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    features: FeatureMatrix,
    labels: Option<Vec<usize>>,
    tag: DomainTag,
    num_classes: Option<usize>,
}

impl DomainDataset {
    /// `num_classes` defaults to `max(label) + 1` when labels are given.
    pub fn new(
        features: FeatureMatrix,
        labels: Option<Vec<usize>>,
        tag: DomainTag,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if tag == DomainTag::Source && labels.is_none() {
            return Err(DotError::Input("source dataset must be labeled".into()));
        }
        let mut k = num_classes;
        if let Some(ls) = &labels {
            if ls.len() != features.rows() {
                return Err(DotError::shape(
                    "DomainDataset",
                    format!("{} feature rows", features.rows()),
                    format!("{} labels", ls.len()),
                ));
            }
            let seen = ls.iter().max().map_or(0, |m| m + 1);
            match k {
                Some(k) => {
                    if let Some(&bad) = ls.iter().find(|&&y| y >= k) {
                        return Err(DotError::Label {
                            label: bad as i64,
                            classes: k,
                        });
                    }
                }
                None => k = Some(seen),
            }
        }
        Ok(DomainDataset {
            features,
            labels,
            tag,
            num_classes: k,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an input error naming the dataset's role.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| DotError::Input(format!("{:?} dataset has no labels", self.tag)))
    }

    pub fn tag(&self) -> DomainTag {
        self.tag
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> DomainDataset {
        DomainDataset {
            features: self.features.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            tag: self.tag,
            num_classes: self.num_classes,
        }
    }

    /// Same features with labels removed.
    pub fn without_labels(&self) -> DomainDataset {
        DomainDataset {
            features: self.features.clone(),
            labels: None,
            tag: DomainTag::Target,
            num_classes: self.num_classes,
        }
    }

    pub fn with_tag(mut self, tag: DomainTag) -> Result<DomainDataset> {
        if tag == DomainTag::Source && self.labels.is_none() {
            return Err(DotError::Input("source dataset must be labeled".into()));
        }
        self.tag = tag;
        Ok(self)
    }
}

/// Reads a feature CSV. With `declared_classes`, labels at or above it are
/// rejected with the offending line.
pub fn load_features_csv(
    path: impl AsRef<Path>,
    tag: DomainTag,
    declared_classes: Option<usize>,
) -> Result<DomainDataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let has_label = header.iter().next_back() == Some("label");
    let d = header.len() - usize::from(has_label);
    if d == 0 {
        return Err(DotError::Schema(format!(
            "{}: no feature columns",
            path.display()
        )));
    }
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("f{j}") {
            return Err(DotError::Schema(format!(
                "{}: column {j} is named {name:?}, expected \"f{j}\"",
                path.display()
            )));
        }
    }

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != header.len() {
            return Err(DotError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for cell in rec.iter().take(d) {
            let v: f64 = cell.parse().map_err(|_| DotError::Parse {
                line,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DotError::Parse {
                    line,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        if has_label {
            let cell = &rec[d];
            let y: i64 = cell.parse().map_err(|_| DotError::Parse {
                line,
                msg: format!("label {cell:?} is not an integer"),
            })?;
            if y < -1 {
                return Err(DotError::Parse {
                    line,
                    msg: format!("label {y} below -1"),
                });
            }
            if let Some(kc) = declared_classes {
                if y >= kc as i64 {
                    return Err(DotError::Parse {
                        line,
                        msg: format!("label {y} out of range for {kc} classes"),
                    });
                }
            }
            raw_labels.push((line, y));
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(DotError::Schema(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let labels = if raw_labels.iter().all(|&(_, y)| y == -1) {
        None
    } else if let Some(&(line, _)) = raw_labels.iter().find(|&&(_, y)| y == -1) {
        return Err(DotError::Parse {
            line,
            msg: "unlabeled row in a labeled file".into(),
        });
    } else {
        Some(raw_labels.iter().map(|&(_, y)| y as usize).collect())
    };
    let features = Matrix::new(n, d, data)?;
    DomainDataset::new(features, labels, tag, declared_classes)
}

/// Writes `ds` in the layout read by [`load_features_csv`], with every value
/// printed to 17 significant digits.
pub fn write_features_csv(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| DotError::io(path, e);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, r) in ds.features.row_iter().enumerate() {
        let mut cells: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        if let Some(l) = &ds.labels {
            cells.push(l[i].to_string());
        }
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Every class mean moves by `magnitude` along `(1, -1, 0, ...)/√2`.
    Translation,
    /// Class means rotate by `magnitude` radians in the `(f0, f1)` plane.
    Rotation,
    /// Rotation followed by translation, both by `magnitude`.
    Both,
}

/// Isotropic Gaussian classes with means `separation · e_k`, and a target
/// domain whose class means are moved by a rigid shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub shift: ShiftKind,
    pub magnitude: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DotError::Parameter(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.classes > self.dim {
            return bad(format!(
                "{} classes do not fit on the axes of dimension {}",
                self.classes, self.dim
            ));
        }
        if self.dim < 2 && self.shift != ShiftKind::Translation {
            return bad("rotation needs dimension ≥ 2".into());
        }
        if self.per_class < 2 {
            return bad(format!("per_class must be ≥ 2, got {}", self.per_class));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("sigma", self.sigma),
            ("magnitude", self.magnitude),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.sigma < 0.0 {
            return bad("sigma must be nonnegative".into());
        }
        Ok(())
    }

    pub fn source_mean(&self, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[k] = self.separation;
        m
    }

    pub fn target_mean(&self, k: usize) -> Vec<f64> {
        let mut m = self.source_mean(k);
        if matches!(self.shift, ShiftKind::Rotation | ShiftKind::Both) {
            let (s, c) = self.magnitude.sin_cos();
            let (x, y) = (m[0], m[1]);
            m[0] = c * x - s * y;
            m[1] = s * x + c * y;
        }
        if matches!(self.shift, ShiftKind::Translation | ShiftKind::Both) {
            if self.dim == 1 {
                m[0] += self.magnitude;
            } else {
                let h = self.magnitude / 2f64.sqrt();
                m[0] += h;
                m[1] -= h;
            }
        }
        m
    }
}

/// Source and target samples, ordered by class. The target keeps its labels
/// for evaluation.
pub fn synth_shifted_gaussians(spec: &SyntheticSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let draw = |stream: u64, mean: &dyn Fn(usize) -> Vec<f64>| {
        let mut rng = Rng64::stream(spec.seed, stream);
        let n = spec.classes * spec.per_class;
        let mut data = Vec::with_capacity(n * spec.dim);
        let mut labels = Vec::with_capacity(n);
        for k in 0..spec.classes {
            let mu = mean(k);
            for _ in 0..spec.per_class {
                data.extend(mu.iter().map(|m| m + spec.sigma * rng.normal()));
                labels.push(k);
            }
        }
        (Matrix::from_vec(n, spec.dim, data), labels)
    };
    let (xs, ys) = draw(0, &|k| spec.source_mean(k));
    let (xt, yt) = draw(1, &|k| spec.target_mean(k));
    Ok((
        DomainDataset::new(xs, Some(ys), DomainTag::Source, Some(spec.classes))?,
        DomainDataset::new(xt, Some(yt), DomainTag::Target, Some(spec.classes))?,
    ))
}

/// Seeded mini-batch division of `0..n` for one epoch. Every index appears
/// exactly once; the last batch may be short.
pub fn batches(n: usize, b: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 || b > n {
        return Err(DotError::Parameter(format!(
            "batch size {b} outside [1, {n}]"
        )));
    }
    let perm = Rng64::stream(seed, epoch.wrapping_add(0xB47C)).permutation(n);
    Ok(perm.chunks(b).map(<[usize]>::to_vec).collect())
}
