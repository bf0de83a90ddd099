use crate::error::{DotError, Result};
use crate::model::LossTerms;

use super::ScatterStats;

/// Where target class assignments for scatter statistics came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClasses {
    TrueLabels,
    Predicted,
}

/// Diagnostics after one epoch, evaluated on the full datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective terms; the locality terms here are divided by edge count.
    pub loss: LossTerms,
    pub source_accuracy: f64,
    pub target_accuracy: Option<f64>,
    /// W2 estimate between transformed source and target features.
    pub w2: f64,
    pub scatter: ScatterStats,
    /// Cross-covariance norm between transformed source and target features.
    pub fnorm_transformed: f64,
    /// Cross-covariance norm between projected source and target features.
    pub fnorm_source: f64,
}

impl EpochRecord {
    /// `(name, value)` pairs in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![
            ("loss_total", self.loss.total),
            ("loss_tce", self.loss.tce),
            ("loss_ent", self.loss.ent),
            ("lpp_target", self.loss.target_lpp),
            ("lpp_source", self.loss.source_lpp),
            ("source_accuracy", self.source_accuracy),
        ];
        if let Some(a) = self.target_accuracy {
            m.push(("target_accuracy", a));
        }
        m.extend([
            ("w2", self.w2),
            ("within_source", self.scatter.within_source),
            ("within_target", self.scatter.within_target),
            ("between_source", self.scatter.between_source),
            ("between_target", self.scatter.between_target),
            ("center_distance", self.scatter.center_distance),
            ("fnorm_transformed", self.fnorm_transformed),
            ("fnorm_source", self.fnorm_source),
        ]);
        m
    }
}

/// Per-epoch history of a training run. Epoch 0 is the state right after
/// source pre-training and the target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
    target_classes: TargetClasses,
    warnings: Vec<String>,
}

impl MetricsLog {
    pub fn new(target_classes: TargetClasses) -> Self {
        MetricsLog {
            records: Vec::new(),
            target_classes,
            warnings: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch <= last.epoch {
                return Err(DotError::Input(format!(
                    "epoch {} logged after epoch {}",
                    rec.epoch, last.epoch
                )));
            }
        }
        if let Some((name, v)) = rec.metrics().into_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DotError::Numeric(format!(
                "metric {name} is {v} at epoch {}",
                rec.epoch
            )));
        }
        for c in &rec.scatter.skipped_classes {
            self.warnings.push(format!(
                "epoch {}: class {c} missing from one domain, left out of scatter",
                rec.epoch
            ));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn target_classes(&self) -> TargetClasses {
        self.target_classes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `(epoch, value)` series of one metric.
    pub fn series(&self, name: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| {
                r.metrics()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| (r.epoch, v))
            })
            .collect()
    }

    /// Metric names in first-seen order.
    pub fn metric_names(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for r in &self.records {
            for (n, _) in r.metrics() {
                if !names.contains(&n) {
                    names.push(n);
                }
            }
        }
        names
    }
}

#[cfg(test)]
pub(crate) fn sample_record(epoch: usize, x: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        loss: LossTerms {
            tce: x,
            ent: 0.5 * x,
            target_lpp: 1.0,
            source_lpp: 2.0,
            total: 4.0 * x,
        },
        source_accuracy: 0.9,
        target_accuracy: Some(0.8),
        w2: x,
        scatter: ScatterStats {
            within_source: 1.0,
            within_target: 1.0,
            between_source: 2.0,
            between_target: 2.0,
            center_distance: x,
            skipped_classes: vec![],
        },
        fnorm_transformed: 1.0,
        fnorm_source: 0.5,
    }
}
