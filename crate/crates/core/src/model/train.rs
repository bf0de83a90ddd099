use crate::attention::{attention_map, transport_features};
use crate::data::{batches, DomainDataset};
use crate::error::{DotError, Result};
use crate::graph::supervised_graph;
use crate::metrics::{
    accuracy, cross_cov_fnorm, scatter_stats, w2_estimate, EpochRecord, MetricsLog, TargetClasses,
};
use crate::numeric::{FeatureMatrix, Matrix, Tape};

use super::config::{GraphSchedule, TrainConfig};
use super::loss::{batch_knn_graph, record_objective, tce_loss, ObjectiveInputs};
use super::optim::Optimizer;
use super::params::{init_target_from_source, ModelParams};

/// Row-wise argmax; ties go to the smallest column index.
pub fn argmax_rows(p: &Matrix) -> Vec<usize> {
    p.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Labels and class probabilities `C(F_t(X))`.
pub fn predict(params: &ModelParams, x: &FeatureMatrix) -> Result<(Vec<usize>, Matrix)> {
    if x.cols() != params.input_dim() {
        return Err(DotError::shape(
            "predict",
            x.shape_str(),
            format!("{} input columns", params.input_dim()),
        ));
    }
    let probs = params
        .classifier
        .probabilities(&params.target.forward(x)?)?;
    Ok((argmax_rows(&probs), probs))
}

const PRETRAIN_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Fits `F_s` and `C` to the labeled source by plain cross-entropy on
/// `C(F_s(X))`, using `pretrain_epochs` epochs of mini-batches at
/// `pretrain_learning_rate`. Returns the full-data loss before training and
/// after each epoch.
pub fn pretrain_source(
    source: &DomainDataset,
    params: &mut ModelParams,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let ys = source.require_labels()?;
    let xs = source.features();
    let full_loss = |p: &ModelParams| tce_loss(&p.source.forward(xs)?, ys, &p.classifier);

    let mut curve = vec![full_loss(params)?];
    let shapes: Vec<&Matrix> = params
        .source
        .tensors()
        .into_iter()
        .chain(params.classifier.tensors())
        .collect();
    let mut opt = Optimizer::new(config.optimizer, config.pretrain_learning_rate, &shapes);
    let b = config.batch_source.min(xs.rows());
    for epoch in 1..=config.pretrain_epochs {
        for idx in batches(xs.rows(), b, config.seed ^ PRETRAIN_STREAM, epoch as u64)? {
            let yb: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(xs.select_rows(&idx));
            let sv = params.source.register(&mut tape);
            let cv = params.classifier.register(&mut tape);
            let f = params.source.forward_on(&mut tape, x, &sv)?;
            let z = params.classifier.logits_on(&mut tape, f, &cv)?;
            let l = tape.softmax_cross_entropy(z, &yb)?;
            if !tape.value(l).item().is_finite() {
                return Err(DotError::Training {
                    epoch,
                    detail: format!("pretraining loss is {}", tape.value(l).item()),
                });
            }
            let grads = tape.backward(l)?.into_params();
            let tensors = params
                .source
                .tensors_mut()
                .into_iter()
                .chain(params.classifier.tensors_mut())
                .collect();
            opt.step(tensors, &grads);
        }
        let l = full_loss(params)?;
        if !l.is_finite() {
            return Err(DotError::Training {
                epoch,
                detail: format!("pretraining loss is {l}"),
            });
        }
        curve.push(l);
    }
    Ok(curve)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: MetricsLog,
    pub pretrain_curve: Vec<f64>,
}

/// Full training run: pretrain on the source, copy `F_s` into `F_t`, then
/// `epochs` passes of mini-batch descent on the joint objective. Target
/// labels, when present, are only read by the per-epoch diagnostics.
pub fn train(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let ys = source.require_labels()?;
    if source.dim() != target.dim() {
        return Err(DotError::shape(
            "train",
            format!("source width {}", source.dim()),
            format!("target width {}", target.dim()),
        ));
    }
    if source.is_empty() || target.is_empty() {
        return Err(DotError::Input("training needs nonempty domains".into()));
    }
    let classes = source
        .num_classes()
        .unwrap_or_else(|| ys.iter().max().map_or(0, |m| m + 1))
        .max(2);
    let mut params = ModelParams::init(
        source.dim(),
        config.hidden_dim,
        config.feature_dim,
        classes,
        config.seed,
    )?;
    let pretrain_curve = pretrain_source(source, &mut params, config)?;
    init_target_from_source(&mut params)?;

    let target_classes = if target.labels().is_some() {
        TargetClasses::TrueLabels
    } else {
        TargetClasses::Predicted
    };
    let mut log = MetricsLog::new(target_classes);
    log.push(evaluate(&params, source, target, config, 0)?)?;

    let (xs, xt) = (source.features(), target.features());
    let bs = config.batch_source.min(xs.rows());
    let bt = config.batch_target.min(xt.rows());
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &params.tensors());
    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        let sb = batches(xs.rows(), bs, config.seed, 2 * e)?;
        let tb = batches(xt.rows(), bt, config.seed, 2 * e + 1)?;
        let epoch_graph = match config.target_graph {
            GraphSchedule::Epoch => {
                Some(batch_knn_graph(&params.target.forward(xt)?, config.knn_k)?)
            }
            GraphSchedule::Batch => None,
        };
        for step in 0..sb.len().max(tb.len()) {
            let (is, it) = (&sb[step % sb.len()], &tb[step % tb.len()]);
            let xs_b = xs.select_rows(is);
            let ys_b: Vec<usize> = is.iter().map(|&i| ys[i]).collect();
            let xt_b = xt.select_rows(it);
            let target_graph = match &epoch_graph {
                Some(g) => g.induced(it),
                None => batch_knn_graph(&params.target.forward(&xt_b)?, config.knn_k)?,
            };
            let source_graph = supervised_graph(&ys_b);
            let input = ObjectiveInputs {
                xs: &xs_b,
                ys: &ys_b,
                xt: &xt_b,
                target_graph: &target_graph,
                source_graph: &source_graph,
            };
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let obj = record_objective(&mut tape, &params, &vars, &input, config)?;
            let terms = obj.values(&tape);
            if !terms.is_finite() {
                return Err(DotError::Training {
                    epoch,
                    detail: format!("{terms:?}"),
                });
            }
            let grads = tape.backward(obj.total)?.into_params();
            opt.step(params.tensors_mut(), &grads);
        }
        if !params.is_finite() {
            return Err(DotError::Training {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
        log.push(evaluate(&params, source, target, config, epoch)?)?;
    }
    Ok(TrainOutcome {
        params,
        log,
        pretrain_curve,
    })
}

/// Baseline without adaptation: the same pretraining, no DoT epochs.
pub fn train_source_only(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(
        source,
        target,
        &TrainConfig {
            epochs: 0,
            ..config.clone()
        },
    )
}

/// Diagnostics on the full datasets. Loss terms come from the objective with
/// per-edge locality terms and the target graph built over all of `F_t`.
pub fn evaluate(
    params: &ModelParams,
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord> {
    let ys = source.require_labels()?;
    let (xs, xt) = (source.features(), target.features());
    let fs = params.source.forward(xs)?;
    let ft = params.target.forward(xt)?;
    let fhat = transport_features(&attention_map(&fs, &ft)?, &ft)?;

    let target_graph = batch_knn_graph(&ft, config.knn_k)?;
    let source_graph = supervised_graph(ys);
    let input = ObjectiveInputs {
        xs,
        ys,
        xt,
        target_graph: &target_graph,
        source_graph: &source_graph,
    };
    let per_edge = TrainConfig {
        normalize_lpp: true,
        ..config.clone()
    };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let loss = record_objective(&mut tape, params, &vars, &input, &per_edge)?.values(&tape);
    if !loss.is_finite() {
        return Err(DotError::Training {
            epoch,
            detail: format!("{loss:?}"),
        });
    }

    let src_pred = argmax_rows(&params.classifier.probabilities(&fhat)?);
    let (tgt_pred, _) = predict(params, xt)?;
    let yt = target.labels().unwrap_or(&tgt_pred);
    Ok(EpochRecord {
        epoch,
        loss,
        source_accuracy: accuracy(&src_pred, ys)?,
        target_accuracy: target
            .labels()
            .map(|y| accuracy(&tgt_pred, y))
            .transpose()?,
        w2: w2_estimate(&fhat, &ft, config.w2_sample, config.seed)?,
        scatter: scatter_stats(&fhat, ys, &ft, yt)?,
        fnorm_transformed: cross_cov_fnorm(&fhat, &ft, config.seed)?,
        fnorm_source: cross_cov_fnorm(&fs, &ft, config.seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shifted_gaussians, DomainTag, ShiftKind, SyntheticSpec};

    fn small_task(magnitude: f64) -> (DomainDataset, DomainDataset) {
        synth_shifted_gaussians(&SyntheticSpec {
            classes: 2,
            dim: 4,
            separation: 4.0,
            sigma: 0.5,
            shift: ShiftKind::Translation,
            magnitude,
            per_class: 20,
            seed: 3,
        })
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            pretrain_epochs: 20,
            hidden_dim: 8,
            feature_dim: 4,
            batch_source: 16,
            batch_target: 16,
            w2_sample: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let p = Matrix::new(3, 3, vec![0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.1, 0.8, 0.1]).unwrap();
        assert_eq!(argmax_rows(&p), vec![0, 2, 1]);
    }

    #[test]
    fn argmax_invariant_under_monotone_maps() {
        let p = Matrix::new(2, 3, vec![0.3, -1.0, 2.0, 4.0, 4.5, -3.0]).unwrap();
        let base = argmax_rows(&p);
        assert_eq!(argmax_rows(&p.map(|v| v + 7.0)), base);
        assert_eq!(argmax_rows(&p.scale(0.25)), base);
        assert_eq!(argmax_rows(&p.map(f64::exp)), base);
    }

    #[test]
    fn predict_rows_are_distributions() {
        let params = ModelParams::init(4, 8, 3, 3, 1).unwrap();
        let x = Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect());
        let (labels, probs) = predict(&params, &x).unwrap();
        assert_eq!(labels.len(), 5);
        for s in probs.row_sums() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(matches!(
            predict(&params, &Matrix::zeros(2, 3)),
            Err(DotError::Shape { .. })
        ));
    }

    #[test]
    fn pretraining_separates_two_gaussians() {
        let (src, _) = small_task(0.0);
        let mut params = ModelParams::init(4, 8, 4, 2, 0).unwrap();
        let cfg = TrainConfig {
            pretrain_epochs: 200,
            ..quick()
        };
        let curve = pretrain_source(&src, &mut params, &cfg).unwrap();
        assert_eq!(curve.len(), 201);
        let pred = argmax_rows(
            &params
                .classifier
                .probabilities(&params.source.forward(src.features()).unwrap())
                .unwrap(),
        );
        assert!(accuracy(&pred, src.labels().unwrap()).unwrap() >= 0.99);
    }

    #[test]
    fn pretraining_with_zero_rate_is_noop() {
        let (src, _) = small_task(1.0);
        let mut params = ModelParams::init(4, 8, 4, 2, 0).unwrap();
        let before = params.clone();
        let cfg = TrainConfig {
            pretrain_learning_rate: 0.0,
            ..quick()
        };
        pretrain_source(&src, &mut params, &cfg).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn one_sample_descent_step_lowers_loss() {
        let (src, _) = small_task(0.0);
        let one = src.subset(&[0]);
        let mut params = ModelParams::init(4, 8, 4, 2, 5).unwrap();
        let cfg = TrainConfig {
            pretrain_epochs: 1,
            pretrain_learning_rate: 1e-3,
            optimizer: super::super::config::OptimizerKind::Gd,
            ..quick()
        };
        let curve = pretrain_source(&one, &mut params, &cfg).unwrap();
        assert!(curve[1] < curve[0]);
    }

    #[test]
    fn zero_epochs_returns_pretrained_copy() {
        let (src, tgt) = small_task(1.0);
        let cfg = TrainConfig {
            epochs: 0,
            ..quick()
        };
        let out = train(&src, &tgt, &cfg).unwrap();
        assert_eq!(out.params.source, out.params.target);
        assert_eq!(out.log.records().len(), 1);

        let mut expected = ModelParams::init(4, 8, 4, 2, cfg.seed).unwrap();
        pretrain_source(&src, &mut expected, &cfg).unwrap();
        init_target_from_source(&mut expected).unwrap();
        assert_eq!(out.params, expected);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_epoch() {
        let (src, tgt) = small_task(1.5);
        let a = train(&src, &tgt, &quick()).unwrap();
        let b = train(&src, &tgt, &quick()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        let epochs: Vec<usize> = a.log.records().iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2, 3]);
        assert_ne!(a.params.source, a.params.target);
    }

    #[test]
    fn unlabeled_target_uses_predictions() {
        let (src, tgt) = small_task(1.0);
        let out = train(&src, &tgt.without_labels(), &quick()).unwrap();
        assert_eq!(out.log.target_classes(), TargetClasses::Predicted);
        assert!(out.log.last().unwrap().target_accuracy.is_none());
    }

    #[test]
    fn unlabeled_source_is_rejected() {
        let (src, tgt) = small_task(1.0);
        let unl =
            DomainDataset::new(src.features().clone(), None, DomainTag::Target, Some(2)).unwrap();
        assert!(train(&unl, &tgt, &quick()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let (src, tgt) = small_task(1.0);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            optimizer: super::super::config::OptimizerKind::Gd,
            ..quick()
        };
        match train(&src, &tgt, &cfg) {
            Err(DotError::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
