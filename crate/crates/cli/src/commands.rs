use std::path::Path;

use anyhow::{bail, Context};
use dot_core::data::{
    load_features_csv, synth_shifted_gaussians, write_features_csv, DomainDataset, DomainTag,
    SyntheticSpec,
};
use dot_core::metrics::{accuracy, export_curves, export_heatmap_csv};
use dot_core::model::{predict, train as train_model, Checkpoint, TrainConfig};
use dot_core::ot::attention_ot_consistency;
use dot_core::{attention_map, DotError, FeatureMatrix};
use serde_json::json;

use crate::provenance::{create_dir, input_record, read_bytes, sha256_hex, write_file, write_json};

/// Bad flags or an unreadable config/spec document (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_document<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> anyhow::Result<T> {
    serde_json::from_slice(bytes).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

fn load(path: &Path, tag: DomainTag, classes: Option<usize>) -> anyhow::Result<DomainDataset> {
    load_features_csv(path, tag, classes).with_context(|| format!("loading {}", path.display()))
}

pub fn synth(spec_path: &Path, out: &Path) -> anyhow::Result<()> {
    let bytes = read_bytes(spec_path)?;
    let spec: SyntheticSpec = parse_document(spec_path, &bytes)?;
    let (source, target) = synth_shifted_gaussians(&spec)?;
    create_dir(out)?;
    write_file(&out.join("spec.json"), &bytes)?;
    write_features_csv(&source, out.join("source.csv"))?;
    write_features_csv(&target, out.join("target.csv"))?;
    // hash the parsed spec so formatting alone does not change it
    let canonical = serde_json::to_string(&spec)?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "synth",
            "seed": spec.seed,
            "spec_sha256": sha256_hex(canonical.as_bytes()),
            "spec": spec,
            "files": ["spec.json", "source.csv", "target.csv"],
        }),
    )?;
    println!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        out.display()
    );
    Ok(())
}

pub fn train(
    source_path: &Path,
    target_path: &Path,
    config_path: &Path,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let config_bytes = read_bytes(config_path)?;
    let mut config: TrainConfig = parse_document(config_path, &config_bytes)?;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    let source = load(source_path, DomainTag::Source, None)?;
    let target = load(target_path, DomainTag::Target, source.num_classes())?;

    let outcome = train_model(&source, &target, &config)?;

    create_dir(out)?;
    write_file(&out.join("config.json"), &config_bytes)?;
    write_json(
        &out.join("resolved_config.json"),
        &serde_json::to_value(&config)?,
    )?;
    Checkpoint {
        params: outcome.params.clone(),
        config: config.clone(),
    }
    .write(out.join("checkpoint.json"))?;
    let mut files: Vec<String> = export_curves(&outcome.log, out)?
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    let fs = outcome.params.source.forward(source.features())?;
    let ft = outcome.params.target.forward(target.features())?;
    export_heatmap_csv(attention_map(&fs, &ft)?.matrix(), out.join("attention.csv"))?;
    files.extend(
        [
            "config.json",
            "resolved_config.json",
            "checkpoint.json",
            "attention.csv",
        ]
        .map(String::from),
    );
    files.sort();
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "train",
            "seed": config.seed,
            "epochs": config.epochs,
            "overrides": { "epochs": epochs, "seed": seed },
            "inputs": {
                "source": input_record(source_path, &read_bytes(source_path)?),
                "target": input_record(target_path, &read_bytes(target_path)?),
                "config": input_record(config_path, &config_bytes),
            },
            "files": files,
        }),
    )?;

    if let Some(last) = outcome.log.last() {
        print!(
            "epoch {}: source accuracy {:.4}",
            last.epoch, last.source_accuracy
        );
        match last.target_accuracy {
            Some(a) => println!(", target accuracy {a:.4}"),
            None => println!(),
        }
    }
    println!("run written to {}", out.display());
    Ok(())
}

pub fn eval(checkpoint_path: &Path, target_path: &Path, out: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::read(checkpoint_path)
        .with_context(|| format!("reading checkpoint {}", checkpoint_path.display()))?;
    let target = load(
        target_path,
        DomainTag::Target,
        Some(ck.params.num_classes()),
    )?;
    let (pred, probs) = predict(&ck.params, target.features())?;

    create_dir(out)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))
        .with_context(|| format!("writing {}", out.join("predictions.csv").display()))?;
    let mut header = vec!["index".to_string(), "predicted".to_string()];
    header.extend((0..probs.cols()).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (i, &y) in pred.iter().enumerate() {
        let mut rec = vec![i.to_string(), y.to_string()];
        rec.extend(probs.row(i).iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut summary = json!({
        "checkpoint": input_record(checkpoint_path, &read_bytes(checkpoint_path)?),
        "target": input_record(target_path, &read_bytes(target_path)?),
        "samples": pred.len(),
    });
    if let Some(labels) = target.labels() {
        let acc = accuracy(&pred, labels)?;
        summary["accuracy"] = json!(acc);
        println!("accuracy {acc:.4} on {} samples", pred.len());
    } else {
        println!("predicted {} unlabeled samples", pred.len());
    }
    write_json(&out.join("eval.json"), &summary)?;
    Ok(())
}

/// Parses `0.1,1,canonical`; `canonical` is `2·sqrt(dim)`.
fn parse_lambdas(list: &str, canonical: f64) -> anyhow::Result<Vec<f64>> {
    let mut out = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let v = if tok.eq_ignore_ascii_case("canonical") {
            canonical
        } else {
            tok.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| UsageError(format!("--lambdas: {tok:?} is not a positive number")))?
        };
        out.push(v);
    }
    if out.is_empty() {
        bail!(UsageError("--lambdas is empty".into()));
    }
    Ok(out)
}

fn is_canonical(lambda: f64, canonical: f64) -> bool {
    (lambda - canonical).abs() <= 1e-9 * canonical
}

pub fn compare_ot(
    checkpoint_path: &Path,
    source_path: &Path,
    target_path: &Path,
    lambdas: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let ck = Checkpoint::read(checkpoint_path)
        .with_context(|| format!("reading checkpoint {}", checkpoint_path.display()))?;
    let classes = Some(ck.params.num_classes());
    let source = load(source_path, DomainTag::Source, classes)?;
    let target = load(target_path, DomainTag::Target, classes)?;
    let fs: FeatureMatrix = ck.params.source.forward(source.features())?;
    let ft: FeatureMatrix = ck.params.target.forward(target.features())?;
    let canonical = 2.0 * (fs.cols() as f64).sqrt();
    let ladder = parse_lambdas(lambdas, canonical)?;
    let a = attention_map(&fs, &ft)?;

    create_dir(out)?;
    let path = out.join("compare_ot.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "lambda",
        "canonical",
        "kernel_discrepancy",
        "plan_max_diff",
        "mean_row_cosine",
        "plan_sparsity",
        "attention_sparsity",
        "sinkhorn_iterations",
        "error",
    ])?;
    let mut failures = 0;
    for &lambda in &ladder {
        let flag = if is_canonical(lambda, canonical) {
            "yes"
        } else {
            "no"
        };
        match attention_ot_consistency(&a, &fs, &ft, Some(lambda)) {
            Ok(r) => w.write_record([
                lambda.to_string(),
                flag.into(),
                r.kernel_discrepancy.to_string(),
                r.plan_max_diff.to_string(),
                r.mean_row_cosine.to_string(),
                r.plan_sparsity.to_string(),
                r.attention_sparsity.to_string(),
                r.sinkhorn_iterations.to_string(),
                String::new(),
            ])?,
            Err(e) => {
                failures += 1;
                eprintln!("warning: lambda {lambda}: {e}");
                let mut rec = vec![lambda.to_string(), flag.into()];
                rec.resize(8, String::new());
                rec.push(e.to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "compare-ot",
            "canonical_lambda": canonical,
            "lambdas": ladder,
            "inputs": {
                "checkpoint": input_record(checkpoint_path, &read_bytes(checkpoint_path)?),
                "source": input_record(source_path, &read_bytes(source_path)?),
                "target": input_record(target_path, &read_bytes(target_path)?),
            },
            "files": ["compare_ot.csv"],
        }),
    )?;
    println!(
        "{} lambdas compared ({failures} failed); report in {}",
        ladder.len(),
        path.display()
    );
    if failures == ladder.len() {
        bail!(DotError::Numeric(format!("all {failures} lambdas failed")));
    }
    Ok(())
}
