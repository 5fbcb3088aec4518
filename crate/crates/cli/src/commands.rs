use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cropnet_core::blob::{write_bundle, Tensor};
use cropnet_core::cropnet::{
    load_checkpoint, predict_batched, save_checkpoint, CropNet, ImportanceMap,
};
use cropnet_core::data::{align_evaluation, load_dataset, write_dataset, Band, Dataset};
use cropnet_core::eval::{
    fit_source, metrics, network_config, run_ablation, run_in_region, run_sensitivity,
    run_transfer, write_sensitivity_csv, ConfusionMatrix, EvaluationReport, FeatureKind, Prepared,
};
use cropnet_core::features::{compose_median, reshape_2d};
use serde_json::json;

use crate::config::{RunConfig, Which};
use crate::CliError;

/// Length assumed for single-date hyperspectral vectors when no data is at hand.
const DEFAULT_HYPER_LEN: usize = 242;

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    /// Creates the output directory and writes `config.resolved`.
    fn open(cfg: &RunConfig) -> Result<Outputs, CliError> {
        fs::create_dir_all(&cfg.out)?;
        let mut out = Outputs {
            dir: cfg.out.clone(),
            files: Vec::new(),
        };
        let text = cfg.to_toml()?;
        out.write("config.resolved", |w| Ok(w.write_all(text.as_bytes())?))?;
        Ok(out)
    }

    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// One JSON line on stdout naming everything written.
    fn finish(self, command: &str, extra: serde_json::Value) -> Result<(), CliError> {
        let mut line = json!({ "command": command, "out": self.dir.display().to_string(), "files": self.files });
        if let (Some(obj), serde_json::Value::Object(more)) = (line.as_object_mut(), extra) {
            obj.extend(more);
        }
        println!("{line}");
        Ok(())
    }
}

fn write_report(out: &mut Outputs, report: &EvaluationReport) -> Result<(), CliError> {
    let text = report.to_json()?;
    out.write("report.json", |w| Ok(w.write_all(text.as_bytes())?))?;
    out.write("summary.csv", |w| {
        Ok(EvaluationReport::write_summary_csv(&[report], w)?)
    })?;
    for s in &report.seeds {
        out.write(&format!("confusion_{}.csv", s.seed), |w| {
            Ok(s.confusion.write_csv(&report.classes, w)?)
        })?;
    }
    Ok(())
}

fn report_summary(r: &EvaluationReport) -> serde_json::Value {
    json!({ "oa_mean": r.oa_mean, "oa_std": r.oa_std, "mf1_mean": r.mf1_mean, "mf1_std": r.mf1_std, "seeds": r.seed_count })
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = Outputs::open(cfg)?;
    let mut any = false;
    for (which, src, name) in [
        (Which::Source, &cfg.source, "source.jsonl"),
        (Which::Target, &cfg.target, "target.jsonl"),
    ] {
        if src.as_ref().is_some_and(|s| s.synth.is_some()) {
            let ds = cfg.load(which)?;
            write_dataset(&ds, out.path(name))?;
            log::info!("{name}: {} samples", ds.len());
            any = true;
        }
    }
    if !any {
        return Err(CliError::Config(
            "no `synth` source or target configured".into(),
        ));
    }
    out.finish("synth", json!({}))
}

pub fn featurize(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = cfg.load(Which::Source)?;
    let exp = &cfg.experiment;
    let prepared = Prepared::new(&ds, exp)?;
    let mut out = Outputs::open(cfg)?;
    let kept: Vec<usize> = (0..ds.len())
        .filter(|&i| prepared.features[i].is_some())
        .collect();
    let rejected: Vec<&str> = (0..ds.len())
        .filter(|&i| prepared.features[i].is_none())
        .map(|i| ds.samples[i].id.as_str())
        .collect();
    let label = |i: usize| {
        ds.schema
            .name(ds.samples[i].label)
            .unwrap_or("?")
            .to_string()
    };
    out.write("features.csv", |w| {
        let median = exp.feature.is_median();
        writeln!(
            w,
            "{}",
            if median {
                "id,label,band,bin,value"
            } else {
                "id,label,index,value"
            }
        )?;
        for &i in &kept {
            let f = prepared.features[i].as_ref().expect("kept");
            let bins = f.len() / 10;
            for (j, v) in f.iter().enumerate() {
                let (id, lab) = (&ds.samples[i].id, label(i));
                if median {
                    let band = Band::from_index(j / bins).expect("ten bands").name();
                    writeln!(w, "{id},{lab},{band},{},{v}", j % bins)?;
                } else {
                    writeln!(w, "{id},{lab},{j},{v}")?;
                }
            }
        }
        Ok(())
    })?;
    let len = kept
        .first()
        .map(|&i| prepared.features[i].as_ref().expect("kept").len())
        .unwrap_or(0);
    let data: Vec<f32> = kept
        .iter()
        .flat_map(|&i| prepared.features[i].clone().expect("kept"))
        .collect();
    let meta = json!({
        "feature": exp.feature.name(),
        "composite": exp.composite,
        "ids": kept.iter().map(|&i| ds.samples[i].id.clone()).collect::<Vec<_>>(),
        "labels": kept.iter().map(|&i| label(i)).collect::<Vec<_>>(),
        "rejected": rejected,
    });
    out.write("features.bin", |w| {
        Ok(write_bundle(
            w,
            "feature-matrix",
            meta,
            &[Tensor::new("features", vec![kept.len(), len], data)],
        )?)
    })?;
    out.finish(
        "featurize",
        json!({ "samples": kept.len(), "rejected": rejected.len(), "length": len }),
    )
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = cfg.load(Which::Source)?;
    let prepared = Prepared::new(&ds, &cfg.experiment)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut out = Outputs::open(cfg)?;
    for &seed in &cfg.seeds {
        let (model, history, n) = fit_source(&prepared, &all, &cfg.experiment, seed)?;
        log::info!("seed {seed}: trained on {n} samples");
        save_checkpoint(&model, &out.path(&format!("checkpoint_{seed}.bin")))?;
        out.write(&format!("history_{seed}.csv"), |w| {
            writeln!(w, "epoch,loss,accuracy")?;
            for h in &history {
                writeln!(w, "{},{:.6},{:.6}", h.epoch, h.loss, h.accuracy)?;
            }
            Ok(())
        })?;
    }
    out.finish("train", json!({ "params": network_params(cfg, &prepared) }))
}

fn network_params(cfg: &RunConfig, prepared: &Prepared) -> usize {
    let hyper = prepared
        .features
        .iter()
        .flatten()
        .map(Vec::len)
        .next()
        .unwrap_or(DEFAULT_HYPER_LEN);
    let e = &cfg.experiment;
    network_config(
        e.feature,
        &e.composite,
        hyper,
        e.widths,
        e.dropout,
        prepared.dataset.schema.len(),
    )
    .param_count()
}

/// Evaluation set for commands that score a trained model.
fn scoring_set(cfg: &RunConfig) -> Result<Dataset, CliError> {
    if cfg.target.is_some() {
        cfg.load(Which::Target)
    } else {
        cfg.load(Which::Source)
    }
}

fn checkpoint(cfg: &RunConfig) -> Result<Option<CropNet<f32>>, CliError> {
    cfg.checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()
        .map_err(CliError::from)
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(model) = checkpoint(cfg)? else {
        let ds = cfg.load(Which::Source)?;
        let report = run_in_region(&ds, &cfg.experiment, cfg.train_fraction, &cfg.seeds)?;
        let mut out = Outputs::open(cfg)?;
        write_report(&mut out, &report)?;
        return out.finish("eval", report_summary(&report));
    };
    let ds = scoring_set(cfg)?;
    let exp = &cfg.experiment;
    let prepared = Prepared::new(&ds, exp)?;
    let kept: Vec<usize> = (0..ds.len())
        .filter(|&i| prepared.features[i].is_some())
        .collect();
    if kept.is_empty() {
        return Err(CliError::Runtime {
            kind: "validation",
            message: "every evaluation sample was rejected".into(),
        });
    }
    let feats: Vec<Vec<f32>> = kept
        .iter()
        .map(|&i| prepared.features[i].clone().expect("kept"))
        .collect();
    let preds = predict_batched(&model, &feats, 256)?.argmax_rows();
    let truth: Vec<usize> = kept.iter().map(|&i| ds.samples[i].label).collect();
    let source_schema = cfg.schema()?;
    let aligned = align_evaluation(&truth, &preds, &source_schema, &ds.schema, &exp.rule)?;
    let cm = ConfusionMatrix::from_labels(&aligned.truth, &aligned.pred, ds.schema.len())?;
    let m = metrics(&cm)?;
    let rejected = ds.len() - kept.len();
    let oa = if exp.strict {
        100.0 * cm.trace() as f64 / (cm.total() + rejected as u64) as f64
    } else {
        m.oa
    };
    let mut out = Outputs::open(cfg)?;
    let scores = json!({
        "checkpoint": cfg.checkpoint.as_ref().map(|p| p.display().to_string()),
        "region": ds.region,
        "feature": exp.feature.name(),
        "strict": exp.strict,
        "oa": oa,
        "mf1": m.mf1,
        "f1": m.f1,
        "evaluated": aligned.truth.len(),
        "rejected": rejected,
        "excluded": aligned.excluded,
        "classes": ds.schema.classes(),
        "confusion": cm.rows(),
    });
    let text = serde_json::to_string_pretty(&scores)?;
    out.write("scores.json", |w| Ok(w.write_all(text.as_bytes())?))?;
    out.write("confusion.csv", |w| {
        Ok(cm.write_csv(ds.schema.classes(), w)?)
    })?;
    out.write("predictions.csv", |w| {
        writeln!(w, "id,truth,prediction")?;
        for (&i, &p) in kept.iter().zip(&preds) {
            let s = &ds.samples[i];
            let name = source_schema.name(p).unwrap_or("?");
            writeln!(
                w,
                "{},{},{name}",
                s.id,
                ds.schema.name(s.label).unwrap_or("?")
            )?;
        }
        Ok(())
    })?;
    out.finish("eval", json!({ "oa": oa, "mf1": m.mf1 }))
}

pub fn transfer(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.load(Which::Source)?;
    let target = cfg.load(Which::Target)?;
    let report = run_transfer(&source, &target, &cfg.experiment, &cfg.seeds)?;
    let mut out = Outputs::open(cfg)?;
    write_report(&mut out, &report)?;
    out.finish("transfer", report_summary(&report))
}

pub fn sensitivity(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.load(Which::Source)?;
    let target = cfg.load(Which::Target)?;
    let grid = &cfg.sensitivity;
    let rows = run_sensitivity(
        &source,
        &target,
        &cfg.experiment,
        &grid.windows,
        &grid.spans,
        &cfg.seeds,
    )?;
    let mut out = Outputs::open(cfg)?;
    out.write("sensitivity.csv", |w| Ok(write_sensitivity_csv(&rows, w)?))?;
    let text = serde_json::to_string_pretty(&rows)?;
    out.write("report.json", |w| Ok(w.write_all(text.as_bytes())?))?;
    out.finish("sensitivity", json!({ "cells": rows.len() }))
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.load(Which::Source)?;
    let target = cfg.load(Which::Target)?;
    let reports = run_ablation(&source, &target, &cfg.experiment, &cfg.ablation, &cfg.seeds)?;
    let mut out = Outputs::open(cfg)?;
    let text = serde_json::to_string_pretty(&reports)?;
    out.write("report.json", |w| Ok(w.write_all(text.as_bytes())?))?;
    let refs: Vec<&EvaluationReport> = reports.iter().collect();
    out.write("summary.csv", |w| {
        Ok(EvaluationReport::write_summary_csv(&refs, w)?)
    })?;
    let ladder: Vec<_> = reports
        .iter()
        .map(|r| json!({ "experiment": r.experiment, "oa_mean": r.oa_mean }))
        .collect();
    out.finish("ablate", json!({ "ladder": ladder }))
}

pub fn cam(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.experiment.feature != FeatureKind::Median2d {
        return Err(CliError::Config(
            "cam needs experiment.feature = \"median2d\"".into(),
        ));
    }
    let model = match checkpoint(cfg)? {
        Some(m) => m,
        None => {
            let ds = cfg.load(Which::Source)?;
            let prepared = Prepared::new(&ds, &cfg.experiment)?;
            let all: Vec<usize> = (0..ds.len()).collect();
            fit_source(&prepared, &all, &cfg.experiment, cfg.seeds[0])?.0
        }
    };
    let ds = scoring_set(cfg)?;
    let schema = cfg.schema()?;
    let wanted: Vec<usize> = if cfg.cam.classes.is_empty() {
        (0..schema.len()).collect()
    } else {
        cfg.cam
            .classes
            .iter()
            .map(|n| {
                schema
                    .index_of(n)
                    .ok_or_else(|| CliError::Config(format!("cam class `{n}` not in schema")))
            })
            .collect::<Result<_, _>>()?
    };
    let composite = &cfg.experiment.composite;
    let mut out = Outputs::open(cfg)?;
    let mut dominant = serde_json::Map::new();
    for class in wanted {
        let name = schema.name(class).expect("index from schema");
        let mut maps = Vec::new();
        for s in ds
            .samples
            .iter()
            .filter(|s| ds.schema.name(s.label) == Some(name))
        {
            if cfg.cam.max_samples.is_some_and(|m| maps.len() >= m) {
                break;
            }
            let Ok(f) = compose_median(&s.series, composite) else {
                continue;
            };
            let f2 = reshape_2d(f);
            let x: Vec<f32> = f2.as_slice().iter().map(|v| *v as f32).collect();
            let pred = predict_batched(&model, &[x], 1)?.argmax_rows()[0];
            if pred == class {
                maps.push(model.grad_cam(&f2, class)?);
            }
        }
        if maps.is_empty() {
            log::warn!("no correctly classified `{name}` samples; no map written");
            continue;
        }
        let mean = ImportanceMap::mean(&maps)?;
        let band = Band::from_index(mean.dominant_row())
            .expect("ten bands")
            .name();
        dominant.insert(
            name.to_string(),
            json!({ "dominant_band": band, "samples": maps.len() }),
        );
        out.write(&format!("cam_{name}.csv"), |w| Ok(mean.write_csv(w)?))?;
    }
    out.finish("cam", json!({ "classes": dominant }))
}

pub fn params(cfg: &RunConfig) -> Result<(), CliError> {
    let e = &cfg.experiment;
    let n = cfg.schema()?.len();
    let net = network_config(
        e.feature,
        &e.composite,
        DEFAULT_HYPER_LEN,
        e.widths,
        e.dropout,
        n,
    );
    net.validate()?;
    println!("{}", net.param_count());
    Ok(())
}

pub fn validate(cfg: &RunConfig, path: Option<&Path>) -> Result<(), CliError> {
    let schema = cfg.schema()?;
    let (ds, invalid) = match path {
        Some(p) => {
            let loaded = load_dataset(p, &schema)?;
            (
                loaded.dataset,
                loaded.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            )
        }
        None => (cfg.load(Which::Source)?, Vec::new()),
    };
    let counts: serde_json::Map<String, serde_json::Value> = ds
        .schema
        .classes()
        .iter()
        .zip(ds.class_counts())
        .map(|(c, n)| (c.clone(), json!(n)))
        .collect();
    let composite_rejections = ds
        .samples
        .iter()
        .filter(|s| compose_median(&s.series, &cfg.experiment.composite).is_err())
        .count();
    let summary = json!({
        "samples": ds.len(),
        "classes": ds.schema.len(),
        "class_counts": counts,
        "invalid_lines": invalid,
        "composite_rejections": composite_rejections,
    });
    println!("{summary}");
    if invalid.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime {
            kind: "validation",
            message: format!("{} invalid lines", invalid.len()),
        })
    }
}
