use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use sclair::data::{
    load_manifest, load_recordings, preprocess_all, synth_generate, DatasetManifest, PreprocessConfig, PreprocessedSample,
    SynthConfig,
};
use sclair::model::{load_checkpoint, save_checkpoint, CountForm};
use sclair::selfcheck::{run_suite, SuiteConfig};
use sclair::train::{
    confusion_csv, evaluate, export_embeddings, finetune_loso, loso_run, top_confusions, train_pipeline, EvalReport,
    FoldOutcome, History, LossMode, TrainConfig, TrainData,
};
use sclair::VERSION;

use crate::args::{EvalCmd, FinetuneCmd, GradcheckCmd, LosoCmd, ReportCmd, SynthArgs, TrainCmd};

/// Failure classes, mapped onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => {
                let mut shown = String::new();
                for cause in e.chain().map(ToString::to_string) {
                    if shown.contains(&cause) {
                        continue;
                    }
                    if !shown.is_empty() {
                        shown.push_str(": ");
                    }
                    shown.push_str(&cause);
                }
                f.write_str(&shown)
            }
            Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<sclair::Error> for Failure {
    fn from(e: sclair::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn write_text(p: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_samples(manifest: &Path) -> anyhow::Result<(DatasetManifest, Vec<PreprocessedSample<f32>>)> {
    let m = load_manifest(manifest)?;
    let recordings = load_recordings(&m)?;
    let samples = preprocess_all::<f32>(&recordings, &PreprocessConfig::default())?;
    info!("{}: {} samples from {} subjects", m.dataset_name, samples.len(), m.subjects().len());
    Ok((m, samples))
}

fn echo(config: &TrainConfig, extra: Value) -> anyhow::Result<Value> {
    let mut v = serde_json::to_value(config)?;
    let obj = v.as_object_mut().expect("config is an object");
    obj.insert("precision".into(), json!("f32"));
    if let Value::Object(extra) = extra {
        obj.extend(extra);
    }
    Ok(v)
}

fn elapsed(timing: bool, start: Instant) -> Option<f64> {
    timing.then(|| start.elapsed().as_secs_f64())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    if a.subjects < 2 {
        return Err(usage(anyhow!(
            "--subjects {} is too few: leave-one-subject-out evaluation needs at least 2 subjects",
            a.subjects
        )));
    }
    if a.reps == 0 || !(a.rate > 0.0) {
        return Err(usage(anyhow!("--reps and --rate must be positive")));
    }
    let base = SynthConfig {
        dataset_name: a.name,
        n_subjects: a.subjects,
        n_reps: a.reps,
        rate_hz: a.rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let cfg = if a.target_device {
        SynthConfig {
            rate_hz: a.rate,
            ..base.target_device()
        }
    } else {
        base
    };
    let manifest = synth_generate(&cfg, &a.out)?;
    println!("{}", a.out.join("manifest.json").display());
    info!("wrote {} recordings", manifest.entries.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    version: &'static str,
    command: &'static str,
    config: Value,
    dataset_name: String,
    n_samples: usize,
    n_train: usize,
    n_val: usize,
    param_count: usize,
    proj_params: usize,
    encoder_digest: String,
    val_accuracy: f64,
    history: History,
    wall_clock_s: Option<f64>,
}

pub fn train(a: TrainCmd) -> CmdResult {
    let start = Instant::now();
    let config = a.hyper.config(a.arch, a.loss);
    config.validate().map_err(usage)?;
    let (manifest, samples) = load_samples(&a.manifest)?;
    let data = TrainData::split(&samples, config.val_ratio, config.seed)?;
    let (mut bundle, history) = train_pipeline(&data, &config)?;
    bundle.provenance.dataset_name = manifest.dataset_name.clone();
    save_checkpoint(&bundle, &a.out)?;
    let val: Vec<_> = data.val.iter().map(|&i| samples[i].clone()).collect();
    let val_accuracy = evaluate(&bundle, &val)?.pooled_accuracy;
    let report = TrainReport {
        version: VERSION,
        command: "train",
        config: echo(&config, json!({"manifest": a.manifest, "out": a.out}))?,
        dataset_name: manifest.dataset_name,
        n_samples: samples.len(),
        n_train: data.train.len(),
        n_val: data.val.len(),
        param_count: bundle.param_count(CountForm::Inference),
        proj_params: match config.loss_mode {
            LossMode::Scl => bundle.config.projection_param_count(),
            LossMode::Ce => 0,
        },
        encoder_digest: bundle.encoder_digest(),
        val_accuracy,
        history,
        wall_clock_s: elapsed(a.hyper.timing, start),
    };
    write_json(a.report.as_deref(), &report)?;
    info!("validation accuracy {val_accuracy:.4}; checkpoint {}", a.out.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn loso(a: LosoCmd) -> CmdResult {
    let start = Instant::now();
    let config = a.hyper.config(a.arch, a.loss);
    config.validate().map_err(usage)?;
    if a.jobs == 0 {
        return Err(usage(anyhow!("--jobs must be at least 1")));
    }
    let (manifest, samples) = load_samples(&a.manifest)?;
    let mut outcome = loso_run(&samples, &config, a.jobs)?;
    outcome.report.config = echo(
        &config,
        json!({"manifest": a.manifest, "dataset_name": manifest.dataset_name, "jobs": a.jobs}),
    )?;
    outcome.report.wall_clock_s = elapsed(a.hyper.timing, start);
    write_text(&a.report, &outcome.to_json()?)?;
    let report = &outcome.report;
    let csv_path = a.confusion_csv.unwrap_or_else(|| sibling(&a.report, ".confusion.csv"));
    fs::write(&csv_path, confusion_csv(&report.confusion)).with_context(|| format!("writing {}", csv_path.display()))?;
    println!(
        "mean accuracy {:.4} (pooled {:.4}) over {} subjects",
        report.mean_accuracy,
        report.pooled_accuracy,
        report.per_subject.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct FinetuneReport<'a> {
    version: &'static str,
    command: &'static str,
    config: Value,
    encoder_digest: &'a str,
    zero_shot: &'a EvalReport,
    finetuned: &'a EvalReport,
    folds: &'a [FoldOutcome],
    wall_clock_s: Option<f64>,
}

pub fn finetune(a: FinetuneCmd) -> CmdResult {
    let start = Instant::now();
    let bundle = load_checkpoint::<f32>(&a.model)?;
    let loss_mode = bundle.provenance.loss_mode.parse().unwrap_or(LossMode::Scl);
    let mut config = a.hyper.config(a.arch.unwrap_or(bundle.config.arch.kind), loss_mode);
    config.warm_start_head = a.warm_start_head;
    config.validate().map_err(usage)?;
    if a.jobs == 0 {
        return Err(usage(anyhow!("--jobs must be at least 1")));
    }
    if config.arch != bundle.config.arch.kind {
        return Err(Failure::Runtime(anyhow!(
            "architecture mismatch: {} holds a {} encoder, --arch asks for {}",
            a.model.display(),
            bundle.config.arch.kind,
            config.arch
        )));
    }
    let (manifest, samples) = load_samples(&a.manifest)?;
    let outcome = finetune_loso(&bundle, &samples, &config, a.jobs)?;
    let config_echo = echo(
        &config,
        json!({"model": a.model, "manifest": a.manifest, "dataset_name": manifest.dataset_name, "jobs": a.jobs}),
    )?;
    let mut zero_shot = outcome.zero_shot;
    let mut finetuned = outcome.finetuned;
    zero_shot.config = config_echo.clone();
    finetuned.config = config_echo.clone();
    write_json(
        Some(&a.report),
        &FinetuneReport {
            version: VERSION,
            command: "finetune",
            config: config_echo,
            encoder_digest: &outcome.encoder_digest,
            zero_shot: &zero_shot,
            finetuned: &finetuned,
            folds: &outcome.folds,
            wall_clock_s: elapsed(a.hyper.timing, start),
        },
    )?;
    println!(
        "zero-shot mean accuracy {:.4}, fine-tuned {:.4}",
        zero_shot.mean_accuracy, finetuned.mean_accuracy
    );
    Ok(())
}

pub fn eval(a: EvalCmd) -> CmdResult {
    let bundle = load_checkpoint::<f32>(&a.model)?;
    let (manifest, samples) = load_samples(&a.manifest)?;
    let mut report = evaluate(&bundle, &samples)?;
    report.top_confusions = top_confusions(&report.confusion, a.confusions);
    report.config = json!({
        "model": a.model,
        "manifest": a.manifest,
        "dataset_name": manifest.dataset_name,
        "confusions": a.confusions,
        "embeddings": a.embeddings,
        "arch": bundle.config.arch.kind,
        "loss_mode": bundle.provenance.loss_mode,
    });
    if let Some(path) = &a.embeddings {
        let rows = export_embeddings(&bundle, &samples, path)?;
        info!("wrote {rows} embeddings to {}", path.display());
    }
    write_json(a.report.as_deref(), &report)?;
    if a.report.is_some() {
        println!("mean accuracy {:.4} (pooled {:.4})", report.mean_accuracy, report.pooled_accuracy);
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckCmd) -> CmdResult {
    if !(a.tolerance > 0.0) {
        return Err(usage(anyhow!("--tolerance must be positive")));
    }
    let suite = run_suite(&SuiteConfig {
        arch: a.arch,
        seed: a.seed,
        tolerance: a.tolerance,
        inject_fault: a.inject_fault,
    })?;
    for c in &suite.checks {
        println!(
            "{:<48} max rel err {:.3e}  {}",
            c.component,
            c.max_rel_err,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    let report = json!({
        "version": VERSION,
        "command": "gradcheck",
        "config": {"arch": a.arch, "seed": a.seed, "tolerance": a.tolerance, "precision": "f64"},
        "checks": suite.checks,
        "passed": suite.passed,
    });
    if let Some(path) = &a.report {
        write_json(Some(path), &report)?;
    }
    if !suite.passed {
        let failed: Vec<String> = suite
            .failures()
            .map(|c| format!("{} (max rel err {:.3e} > {:.0e})", c.component, c.max_rel_err, c.tolerance))
            .collect();
        return Err(Failure::Check(format!("gradient check failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn summarize_eval(label: &str, v: &Value) {
    let num = |k: &str| v[k].as_f64().unwrap_or(f64::NAN);
    println!("  {label}mean accuracy {:.4}, pooled {:.4}", num("mean_accuracy"), num("pooled_accuracy"));
    if let Some(subjects) = v["per_subject"].as_object() {
        let parts: Vec<String> = subjects
            .iter()
            .map(|(s, a)| format!("{s} {:.3}", a.as_f64().unwrap_or(f64::NAN)))
            .collect();
        println!("  {label}per subject: {}", parts.join(", "));
    }
    if let Some(pairs) = v["top_confusions"].as_array() {
        let parts: Vec<String> = pairs
            .iter()
            .map(|p| format!("{} {} ({:.2}%)", p["pair"].as_str().unwrap_or("?"), p["count"], p["percent"].as_f64().unwrap_or(0.0)))
            .collect();
        if !parts.is_empty() {
            println!("  {label}top confusions: {}", parts.join(", "));
        }
    }
}

pub fn report(a: ReportCmd) -> CmdResult {
    for path in &a.files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let command = v["command"].as_str().unwrap_or(if v.get("per_subject").is_some() { "eval" } else { "unknown" });
        println!("{} ({command})", path.display());
        match command {
            "train" => {
                println!(
                    "  {} params (+{} projection), validation accuracy {:.4}",
                    v["param_count"], v["proj_params"], v["val_accuracy"].as_f64().unwrap_or(f64::NAN)
                );
                for s in v["history"]["stages"].as_array().into_iter().flatten() {
                    println!(
                        "  {}: {} epochs, best epoch {} (val loss {:.5})",
                        s["stage"].as_str().unwrap_or("?"),
                        s["epochs"].as_array().map_or(0, Vec::len),
                        s["best_epoch"],
                        s["best_val_loss"].as_f64().unwrap_or(f64::NAN)
                    );
                }
            }
            "finetune" => {
                summarize_eval("zero-shot ", &v["zero_shot"]);
                summarize_eval("fine-tuned ", &v["finetuned"]);
            }
            "gradcheck" => {
                for c in v["checks"].as_array().into_iter().flatten() {
                    println!(
                        "  {:<48} {:.3e} {}",
                        c["component"].as_str().unwrap_or("?"),
                        c["max_rel_err"].as_f64().unwrap_or(f64::NAN),
                        if c["passed"].as_bool() == Some(true) { "ok" } else { "FAIL" }
                    );
                }
            }
            "loso" | "eval" => summarize_eval("", &v),
            _ => return Err(Failure::Runtime(anyhow!("{}: not a sclair report", path.display()))),
        }
    }
    Ok(())
}
