use std::fs;
use std::path::Path;

use log::{info, warn};
use medmamba::analysis::{centralization, worst_case_mismatch};
use medmamba::data::{
    load_recordings, prepare_splits, read_csv, subject_split, synth_centralized, synth_multiscale, synth_noise,
    NormStats, Part, Recording, Split, SynthShape, WindowSet,
};
use medmamba::model::{MedMamba, ModelConfig};
use medmamba::numerics::Rng;
use medmamba::ssm::scan_complexity_probe;
use medmamba::training::{evaluate, train_loop, MetricsReport, MetricsSummary, TrainConfig};
use medmamba::{Error, Result};
use serde::Serialize;

use crate::args::{AnalyzeArgs, BenchArgs, EvalArgs, GradcheckArgs, SplitPart, SynthArgs, SynthKind, TrainArgs};
use crate::config::{env_seed, find_sibling, load_model_config, load_run_config, DataConfig, PendingRun};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

/// Create `dir`, refusing to reuse a non-empty one unless `force`, in which
/// case its contents are replaced.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    let non_empty = fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false);
    if non_empty {
        if !force {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to overwrite it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let shape = SynthShape {
        segments: a.segments,
        ..SynthShape::new(a.subjects, a.channels, a.len, a.seed.map_or_else(env_seed, Ok)?)
    };
    let ds = match a.kind {
        SynthKind::Centralized => synth_centralized(&shape, a.snr)?,
        SynthKind::Multiscale => synth_multiscale(&shape)?,
        SynthKind::Noise => synth_noise(&shape)?,
    };
    prepare_out_dir(&a.out, a.force)?;
    let manifest = ds.write(&a.out)?;
    println!(
        "wrote {} recordings ({} classes) to {}",
        ds.recordings.len(),
        ds.n_classes(),
        manifest.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    best_epoch: usize,
    num_params: usize,
    val: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<MetricsReport>,
}

#[derive(Serialize)]
struct MultiReport {
    runs: Vec<RunReport>,
    val: Option<MetricsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<MetricsSummary>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let pending = PendingRun::from_args(a)?;
    let recs = load_recordings(&a.manifest, None)?;
    let cfg = pending.resolve(&recs)?;
    let split = subject_split(&recs, cfg.data.fractions, cfg.data.split_seed, cfg.data.stratify)?;
    let (l, hop) = (cfg.model.window, cfg.data.hop_for(cfg.model.window));
    let prep = prepare_splits(&recs, &split, l, hop)?;
    info!(
        "windows: train {}, val {}, test {} (C={}, L={l}, K={})",
        prep.train.len(),
        prep.val.len(),
        prep.test.len(),
        cfg.model.channels,
        cfg.model.classes
    );

    prepare_out_dir(&a.out, a.force)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    write_json(&a.out.join("split.json"), &split)?;

    let multi = cfg.seeds.len() > 1;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = if multi { a.out.join(format!("seed-{seed}")) } else { a.out.clone() };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let model = MedMamba::new(cfg.model.clone(), &Rng::new(seed))?;
        let num_params = model.num_params();
        info!("seed {seed}: {num_params} parameters");
        let outcome = train_loop(model, &prep.train, &prep.val, &tc, |r| {
            log::debug!(
                "seed {seed} epoch {:>3} lr {:.2e} loss {:.4} |g| {:.3} val acc {:.4} f1 {:.4} ({:.1}s)",
                r.epoch, r.lr, r.train_loss, r.grad_norm, r.val.accuracy, r.val.f1, r.seconds
            )
        })?;
        let mut best = outcome.best;
        prep.stats.store_in(&mut best.params);
        best.save(&dir.join("best.ckpt"))?;
        write_text(&dir.join("history.csv"), &outcome.history.to_csv())?;
        let val = outcome.history.records[outcome.best_epoch - 1].val.clone();
        let test = if prep.test.is_empty() { None } else { Some(evaluate(&best, &prep.test)?) };
        let report = RunReport {
            seed,
            best_epoch: outcome.best_epoch,
            num_params,
            val,
            test,
        };
        write_json(&dir.join("report.json"), &report)?;
        println!(
            "seed {seed}: best epoch {}, val acc {:.4} f1 {:.4}{}",
            report.best_epoch,
            report.val.accuracy,
            report.val.f1,
            report
                .test
                .as_ref()
                .map(|t| format!(", test acc {:.4} f1 {:.4}", t.accuracy, t.f1))
                .unwrap_or_default()
        );
        runs.push(report);
    }
    if multi {
        let val: Vec<_> = runs.iter().map(|r| r.val.clone()).collect();
        let test: Option<Vec<_>> = runs.iter().map(|r| r.test.clone()).collect();
        let summary = MultiReport {
            val: MetricsSummary::of(&val),
            test: test.and_then(|t| MetricsSummary::of(&t)),
            runs,
        };
        write_json(&a.out.join("report.json"), &summary)?;
        if let Some(t) = summary.test.as_ref().or(summary.val.as_ref()) {
            println!(
                "{} seeds: acc {:.4} ± {:.4}, f1 {:.4} ± {:.4}",
                t.runs, t.accuracy.mean, t.accuracy.std, t.f1.mean, t.f1.std
            );
        }
    }
    Ok(())
}

fn dims(c: usize, l: usize, k: usize) -> String {
    format!("(C={c}, L={l}, K={k})")
}

fn check_compatible(model: &ModelConfig, recs: &[Recording]) -> Result<()> {
    let c = recs[0].channels();
    let l = recs.iter().map(Recording::len).min().unwrap_or(0);
    let k = recs.iter().map(|r| r.label).max().unwrap_or(0) + 1;
    if c != model.channels || l < model.window || k > model.classes {
        return Err(Error::Data(format!(
            "dataset {} does not match checkpoint {}",
            dims(c, l, k),
            dims(model.channels, model.window, model.classes)
        )));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = MedMamba::load(&a.checkpoint)?;
    let recs = load_recordings(&a.manifest, None)?;
    if recs.is_empty() {
        return Err(Error::Config("manifest lists no recordings".into()));
    }
    check_compatible(&model.config, &recs)?;

    let mut data = match find_sibling(&a.checkpoint, "config.json") {
        Some(p) => load_run_config(&p)?.data,
        None => DataConfig::default(),
    };
    data.apply(&a.data)?;
    let split: Split = match find_sibling(&a.checkpoint, "split.json") {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => subject_split(&recs, data.fractions, data.split_seed, data.stratify)?,
    };
    let (l, hop) = (model.config.window, data.hop_for(model.config.window));
    let stats = match NormStats::load_from(&model.params) {
        Some(s) => s,
        None => {
            warn!("checkpoint has no normalization buffers; fitting on the training part");
            NormStats::fit(&WindowSet::from_recordings(split.select(&recs, Part::Train), l, hop)?.windows)?
        }
    };
    let chosen: Vec<&Recording> = match a.split {
        SplitPart::All => recs.iter().collect(),
        SplitPart::Train => split.select(&recs, Part::Train),
        SplitPart::Val => split.select(&recs, Part::Val),
        SplitPart::Test => split.select(&recs, Part::Test),
    };
    let set = WindowSet::from_recordings(chosen, l, hop)?.normalized(&stats)?;
    if set.is_empty() {
        return Err(Error::Data(format!("the {:?} part has no windows", a.split).to_lowercase()));
    }
    let report = evaluate(&model, &set)?;
    let text = to_json(&report)?;
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RecordingAnalysis {
    subject: String,
    label: usize,
    channels: usize,
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sci: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dic: Option<f64>,
    /// Outgoing influence per channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    influence: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct AnalysisReport {
    recordings: Vec<RecordingAnalysis>,
    analyzed: usize,
    median_sci: Option<f64>,
    median_dic: Option<f64>,
    strides: Vec<usize>,
    worst_case_mismatch: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let mismatch = worst_case_mismatch(&a.strides)?;
    let recs: Vec<Recording> = match (&a.manifest, &a.csv) {
        (Some(m), _) => load_recordings(m, None)?,
        (None, Some(p)) => {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            vec![Recording::new(read_csv(p)?, 1.0, stem, 0)?]
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    if recs.is_empty() {
        return Err(Error::Config("manifest lists no recordings".into()));
    }
    let recordings: Vec<RecordingAnalysis> = recs
        .iter()
        .map(|r| {
            let mut row = RecordingAnalysis {
                subject: r.subject_id.clone(),
                label: r.label,
                channels: r.channels(),
                samples: r.len(),
                sci: None,
                dic: None,
                influence: None,
                note: None,
            };
            if r.channels() < 2 {
                row.note = Some("skipped: centralization needs at least 2 channels".into());
            } else {
                match centralization(&r.channels_by_time()) {
                    Ok(c) => (row.sci, row.dic, row.influence) = (Some(c.sci), Some(c.dic), Some(c.influence)),
                    Err(e) => row.note = Some(format!("skipped: {e}")),
                }
            }
            if let Some(n) = &row.note {
                warn!("{}: {n}", r.subject_id);
            }
            row
        })
        .collect();
    let report = AnalysisReport {
        analyzed: recordings.iter().filter(|r| r.sci.is_some()).count(),
        median_sci: median(recordings.iter().filter_map(|r| r.sci).collect()),
        median_dic: median(recordings.iter().filter_map(|r| r.dic).collect()),
        recordings,
        strides: a.strides.clone(),
        worst_case_mismatch: mismatch,
    };
    let text = to_json(&report)?;
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => load_model_config(p)?,
        None => ModelConfig::tiny(),
    };
    let seed = a.seed.map_or_else(env_seed, Ok)?;
    let report = medmamba::training::model_grad_check(&cfg, seed, a.tol)?;
    for e in &report.entries {
        println!(
            "{:<40} {:>6} rel {:.3e} max|Δ| {:.3e} {}",
            e.name,
            e.numel,
            e.rel_error,
            e.max_abs_diff,
            if e.passed { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} tensors, max relative error {:.3e}, tolerance {:.1e}",
        report.entries.len(),
        report.max_rel_error(),
        report.tol_rel
    );
    let failed: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let seed = a.seed.map_or_else(env_seed, Ok)?;
    let table = scan_complexity_probe(&a.lens, a.d_inner, a.d_state, a.repeats, seed)?;
    let csv = table.to_csv();
    match &a.out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    let ratios: Vec<String> = table.ratios().iter().map(|r| format!("{r:.2}")).collect();
    eprintln!(
        "log-log slope {:.3}; successive time ratios {}",
        table.log_log_slope(),
        ratios.join(", ")
    );
    Ok(())
}
