use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use apln_core::data::{
    load_dataset, synthesize_dataset, write_provenance, CorruptionSpec, MultiViewDataset,
};
use apln_core::networks::config_hash;
use apln_core::pipeline::{
    prepare_experiment, run_apln, run_baseline, Evaluation, Metrics, Phase, PhaseOutcome,
};
use apln_core::subjective_logic::{
    conflict_matrix, evidence_from_opinion, fuse_views, project_probability,
};
use apln_core::{FusionMode, Opinion};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const ALL_PHASES: [Phase; 5] = [
    Phase::UmaeF,
    Phase::UmaeV,
    Phase::UmaeJ,
    Phase::Zimp,
    Phase::Mimp,
];

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct PhaseSummary<'a> {
    phase: Phase,
    epochs: usize,
    wall_clock_seconds: f64,
    accuracy: f64,
    mean_uncertainty: f64,
    mean_conflict: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct PhaseMetrics<'a> {
    phase: Phase,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

/// Contents of `metrics.json`. Holds no timing so reruns are byte-identical.
#[derive(Serialize)]
struct RunMetrics<'a> {
    dataset: &'a str,
    config_hash: &'a str,
    train_samples: usize,
    test_samples: usize,
    train_missing_rate: f64,
    test_missing_rate: f64,
    conflict_rows: usize,
    phases: Vec<PhaseMetrics<'a>>,
}

/// Runs the configured experiment and writes every artifact under
/// `cfg.output`. Returns the output directory.
pub fn train(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let ds = cfg.load_data()?;
    let prepared = prepare_experiment(&ds, &cfg.corruption, cfg.test_fraction)?;
    let out = cfg.output.clone();
    for sub in ["checkpoints", "reports", "eval"] {
        create_dir(&out.join(sub))?;
    }
    write_json(&out.join("config.json"), cfg)?;
    write_provenance(&out.join("provenance.jsonl"), &prepared.provenance)?;
    // The output location does not change results, so it stays out of the hash.
    let hash = config_hash(&RunConfig {
        output: PathBuf::new(),
        ..cfg.clone()
    })?;

    let mut outcomes = run_apln(&prepared.train, &prepared.test, &cfg.train)?;
    if cfg.baselines {
        for phase in [Phase::Zimp, Phase::Mimp] {
            outcomes.push(run_baseline(
                &prepared.train,
                &prepared.test,
                phase,
                &cfg.train,
            )?);
        }
    }
    for outcome in &outcomes {
        write_phase(&out, outcome, &hash)?;
    }

    let metrics = RunMetrics {
        dataset: &ds.name,
        config_hash: &hash,
        train_samples: prepared.train.len(),
        test_samples: prepared.test.len(),
        train_missing_rate: prepared.train.missing_rate(),
        test_missing_rate: prepared.test.missing_rate(),
        conflict_rows: prepared.provenance.len(),
        phases: outcomes
            .iter()
            .map(|o| PhaseMetrics {
                phase: o.report.phase,
                metrics: &o.evaluation.metrics,
            })
            .collect(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(out)
}

fn write_phase(out: &Path, outcome: &PhaseOutcome, hash: &str) -> CliResult<()> {
    let name = outcome.report.phase.name();
    outcome
        .params
        .save(&out.join("checkpoints").join(format!("{name}.json")), hash)?;

    let path = out.join("reports").join(format!("{name}.jsonl"));
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for record in &outcome.report.epochs {
        let line = serde_json::to_string(record).map_err(|e| CliError::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let m = &outcome.evaluation.metrics;
    write_json(
        &out.join("reports").join(format!("{name}.summary.json")),
        &PhaseSummary {
            phase: outcome.report.phase,
            epochs: outcome.report.epochs.len(),
            wall_clock_seconds: outcome.report.wall_clock_seconds,
            accuracy: m.accuracy,
            mean_uncertainty: m.mean_uncertainty,
            mean_conflict: &m.mean_conflict,
        },
    )?;
    write_json(
        &out.join("eval").join(format!("{name}.json")),
        &outcome.evaluation,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct CorruptSummary {
    pub samples: usize,
    pub masked_entries: usize,
    pub conflict_rows: usize,
}

const DATASET_FILES: [&str; 3] = ["manifest.json", "labels.csv", "mask.csv"];

pub fn corrupt(input: &Path, spec: &CorruptionSpec, out: &Path) -> CliResult<CorruptSummary> {
    let ds = load_dataset(input)?;
    spec.validate(ds.view_count())?;
    if same_dir(input, out) {
        return Err(CliError::usage(
            "output directory must differ from the input",
        ));
    }
    let (corrupted, log) = spec.apply(&ds)?;
    create_dir(out)?;
    if log.is_empty() && spec.eta == 0.0 {
        copy_dataset(input, out, ds.view_count())?;
    } else {
        corrupted.save(out)?;
    }
    write_provenance(&out.join("provenance.jsonl"), &log)?;
    Ok(CorruptSummary {
        samples: corrupted.len(),
        masked_entries: masked_entries(&corrupted),
        conflict_rows: log.len(),
    })
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// An unchanged dataset is copied file for file.
fn copy_dataset(input: &Path, out: &Path, views: usize) -> CliResult<()> {
    let names = DATASET_FILES
        .iter()
        .map(|s| s.to_string())
        .chain((1..=views).map(|v| format!("view_{v}.csv")));
    for name in names {
        let src = input.join(&name);
        let dst = out.join(&name);
        if src.exists() {
            fs::copy(&src, &dst).map_err(|e| CliError::io(&src, e))?;
        } else if dst.exists() {
            fs::remove_file(&dst).map_err(|e| CliError::io(&dst, e))?;
        }
    }
    Ok(())
}

fn masked_entries(ds: &MultiViewDataset) -> usize {
    ds.mask.values().iter().filter(|&&m| m == 0.0).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct FuseOutput {
    pub fused: Opinion,
    pub probabilities: Vec<f64>,
    pub fused_evidence: Vec<f64>,
    pub conflict_matrix: Vec<Vec<f64>>,
}

pub fn fuse(path: &Path, mode: FusionMode) -> CliResult<FuseOutput> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let opinions: Vec<Opinion> = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let first = opinions
        .first()
        .ok_or_else(|| CliError::usage(format!("{}: no opinions given", path.display())))?;
    let k = first.classes();
    if let Some((i, w)) = opinions.iter().enumerate().find(|(_, w)| w.classes() != k) {
        return Err(CliError::domain(format!(
            "opinion {i} has {} classes but opinion 0 has {k}",
            w.classes()
        )));
    }
    for (i, w) in opinions.iter().enumerate() {
        w.validate()
            .map_err(|e| CliError::domain(format!("opinion {i}: {e}")))?;
    }
    let fused = fuse_views(&opinions, mode)?;
    let conflict = if opinions.len() == 1 {
        vec![vec![1.0]]
    } else {
        let c = conflict_matrix(&opinions)?;
        (0..c.rows()).map(|i| c.row(i).to_vec()).collect()
    };
    Ok(FuseOutput {
        probabilities: project_probability(&fused),
        fused_evidence: evidence_from_opinion(&fused)?.values().to_vec(),
        conflict_matrix: conflict,
        fused,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    Uncertainty,
    Conflict,
    Evidence,
}

/// Writes CSVs for every phase evaluated in `run`. Returns the files written.
pub fn export(run: &Path, kinds: &[ExportKind], out: &Path) -> CliResult<Vec<PathBuf>> {
    let eval_dir = run.join("eval");
    let mut phases = Vec::new();
    for phase in ALL_PHASES {
        let path = eval_dir.join(format!("{}.json", phase.name()));
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let eval: Evaluation = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            phases.push((phase, eval));
        }
    }
    if phases.is_empty() {
        return Err(CliError::data(format!(
            "no phase evaluations found under {}",
            eval_dir.display()
        )));
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (phase, eval) in &phases {
        for &kind in kinds {
            let path = out.join(format!("{}_{}.csv", kind_name(kind), phase.name()));
            write_export(&path, kind, eval)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn kind_name(kind: ExportKind) -> &'static str {
    match kind {
        ExportKind::Uncertainty => "uncertainty",
        ExportKind::Conflict => "conflict",
        ExportKind::Evidence => "evidence",
    }
}

fn write_export(path: &Path, kind: ExportKind, eval: &Evaluation) -> CliResult<()> {
    let csv_err = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    match kind {
        ExportKind::Uncertainty => {
            w.write_record(["row_id", "label", "predicted", "uncertainty"])
                .map_err(csv_err)?;
            for s in &eval.samples {
                w.write_record([
                    s.row_id.to_string(),
                    s.label.to_string(),
                    s.predicted.to_string(),
                    s.uncertainty.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        ExportKind::Conflict => {
            let v = eval.metrics.mean_conflict.len();
            w.write_record((1..=v).map(|i| format!("view_{i}")))
                .map_err(csv_err)?;
            for row in &eval.metrics.mean_conflict {
                w.write_record(row.iter().map(f64::to_string))
                    .map_err(csv_err)?;
            }
        }
        ExportKind::Evidence => {
            let k = eval.samples.first().map_or(0, |s| s.fused_evidence.len());
            let header = ["row_id".to_string(), "label".to_string()]
                .into_iter()
                .chain((0..k).map(|c| format!("e_{c}")));
            w.write_record(header).map_err(csv_err)?;
            for s in &eval.samples {
                let row = [s.row_id.to_string(), s.label.to_string()]
                    .into_iter()
                    .chain(s.fused_evidence.iter().map(f64::to_string));
                w.write_record(row).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn synth(
    samples: usize,
    views: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
    out: &Path,
) -> CliResult<MultiViewDataset> {
    let ds = synthesize_dataset(samples, views, classes, dim, separation, seed)?;
    ds.save(out)?;
    Ok(ds)
}
