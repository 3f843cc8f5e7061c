//! Paired baseline-vs-guided runs, ablations and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deskdiff_core::guidance::sample_classifier_guided;
use deskdiff_core::rng::{derive_seed, rng_from, stream};
use deskdiff_core::{
    sample_batch_procreate, Embedder, GaussianMixture, GuidanceConfig, MetricsReport, NoiseSchedule, Origin,
    ReferenceStore, SamplerKind,
};
use serde::{Deserialize, Serialize};

use crate::config::{ReferenceSource, RunConfig, SamplerSpec};
use crate::csvio;
use crate::error::{LabError, Result};
use crate::svg;

/// Everything derived from a config before any sampling happens.
pub struct RunContext {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
    /// Original references, embedded with the guidance embedder.
    pub references: ReferenceStore,
    pub metrics_embedder: Embedder,
    /// Held-out mixture draws in the metrics embedding.
    pub real_embedded: Vec<Vec<f64>>,
    /// Original references in the metrics embedding.
    pub refs_embedded: Vec<Vec<f64>>,
}

impl RunContext {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mixture = cfg.mixture.build()?;
        let schedule = cfg.schedule.build()?;
        let embedder = Embedder::new(cfg.embedder).map_err(|e| LabError::config("embedder", e.to_string()))?;
        let metrics_embedder = Embedder::new(cfg.metrics_embedder_spec())
            .map_err(|e| LabError::config("metrics_embedder", e.to_string()))?;
        let references = match &cfg.references {
            ReferenceSource::Mixture { count } => {
                let mut rng = rng_from(derive_seed(cfg.seed, stream::REFERENCES, 0));
                let pts: Vec<Vec<f64>> = (0..*count).map(|_| mixture.sample(&mut rng)).collect();
                let mut s = ReferenceStore::new(embedder);
                s.add_batch(&pts, Origin::Original)?;
                s
            }
            ReferenceSource::Means => {
                let mut s = ReferenceStore::new(embedder);
                s.add_batch(mixture.means(), Origin::Original)?;
                s
            }
            ReferenceSource::Inline { points } => {
                let mut s = ReferenceStore::new(embedder);
                s.add_batch(points, Origin::Original)?;
                s
            }
            ReferenceSource::Csv { path } => csvio::load_store(path, embedder).map_err(|e| match e {
                LabError::Io { path, source } => {
                    LabError::config("references.path", format!("cannot read {}: {source}", path.display()))
                }
                LabError::Format { path, message } => {
                    LabError::config("references.path", format!("{}: {message}", path.display()))
                }
                LabError::Core(e) => LabError::config("references.path", e.to_string()),
                other => other,
            })?,
        };
        if cfg.guidance.is_active() && references.is_empty() && !cfg.guidance.dynamic_growth {
            return Err(LabError::config("references", "guidance is enabled but the reference set is empty"));
        }
        let mut rng = rng_from(derive_seed(cfg.seed, stream::HELD_OUT, 0));
        let held_out: Vec<Vec<f64>> = (0..cfg.metrics.held_out).map(|_| mixture.sample(&mut rng)).collect();
        let real_embedded = metrics_embedder.embed_all(&held_out)?;
        let refs_embedded = metrics_embedder.embed_all(&references.points())?;
        Ok(Self { mixture, schedule, references, metrics_embedder, real_embedded, refs_embedded })
    }

    /// Samples under `guidance`, starting from a fresh copy of the original
    /// references. Returns the samples and the final reference store.
    pub fn sample(
        &self,
        cfg: &RunConfig,
        guidance: &GuidanceConfig,
        sampler: SamplerSpec,
    ) -> Result<(Vec<Vec<f64>>, ReferenceStore)> {
        let mut refs = self.references.clone();
        let out = sample_batch_procreate(
            cfg.metrics.samples,
            &mut refs,
            guidance,
            sampler.kind,
            sampler.steps,
            &self.schedule,
            &self.mixture,
            cfg.seed,
        )?;
        Ok((out, refs))
    }

    pub fn evaluate(&self, cfg: &RunConfig, samples: &[Vec<f64>]) -> Result<MetricsReport> {
        let emb = self.metrics_embedder.embed_all(samples)?;
        Ok(MetricsReport::evaluate(&emb, &self.real_embedded, &self.refs_embedded, &cfg.metrics.metrics))
    }
}

/// Guidance settings of the unguided baseline.
pub fn baseline_guidance(g: &GuidanceConfig) -> GuidanceConfig {
    GuidanceConfig { gamma: 0.0, n_step: 0, dynamic_growth: false, ..*g }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub baseline: MetricsReport,
    pub guided: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<MetricsReport>,
}

pub struct RunOutcome {
    pub baseline_samples: Vec<Vec<f64>>,
    pub guided_samples: Vec<Vec<f64>>,
    pub classifier_samples: Option<Vec<Vec<f64>>>,
    pub final_refs: ReferenceStore,
    pub metrics: MetricsFile,
}

/// Runs baseline and guided sampling under shared seeds and evaluates both.
pub fn evaluate_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let ctx = RunContext::new(cfg)?;
    let (baseline_samples, _) = ctx.sample(cfg, &baseline_guidance(&cfg.guidance), cfg.sampler)?;
    let (guided_samples, final_refs) = ctx.sample(cfg, &cfg.guidance, cfg.sampler)?;
    let classifier_samples = match &cfg.classifier_guidance {
        Some(c) => Some(sample_classifier_guided(
            cfg.metrics.samples,
            c,
            cfg.sampler.kind,
            cfg.sampler.steps,
            &ctx.schedule,
            &ctx.mixture,
            cfg.seed,
        )?),
        None => None,
    };
    let metrics = MetricsFile {
        baseline: ctx.evaluate(cfg, &baseline_samples)?,
        guided: ctx.evaluate(cfg, &guided_samples)?,
        classifier: match &classifier_samples {
            Some(s) => Some(ctx.evaluate(cfg, s)?),
            None => None,
        },
    };
    Ok(RunOutcome { baseline_samples, guided_samples, classifier_samples, final_refs, metrics })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

pub fn metrics_json(m: &MetricsFile) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Runs the paired experiment and writes `samples.csv`, `baseline.csv`,
/// `refs.csv`, `metrics.json`, `config.json` and (for 2D runs) `scatter.svg`
/// into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let outcome = evaluate_experiment(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    csvio::write_points(&out_dir.join("samples.csv"), &outcome.guided_samples)?;
    csvio::write_points(&out_dir.join("baseline.csv"), &outcome.baseline_samples)?;
    if let Some(c) = &outcome.classifier_samples {
        csvio::write_points(&out_dir.join("classifier.csv"), c)?;
    }
    csvio::write_store(&out_dir.join("refs.csv"), &outcome.final_refs)?;
    write(&out_dir.join("metrics.json"), &metrics_json(&outcome.metrics))?;
    write(&out_dir.join("config.json"), &(cfg.to_json() + "\n"))?;
    if outcome.guided_samples.first().is_some_and(|p| p.len() == 2) {
        let originals: Vec<Vec<f64>> = outcome
            .final_refs
            .snapshot()
            .iter()
            .filter(|r| r.origin == Origin::Original)
            .map(|r| r.point.clone())
            .collect();
        let plot = svg::scatter(&originals, &outcome.baseline_samples, &outcome.guided_samples);
        write(&out_dir.join("scatter.svg"), &plot)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    NStep(Vec<usize>),
    Sampler(Vec<SamplerKind>),
    Gamma(Vec<f64>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::NStep(_) => "n_step",
            AblationAxis::Sampler(_) => "sampler",
            AblationAxis::Gamma(_) => "gamma",
        }
    }

    /// Parses an axis name with optional comma-separated values; defaults are
    /// `n_step: 0,1,3,5`, `sampler: ddim,ddpm` and `gamma: 0,<config gamma>`.
    pub fn parse(name: &str, values: Option<&str>, cfg: &RunConfig) -> Result<Self> {
        let items = |v: &str| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect::<Vec<_>>();
        let bad = |v: &str| LabError::config("axis", format!("invalid value `{v}` for axis `{name}`"));
        match name {
            "n_step" => Ok(AblationAxis::NStep(match values {
                Some(v) => items(v).iter().map(|s| s.parse().map_err(|_| bad(s))).collect::<Result<_>>()?,
                None => vec![0, 1, 3, 5],
            })),
            "sampler" => Ok(AblationAxis::Sampler(match values {
                Some(v) => items(v)
                    .iter()
                    .map(|s| match s.as_str() {
                        "ddim" => Ok(SamplerKind::Ddim),
                        "ddpm" => Ok(SamplerKind::Ddpm),
                        _ => Err(bad(s)),
                    })
                    .collect::<Result<_>>()?,
                None => vec![SamplerKind::Ddim, SamplerKind::Ddpm],
            })),
            "gamma" => Ok(AblationAxis::Gamma(match values {
                Some(v) => items(v)
                    .iter()
                    .map(|s| s.parse::<f64>().ok().filter(|g| *g >= 0.0 && g.is_finite()).ok_or_else(|| bad(s)))
                    .collect::<Result<_>>()?,
                None => vec![0.0, cfg.guidance.gamma],
            })),
            other => Err(LabError::config("axis", format!("unknown axis `{other}` (expected n_step, sampler or gamma)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub report: MetricsReport,
}

/// One guided run per axis value with everything else (including seeds) fixed.
pub fn evaluate_ablation(cfg: &RunConfig, axis: &AblationAxis) -> Result<Vec<AblationRow>> {
    let ctx = RunContext::new(cfg)?;
    let mut rows = Vec::new();
    let mut run = |value: String, g: GuidanceConfig, s: SamplerSpec| -> Result<()> {
        let (samples, _) = ctx.sample(cfg, &g, s)?;
        rows.push(AblationRow { value, report: ctx.evaluate(cfg, &samples)? });
        Ok(())
    };
    match axis {
        AblationAxis::NStep(vals) => {
            for n in vals {
                let g = if *n == 0 { baseline_guidance(&cfg.guidance) } else { GuidanceConfig { n_step: *n, ..cfg.guidance } };
                run(n.to_string(), g, cfg.sampler)?;
            }
        }
        AblationAxis::Sampler(vals) => {
            for k in vals {
                let name = match k {
                    SamplerKind::Ddim => "ddim",
                    SamplerKind::Ddpm => "ddpm",
                };
                run(name.into(), cfg.guidance, SamplerSpec { kind: *k, ..cfg.sampler })?;
            }
        }
        AblationAxis::Gamma(vals) => {
            for g in vals {
                let gc = if *g == 0.0 { baseline_guidance(&cfg.guidance) } else { GuidanceConfig { gamma: *g, ..cfg.guidance } };
                run(format!("{g}"), gc, cfg.sampler)?;
            }
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn ablation_csv(axis: &str, rows: &[AblationRow], thresholds: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> =
        ["axis", "value", "fid", "kid", "precision", "recall", "mss", "vendi"].iter().map(|s| s.to_string()).collect();
    head.extend(thresholds.iter().map(|t| format!("top1>{t}")));
    w.write_record(&head).expect("in-memory write");
    for r in rows {
        let m = &r.report;
        let mut rec = vec![
            axis.to_string(),
            r.value.clone(),
            opt(m.fid),
            opt(m.kid),
            opt(m.precision),
            opt(m.recall),
            opt(m.mss),
            opt(m.vendi),
        ];
        rec.extend(thresholds.iter().map(|t| opt(m.top1(*t))));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Runs the ablation and writes `ablation.csv` into `out_dir`.
pub fn run_ablation(cfg: &RunConfig, axis: &AblationAxis, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let rows = evaluate_ablation(cfg, axis)?;
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    write(&out_dir.join("ablation.csv"), &ablation_csv(axis.name(), &rows, &cfg.metrics.metrics.thresholds))?;
    Ok(rows)
}

pub fn read_metrics(dir: &Path) -> Result<MetricsFile> {
    let path = dir.join("metrics.json");
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format { path, message: e.to_string() })
}

/// Fixed-order rows `(metric, baseline, guided)` of a metrics file.
pub fn report_rows(m: &MetricsFile) -> Vec<(String, Option<f64>, Option<f64>)> {
    let (b, g) = (&m.baseline, &m.guided);
    let mut rows = vec![
        ("fid".to_string(), b.fid, g.fid),
        ("kid".to_string(), b.kid, g.kid),
        ("precision".to_string(), b.precision, g.precision),
        ("recall".to_string(), b.recall, g.recall),
        ("mss".to_string(), b.mss, g.mss),
        ("vendi".to_string(), b.vendi, g.vendi),
    ];
    let keys: BTreeMap<&String, ()> = b.top1_fractions.keys().chain(g.top1_fractions.keys()).map(|k| (k, ())).collect();
    for k in keys.keys() {
        rows.push((format!("top1>{k}"), b.top1_fractions.get(*k).copied(), g.top1_fractions.get(*k).copied()));
    }
    rows
}

/// Renders the baseline-vs-guided table of a run directory.
pub fn emit_report(dir: &Path) -> Result<String> {
    let m = read_metrics(dir)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    let mut out = String::new();
    writeln!(out, "{:<12} {:>14} {:>14} {:>14}", "metric", "baseline", "guided", "delta").unwrap();
    for (name, b, g) in report_rows(&m) {
        let delta = match (b, g) {
            (Some(b), Some(g)) => Some(g - b),
            _ => None,
        };
        writeln!(out, "{:<12} {:>14} {:>14} {:>14}", name, cell(b), cell(g), cell(delta)).unwrap();
    }
    for (section, rep) in [("baseline", &m.baseline), ("guided", &m.guided)] {
        for (k, v) in &rep.errors {
            writeln!(out, "{section} {k}: {v}").unwrap();
        }
    }
    Ok(out)
}
