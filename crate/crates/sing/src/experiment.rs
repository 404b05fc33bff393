//! Repeated seeded trials and their error summaries.
//!
//! Trial `t` at the `i`-th sample size draws its observations from
//! [`sample_stream`]`(seed, i·trials + t)`; random graph structure always
//! comes from [`structure_stream`]`(seed)`, so every trial of a sweep shares
//! one truth graph. `generate --seed s` produces exactly the data of trial 0
//! at the first sample size.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sing_core::datasets::DatasetFamily;
use sing_core::graph::edge_errors;
use sing_core::{n_sing, sing, RngStream, SingConfig, UndirectedGraph};

use crate::io::{self, write_json, write_string};
use crate::metrics::{mean_ci_values, INTERVAL_KIND};

pub fn structure_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

pub fn sample_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed, 1).substream(index)
}

fn default_level() -> f64 {
    0.95
}

/// One experiment, loadable from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetFamily,
    /// Sample sizes to sweep.
    pub n: Vec<usize>,
    #[serde(default)]
    pub sing: SingConfig,
    pub trials: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Run the single-pass variant instead of the iterative one.
    #[serde(default)]
    pub non_iterative: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Core(#[from] sing_core::Error),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials < 1 {
            return Err(ExperimentError::Invalid("trials must be at least 1".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(ExperimentError::Invalid("n must list positive sample sizes".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(ExperimentError::Invalid("level must lie in (0, 1)".into()));
        }
        self.sing.validate()?;
        Ok(())
    }
}

/// Outcome of one trial. `error` is set when the trial failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub type1: Option<usize>,
    pub type2: Option<usize>,
    pub edges: Option<usize>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
    /// Wall-clock seconds; kept out of JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Aggregates at one sample size over the successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_type1: Option<f64>,
    pub ci_type1: Option<f64>,
    pub mean_type2: Option<f64>,
    pub ci_type2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub interval: String,
    pub level: f64,
    pub truth: crate::io::GraphJson,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<TrialRecord>,
}

/// Estimated graph for one data set under the experiment's settings.
pub fn estimate(
    data: &sing_core::SampleMatrix,
    cfg: &SingConfig,
    non_iterative: bool,
) -> sing_core::Result<(UndirectedGraph, usize)> {
    if non_iterative {
        Ok((n_sing(data, cfg)?.0, 1))
    } else {
        let rep = sing(data, cfg)?;
        Ok((rep.final_edges, rep.iterations.len()))
    }
}

fn run_trial(cfg: &ExperimentConfig, n: usize, trial: usize, index: u64) -> (TrialRecord, Option<UndirectedGraph>) {
    let start = Instant::now();
    let outcome = cfg
        .dataset
        .generate(n, &structure_stream(cfg.seed), &sample_stream(cfg.seed, index))
        .and_then(|ds| {
            let (g, iters) = estimate(&ds.samples, &cfg.sing, cfg.non_iterative)?;
            let (t1, t2) = edge_errors(&ds.spec.truth, &g)?;
            Ok((g, iters, t1, t2, ds.spec.truth))
        });
    let runtime_secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((g, iters, t1, t2, truth)) => (
            TrialRecord {
                n,
                trial,
                type1: Some(t1),
                type2: Some(t2),
                edges: Some(g.num_edges()),
                iterations: Some(iters),
                error: None,
                runtime_secs,
            },
            Some(truth),
        ),
        Err(e) => {
            log::warn!("trial {trial} at n={n} failed: {e}");
            (
                TrialRecord {
                    n,
                    trial,
                    type1: None,
                    type2: None,
                    edges: None,
                    iterations: None,
                    error: Some(e.to_string()),
                    runtime_secs,
                },
                None,
            )
        }
    }
}

/// Mean and interval of the successful records at one sample size.
pub fn summarize(n: usize, records: &[TrialRecord], level: f64) -> SummaryRow {
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n && r.error.is_none()).collect();
    let failed = records.iter().filter(|r| r.n == n && r.error.is_some()).count();
    let stats = |f: fn(&TrialRecord) -> Option<usize>| -> (Option<f64>, Option<f64>) {
        let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).map(|v| v as f64).collect();
        if vals.is_empty() {
            return (None, None);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (Some(mean), mean_ci_values(&vals, level).ok().map(|(_, h)| h))
    };
    let (mean_type1, ci_type1) = stats(|r| r.type1);
    let (mean_type2, ci_type2) = stats(|r| r.type2);
    SummaryRow { n, succeeded: ok.len(), failed, mean_type1, ci_type1, mean_type2, ci_type2 }
}

/// Runs every trial at every sample size. Individual trial failures are
/// recorded, not propagated; when `out` is given the files are rewritten
/// after each sample size so partial sweeps survive interruption.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrialSummary, ExperimentError> {
    cfg.validate()?;
    let truth_dim = cfg.dataset.dimension();
    let mut summary = TrialSummary {
        interval: INTERVAL_KIND.into(),
        level: cfg.level,
        truth: crate::io::GraphJson { d: truth_dim, edges: Vec::new() },
        rows: Vec::new(),
        records: Vec::new(),
    };
    for (ni, &n) in cfg.n.iter().enumerate() {
        let results: Vec<(TrialRecord, Option<UndirectedGraph>)> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, n, t, (ni * cfg.trials + t) as u64))
            .collect();
        for (rec, truth) in results {
            if let Some(t) = truth {
                summary.truth = crate::io::GraphJson::from(&t);
            }
            summary.records.push(rec);
        }
        summary.rows.push(summarize(n, &summary.records, cfg.level));
        if let Some(dir) = out {
            write_outputs(&summary, dir)?;
        }
    }
    Ok(summary)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `n,mean_type1,ci_type1,mean_type2,ci_type2`; empty cells where undefined.
pub fn format_summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("n,mean_type1,ci_type1,mean_type2,ci_type2\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            opt(r.mean_type1),
            opt(r.ci_type1),
            opt(r.mean_type2),
            opt(r.ci_type2)
        ));
    }
    s
}

pub fn format_trials_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from("n,trial,type1,type2,edges,iterations,error\n");
    for r in records {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            r.trial,
            opt_usize(r.type1),
            opt_usize(r.type2),
            opt_usize(r.edges),
            opt_usize(r.iterations),
            err
        ));
    }
    s
}

/// Writes `summary.csv`, `trials.csv`, `summary.json`, `truth.json` and `runtimes.csv`.
pub fn write_outputs(summary: &TrialSummary, dir: &Path) -> Result<(), ExperimentError> {
    write_string(&dir.join("summary.csv"), &format_summary_csv(&summary.rows))?;
    write_string(&dir.join("trials.csv"), &format_trials_csv(&summary.records))?;
    write_json(&dir.join("summary.json"), summary)?;
    write_json(&dir.join("truth.json"), &summary.truth)?;
    let mut rt = String::from("n,trial,seconds\n");
    for r in &summary.records {
        rt.push_str(&format!("{},{},{:.6}\n", r.n, r.trial, r.runtime_secs));
    }
    write_string(&dir.join("runtimes.csv"), &rt)?;
    Ok(())
}
