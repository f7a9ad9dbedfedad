//! Experiment suites: several named run configurations, each repeated with
//! derived seeds, aggregated into a mean energy-distance curve and a
//! last-iteration variance per method.
//!
//! ```json
//! {
//!   "repetitions": 10,
//!   "baseline_repetitions": 20,
//!   "runs": [
//!     { "name": "moka", "path": "banana.json" },
//!     { "name": "pmh", "config": { "target": "banana3", "...": "..." } }
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde::Deserialize;
use swarm_mc::config::RunConfig;
use swarm_mc::diagnostics::{iid_baseline, stats, Baseline};
use swarm_mc::rng::{derive_seed, Stream};
use swarm_mc::run::{run_chain, write_atomic, write_outputs};
use swarm_mc::{Error, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default = "one")]
    repetitions: usize,
    /// Repetitions of the i.i.d. baseline; `0` skips it.
    #[serde(default)]
    baseline_repetitions: usize,
    runs: Vec<RunEntry>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunEntry {
    name: String,
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    config: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct ExperimentSuite {
    pub runs: Vec<(String, RunConfig)>,
    pub repetitions: usize,
    pub baseline_repetitions: usize,
}

impl ExperimentSuite {
    pub fn new(runs: Vec<(String, RunConfig)>, repetitions: usize) -> Result<Self> {
        let s = Self {
            runs,
            repetitions,
            baseline_repetitions: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        if self.runs.is_empty() {
            return Err(Error::config("runs", "the suite is empty"));
        }
        let mut seen = HashSet::new();
        for (name, cfg) in &self.runs {
            if !seen.insert(name.as_str()) {
                return Err(Error::config("runs.name", format!("duplicate run name `{name}`")));
            }
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::config("runs.name", format!("`{name}` is not usable as a directory name")));
            }
            cfg.validate()?;
        }
        Ok(())
    }

    /// Loads a suite file; relative `path` entries resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SuiteFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut runs = Vec::with_capacity(file.runs.len());
        for e in file.runs {
            let cfg = match (e.path, e.config) {
                (Some(p), None) => RunConfig::load(&base.join(p))?,
                (None, Some(v)) => RunConfig::from_json(&v.to_string())?,
                _ => {
                    return Err(Error::config(
                        format!("runs.{}", e.name),
                        "give exactly one of `path` or `config`",
                    ))
                }
            };
            runs.push((e.name, cfg));
        }
        let s = Self {
            runs,
            repetitions: file.repetitions,
            baseline_repetitions: file.baseline_repetitions,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Seed of repetition `rep`; repetition 0 keeps the configured seed.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    if rep == 0 {
        seed
    } else {
        derive_seed(seed, Stream::Repetition, &[rep as u64])
    }
}

#[derive(Clone, Debug)]
pub struct MethodSummary {
    pub name: String,
    pub succeeded: usize,
    pub failed: usize,
    pub final_mean: Option<f64>,
    pub final_variance: Option<f64>,
    /// `(iteration, mean energy distance)` over the successful repetitions.
    pub curve: Vec<(u64, f64)>,
    pub baseline: Option<Baseline>,
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub name: String,
    pub rep: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub methods: Vec<MethodSummary>,
    pub failures: Vec<Failure>,
}

type RepResult = (usize, usize, std::result::Result<Vec<(u64, f64)>, String>);

/// Runs every configuration and repetition on a pool of `jobs` workers and
/// writes each run's artifacts under `out/<name>/rep_<k>/`.
pub fn run_suite(suite: &ExperimentSuite, out: &Path, jobs: usize) -> Result<SuiteReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    let tasks: Vec<(usize, usize)> = (0..suite.runs.len())
        .flat_map(|m| (0..suite.repetitions).map(move |r| (m, r)))
        .collect();

    let results: Vec<RepResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, rep)| {
                let (name, base) = &suite.runs[m];
                let mut cfg = base.clone();
                cfg.seed = repetition_seed(base.seed, rep);
                let dir = out.join(name).join(format!("rep_{rep}"));
                let res = run_chain(&cfg).and_then(|o| {
                    write_outputs(&o, &dir, false)?;
                    Ok(o.energy_series())
                });
                match &res {
                    Ok(_) => info!("{name} rep {rep} done"),
                    Err(e) => error!("{name} rep {rep} failed: {e}"),
                }
                (m, rep, res.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut baselines: HashMap<String, Baseline> = HashMap::new();
    let mut methods = Vec::new();
    let mut failures = Vec::new();
    for (m, (name, cfg)) in suite.runs.iter().enumerate() {
        let mut series = Vec::new();
        for (_, rep, r) in results.iter().filter(|r| r.0 == m) {
            match r {
                Ok(s) => series.push(s.clone()),
                Err(msg) => failures.push(Failure {
                    name: name.clone(),
                    rep: *rep,
                    message: msg.clone(),
                }),
            }
        }
        let baseline = if suite.baseline_repetitions > 0 && cfg.reference_size() > 0 {
            let key = format!("{}|{}", serde_json::to_string(&cfg.target).unwrap_or_default(), cfg.n_particles);
            match baselines.get(&key) {
                Some(b) => Some(b.clone()),
                None => {
                    let target = cfg.target.build()?;
                    let b = iid_baseline(&target, cfg.n_particles, suite.baseline_repetitions, cfg.seed)?;
                    baselines.insert(key, b.clone());
                    Some(b)
                }
            }
        } else {
            None
        };
        methods.push(summarize(name, &series, suite.repetitions - series.len(), baseline));
    }
    let report = SuiteReport { methods, failures };
    write_atomic(&out.join("summary.csv"), summary_csv(&report).as_bytes())?;
    write_atomic(&out.join("curves.csv"), curves_csv(&report).as_bytes())?;
    if !report.failures.is_empty() {
        write_atomic(&out.join("failures.csv"), failures_csv(&report).as_bytes())?;
    }
    Ok(report)
}

fn summarize(name: &str, series: &[Vec<(u64, f64)>], failed: usize, baseline: Option<Baseline>) -> MethodSummary {
    let finals: Vec<f64> = series.iter().filter_map(|s| s.last().map(|p| p.1)).collect();
    let mut by_iter: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for s in series {
        for &(t, e) in s {
            let slot = by_iter.entry(t).or_insert((0.0, 0));
            slot.0 += e;
            slot.1 += 1;
        }
    }
    MethodSummary {
        name: name.to_string(),
        succeeded: series.len(),
        failed,
        final_mean: (!finals.is_empty()).then(|| stats::mean(&finals)),
        final_variance: (!finals.is_empty()).then(|| stats::sample_variance(&finals)),
        curve: by_iter.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
        baseline,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `method,reps,failed,final_mean,final_variance,baseline_mean,baseline_q05,baseline_q95`
pub fn summary_csv(report: &SuiteReport) -> String {
    let mut s = String::from("method,reps,failed,final_mean,final_variance,baseline_mean,baseline_q05,baseline_q95\n");
    for m in &report.methods {
        let b = m.baseline.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.name,
            m.succeeded,
            m.failed,
            opt(m.final_mean),
            opt(m.final_variance),
            opt(b.map(|b| b.mean)),
            opt(b.map(|b| b.q05)),
            opt(b.map(|b| b.q95)),
        );
    }
    s
}

/// `method,iter,mean_energy_dist`
pub fn curves_csv(report: &SuiteReport) -> String {
    let mut s = String::from("method,iter,mean_energy_dist\n");
    for m in &report.methods {
        for (t, e) in &m.curve {
            let _ = writeln!(s, "{},{t},{e}", m.name);
        }
    }
    s
}

fn failures_csv(report: &SuiteReport) -> String {
    let mut s = String::from("method,rep,error\n");
    for f in &report.failures {
        let _ = writeln!(s, "{},{},\"{}\"", f.name, f.rep, f.message.replace('"', "'"));
    }
    s
}
