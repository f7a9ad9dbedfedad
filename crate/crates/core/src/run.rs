//! The run loop and its on-disk artifacts.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{log_z_and_ess, pooled_log_z, EnergyReference};
use crate::error::{Error, Result};
use crate::kernels::KernelSumPlan;
use crate::points::Points;
use crate::proposals::ProposalState;
use crate::sampler::{cmc_step, initialize_swarm, ParticleSwarm};
use crate::targets::{rejection_sample, BoxSupport, Target};

/// Diagnostics after iteration `iteration`. Step statistics (acceptance,
/// ESS, `ln Z^`, mixture weights) describe the step that produced this
/// swarm and are absent at iteration 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub iteration: u64,
    pub acceptance_rate: Option<f64>,
    pub energy_distance: Option<f64>,
    pub ess: Option<f64>,
    pub log_z: Option<f64>,
    pub mixture_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_swarm: ParticleSwarm,
    /// `(iteration, ln Z^, ESS)` for every step.
    pub z_estimates: Vec<(u64, f64, f64)>,
    /// Average of `Z^` over the last `z_tail_average` steps, when requested.
    pub pooled_log_z: Option<f64>,
    /// Swarm snapshots at the diagnostics iterations, when requested.
    pub frames: Vec<(u64, Points)>,
    pub support: BoxSupport,
}

impl RunOutput {
    pub fn final_energy_distance(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.energy_distance)
    }

    pub fn energy_series(&self) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.energy_distance.map(|e| (r.iteration, e)))
            .collect()
    }
}

/// Optional knobs that are not part of the configuration file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep swarm snapshots for SVG frames.
    pub frames: bool,
    /// Reference sample for the energy distance; drawn from the target when
    /// absent.
    pub reference: Option<EnergyReference>,
    pub plan: KernelSumPlan,
}

pub fn run_chain(config: &RunConfig) -> Result<RunOutput> {
    run_chain_with(config, &RunOptions::default())
}

pub fn run_chain_with(config: &RunConfig, options: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let target = config.target.build()?;
    let spec = config.proposal.resolve()?;
    let h = config.acceptance.function();
    let support = target.support().clone();

    let reference = match (&options.reference, config.reference_size()) {
        (Some(r), _) => Some(r.clone()),
        (None, 0) => None,
        (None, m) => Some(EnergyReference::new(rejection_sample(&target, m, config.seed)?, options.plan)),
    };
    let energy = |s: &ParticleSwarm| reference.as_ref().map(|r| r.distance(s.positions()));

    let mut swarm = initialize_swarm(config.n_particles, &support, config.seed, config.init);
    let mut state = ProposalState::new(spec, support.diameter())?.with_plan(options.plan);

    let mut records = vec![DiagnosticsRecord {
        iteration: 0,
        acceptance_rate: None,
        energy_distance: energy(&swarm),
        ess: None,
        log_z: None,
        mixture_weights: None,
    }];
    let mut frames = Vec::new();
    if options.frames {
        frames.push((0, swarm.positions().clone()));
    }
    let mut z_estimates = Vec::with_capacity(config.n_iterations as usize);

    for t in 0..config.n_iterations {
        let frozen = state.freeze(&swarm, &target)?;
        let weights = frozen.mixture_weights().filter(|w| w.len() > 1).map(<[f64]>::to_vec);
        let (next, trace) = cmc_step(&swarm, &frozen, &target, &h)?;
        state.observe(&swarm, &trace);
        if let Some(i) = next.positions().rows().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinitePosition {
                iteration: t + 1,
                particle: i,
            });
        }
        swarm = next;
        let it = t + 1;
        let (log_z, ess) = match log_z_and_ess(&trace.log_weights) {
            Ok((z, e)) => {
                z_estimates.push((it, z, e));
                (Some(z), Some(e))
            }
            Err(e) => {
                warn!("iteration {it}: {e}");
                (None, None)
            }
        };
        if it % config.diagnostics_every == 0 || it == config.n_iterations {
            let rec = DiagnosticsRecord {
                iteration: it,
                acceptance_rate: Some(trace.acceptance_rate()),
                energy_distance: energy(&swarm),
                ess,
                log_z,
                mixture_weights: weights,
            };
            info!(
                "iter {it}: acc {:.3} energy {:?}",
                trace.acceptance_rate(),
                rec.energy_distance
            );
            records.push(rec);
            if options.frames {
                frames.push((it, swarm.positions().clone()));
            }
        }
    }

    let pooled = config.z_tail_average.and_then(|k| {
        let tail: Vec<f64> = z_estimates.iter().rev().take(k).map(|z| z.1).collect();
        (!tail.is_empty()).then(|| pooled_log_z(&tail))
    });
    Ok(RunOutput {
        records,
        final_swarm: swarm,
        z_estimates,
        pooled_log_z: pooled,
        frames,
        support,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `iter,acc_rate,energy_dist,ess,log_z,w_0,...` with one column per
/// mixture weight (none for single-kernel families).
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let p = records
        .iter()
        .filter_map(|r| r.mixture_weights.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut s = String::from("iter,acc_rate,energy_dist,ess,log_z");
    for k in 0..p {
        let _ = write!(s, ",w_{k}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            r.iteration,
            opt(r.acceptance_rate),
            opt(r.energy_distance),
            opt(r.ess),
            opt(r.log_z)
        );
        for k in 0..p {
            s.push(',');
            if let Some(w) = r.mixture_weights.as_ref().and_then(|w| w.get(k)) {
                let _ = write!(s, "{w}");
            }
        }
        s.push('\n');
    }
    s
}

pub fn z_estimates_csv(z: &[(u64, f64, f64)]) -> String {
    let mut s = String::from("iter,log_z,ess\n");
    for (t, lz, ess) in z {
        let _ = writeln!(s, "{t},{lz},{ess}");
    }
    s
}

#[derive(Serialize, Deserialize)]
struct SwarmFile {
    iteration: u64,
    seed: u64,
    dim: usize,
    ids: Vec<u64>,
    positions: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_log_z: Option<f64>,
}

pub fn swarm_json(swarm: &ParticleSwarm, pooled_log_z: Option<f64>) -> String {
    let f = SwarmFile {
        iteration: swarm.iteration(),
        seed: swarm.seed(),
        dim: swarm.dim(),
        ids: swarm.ids().to_vec(),
        positions: swarm.positions().to_rows(),
        pooled_log_z,
    };
    serde_json::to_string_pretty(&f).expect("swarm serializes")
}

/// Reads a swarm written by [`write_outputs`].
pub fn read_swarm(path: &Path) -> Result<ParticleSwarm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: SwarmFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let data = f.positions.concat();
    Ok(ParticleSwarm::from_parts(Points::new(f.dim, data), f.ids, f.iteration, f.seed))
}

/// Scatter plot of the first two coordinates inside the support box.
pub fn scatter_svg(points: &Points, support: &BoxSupport, title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 10.0;
    let (ax, ay) = (0, if points.dim() > 1 { 1 } else { 0 });
    let sx = |v: f64| PAD + (v - support.lower[ax]) / (support.upper[ax] - support.lower[ax]) * SIZE;
    let sy = |v: f64| PAD + SIZE - (v - support.lower[ay]) / (support.upper[ay] - support.lower[ay]) * SIZE;
    let mut s = String::new();
    let w = SIZE + 2.0 * PAD;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#);
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#);
    let _ = writeln!(s, r##"<g fill="#1f5fa8" fill-opacity="0.5">"##);
    for r in points.rows() {
        let y = if points.dim() > 1 { r[ay] } else { 0.5 };
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, sx(r[ax]), sy(y));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Writes `diagnostics.csv`, `z_estimates.csv`, `swarm_final.json` and, with
/// `svg`, `frames/iter_<t>.svg`. Returns the written paths.
pub fn write_outputs(out: &RunOutput, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("diagnostics.csv", diagnostics_csv(&out.records))?;
    put("z_estimates.csv", z_estimates_csv(&out.z_estimates))?;
    put("swarm_final.json", swarm_json(&out.final_swarm, out.pooled_log_z))?;
    if svg {
        for (t, pts) in &out.frames {
            put(&format!("frames/iter_{t}.svg"), scatter_svg(pts, &out.support, &format!("iteration {t}")))?;
        }
    }
    Ok(written)
}
