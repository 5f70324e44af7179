//! Seeded ensembles of sample paths and empirical frequencies of the
//! window events.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{FrameworkParams, PathBoundTracker};
use crate::dynamics::{simulate, CommunicationWeight, Configuration, SimOptions, StopCriteria, StopReason};
use crate::error::{Error, Result};
use crate::graph::{TopologyEnsemble, MAX_VERTICES};
use crate::matrix::Points;
use crate::seeds::{derive_run_seed, PathRng};
use crate::switching::{a_prefix, window_threshold, DwellingProcess, SwitchingSchedule};

/// Largest spatial dimension accepted from a config.
pub const MAX_DIM: usize = 64;

/// Initial data: fixed, or drawn uniformly per run from the path's init stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Fixed {
        positions: Points,
        velocities: Points,
    },
    Uniform {
        n_agents: usize,
        dim: usize,
        /// Each position coordinate in `[lo, hi]`.
        position_box: [f64; 2],
        velocity_box: [f64; 2],
        /// Per-agent shift added to the sampled velocity.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        velocity_offsets: Option<Vec<Vec<f64>>>,
    },
}

impl InitSpec {
    pub fn n_agents(&self) -> usize {
        match self {
            InitSpec::Fixed { positions, .. } => positions.n(),
            InitSpec::Uniform { n_agents, .. } => *n_agents,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitSpec::Fixed { positions, .. } => positions.d(),
            InitSpec::Uniform { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitSpec::Fixed { positions, velocities } => {
                Configuration::new(positions.clone(), velocities.clone())?;
                Ok(())
            }
            InitSpec::Uniform {
                n_agents,
                dim,
                position_box,
                velocity_box,
                velocity_offsets,
            } => {
                if *n_agents == 0 || *dim == 0 {
                    return Err(Error::InvalidParameter("need at least one agent and one dimension".into()));
                }
                if *n_agents > MAX_VERTICES || *dim > MAX_DIM {
                    return Err(Error::InvalidParameter(format!(
                        "at most {MAX_VERTICES} agents in at most {MAX_DIM} dimensions"
                    )));
                }
                for b in [position_box, velocity_box] {
                    if !(b[0] <= b[1] && (b[1] - b[0]).is_finite()) {
                        return Err(Error::InvalidParameter(format!("sampling box [{}, {}] is invalid", b[0], b[1])));
                    }
                }
                if let Some(off) = velocity_offsets {
                    if off.len() != *n_agents || off.iter().any(|o| o.len() != *dim) {
                        return Err(Error::DimensionMismatch(format!(
                            "velocity offsets must be {n_agents}x{dim}"
                        )));
                    }
                    if off.iter().flatten().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidParameter("velocity offsets must be finite".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Initial configuration for the path with this seed.
    pub fn realize(&self, seed: u64) -> Result<Configuration> {
        match self {
            InitSpec::Fixed { positions, velocities } => Configuration::new(positions.clone(), velocities.clone()),
            InitSpec::Uniform {
                n_agents,
                dim,
                position_box,
                velocity_box,
                velocity_offsets,
            } => {
                let mut rng = PathRng::new(seed).init;
                let mut draw = |b: &[f64; 2]| -> f64 {
                    if b[0] == b[1] {
                        b[0]
                    } else {
                        rng.random_range(b[0]..=b[1])
                    }
                };
                let mut x = Points::zeros(*n_agents, *dim);
                let mut v = Points::zeros(*n_agents, *dim);
                for i in 0..*n_agents {
                    for k in 0..*dim {
                        x.row_mut(i)[k] = draw(position_box);
                    }
                    for k in 0..*dim {
                        v.row_mut(i)[k] = draw(velocity_box);
                    }
                }
                if let Some(off) = velocity_offsets {
                    for (i, o) in off.iter().enumerate() {
                        for (vk, ok) in v.row_mut(i).iter_mut().zip(o) {
                            *vk += ok;
                        }
                    }
                }
                Configuration::new(x, v)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub ensemble: TopologyEnsemble,
    pub process: DwellingProcess,
    pub weight: CommunicationWeight,
    pub h: f64,
    pub init: InitSpec,
    pub n_runs: u64,
    pub root_seed: u64,
    pub horizon: u64,
    pub stop: StopCriteria,
    /// When set, every path is also checked against the window bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<FrameworkParams>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidParameter("n_runs must be at least 1".into()));
        }
        self.weight.validate()?;
        crate::matrix::check_stability(self.h, self.weight.kappa())?;
        self.process.validate()?;
        self.init.validate()?;
        if self.init.n_agents() != self.ensemble.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "init has {} agents but the graphs have {} vertices",
                self.init.n_agents(),
                self.ensemble.n_vertices()
            )));
        }
        Ok(())
    }

    pub fn run_seed(&self, index: u64) -> u64 {
        derive_run_seed(self.root_seed, index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub index: u64,
    pub seed: u64,
    /// Reached the velocity tolerance before the horizon with bounded positions.
    pub flocked: bool,
    pub stop: Option<StopReason>,
    pub steps_to_tolerance: Option<u64>,
    pub dv0: f64,
    pub final_dx: f64,
    pub final_dv: f64,
    pub max_dx: f64,
    pub monotonicity_violations: u64,
    pub bound_violations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses_hold: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Binomial proportion with a 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `sqrt(f (1 - f) / trials)`.
    pub std_error: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(successes, trials, 1.959_963_984_540_054);
        let f = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Proportion {
            successes,
            trials,
            fraction: f,
            ci_low: lo,
            ci_high: hi,
            std_error: if trials == 0 { 0.0 } else { (f * (1.0 - f) / trials as f64).sqrt() },
        }
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub n_runs: u64,
    pub root_seed: u64,
    pub horizon: u64,
    /// Finite-horizon surrogate: tolerance reached before the horizon.
    pub flocking: Proportion,
    pub failed_runs: u64,
    pub total_monotonicity_violations: u64,
    pub total_bound_violations: u64,
    pub runs: Vec<RunOutcome>,
}

impl EnsembleResult {
    pub fn write_runs_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "run,seed,flocked,stop,steps_to_tolerance,DV0,final_DX,final_DV,max_DX,monotonicity_violations,bound_violations,error"
        )?;
        for r in &self.runs {
            let stop = match r.stop {
                Some(StopReason::Flocked) => "flocked",
                Some(StopReason::Diverged) => "diverged",
                Some(StopReason::Horizon) => "horizon",
                None => "",
            };
            writeln!(
                out,
                "{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
                r.index,
                r.seed,
                r.flocked,
                stop,
                r.steps_to_tolerance.map(|s| s.to_string()).unwrap_or_default(),
                r.dv0,
                r.final_dx,
                r.final_dv,
                r.max_dx,
                r.monotonicity_violations,
                r.bound_violations,
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            )?;
        }
        Ok(())
    }

    /// Steps-to-tolerance over the runs that flocked, sorted.
    pub fn steps_to_tolerance(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.runs.iter().filter_map(|r| r.steps_to_tolerance).collect();
        v.sort_unstable();
        v
    }
}

/// Monotonicity check tolerance for recorded diameters.
const MONOTONE_TOL: f64 = 1e-12;

/// One path of the ensemble.
pub fn run_one(spec: &EnsembleSpec, index: u64) -> RunOutcome {
    let seed = spec.run_seed(index);
    let mut out = RunOutcome {
        index,
        seed,
        flocked: false,
        stop: None,
        steps_to_tolerance: None,
        dv0: f64::NAN,
        final_dx: f64::NAN,
        final_dv: f64::NAN,
        max_dx: f64::NAN,
        monotonicity_violations: 0,
        bound_violations: 0,
        hypotheses_hold: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let init = spec.init.realize(seed)?;
        let sched = SwitchingSchedule::generate(&spec.ensemble, &spec.process, spec.horizon, seed);
        let opts = SimOptions {
            snapshot_stride: 0,
            cross_check: false,
        };
        let mut tracker = match &spec.bounds {
            Some(p) => Some(PathBoundTracker::new(p, &sched, &spec.ensemble, spec.horizon, p.x_inf)?),
            None => None,
        };
        let traj = match tracker.as_mut() {
            Some(t) => simulate(&init, &spec.ensemble, &sched, spec.h, &spec.weight, spec.horizon, spec.stop, opts, t)?,
            None => simulate(&init, &spec.ensemble, &sched, spec.h, &spec.weight, spec.horizon, spec.stop, opts, &mut ())?,
        };
        let x_cap = spec.stop.x_cap_rel * (traj.dx0 + 1.0);
        out.stop = Some(traj.stop);
        out.flocked = traj.stop == StopReason::Flocked && traj.max_dx < x_cap;
        out.steps_to_tolerance = traj.steps_to_tolerance;
        out.dv0 = traj.dv0;
        out.final_dx = traj.final_dx();
        out.final_dv = traj.final_dv();
        out.max_dx = traj.max_dx;
        out.monotonicity_violations = traj.monotonicity_violations(spec.h, MONOTONE_TOL) as u64;
        if let Some(t) = tracker {
            let report = t.finish();
            out.bound_violations = report.mu_violations + report.envelope_violations;
            out.hypotheses_hold = Some(report.hypotheses_hold);
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(j) if j > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

/// Runs all paths in parallel; results are ordered by run index and do not
/// depend on `jobs`.
pub fn run_ensemble(spec: &EnsembleSpec, jobs: Option<usize>) -> Result<EnsembleResult> {
    spec.validate()?;
    let runs: Vec<RunOutcome> =
        with_pool(jobs, || (0..spec.n_runs).into_par_iter().map(|i| run_one(spec, i)).collect())?;
    let flocked = runs.iter().filter(|r| r.flocked).count() as u64;
    Ok(EnsembleResult {
        n_runs: spec.n_runs,
        root_seed: spec.root_seed,
        horizon: spec.horizon,
        flocking: Proportion::new(flocked, spec.n_runs),
        failed_runs: runs.iter().filter(|r| r.error.is_some()).count() as u64,
        total_monotonicity_violations: runs.iter().map(|r| r.monotonicity_violations).sum(),
        total_bound_violations: runs.iter().map(|r| r.bound_violations).sum(),
        runs,
    })
}

/// Whether some window `i <= i_max` has dwell sum `>= M (n + floor(c log i(N-1)))`.
pub fn a2_violated(draws: &[u64], a: &[u64], i_max: u64, n: u64, c: f64, m: u64, n_agents: usize) -> bool {
    let span = n_agents as u64 - 1;
    (1..=i_max).any(|i| {
        let lo = a[((i - 1) * span) as usize] as usize;
        let hi = a[(i * span) as usize] as usize;
        draws[lo..hi].iter().sum::<u64>() >= window_threshold(i, n, c, m, n_agents)
    })
}

/// Empirical frequency of the dwell-sum violation event over the first `i_max` windows.
#[allow(clippy::too_many_arguments)]
pub fn estimate_a2_violation(
    process: &DwellingProcess,
    n: u64,
    c: f64,
    m: u64,
    n_agents: usize,
    i_max: u64,
    n_samples: u64,
    root_seed: u64,
) -> Result<Proportion> {
    process.validate()?;
    if n_agents < 2 {
        return Err(Error::InvalidParameter("window sums need N >= 2".into()));
    }
    let a = a_prefix(n, c, (i_max * (n_agents as u64 - 1)) as usize + 1);
    let len = *a.last().unwrap() as usize;
    let hits = (0..n_samples)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = PathRng::new(derive_run_seed(root_seed, s)).dwell;
            let draws: Vec<u64> = (0..len as u64).map(|ell| process.sample(ell, &mut rng)).collect();
            a2_violated(&draws, &a, i_max, n, c, m, n_agents)
        })
        .count() as u64;
    Ok(Proportion::new(hits, n_samples))
}

/// Empirical frequency of "every window union `G([t*_l, t*_{l+1}))`,
/// `l < windows`, has a spanning tree".
pub fn estimate_all_windows_rooted(
    ens: &TopologyEnsemble,
    n: u64,
    c: f64,
    windows: usize,
    n_samples: u64,
    root_seed: u64,
) -> Result<Proportion> {
    let a = a_prefix(n, c, windows + 1);
    let count = *a.last().unwrap() as usize;
    // Dwell times do not affect which topologies are drawn.
    let still = DwellingProcess::Deterministic { value: 0 };
    let hits = (0..n_samples)
        .into_par_iter()
        .map(|s| -> Result<bool> {
            let sched = SwitchingSchedule::generate_switches(ens, &still, count + 1, derive_run_seed(root_seed, s));
            for w in a.windows(2) {
                if !sched.union_over_switches(ens, w[0] as usize, w[1] as usize)?.has_spanning_tree() {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count() as u64;
    Ok(Proportion::new(hits, n_samples))
}
