//! Checks the ergodicity floor and the velocity decay envelope along one
//! simulated path. Window `r >= 1` covers steps `[t*_{(r-1)(N-1)}, t*_{r(N-1)})`.

use serde::{Deserialize, Serialize};

use super::{decay_envelope, ergodicity_floor, FrameworkParams};
use crate::dynamics::{StepContext, StepObserver};
use crate::error::{Error, Result};
use crate::graph::TopologyEnsemble;
use crate::matrix::{ergodicity_coefficient, FlowAccumulator};
use crate::switching::{floor_c_log, window_threshold, SwitchingSchedule};

/// Absolute slack for comparing measured quantities with the bounds.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub r: u64,
    pub start: u64,
    pub end: u64,
    /// Every sub-window union in this window has a spanning tree.
    pub rooted: bool,
    pub dwell_sum: u64,
    pub dwell_threshold: u64,
    /// Filled once the path reaches `end`.
    pub mu: Option<f64>,
    pub mu_bound: Option<f64>,
    pub stochastic_defect: Option<f64>,
}

impl WindowRecord {
    pub fn dwell_ok(&self) -> bool {
        self.dwell_sum < self.dwell_threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathBoundReport {
    pub windows_checked: u64,
    /// `c N log(1/(1 - h kappa)) < 1`.
    pub parameter_window_ok: bool,
    pub rooted_failures: u64,
    pub dwell_failures: u64,
    /// Position diameter exceeded the supplied `x_inf`.
    pub diameter_exceeded: bool,
    /// All a-priori hypotheses hold on every checked window.
    pub hypotheses_hold: bool,
    pub mu_violations: u64,
    pub envelope_violations: u64,
    /// Smallest `mu - bound` over windows where the floor applies.
    pub min_mu_margin: f64,
    /// Largest `D(V[t]) / (D(V^0) envelope)` over steps where the envelope applies.
    pub max_envelope_ratio: f64,
    pub max_window_defect: f64,
    pub windows: Vec<WindowRecord>,
}

/// Step observer accumulating per-window flows.
pub struct PathBoundTracker {
    params: FrameworkParams,
    windows: Vec<WindowRecord>,
    /// Window boundaries `t*_{r(N-1)}`, `r = 0, 1, ...`.
    bounds: Vec<u64>,
    fixed_x_inf: Option<f64>,
    running_max_dx: f64,
    window_max_dx: f64,
    flow: FlowAccumulator,
    current: usize,
    dv0: Option<f64>,
    envelope_cache: Vec<f64>,
    prefix_ok: Vec<bool>,
    diameter_exceeded: bool,
    mu_violations: u64,
    envelope_violations: u64,
    min_mu_margin: f64,
    max_envelope_ratio: f64,
    max_defect: f64,
    last_t: u64,
}

impl PathBoundTracker {
    /// With `x_inf = None` the running maximum of `D(X)` stands in for it,
    /// which is all each window's estimate needs.
    pub fn new(
        params: &FrameworkParams,
        sched: &SwitchingSchedule,
        ens: &TopologyEnsemble,
        horizon: u64,
        x_inf: Option<f64>,
    ) -> Result<Self> {
        let n_agents = params.n_agents;
        if n_agents < 2 || ens.n_vertices() != n_agents {
            return Err(Error::DimensionMismatch(format!(
                "tracker needs N >= 2 matching the ensemble, got N = {n_agents}, ensemble N = {}",
                ens.n_vertices()
            )));
        }
        let a = params.envelope_exponent();
        if !(a > 0.0) {
            return Err(Error::DivergentEnvelope(a));
        }
        let span = (n_agents - 1) as u64;
        let (n, c) = (params.n, params.c);
        let instants = sched.instants();
        let draws = sched.dwell_draws();

        // a_l for l = 0, 1, ... while inside the schedule.
        let mut a_seq = vec![0u64];
        let mut k = 0u64;
        loop {
            k += 1;
            let next = a_seq.last().unwrap() + n + floor_c_log(c, k);
            if next as usize >= instants.len() {
                break;
            }
            a_seq.push(next);
        }

        let mut bounds = vec![0u64];
        let mut windows = Vec::new();
        let mut r = 1u64;
        while ((r * span) as usize) < a_seq.len() {
            let lo = ((r - 1) * span) as usize;
            let hi = (r * span) as usize;
            let start = instants[a_seq[lo] as usize];
            let end = instants[a_seq[hi] as usize];
            if end > horizon {
                break;
            }
            let rooted = (lo..hi).try_fold(true, |acc, l| {
                let g = sched.union_over_switches(ens, a_seq[l] as usize, a_seq[l + 1] as usize)?;
                Ok::<bool, Error>(acc && g.has_spanning_tree())
            })?;
            let dwell_sum = draws[a_seq[lo] as usize..a_seq[hi] as usize].iter().sum();
            windows.push(WindowRecord {
                r,
                start,
                end,
                rooted,
                dwell_sum,
                dwell_threshold: window_threshold(r, n, c, params.m, n_agents),
                mu: None,
                mu_bound: None,
                stochastic_defect: None,
            });
            bounds.push(end);
            r += 1;
        }

        let mut prefix_ok = Vec::with_capacity(windows.len() + 1);
        prefix_ok.push(true);
        for w in &windows {
            let prev = *prefix_ok.last().unwrap();
            prefix_ok.push(prev && w.rooted && w.dwell_ok());
        }

        Ok(PathBoundTracker {
            params: params.clone(),
            windows,
            bounds,
            fixed_x_inf: x_inf,
            running_max_dx: 0.0,
            window_max_dx: 0.0,
            flow: FlowAccumulator::new(n_agents),
            current: 0,
            dv0: None,
            envelope_cache: Vec::new(),
            prefix_ok,
            diameter_exceeded: false,
            mu_violations: 0,
            envelope_violations: 0,
            min_mu_margin: f64::INFINITY,
            max_envelope_ratio: 0.0,
            max_defect: 0.0,
            last_t: 0,
        })
    }

    fn x_inf_now(&self, local: f64) -> f64 {
        self.fixed_x_inf.unwrap_or(local)
    }

    fn close_window(&mut self) -> Result<()> {
        let w = &mut self.windows[self.current];
        let phi = self.params.weight.phi(self.fixed_x_inf.unwrap_or(self.window_max_dx));
        let bound = ergodicity_floor(w.end - w.start, self.params.n_agents, self.params.h, self.params.kappa(), phi);
        let mu = ergodicity_coefficient(self.flow.matrix())?;
        let defect = self.flow.matrix().max_row_sum_defect().max(-self.flow.matrix().min_entry().min(0.0));
        w.mu = Some(mu);
        w.mu_bound = Some(bound);
        w.stochastic_defect = Some(defect);
        self.max_defect = self.max_defect.max(defect);
        if w.rooted && !self.diameter_exceeded {
            self.min_mu_margin = self.min_mu_margin.min(mu - bound);
            if mu < bound - BOUND_SLACK {
                self.mu_violations += 1;
            }
        }
        self.flow.reset();
        self.window_max_dx = 0.0;
        self.current += 1;
        Ok(())
    }

    /// Envelope after `r` complete windows, at the current `x_inf` stand-in.
    fn envelope(&mut self, r: usize) -> Result<f64> {
        if self.fixed_x_inf.is_some() {
            while self.envelope_cache.len() <= r {
                let phi = self.params.weight.phi(self.fixed_x_inf.unwrap());
                let e = decay_envelope(self.envelope_cache.len() as u64, &self.params, phi)?;
                self.envelope_cache.push(e);
            }
            return Ok(self.envelope_cache[r]);
        }
        let phi = self.params.weight.phi(self.x_inf_now(self.running_max_dx));
        decay_envelope(r as u64, &self.params, phi)
    }

    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let dv0 = *self.dv0.get_or_insert_with(|| ctx.before.velocity_diameter());
        let dx_before = ctx.before.position_diameter();
        self.running_max_dx = self.running_max_dx.max(dx_before);
        self.window_max_dx = self.window_max_dx.max(dx_before);
        if let Some(x) = self.fixed_x_inf {
            if dx_before > x {
                self.diameter_exceeded = true;
            }
        }
        if self.current < self.windows.len() {
            self.flow.push(ctx.update)?;
        }
        let t = ctx.t + 1;
        self.last_t = t;
        if self.current < self.windows.len() && t == self.windows[self.current].end {
            self.close_window()?;
        }

        // t lies in [t*_{r(N-1)}, t*_{(r+1)(N-1)}) with r = completed windows.
        let r = self.bounds.partition_point(|&b| b <= t) - 1;
        if r >= 1 && r < self.prefix_ok.len() && self.prefix_ok[r] && !self.diameter_exceeded {
            let dx_after = ctx.after.position_diameter();
            self.running_max_dx = self.running_max_dx.max(dx_after);
            let env = self.envelope(r)?;
            let dv = ctx.after.velocity_diameter();
            if dv0 > 0.0 {
                let ratio = dv / (dv0 * env);
                self.max_envelope_ratio = self.max_envelope_ratio.max(ratio);
                if dv > dv0 * env + BOUND_SLACK * dv0 {
                    self.envelope_violations += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> PathBoundReport {
        let checked = self.current;
        let windows: Vec<WindowRecord> = self.windows.into_iter().take(checked).collect();
        let rooted_failures = windows.iter().filter(|w| !w.rooted).count() as u64;
        let dwell_failures = windows.iter().filter(|w| !w.dwell_ok()).count() as u64;
        let parameter_window_ok =
            self.params.c * self.params.n_agents as f64 * self.params.log_inv_damping() < 1.0;
        PathBoundReport {
            windows_checked: checked as u64,
            parameter_window_ok,
            rooted_failures,
            dwell_failures,
            diameter_exceeded: self.diameter_exceeded,
            hypotheses_hold: parameter_window_ok
                && rooted_failures == 0
                && dwell_failures == 0
                && !self.diameter_exceeded,
            mu_violations: self.mu_violations,
            envelope_violations: self.envelope_violations,
            min_mu_margin: self.min_mu_margin,
            max_envelope_ratio: self.max_envelope_ratio,
            max_window_defect: self.max_defect,
            windows,
        }
    }
}

impl StepObserver for PathBoundTracker {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        self.observe(ctx)
    }
}
