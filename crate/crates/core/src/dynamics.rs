//! Forward-Euler Cucker-Smale integrator driven by a switching schedule.
//!
//! Both updates read the state at time `t`:
//! `x_i[t+1] = x_i[t] + h v_i[t]` and
//! `v_i[t+1] = v_i[t] + (h/N) sum_j chi_ij phi(|x_j[t] - x_i[t]|) (v_j[t] - v_i[t])`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Digraph, TopologyEnsemble};
use crate::matrix::{check_stability, update_matrix, Points, SquareMatrix};
use crate::switching::SwitchingSchedule;

/// Communication weight `phi`, bounded by `phi(0) = kappa`, nonincreasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommunicationWeight {
    Constant { kappa: f64 },
    /// `phi(r) = kappa (1 + r^2)^(-beta)`.
    PowerLaw { kappa: f64, beta: f64 },
}

impl CommunicationWeight {
    pub fn validate(&self) -> Result<()> {
        let (kappa, beta) = match *self {
            CommunicationWeight::Constant { kappa } => (kappa, 0.0),
            CommunicationWeight::PowerLaw { kappa, beta } => (kappa, beta),
        };
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be nonnegative, got {beta}")));
        }
        Ok(())
    }

    #[inline]
    pub fn phi(&self, r: f64) -> f64 {
        match *self {
            CommunicationWeight::Constant { kappa } => kappa,
            CommunicationWeight::PowerLaw { kappa, beta } => kappa * (1.0 + r * r).powf(-beta),
        }
    }

    pub fn kappa(&self) -> f64 {
        match *self {
            CommunicationWeight::Constant { kappa } | CommunicationWeight::PowerLaw { kappa, .. } => kappa,
        }
    }

    /// Exponent `eps` with `1/phi(r) = O(r^eps)`.
    pub fn tail_exponent(&self) -> f64 {
        match *self {
            CommunicationWeight::Constant { .. } => 0.0,
            CommunicationWeight::PowerLaw { beta, .. } => 2.0 * beta,
        }
    }

    /// `sup |phi'|`; for the power law it sits at `r = 1/sqrt(2 beta + 1)`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            CommunicationWeight::Constant { .. } => 0.0,
            CommunicationWeight::PowerLaw { kappa, beta } => {
                let r = (2.0 * beta + 1.0).sqrt().recip();
                2.0 * beta * kappa * r * (1.0 + r * r).powf(-beta - 1.0)
            }
        }
    }
}

/// Positions and velocities of `N` agents in `R^d` at step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub positions: Points,
    pub velocities: Points,
    #[serde(default)]
    pub t: u64,
}

impl Configuration {
    pub fn new(positions: Points, velocities: Points) -> Result<Self> {
        if positions.n() != velocities.n() || positions.d() != velocities.d() {
            return Err(Error::DimensionMismatch(format!(
                "positions are {}x{} but velocities are {}x{}",
                positions.n(),
                positions.d(),
                velocities.n(),
                velocities.d()
            )));
        }
        Ok(Configuration {
            positions,
            velocities,
            t: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.n()
    }

    pub fn dim(&self) -> usize {
        self.positions.d()
    }

    pub fn position_diameter(&self) -> f64 {
        self.positions.diameter()
    }

    pub fn velocity_diameter(&self) -> f64 {
        self.velocities.diameter()
    }
}

/// `max_{i,j} |row_i - row_j|`.
pub fn diameter(rows: &Points) -> f64 {
    rows.diameter()
}

fn check_graph(cfg: &Configuration, g: &Digraph) -> Result<()> {
    if g.n_vertices() != cfg.n_agents() {
        return Err(Error::DimensionMismatch(format!(
            "digraph has {} vertices but there are {} agents",
            g.n_vertices(),
            cfg.n_agents()
        )));
    }
    Ok(())
}

/// One step in component form.
pub fn step(cfg: &Configuration, g: &Digraph, h: f64, w: &CommunicationWeight) -> Result<Configuration> {
    check_stability(h, w.kappa())?;
    check_graph(cfg, g)?;
    let n = cfg.n_agents();
    let d = cfg.dim();
    let x = &cfg.positions;
    let v = &cfg.velocities;
    let scale = h / n as f64;

    let mut new_x = x.clone();
    new_x.add_scaled(h, v);

    let mut new_v = v.clone();
    let mut acc = vec![0.0; d];
    for i in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..n {
            if j == i || !g.chi(i, j) {
                continue;
            }
            let weight = w.phi(x.distance(j, i));
            for ((a, vj), vi) in acc.iter_mut().zip(v.row(j)).zip(v.row(i)) {
                *a += weight * (vj - vi);
            }
        }
        for (nv, a) in new_v.row_mut(i).iter_mut().zip(&acc) {
            *nv += scale * a;
        }
    }
    Ok(Configuration {
        positions: new_x,
        velocities: new_v,
        t: cfg.t + 1,
    })
}

/// One step in matrix form, `V[t+1] = M V[t]`; also returns `M`.
pub fn step_matrix(
    cfg: &Configuration,
    g: &Digraph,
    h: f64,
    w: &CommunicationWeight,
) -> Result<(Configuration, SquareMatrix)> {
    check_graph(cfg, g)?;
    let m = update_matrix(&cfg.positions, g, h, w)?;
    let new_v = m.apply(&cfg.velocities)?;
    let mut new_x = cfg.positions.clone();
    new_x.add_scaled(h, &cfg.velocities);
    Ok((
        Configuration {
            positions: new_x,
            velocities: new_v,
            t: cfg.t + 1,
        },
        m,
    ))
}

/// Early-termination rules. Flocking is declared once
/// `D(V) <= v_tol_rel * D(V^0)`; divergence once `D(X) >= x_cap_rel * (D(X^0) + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    pub v_tol_rel: f64,
    pub x_cap_rel: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            v_tol_rel: 1e-8,
            x_cap_rel: 1e6,
        }
    }
}

impl StopCriteria {
    /// Never stops early on flocking; still guards divergence.
    pub fn full_horizon() -> Self {
        StopCriteria {
            v_tol_rel: -1.0,
            ..StopCriteria::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Flocked,
    Diverged,
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub dx: f64,
    pub dv: f64,
    /// 0-indexed topology applied on `[t, t+1)`; `None` on the final row.
    pub sigma: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub positions: Points,
    pub velocities: Points,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Full-state snapshot every this many steps; 0 disables.
    pub snapshot_stride: u64,
    /// Also run the component form and record the largest disagreement.
    pub cross_check: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            snapshot_stride: 100,
            cross_check: false,
        }
    }
}

/// What an observer sees after each step.
pub struct StepContext<'a> {
    pub t: u64,
    pub sigma: usize,
    pub update: &'a SquareMatrix,
    pub before: &'a Configuration,
    pub after: &'a Configuration,
}

pub trait StepObserver {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

impl StepObserver for () {
    fn on_step(&mut self, _: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&StepContext<'_>) -> Result<()>> StepObserver for F {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        self(ctx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
    pub steps_to_tolerance: Option<u64>,
    pub dx0: f64,
    pub dv0: f64,
    pub max_dx: f64,
    pub final_state: Configuration,
    /// Largest `|V_matrix - V_component|` when cross-checking.
    pub max_form_discrepancy: Option<f64>,
}

impl Trajectory {
    pub fn final_dv(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.dv)
    }

    pub fn final_dx(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.dx)
    }

    pub fn flocked(&self) -> bool {
        self.stop == StopReason::Flocked
    }

    /// Steps where `D(V)` grew, or `D(X)` grew faster than `h D(V)`, beyond `tol`.
    pub fn monotonicity_violations(&self, h: f64, tol: f64) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[1].dv > w[0].dv + tol || w[1].dx > w[0].dx + h * w[0].dv + tol)
            .count()
    }

    /// `t,DX,DV,sigma` with 17 significant digits and 1-indexed `sigma`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,DX,DV,sigma")?;
        for r in &self.records {
            let sigma = r.sigma.map(|k| (k + 1).to_string()).unwrap_or_default();
            writeln!(out, "{},{:.16e},{:.16e},{}", r.t, r.dx, r.dv, sigma)?;
        }
        Ok(())
    }
}

/// Iterates the dynamics for `t = 0..horizon` with the topology
/// `topology_at(sched, t)`, recording diameters every step and stopping early
/// on flocking or divergence.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    init: &Configuration,
    ens: &TopologyEnsemble,
    sched: &SwitchingSchedule,
    h: f64,
    w: &CommunicationWeight,
    horizon: u64,
    stop: StopCriteria,
    opts: SimOptions,
    observer: &mut dyn StepObserver,
) -> Result<Trajectory> {
    check_stability(h, w.kappa())?;
    if ens.n_vertices() != init.n_agents() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble graphs have {} vertices but there are {} agents",
            ens.n_vertices(),
            init.n_agents()
        )));
    }
    if sched.last_instant() < horizon {
        return Err(Error::InsufficientSchedule {
            needed: horizon as usize,
            available: sched.last_instant() as usize,
        });
    }

    let mut cfg = init.clone();
    cfg.t = 0;
    let dx0 = cfg.position_diameter();
    let dv0 = cfg.velocity_diameter();
    let v_tol = stop.v_tol_rel * dv0;
    let x_cap = stop.x_cap_rel * (dx0 + 1.0);

    let mut records = Vec::with_capacity(horizon.min(1 << 20) as usize + 1);
    let mut snapshots = Vec::new();
    let mut max_dx = dx0;
    let mut discrepancy = opts.cross_check.then_some(0.0_f64);
    let (mut dx, mut dv) = (dx0, dv0);

    let reason = loop {
        let t = cfg.t;
        if opts.snapshot_stride > 0 && t % opts.snapshot_stride == 0 {
            snapshots.push(Snapshot {
                t,
                positions: cfg.positions.clone(),
                velocities: cfg.velocities.clone(),
            });
        }
        let verdict = if dv <= v_tol {
            Some(StopReason::Flocked)
        } else if dx >= x_cap {
            Some(StopReason::Diverged)
        } else if t >= horizon {
            Some(StopReason::Horizon)
        } else {
            None
        };
        if let Some(reason) = verdict {
            records.push(StepRecord { t, dx, dv, sigma: None });
            break reason;
        }

        let sigma = sched.topology_at(t)?;
        records.push(StepRecord {
            t,
            dx,
            dv,
            sigma: Some(sigma),
        });
        let g = ens.graph(sigma);
        let (next, m) = step_matrix(&cfg, g, h, w)?;
        if let Some(worst) = discrepancy.as_mut() {
            let comp = step(&cfg, g, h, w)?;
            *worst = worst
                .max(comp.velocities.max_abs_diff(&next.velocities))
                .max(comp.positions.max_abs_diff(&next.positions));
        }
        observer.on_step(&StepContext {
            t,
            sigma,
            update: &m,
            before: &cfg,
            after: &next,
        })?;
        cfg = next;
        dx = cfg.position_diameter();
        dv = cfg.velocity_diameter();
        max_dx = max_dx.max(dx);
    };

    let steps_to_tolerance = (reason == StopReason::Flocked).then_some(cfg.t);
    Ok(Trajectory {
        records,
        snapshots,
        stop: reason,
        steps_to_tolerance,
        dx0,
        dv0,
        max_dx,
        final_state: cfg,
        max_form_discrepancy: discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::switching::DwellingProcess;

    fn cfg(x: &[Vec<f64>], v: &[Vec<f64>]) -> Configuration {
        Configuration::new(Points::from_rows(x).unwrap(), Points::from_rows(v).unwrap()).unwrap()
    }

    const ONE: CommunicationWeight = CommunicationWeight::Constant { kappa: 1.0 };

    #[test]
    fn weight_properties() {
        let w = CommunicationWeight::PowerLaw { kappa: 2.0, beta: 0.75 };
        assert_eq!(w.phi(0.0), 2.0);
        assert!(w.phi(1.0) < w.phi(0.5));
        assert_eq!(w.tail_exponent(), 1.5);
        // Lipschitz constant dominates sampled difference quotients.
        let l = w.lipschitz();
        for k in 0..1000 {
            let r = k as f64 * 0.01;
            assert!((w.phi(r + 1e-6) - w.phi(r)).abs() / 1e-6 <= l * (1.0 + 1e-6));
        }
        assert!(CommunicationWeight::Constant { kappa: 0.0 }.validate().is_err());
        assert!(CommunicationWeight::PowerLaw { kappa: 1.0, beta: -1.0 }.validate().is_err());
    }

    #[test]
    fn flocked_state_translates() {
        let c = cfg(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![5.0, -1.0]], &vec![vec![0.5, -1.0]; 3]);
        let next = step(&c, &Digraph::complete(3), 0.2, &ONE).unwrap();
        assert_eq!(next.velocities, c.velocities);
        for i in 0..3 {
            assert!((next.positions.row(i)[0] - c.positions.row(i)[0] - 0.1).abs() < 1e-15);
            assert!((next.positions.row(i)[1] - c.positions.row(i)[1] + 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn no_interaction_keeps_velocities() {
        let c = cfg(&[vec![0.0], vec![1.0]], &[vec![1.0], vec![-3.0]]);
        let next = step(&c, &Digraph::self_loops(2), 0.5, &ONE).unwrap();
        assert_eq!(next.velocities, c.velocities);
    }

    #[test]
    fn two_agent_hand_value() {
        // v1' = 1 + (0.1/2)(-1 - 1) = 0.9, v2' = -0.9.
        let c = cfg(&[vec![0.0], vec![0.0]], &[vec![1.0], vec![-1.0]]);
        let next = step(&c, &Digraph::complete(2), 0.1, &ONE).unwrap();
        assert!((next.velocities.row(0)[0] - 0.9).abs() < 1e-15);
        assert!((next.velocities.row(1)[0] + 0.9).abs() < 1e-15);
        let (mat, _) = step_matrix(&c, &Digraph::complete(2), 0.1, &ONE).unwrap();
        assert!(mat.velocities.max_abs_diff(&next.velocities) < 1e-15);
    }

    #[test]
    fn position_update_reads_old_velocity() {
        let c = cfg(&[vec![0.0], vec![0.0]], &[vec![1.0], vec![-1.0]]);
        let next = step(&c, &Digraph::complete(2), 0.1, &ONE).unwrap();
        assert_eq!(next.positions.row(0)[0], 0.1);
        assert_eq!(next.positions.row(1)[0], -0.1);
    }

    #[test]
    fn step_rejects_unstable_parameters() {
        let c = cfg(&[vec![0.0], vec![0.0]], &[vec![1.0], vec![-1.0]]);
        assert!(matches!(
            step(&c, &Digraph::complete(2), 1.0, &ONE),
            Err(Error::StabilityViolated(_))
        ));
    }

    fn pair_ensemble() -> TopologyEnsemble {
        let a = Digraph::new(3, [(0, 1)]).unwrap();
        let b = Digraph::new(3, [(1, 2)]).unwrap();
        TopologyEnsemble::uniform(vec![a, b]).unwrap()
    }

    #[test]
    fn flocked_initial_state_stops_immediately() {
        let ens = pair_ensemble();
        let sched = SwitchingSchedule::generate(&ens, &DwellingProcess::poisson(1.0), 100, 1);
        let c = cfg(&[vec![0.0], vec![1.0], vec![2.0]], &vec![vec![0.3]; 3]);
        let traj = simulate(&c, &ens, &sched, 0.1, &ONE, 100, StopCriteria::default(), SimOptions::default(), &mut ()).unwrap();
        assert_eq!(traj.stop, StopReason::Flocked);
        assert_eq!(traj.steps_to_tolerance, Some(0));
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.final_dv(), 0.0);
    }

    #[test]
    fn single_agent_is_trivial() {
        let ens = TopologyEnsemble::new(vec![Digraph::self_loops(1)], vec![1.0]).unwrap();
        let sched = SwitchingSchedule::generate(&ens, &DwellingProcess::poisson(1.0), 10, 1);
        let c = cfg(&[vec![1.0, 1.0]], &[vec![2.0, 0.0]]);
        let traj = simulate(&c, &ens, &sched, 0.1, &ONE, 10, StopCriteria::default(), SimOptions::default(), &mut ()).unwrap();
        assert!(traj.records.iter().all(|r| r.dx == 0.0 && r.dv == 0.0));
    }

    #[test]
    fn recorded_velocity_diameter_is_nonincreasing() {
        let ens = pair_ensemble();
        let sched = SwitchingSchedule::generate(&ens, &DwellingProcess::geometric(0.6), 2000, 8);
        let c = cfg(
            &[vec![0.0, 1.0], vec![2.0, -1.0], vec![4.0, 0.5]],
            &[vec![1.0, 0.0], vec![-1.0, 0.5], vec![0.2, 0.2]],
        );
        let w = CommunicationWeight::PowerLaw { kappa: 2.0, beta: 0.3 };
        let opts = SimOptions { snapshot_stride: 500, cross_check: true };
        let mut steps = 0;
        let mut count = |_: &StepContext<'_>| {
            steps += 1;
            Ok(())
        };
        let traj = simulate(&c, &ens, &sched, 0.2, &w, 2000, StopCriteria::full_horizon(), opts, &mut count).unwrap();
        assert_eq!(traj.monotonicity_violations(0.2, 1e-12), 0);
        assert_eq!(traj.records.len(), 2001);
        assert_eq!(steps, 2000);
        assert_eq!(traj.snapshots.len(), 5);
        assert!(traj.max_form_discrepancy.unwrap() <= 1e-12);
        assert_eq!(traj.stop, StopReason::Horizon);
    }

    #[test]
    fn csv_layout() {
        let ens = pair_ensemble();
        let sched = SwitchingSchedule::generate(&ens, &DwellingProcess::Deterministic { value: 0 }, 3, 1);
        let c = cfg(&[vec![0.0], vec![1.0], vec![2.0]], &[vec![1.0], vec![0.0], vec![0.0]]);
        let traj = simulate(&c, &ens, &sched, 0.1, &ONE, 2, StopCriteria::full_horizon(), SimOptions::default(), &mut ()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,DX,DV,sigma");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,2.0000000000000000e0,1.0000000000000000e0,"));
        assert!(lines[3].ends_with(','));
    }
}
