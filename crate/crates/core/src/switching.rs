//! Random switching: dwelling-time processes, switching schedules, and the
//! window index sequence `a_l(n, c)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{union_graph, Digraph, TopologyEnsemble};
use crate::seeds::PathRng;

/// Rates at or below this use exact inversion.
pub const POISSON_INVERSION_MAX: f64 = 30.0;

/// `floor(c * ln(x))` for `x >= 1`, the increment used by `a_l(n, c)`.
#[inline]
pub fn floor_c_log(c: f64, x: u64) -> u64 {
    debug_assert!(x >= 1);
    (c * (x as f64).ln()).floor().max(0.0) as u64
}

/// `a_l(n, c)`: `a_0 = 0`, `a_{l+1} = a_l + n + floor(c log(l + 1))`.
pub fn a_sequence(n: u64, c: f64, ell: u64) -> u64 {
    (0..ell).fold(0, |a, k| a + n + floor_c_log(c, k + 1))
}

/// `[a_0, a_1, ..., a_{len-1}]`.
pub fn a_prefix(n: u64, c: f64, len: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(len);
    let mut a = 0;
    for k in 0..len as u64 {
        out.push(a);
        a += n + floor_c_log(c, k + 1);
    }
    out
}

/// Dwell-sum threshold `M (n + floor(c log(i (N-1))))` of window `i >= 1`.
pub fn window_threshold(i: u64, n: u64, c: f64, m: u64, n_agents: usize) -> u64 {
    m * (n + floor_c_log(c, i * (n_agents as u64 - 1)))
}

/// A constant parameter or a periodic sequence of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSequence {
    Constant(f64),
    Cycle(Vec<f64>),
}

impl ParamSequence {
    pub fn at(&self, ell: u64) -> f64 {
        match self {
            ParamSequence::Constant(x) => *x,
            ParamSequence::Cycle(xs) => xs[(ell % xs.len() as u64) as usize],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            ParamSequence::Constant(x) => std::slice::from_ref(x),
            ParamSequence::Cycle(xs) => xs,
        }
    }

    pub fn sup(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Law of the dwelling times `T_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DwellingProcess {
    /// `T_l ~ Poisson(lambda_l)`.
    Poisson { lambda: ParamSequence },
    /// `P(T_l = k) = (1 - p_l)^k p_l`.
    Geometric { p: ParamSequence },
    /// `T_l = value`.
    Deterministic { value: u64 },
}

impl DwellingProcess {
    pub fn poisson(lambda: f64) -> Self {
        DwellingProcess::Poisson {
            lambda: ParamSequence::Constant(lambda),
        }
    }

    pub fn geometric(p: f64) -> Self {
        DwellingProcess::Geometric {
            p: ParamSequence::Constant(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DwellingProcess::Poisson { lambda } => {
                let vals = lambda.values();
                if vals.is_empty() || vals.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                    return Err(Error::InvalidParameter(
                        "Poisson rates must be positive with a finite supremum".into(),
                    ));
                }
            }
            DwellingProcess::Geometric { p } => {
                let vals = p.values();
                if vals.is_empty() || vals.iter().any(|&q| !(q > 0.5 && q <= 1.0)) {
                    return Err(Error::InvalidParameter(
                        "geometric success probabilities need inf p_l > 1/2 and p_l <= 1".into(),
                    ));
                }
            }
            DwellingProcess::Deterministic { .. } => {}
        }
        Ok(())
    }

    /// `sup lambda_l` for Poisson processes.
    pub fn lambda_max(&self) -> Option<f64> {
        match self {
            DwellingProcess::Poisson { lambda } => Some(lambda.sup()),
            _ => None,
        }
    }

    /// `inf p_l` for geometric processes.
    pub fn p_min(&self) -> Option<f64> {
        match self {
            DwellingProcess::Geometric { p } => Some(p.inf()),
            _ => None,
        }
    }

    /// One draw of `T_ell`.
    pub fn sample<R: Rng + ?Sized>(&self, ell: u64, rng: &mut R) -> u64 {
        match self {
            DwellingProcess::Poisson { lambda } => sample_poisson(lambda.at(ell), rng),
            DwellingProcess::Geometric { p } => sample_geometric(p.at(ell), rng),
            DwellingProcess::Deterministic { value } => *value,
        }
    }
}

/// One draw of `T_ell` from `p`.
pub fn sample_dwelling<R: Rng + ?Sized>(p: &DwellingProcess, ell: u64, rng: &mut R) -> u64 {
    p.sample(ell, rng)
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda > POISSON_INVERSION_MAX {
        let dist = rand_distr::Poisson::new(lambda).expect("validated rate");
        return dist.sample(rng) as u64;
    }
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    while u >= cdf {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        // cdf can stall a few ulps below 1; the remaining mass is negligible.
        if pmf < f64::MIN_POSITIVE && k as f64 > lambda {
            break;
        }
    }
    k
}

fn sample_geometric<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    // 1 - U lies in (0, 1].
    let u = 1.0 - rng.random::<f64>();
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k.max(0.0) as u64
    }
}

/// Realized switching instants, topology choices and dwell draws of one
/// sample path. `choices` are 0-indexed here and 1-indexed in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct SwitchingSchedule {
    instants: Vec<u64>,
    choices: Vec<usize>,
    dwell_draws: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    instants: Vec<u64>,
    choices: Vec<usize>,
    dwell_draws: Vec<u64>,
}

impl TryFrom<RawSchedule> for SwitchingSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        if raw.choices.iter().any(|&k| k == 0) {
            return Err(Error::InvalidSchedule("topology indices start at 1".into()));
        }
        let choices = raw.choices.into_iter().map(|k| k - 1).collect();
        SwitchingSchedule::from_parts(raw.instants, choices, raw.dwell_draws)
    }
}

impl From<SwitchingSchedule> for RawSchedule {
    fn from(s: SwitchingSchedule) -> Self {
        RawSchedule {
            instants: s.instants,
            choices: s.choices.into_iter().map(|k| k + 1).collect(),
            dwell_draws: s.dwell_draws,
        }
    }
}

impl SwitchingSchedule {
    /// Validates `t_0 = 0`, `t_{l+1} - t_l = 1 + T_l`, and matching lengths.
    pub fn from_parts(instants: Vec<u64>, choices: Vec<usize>, dwell_draws: Vec<u64>) -> Result<Self> {
        if instants.first() != Some(&0) {
            return Err(Error::InvalidSchedule("the first switching instant must be 0".into()));
        }
        if choices.len() != instants.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} instants but {} topology choices",
                instants.len(),
                choices.len()
            )));
        }
        if dwell_draws.len() + 1 < instants.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} instants need at least {} dwell draws, got {}",
                instants.len(),
                instants.len() - 1,
                dwell_draws.len()
            )));
        }
        for (l, w) in instants.windows(2).enumerate() {
            let ok = dwell_draws[l]
                .checked_add(1)
                .and_then(|gap| w[0].checked_add(gap))
                .is_some_and(|next| next == w[1]);
            if !ok {
                return Err(Error::InvalidSchedule(format!(
                    "t_{} - t_{} must equal 1 + T_{} = 1 + {}",
                    l + 1,
                    l,
                    l,
                    dwell_draws[l]
                )));
            }
        }
        Ok(SwitchingSchedule {
            instants,
            choices,
            dwell_draws,
        })
    }

    /// Switching instants from `t_0 = 0` up to and including the first
    /// instant `>= horizon`.
    pub fn generate(ens: &TopologyEnsemble, process: &DwellingProcess, horizon: u64, seed: u64) -> Self {
        let mut gen = ScheduleGenerator::new(ens, process, seed);
        while gen.last_instant() < horizon.max(1) {
            gen.advance();
        }
        gen.finish()
    }

    /// Exactly `count >= 1` switching instants.
    pub fn generate_switches(
        ens: &TopologyEnsemble,
        process: &DwellingProcess,
        count: usize,
        seed: u64,
    ) -> Self {
        let mut gen = ScheduleGenerator::new(ens, process, seed);
        while gen.len() < count.max(1) {
            gen.advance();
        }
        gen.finish()
    }

    pub fn instants(&self) -> &[u64] {
        &self.instants
    }

    /// 0-indexed topology chosen at each instant.
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn dwell_draws(&self) -> &[u64] {
        &self.dwell_draws
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    pub fn last_instant(&self) -> u64 {
        *self.instants.last().expect("schedules are nonempty")
    }

    /// 0-indexed topology active at step `t`, `0 <= t < last_instant`.
    pub fn topology_at(&self, t: u64) -> Result<usize> {
        let end = self.last_instant();
        if t >= end {
            return Err(Error::OutOfRange { t, end });
        }
        let ell = self.instants.partition_point(|&s| s <= t) - 1;
        Ok(self.choices[ell])
    }

    /// Sum of `T_l` over `l in [a_{(i-1)(N-1)}, a_{i(N-1)} - 1]`, window `i >= 1`.
    pub fn window_dwell_sum(&self, i: u64, n: u64, c: f64, n_agents: usize) -> Result<u64> {
        if i == 0 || n_agents < 2 {
            return Err(Error::InvalidParameter(
                "window index starts at 1 and needs at least two agents".into(),
            ));
        }
        let span = n_agents as u64 - 1;
        let lo = a_sequence(n, c, (i - 1) * span) as usize;
        let hi = a_sequence(n, c, i * span) as usize;
        if hi > self.dwell_draws.len() {
            return Err(Error::InsufficientSchedule {
                needed: hi,
                available: self.dwell_draws.len(),
            });
        }
        Ok(self.dwell_draws[lo..hi].iter().sum())
    }

    /// Largest window index `i` whose dwell draws are fully recorded.
    pub fn covered_windows(&self, n: u64, c: f64, n_agents: usize) -> u64 {
        if n_agents < 2 {
            return 0;
        }
        let span = n_agents as u64 - 1;
        let (mut a, mut k, mut i) = (0u64, 0u64, 0u64);
        loop {
            for _ in 0..span {
                k += 1;
                a += n + floor_c_log(c, k);
            }
            if a as usize > self.dwell_draws.len() {
                return i;
            }
            i += 1;
        }
    }

    /// `t*_l = t_{a_l(n, c)}` for every `a_l` inside the schedule.
    pub fn star_instants(&self, n: u64, c: f64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut a = 0u64;
        let mut k = 0u64;
        while (a as usize) < self.instants.len() {
            out.push(self.instants[a as usize]);
            k += 1;
            a += n + floor_c_log(c, k);
        }
        out
    }

    /// Union of the topologies chosen at switch indices `lo..hi`.
    pub fn union_over_switches(&self, ens: &TopologyEnsemble, lo: usize, hi: usize) -> Result<Digraph> {
        if hi > self.choices.len() {
            return Err(Error::InsufficientSchedule {
                needed: hi,
                available: self.choices.len(),
            });
        }
        union_graph(self.choices[lo..hi].iter().map(|&k| ens.graph(k)))
    }
}

/// Incremental schedule construction from a path seed.
pub struct ScheduleGenerator<'a> {
    process: &'a DwellingProcess,
    rng: PathRng,
    chooser: WeightedIndex<f64>,
    instants: Vec<u64>,
    choices: Vec<usize>,
    dwell_draws: Vec<u64>,
}

impl<'a> ScheduleGenerator<'a> {
    pub fn new(ens: &TopologyEnsemble, process: &'a DwellingProcess, seed: u64) -> Self {
        let mut rng = PathRng::new(seed);
        let chooser = WeightedIndex::new(ens.probs()).expect("validated probabilities");
        let first = chooser.sample(&mut rng.choice);
        ScheduleGenerator {
            process,
            rng,
            chooser,
            instants: vec![0],
            choices: vec![first],
            dwell_draws: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last_instant(&self) -> u64 {
        *self.instants.last().expect("starts with t_0")
    }

    /// Draws `T_l` and the next instant's topology.
    pub fn advance(&mut self) {
        let ell = self.dwell_draws.len() as u64;
        let dwell = self.process.sample(ell, &mut self.rng.dwell);
        let next = self.last_instant().saturating_add(1).saturating_add(dwell);
        self.dwell_draws.push(dwell);
        self.instants.push(next);
        self.choices.push(self.chooser.sample(&mut self.rng.choice));
    }

    pub fn finish(self) -> SwitchingSchedule {
        SwitchingSchedule {
            instants: self.instants,
            choices: self.choices,
            dwell_draws: self.dwell_draws,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_graphs() -> TopologyEnsemble {
        let a = Digraph::new(3, [(0, 1)]).unwrap();
        let b = Digraph::new(3, [(1, 2)]).unwrap();
        TopologyEnsemble::new(vec![a, b], vec![0.3, 0.7]).unwrap()
    }

    #[test]
    fn a_sequence_hand_values() {
        for &(n, c) in &[(1, 0.5), (3, 2.0), (10, 7.5)] {
            assert_eq!(a_sequence(n, c, 0), 0);
            assert_eq!(a_sequence(n, c, 1), n);
        }
        // 2 + 2 + floor(3 log 2) = 6.
        assert_eq!(a_sequence(2, 3.0, 2), 6);
        assert_eq!(a_prefix(2, 3.0, 3), vec![0, 2, 6]);
    }

    #[test]
    fn deterministic_and_degenerate_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let det = DwellingProcess::Deterministic { value: 0 };
        let geo = DwellingProcess::geometric(1.0);
        for ell in 0..100 {
            assert_eq!(sample_dwelling(&det, ell, &mut rng), 0);
            assert_eq!(sample_dwelling(&geo, ell, &mut rng), 0);
        }
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = DwellingProcess::poisson(2.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|l| p.sample(l, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of the sample mean: sqrt(lambda / n); of the sample variance:
        // sqrt((mu4 - sigma^4 (n-3)/(n-1)) / n) with mu4 = lambda + 3 lambda^2.
        let se_mean = (2.0 / n as f64).sqrt();
        let se_var = ((2.0 + 3.0 * 4.0 - 4.0) / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - 2.0).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn large_rate_poisson_uses_rejection_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DwellingProcess::poisson(100.0);
        let n = 20_000;
        let mean = (0..n).map(|l| p.sample(l, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 100.0).abs() < 4.0 * (100.0 / n as f64).sqrt());
    }

    #[test]
    fn geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DwellingProcess::geometric(0.8);
        let n = 100_000;
        let mean = (0..n).map(|l| p.sample(l, &mut rng) as f64).sum::<f64>() / n as f64;
        // mean (1-p)/p = 0.25, variance (1-p)/p^2 = 0.3125
        assert!((mean - 0.25).abs() < 3.0 * (0.3125 / n as f64).sqrt());
    }

    #[test]
    fn validation() {
        assert!(DwellingProcess::poisson(0.0).validate().is_err());
        assert!(DwellingProcess::geometric(0.5).validate().is_err());
        assert!(DwellingProcess::geometric(0.51).validate().is_ok());
        let cyc = DwellingProcess::Poisson {
            lambda: ParamSequence::Cycle(vec![0.5, 2.0]),
        };
        assert!(cyc.validate().is_ok());
        assert_eq!(cyc.lambda_max(), Some(2.0));
    }

    #[test]
    fn schedule_with_zero_dwell_switches_every_step() {
        let ens = two_graphs();
        let s = SwitchingSchedule::generate(&ens, &DwellingProcess::Deterministic { value: 0 }, 5, 9);
        assert_eq!(s.instants(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(s.choices().len(), 6);
    }

    #[test]
    fn single_topology_always_chosen() {
        let ens = TopologyEnsemble::new(vec![Digraph::complete(2)], vec![1.0]).unwrap();
        let s = SwitchingSchedule::generate(&ens, &DwellingProcess::poisson(1.0), 200, 1);
        assert!(s.choices().iter().all(|&k| k == 0));
        let raw = serde_json::to_value(&s).unwrap();
        assert!(raw["choices"].as_array().unwrap().iter().all(|k| k == 1));
    }

    #[test]
    fn schedule_is_reproducible_and_prefix_stable() {
        let ens = two_graphs();
        let p = DwellingProcess::geometric(0.7);
        let a = SwitchingSchedule::generate(&ens, &p, 500, 11);
        let b = SwitchingSchedule::generate(&ens, &p, 500, 11);
        assert_eq!(a, b);
        let longer = SwitchingSchedule::generate(&ens, &p, 5000, 11);
        assert_eq!(&longer.instants()[..a.len()], a.instants());
        assert_eq!(&longer.choices()[..a.len()], a.choices());
        assert!(a.last_instant() >= 500);
        assert!(a.instants()[a.len() - 2] < 500);
    }

    #[test]
    fn topology_at_is_piecewise_constant() {
        let ens = two_graphs();
        let s = SwitchingSchedule::generate(&ens, &DwellingProcess::poisson(3.0), 300, 2);
        for (l, w) in s.instants().windows(2).enumerate() {
            assert_eq!(s.topology_at(w[0]).unwrap(), s.choices()[l]);
            assert_eq!(s.topology_at(w[1] - 1).unwrap(), s.choices()[l]);
        }
        assert!(matches!(
            s.topology_at(s.last_instant()),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn window_dwell_sums() {
        let ens = two_graphs();
        let det0 = SwitchingSchedule::generate(&ens, &DwellingProcess::Deterministic { value: 0 }, 1000, 1);
        let det3 = SwitchingSchedule::generate(&ens, &DwellingProcess::Deterministic { value: 3 }, 4000, 1);
        let (n, c, agents) = (3, 1.5, 4);
        for i in 1..=5 {
            assert_eq!(det0.window_dwell_sum(i, n, c, agents).unwrap(), 0);
            let width = a_sequence(n, c, i * 3) - a_sequence(n, c, (i - 1) * 3);
            assert_eq!(det3.window_dwell_sum(i, n, c, agents).unwrap(), 3 * width);
        }
        let short = SwitchingSchedule::generate(&ens, &DwellingProcess::Deterministic { value: 0 }, 5, 1);
        assert!(matches!(
            short.window_dwell_sum(3, n, c, agents),
            Err(Error::InsufficientSchedule { .. })
        ));
        let covered = det0.covered_windows(n, c, agents);
        assert!(det0.window_dwell_sum(covered, n, c, agents).is_ok());
        assert!(det0.window_dwell_sum(covered + 1, n, c, agents).is_err());
    }

    #[test]
    fn star_instants_are_a_subsequence() {
        let ens = two_graphs();
        let s = SwitchingSchedule::generate(&ens, &DwellingProcess::poisson(0.5), 2000, 4);
        let star = s.star_instants(4, 2.0);
        let a = a_prefix(4, 2.0, star.len());
        for (k, t) in star.iter().enumerate() {
            assert_eq!(*t, s.instants()[a[k] as usize]);
        }
        assert!(star.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn json_rejects_broken_invariants() {
        let ok = r#"{"instants":[0,2,3],"choices":[1,2,1],"dwell_draws":[1,0]}"#;
        let s: SwitchingSchedule = serde_json::from_str(ok).unwrap();
        assert_eq!(s.choices(), &[0, 1, 0]);
        assert_eq!(serde_json::to_string(&s).unwrap(), ok);
        for bad in [
            r#"{"instants":[1,2],"choices":[1,1],"dwell_draws":[0]}"#,
            r#"{"instants":[0,2],"choices":[1,1],"dwell_draws":[0]}"#,
            r#"{"instants":[0,1],"choices":[1],"dwell_draws":[0]}"#,
            r#"{"instants":[0,1],"choices":[0,1],"dwell_draws":[0]}"#,
            r#"{"instants":[0,18446744073709551615],"choices":[1,1],"dwell_draws":[18446744073709551615]}"#,
        ] {
            assert!(serde_json::from_str::<SwitchingSchedule>(bad).is_err(), "{bad}");
        }
    }
}
