//! Closed-form flocking conditions and bounds: parameter checks, the
//! per-window ergodicity floor, the velocity decay envelope, the spatial
//! diameter bound `x_inf`, and the probabilities `p1(n)` and `p2(n)`.

pub mod path;
pub mod series;

use std::f64::consts::{E, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::CommunicationWeight;
use crate::error::{Error, Result};
use crate::switching::DwellingProcess;

pub use path::{PathBoundReport, PathBoundTracker, WindowRecord};
pub use series::{floor_log_series, spatial_series, zeta, SeriesValue};

/// Upper end of the `smallest_valid_m` searches.
pub const M_SEARCH_CAP: u64 = 1_000_000;

/// Parameters shared by the flocking conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameworkParams {
    pub n_agents: usize,
    pub h: f64,
    pub weight: CommunicationWeight,
    pub probs: Vec<f64>,
    /// Dwell-sum multiplier `M`.
    pub m: u64,
    /// Window base length `n`.
    pub n: u64,
    /// Log coefficient `c`.
    pub c: f64,
    /// Tail exponent of `1/phi`; defaults to the weight's own.
    pub epsilon: f64,
    /// Exponent for the spatial bound; midpoint of its admissible interval when unset.
    pub delta: Option<f64>,
    /// Spatial diameter bound fed to `phi`.
    pub x_inf: Option<f64>,
}

impl FrameworkParams {
    pub fn kappa(&self) -> f64 {
        self.weight.kappa()
    }

    pub fn h_kappa(&self) -> f64 {
        self.h * self.kappa()
    }

    /// `log(1/(1 - h kappa))`, infinite once `h kappa >= 1`.
    pub fn log_inv_damping(&self) -> f64 {
        let hk = self.h_kappa();
        if hk >= 1.0 {
            f64::INFINITY
        } else {
            -(-hk).ln_1p()
        }
    }

    /// `min_k log(1/(1 - p_k))`.
    pub fn min_log_inverse_miss(&self) -> f64 {
        self.probs
            .iter()
            .map(|&p| -(-p).ln_1p())
            .fold(f64::INFINITY, f64::min)
    }

    /// `M + N - 1`.
    pub fn span(&self) -> f64 {
        (self.m + self.n_agents as u64).saturating_sub(1) as f64
    }

    /// `a = 1 + c (M + N - 1) log(1 - h kappa)`.
    pub fn envelope_exponent(&self) -> f64 {
        1.0 - self.c * self.span() * self.log_inv_damping()
    }

    /// `ln K0` with `K(x) = K0 phi(x)^{N-1}` the envelope rate constant.
    fn log_rate_constant(&self) -> f64 {
        let n1 = (self.n_agents - 1) as f64;
        let lnd = -self.log_inv_damping();
        let window = self.span() * (self.n as f64 + self.c * n1.ln());
        window * lnd + n1 * (self.h / self.n_agents as f64).ln() - n1 * lnd
    }

    /// `K = (1-h kappa)^{(M+N-1)(n + c log(N-1))} (h phi / (N(1-h kappa)))^{N-1}`.
    pub fn rate_constant(&self, phi_x: f64) -> f64 {
        (self.log_rate_constant() + (self.n_agents - 1) as f64 * phi_x.ln()).exp()
    }

    /// Open interval `(1/a, 1/((N-1) eps))` for the spatial exponent.
    pub fn delta_interval(&self) -> Result<(f64, f64)> {
        let a = self.envelope_exponent();
        if !(a > 0.0) {
            return Err(Error::DivergentEnvelope(a));
        }
        let hi = if self.epsilon > 0.0 && self.n_agents > 1 {
            1.0 / ((self.n_agents - 1) as f64 * self.epsilon)
        } else {
            f64::INFINITY
        };
        Ok((1.0 / a, hi))
    }

    /// Configured `delta`, or the interval midpoint (`2/a` when unbounded above).
    pub fn delta_or_default(&self) -> Result<f64> {
        match self.delta {
            Some(d) => Ok(d),
            None => default_delta(self),
        }
    }

    fn phi_x_inf(&self) -> Result<f64> {
        let x = self
            .x_inf
            .ok_or_else(|| Error::InvalidParameter("x_inf is not set".into()))?;
        Ok(self.weight.phi(x))
    }
}

/// One inequality `value < threshold` (or the stated relation) with its margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub name: String,
    pub value: f64,
    pub relation: String,
    pub threshold: f64,
    pub passed: bool,
    /// Signed slack; positive when the condition holds.
    pub margin: f64,
    /// Whether the overall verdict depends on this row.
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionRow {
    fn less(name: &str, value: f64, threshold: f64) -> Self {
        ConditionRow {
            name: name.into(),
            value,
            relation: "<".into(),
            threshold,
            passed: value < threshold,
            margin: threshold - value,
            required: true,
            series: None,
            note: None,
        }
    }

    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        ConditionRow {
            relation: "<=".into(),
            passed: value <= threshold,
            ..ConditionRow::less(name, value, threshold)
        }
    }

    fn greater(name: &str, value: f64, threshold: f64) -> Self {
        ConditionRow {
            relation: ">".into(),
            passed: value > threshold,
            margin: value - threshold,
            ..ConditionRow::less(name, value, threshold)
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        ConditionRow {
            relation: ">=".into(),
            passed: value >= threshold,
            ..ConditionRow::greater(name, value, threshold)
        }
    }

    fn advisory(mut self) -> Self {
        self.required = false;
        self
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    fn failed(name: &str, note: String) -> Self {
        ConditionRow {
            name: name.into(),
            value: f64::NAN,
            relation: "-".into(),
            threshold: f64::NAN,
            passed: false,
            margin: f64::NAN,
            required: true,
            series: None,
            note: Some(note),
        }
    }
}

/// A named group of checked conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub title: String,
    pub inputs: serde_json::Value,
    pub rows: Vec<ConditionRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl BoundReport {
    /// All required rows hold.
    pub fn passed(&self) -> bool {
        self.rows.iter().filter(|r| r.required).all(|r| r.passed)
    }

    pub fn row(&self, name: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else if x == 0.0 || (1e-4..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.6e}")
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let status = match (r.passed, r.required) {
                    (true, _) => "pass",
                    (false, true) => "FAIL",
                    (false, false) => "fail (advisory)",
                };
                [
                    r.name.clone(),
                    fmt_num(r.value),
                    r.relation.clone(),
                    fmt_num(r.threshold),
                    fmt_num(r.margin),
                    status.into(),
                ]
            })
            .collect();
        let header = ["condition", "value", "", "bound", "margin", "status"];
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, c: [&str; 6]| {
            writeln!(
                f,
                "  {:<w0$}  {:>w1$} {:^w2$} {:<w3$}  {:>w4$}  {}",
                c[0],
                c[1],
                c[2],
                c[3],
                c[4],
                c[5],
                w0 = width[0],
                w1 = width[1],
                w2 = width[2],
                w3 = width[3],
                w4 = width[4]
            )
        };
        line(f, header)?;
        for (row, r) in cells.iter().zip(&self.rows) {
            line(f, [&row[0], &row[1], &row[2], &row[3], &row[4], &row[5]])?;
            if let Some(note) = &r.note {
                writeln!(f, "      note: {note}")?;
            }
            if let Some(s) = &r.series {
                writeln!(f, "      series: {} terms, tail bound {}", s.terms, fmt_num(s.tail_bound))?;
            }
        }
        for note in &self.notes {
            writeln!(f, "  note: {note}")?;
        }
        Ok(())
    }
}

/// Flocking-with-probability-one conditions for the discrete model:
/// (i) `0 < h kappa < 1`, (ii) the damping/miss-probability ratio is below 1,
/// (iii) `eps < (1 - ratio)/(N-1)`. Also reports the pathwise conditions on
/// `c` and flags when the two `eps` windows disagree.
pub fn check_discrete_conditions(p: &FrameworkParams) -> BoundReport {
    let hk = p.h_kappa();
    let n1 = p.n_agents.saturating_sub(1) as f64;
    let min_log = p.min_log_inverse_miss();
    let ratio = p.span() * p.log_inv_damping() / min_log;
    let eps_window = if n1 > 0.0 { (1.0 - ratio) / n1 } else { f64::INFINITY };
    let a = p.envelope_exponent();
    let prop_window = if n1 > 0.0 { a / n1 } else { f64::INFINITY };

    let stability = ConditionRow {
        passed: hk > 0.0 && hk < 1.0,
        ..ConditionRow::less("stability: h*kappa < 1", hk, 1.0)
    }
    .with_note("requires 0 < h*kappa < 1");
    let mut rows = vec![
        stability,
        ConditionRow::less("damping ratio (M+N-1)log(1/(1-h*kappa))/min_k log(1/(1-p_k))", ratio, 1.0),
        ConditionRow::less("epsilon window: eps < (1 - ratio)/(N-1)", p.epsilon, eps_window),
        ConditionRow::at_least("epsilon >= 0", p.epsilon, 0.0),
    ];
    let c_lower = 1.0 / min_log;
    rows.push(
        ConditionRow::greater("c > 1/min_k log(1/(1-p_k))", p.c, c_lower)
            .advisory()
            .with_note("needed by the spanning-tree probability bound"),
    );
    rows.push(
        ConditionRow::less("pathwise window: c*N*log(1/(1-h*kappa)) < 1", p.c * p.n_agents as f64 * p.log_inv_damping(), 1.0)
            .advisory(),
    );
    rows.push(
        ConditionRow::less("decay exponent window: eps < (1 + c(M+N-1)log(1-h*kappa))/(N-1)", p.epsilon, prop_window)
            .advisory(),
    );
    let mut notes = Vec::new();
    let thm = rows[2].passed;
    let prop = rows[6].passed;
    if thm != prop {
        notes.push(format!(
            "epsilon windows disagree: the ratio-based window says {}, the c-dependent window says {}",
            verdict(thm),
            verdict(prop)
        ));
    }
    BoundReport {
        title: "Discrete flocking conditions".into(),
        inputs: serde_json::json!({
            "N": p.n_agents, "h": p.h, "kappa": p.kappa(), "probs": p.probs,
            "M": p.m, "n": p.n, "c": p.c, "epsilon": p.epsilon,
        }),
        rows,
        notes,
    }
}

fn verdict(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

/// Continuous-time analogue: `(a(N-1) + M) kappa / min_k log(1/(1-p_k)) < 1`
/// and `0 <= eps < (1 - ratio)/(N-1)`.
pub fn check_continuous_conditions(n_agents: usize, kappa: f64, a: f64, m: f64, probs: &[f64], epsilon: f64) -> BoundReport {
    let n1 = n_agents.saturating_sub(1) as f64;
    let min_log = probs.iter().map(|&p| -(-p).ln_1p()).fold(f64::INFINITY, f64::min);
    let ratio = (a * n1 + m) * kappa / min_log;
    let eps_window = if n1 > 0.0 { (1.0 - ratio) / n1 } else { f64::INFINITY };
    BoundReport {
        title: "Continuous flocking conditions".into(),
        inputs: serde_json::json!({
            "N": n_agents, "kappa": kappa, "a": a, "M": m, "probs": probs, "epsilon": epsilon,
        }),
        rows: vec![
            ConditionRow::less("ratio (a(N-1)+M)kappa/min_k log(1/(1-p_k))", ratio, 1.0),
            ConditionRow::less("epsilon window: eps < (1 - ratio)/(N-1)", epsilon, eps_window),
            ConditionRow::at_least("epsilon >= 0", epsilon, 0.0),
        ],
        notes: Vec::new(),
    }
}

/// `(1 - h kappa)^L (h phi / (N (1 - h kappa)))^{N-1}`.
pub fn ergodicity_floor(window_length: u64, n_agents: usize, h: f64, kappa: f64, phi_x: f64) -> f64 {
    let lnd = (-h * kappa).ln_1p();
    let n1 = n_agents.saturating_sub(1) as f64;
    if n1 == 0.0 {
        return (window_length as f64 * lnd).exp();
    }
    (window_length as f64 * lnd + n1 * (h * phi_x / n_agents as f64).ln() - n1 * lnd).exp()
}

/// Lower bound on the ergodicity coefficient of a window flow of the given length.
pub fn ergodicity_lower_bound(window_length: u64, p: &FrameworkParams) -> Result<f64> {
    crate::matrix::check_stability(p.h, p.kappa())?;
    Ok(ergodicity_floor(window_length, p.n_agents, p.h, p.kappa(), p.phi_x_inf()?))
}

/// `exp(-K ((r+1)^a - 1)/a)` with `K = p.rate_constant(phi_x)`.
pub fn decay_envelope(r: u64, p: &FrameworkParams, phi_x: f64) -> Result<f64> {
    let a = p.envelope_exponent();
    if !(a > 0.0) {
        return Err(Error::DivergentEnvelope(a));
    }
    if p.n_agents < 2 {
        return Ok(1.0);
    }
    let k = p.rate_constant(phi_x);
    let growth = (a * ((r + 1) as f64).ln()).exp_m1() / a;
    Ok((-k * growth).exp())
}

/// Velocity-diameter envelope after `r` complete windows, evaluated at `phi(x_inf)`.
pub fn velocity_decay_envelope(r: u64, p: &FrameworkParams) -> Result<f64> {
    crate::matrix::check_stability(p.h, p.kappa())?;
    decay_envelope(r, p, p.phi_x_inf()?)
}

/// `(e^{-x}, (delta/e)^delta x^{-delta})`; both sides share the exponent
/// form so the tight point `x = delta` compares equal.
pub fn exp_inequality_check(x: f64, delta: f64) -> (f64, f64) {
    let lhs = (-x).exp();
    let rhs = (delta * (delta / x).ln() - delta).exp();
    (lhs, rhs)
}

/// Midpoint of the admissible `delta` interval, `2/a` when it is unbounded.
pub fn default_delta(p: &FrameworkParams) -> Result<f64> {
    let (lo, hi) = p.delta_interval()?;
    if lo >= hi {
        return Err(Error::Hypothesis(format!(
            "empty delta interval ({lo}, {hi}): epsilon is too large for these (M, c)"
        )));
    }
    Ok(if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo })
}

/// The spatial-diameter condition `LHS(x) < x` as a function of `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialBound {
    pub delta: f64,
    pub series: SeriesValue,
    /// `DX0 + h DV0 (M+N-1)(n + c log(N-1))`.
    pub offset: f64,
    /// `ln` of the coefficient multiplying `phi(x)^{-(N-1) delta}`; `-inf` when `DV0 = 0`.
    pub log_scale: f64,
    pub dx0: f64,
    pub dv0: f64,
    #[serde(skip)]
    weight: Option<CommunicationWeight>,
    exponent: f64,
}

impl SpatialBound {
    pub fn new(p: &FrameworkParams, dx0: f64, dv0: f64) -> Result<Self> {
        crate::matrix::check_stability(p.h, p.kappa())?;
        if p.n_agents < 2 {
            return Err(Error::InvalidParameter("the spatial bound needs N >= 2".into()));
        }
        let delta = p.delta_or_default()?;
        let (lo, hi) = p.delta_interval()?;
        if !(delta > lo) {
            return Err(Error::SeriesDivergent(format!(
                "delta = {delta} must exceed 1/a = {lo}"
            )));
        }
        if !(delta < hi) {
            return Err(Error::Hypothesis(format!(
                "delta = {delta} must be below 1/((N-1) eps) = {hi}"
            )));
        }
        let a = p.envelope_exponent();
        let series = spatial_series(p.n_agents, p.n, p.c, a, delta)?;
        let n1 = (p.n_agents - 1) as f64;
        let offset = dx0 + p.h * dv0 * p.span() * (p.n as f64 + p.c * n1.ln());
        let log_scale = (p.h * dv0 * p.span()).ln() + delta * (delta.ln() - 1.0) - delta * p.log_rate_constant()
            + series.value.ln();
        Ok(SpatialBound {
            delta,
            series,
            offset,
            log_scale,
            dx0,
            dv0,
            weight: Some(p.weight),
            exponent: n1 * delta,
        })
    }

    pub fn lhs(&self, x: f64) -> f64 {
        if self.dv0 == 0.0 {
            return self.offset;
        }
        let w = self.weight.expect("weight is set on construction");
        self.offset + (self.log_scale - self.exponent * w.phi(x).ln()).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XinfSolution {
    pub x_inf: f64,
    pub lhs: f64,
    pub delta: f64,
    pub series: SeriesValue,
}

/// Default search ceiling relative to `LHS(0)`.
pub const XINF_CEILING_FACTOR: f64 = 1e12;

/// Smallest `x` on a doubling grid refined by bisection with `LHS(x) < x`;
/// `None` if nothing below `1e12 (LHS(0) + 1)` works.
pub fn xinf_exists(p: &FrameworkParams, init_dx: f64, init_dv: f64) -> Result<Option<XinfSolution>> {
    let bound = SpatialBound::new(p, init_dx, init_dv)?;
    let ceiling = XINF_CEILING_FACTOR * (bound.lhs(0.0) + 1.0);
    Ok(xinf_search(&bound, ceiling))
}

pub fn xinf_search(bound: &SpatialBound, ceiling: f64) -> Option<XinfSolution> {
    let done = |x: f64| XinfSolution {
        x_inf: x,
        lhs: bound.lhs(x),
        delta: bound.delta,
        series: bound.series,
    };
    if bound.dv0 == 0.0 {
        // Positions translate rigidly, so the diameter stays at DX0.
        return Some(done(bound.dx0));
    }
    let start = bound.lhs(0.0);
    if !start.is_finite() {
        return None;
    }
    let ok = |x: f64| bound.lhs(x) < x;
    let mut lo = 0.0;
    let mut hi = start.max(f64::MIN_POSITIVE);
    while !ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > ceiling || !hi.is_finite() {
            return None;
        }
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(done(hi))
}

/// `p1(n) = exp(-2 ln 2 sum_k (1-p_k)^n sum_l (1-p_k)^floor(c ln(l+1)))`,
/// a lower bound on the probability that every window union is rooted.
/// Tail bounds on the inner series are added before exponentiating, which
/// can only lower the result.
pub fn p1_lower_bound(n: u64, c: f64, probs: &[f64]) -> Result<SeriesValue> {
    let head: f64 = probs.iter().map(|&p| (1.0 - p).powf(n as f64)).sum();
    if head > 0.5 {
        return Err(Error::Hypothesis(format!(
            "sum_k (1-p_k)^n = {head} exceeds 1/2; increase n"
        )));
    }
    let mut total = 0.0;
    let mut tail = 0.0;
    let mut terms = 0;
    for (k, &p) in probs.iter().enumerate() {
        let need = -1.0 / (-p).ln_1p();
        if !(c > need) {
            return Err(Error::Hypothesis(format!(
                "topology {}: c = {c} must exceed -1/log(1-p_k) = {need}",
                k + 1
            )));
        }
        let s = floor_log_series(1.0 - p, c)?;
        let w = (1.0 - p).powf(n as f64);
        total += w * s.value;
        tail += w * s.tail_bound;
        terms = terms.max(s.terms);
    }
    let value = (-2.0 * std::f64::consts::LN_2 * total).exp();
    let exact = (-2.0 * std::f64::consts::LN_2 * (total - tail)).exp();
    Ok(SeriesValue {
        value,
        terms,
        tail_bound: exact - value,
    })
}

/// Smallest `n` meeting `sum_k (1-p_k)^n <= 1/2`.
pub fn smallest_valid_n(probs: &[f64]) -> u64 {
    (1..)
        .find(|&n| probs.iter().map(|&p| (1.0 - p).powf(n as f64)).sum::<f64>() <= 0.5)
        .expect("sum decreases to zero")
}

fn p2_checks(n: u64, n_agents: usize) -> Result<()> {
    if n_agents < 2 || n == 0 {
        return Err(Error::InvalidParameter(
            "dwell-sum tail bounds need N >= 2 and n >= 1".into(),
        ));
    }
    Ok(())
}

/// Shared tail form `prefactor * base^{M(n + c ln(N-1) - 1)} * zeta(-M c ln base)`.
fn p2_from_base(n: u64, c: f64, m: u64, n_agents: usize, ln_base: f64, ln_prefactor: f64) -> Result<SeriesValue> {
    let s = -(m as f64) * c * ln_base;
    let z = zeta(s)?;
    let power = m as f64 * (n as f64 + c * ((n_agents - 1) as f64).ln() - 1.0) * ln_base;
    let scale = (power + ln_prefactor).exp();
    Ok(SeriesValue {
        value: scale * z.value,
        terms: z.terms,
        tail_bound: scale * z.tail_bound,
    })
}

/// Poisson dwell tail bound:
/// `((N-1)e lambda/M)^{M(n + c log(N-1) - 1)} / sqrt(2 pi M n) * sum_i i^{M c log((N-1)e lambda/M)}`.
pub fn p2_poisson(n: u64, c: f64, m: u64, n_agents: usize, lambda_max: f64) -> Result<SeriesValue> {
    p2_checks(n, n_agents)?;
    let crit = (n_agents - 1) as f64 * E * lambda_max;
    if !(m as f64 > crit) {
        return Err(Error::SeriesDivergent(format!("need M > (N-1) e lambda = {crit}, got M = {m}")));
    }
    let ln_base = (crit / m as f64).ln();
    if !(m as f64 * c * ln_base < -1.0) {
        return Err(Error::SeriesDivergent(format!(
            "need M c log((N-1) e lambda / M) < -1, got {}",
            m as f64 * c * ln_base
        )));
    }
    p2_from_base(n, c, m, n_agents, ln_base, -0.5 * (2.0 * PI * m as f64 * n as f64).ln())
}

/// `ln C(M)` for the geometric tail bound.
pub fn ln_c_geometric(m: u64, n_agents: usize, p_min: f64) -> f64 {
    let x = (n_agents - 1) as f64 / m as f64;
    (1.0 + x) * x.ln_1p() - x * x.ln() + ((1.0 - p_min) / p_min).ln()
}

/// `C(M) = (1 + (N-1)/M)^{1+(N-1)/M} (M/(N-1))^{(N-1)/M} (1-p)/p`.
pub fn c_geometric(m: u64, n_agents: usize, p_min: f64) -> f64 {
    ln_c_geometric(m, n_agents, p_min).exp()
}

/// Geometric dwell tail bound:
/// `e/(sqrt(2) pi) C(M)^{M(n + c log(N-1) - 1)} sum_i i^{M c log C(M)}`.
pub fn p2_geometric(n: u64, c: f64, m: u64, n_agents: usize, p_min: f64) -> Result<SeriesValue> {
    p2_checks(n, n_agents)?;
    if !(p_min > 0.5 && p_min <= 1.0) {
        return Err(Error::Hypothesis(format!("geometric tail bound needs p_min > 1/2, got {p_min}")));
    }
    if m == 0 {
        return Err(Error::SeriesDivergent("M must be positive".into()));
    }
    if p_min == 1.0 {
        return Ok(SeriesValue { value: 0.0, terms: 0, tail_bound: 0.0 });
    }
    let ln_c = ln_c_geometric(m, n_agents, p_min);
    if !(ln_c < 0.0) {
        return Err(Error::SeriesDivergent(format!("need C(M) < 1, got C(M) = {}", ln_c.exp())));
    }
    if !(m as f64 * c * ln_c < -1.0) {
        return Err(Error::SeriesDivergent(format!(
            "need M c log C(M) < -1, got {}",
            m as f64 * c * ln_c
        )));
    }
    p2_from_base(n, c, m, n_agents, ln_c, (E / (2f64.sqrt() * PI)).ln())
}

/// First `M` meeting the Poisson convergence conditions, searched upward
/// from `floor((N-1) e lambda) + 1`.
pub fn smallest_valid_m_poisson(c: f64, n_agents: usize, lambda_max: f64) -> Result<u64> {
    let start = ((n_agents.max(2) - 1) as f64 * E * lambda_max).floor() as u64 + 1;
    (start..=M_SEARCH_CAP)
        .find(|&m| {
            let ln_base = ((n_agents - 1) as f64 * E * lambda_max / m as f64).ln();
            ln_base < 0.0 && m as f64 * c * ln_base < -1.0
        })
        .ok_or_else(|| Error::SeriesDivergent(format!("no valid M up to {M_SEARCH_CAP}")))
}

/// First `M >= 1` with `C(M) < 1` and `M c log C(M) < -1`.
pub fn smallest_valid_m_geometric(c: f64, n_agents: usize, p_min: f64) -> Result<u64> {
    if !(p_min > 0.5) {
        return Err(Error::Hypothesis(format!("geometric tail bound needs p_min > 1/2, got {p_min}")));
    }
    (1..=M_SEARCH_CAP)
        .find(|&m| {
            let ln_c = ln_c_geometric(m, n_agents.max(2), p_min);
            ln_c < 0.0 && m as f64 * c * ln_c < -1.0
        })
        .ok_or_else(|| Error::SeriesDivergent(format!("no valid M up to {M_SEARCH_CAP}")))
}

/// `p2(n)` for any supported process. A deterministic dwell `T` never
/// violates once `M > T (N-1)`, so its bound is exactly zero there.
pub fn p2_for_process(process: &DwellingProcess, n: u64, c: f64, m: u64, n_agents: usize) -> Result<SeriesValue> {
    match *process {
        DwellingProcess::Poisson { .. } => {
            p2_poisson(n, c, m, n_agents, process.lambda_max().expect("poisson has a rate"))
        }
        DwellingProcess::Geometric { .. } => {
            p2_geometric(n, c, m, n_agents, process.p_min().expect("geometric has p"))
        }
        DwellingProcess::Deterministic { value } => {
            p2_checks(n, n_agents)?;
            if m > value * (n_agents as u64 - 1) {
                Ok(SeriesValue { value: 0.0, terms: 0, tail_bound: 0.0 })
            } else {
                Err(Error::SeriesDivergent(format!(
                    "deterministic dwell {value} needs M > {}",
                    value * (n_agents as u64 - 1)
                )))
            }
        }
    }
}

pub fn smallest_valid_m(process: &DwellingProcess, c: f64, n_agents: usize) -> Result<u64> {
    match *process {
        DwellingProcess::Poisson { .. } => {
            smallest_valid_m_poisson(c, n_agents, process.lambda_max().expect("poisson has a rate"))
        }
        DwellingProcess::Geometric { .. } => {
            smallest_valid_m_geometric(c, n_agents, process.p_min().expect("geometric has p"))
        }
        DwellingProcess::Deterministic { value } => Ok(value * (n_agents.max(2) as u64 - 1) + 1),
    }
}

/// Hypothesis rows for `p1(n)` and `p2(n)`, with the bound values when defined.
pub fn check_probability_bounds(p: &FrameworkParams, process: &DwellingProcess) -> BoundReport {
    let mut rows = Vec::new();
    let head: f64 = p.probs.iter().map(|&q| (1.0 - q).powf(p.n as f64)).sum();
    rows.push(ConditionRow::at_most("sum_k (1-p_k)^n <= 1/2", head, 0.5));
    for (k, &q) in p.probs.iter().enumerate() {
        rows.push(ConditionRow::greater(
            &format!("c > -1/log(1-p_{})", k + 1),
            p.c,
            -1.0 / (-q).ln_1p(),
        ));
    }
    match p1_lower_bound(p.n, p.c, &p.probs) {
        Ok(v) => rows.push(ConditionRow {
            series: Some(v),
            ..ConditionRow::greater("p1(n) lower bound", v.value, 0.0).advisory()
        }),
        Err(e) => rows.push(ConditionRow::failed("p1(n) lower bound", e.to_string()).advisory()),
    }
    match p2_for_process(process, p.n, p.c, p.m, p.n_agents) {
        Ok(v) => rows.push(ConditionRow {
            series: Some(v),
            ..ConditionRow::less("p2(n) upper bound", v.value, 1.0).advisory()
        }),
        Err(e) => {
            let hint = match smallest_valid_m(process, p.c, p.n_agents) {
                Ok(m) => format!("{e}; smallest valid M is {m}"),
                Err(_) => e.to_string(),
            };
            rows.push(ConditionRow::failed("dwell tail series converges for M", hint));
        }
    }
    BoundReport {
        title: "Window probability bounds".into(),
        inputs: serde_json::json!({
            "n": p.n, "c": p.c, "M": p.m, "N": p.n_agents, "probs": p.probs, "process": process,
        }),
        rows,
        notes: Vec::new(),
    }
}
