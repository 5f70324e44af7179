//! Infinite series with explicit truncation bookkeeping. Every evaluator
//! returns the partial sum plus an analytic bound on the omitted tail; the
//! reported `value` already includes that bound, so it is an upper bound on
//! the exact sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::switching::floor_c_log;

/// Partial sums past this many terms are cut off and covered by the tail bound.
pub const MAX_SERIES_TERMS: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    /// Partial sum plus tail bound.
    pub value: f64,
    /// Number of terms summed exactly.
    pub terms: u64,
    /// Upper bound on the omitted remainder.
    pub tail_bound: f64,
}

impl SeriesValue {
    pub fn partial_sum(&self) -> f64 {
        self.value - self.tail_bound
    }
}

// B_2, B_4, ..., B_16.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Riemann zeta for real `s > 1` by Euler-Maclaurin with `R = 32` and seven
/// correction terms. The magnitude of the first dropped correction is added,
/// which bounds the remainder since `x^-s` is completely monotone.
pub fn zeta(s: f64) -> Result<SeriesValue> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::SeriesDivergent(format!("zeta needs s > 1, got {s}")));
    }
    const R: u64 = 32;
    let rf = R as f64;
    let head: f64 = (1..R).map(|k| (k as f64).powf(-s)).sum();
    let mut tail = rf.powf(1.0 - s) / (s - 1.0) + 0.5 * rf.powf(-s);
    // (s)_{2j-1} R^{-s-2j+1} / (2j)!
    let mut rising = s;
    let mut power = rf.powf(-s - 1.0);
    let mut fact = 2.0;
    let mut omitted = 0.0;
    for (j, b) in BERNOULLI.iter().enumerate() {
        let term = b / fact * rising * power;
        if j + 1 == BERNOULLI.len() {
            omitted = term.abs();
            break;
        }
        tail += term;
        let k = 2.0 * (j as f64 + 1.0);
        rising *= (s + k - 1.0) * (s + k);
        power /= rf * rf;
        fact *= (k + 1.0) * (k + 2.0);
    }
    Ok(SeriesValue {
        value: head + tail + omitted,
        terms: R - 1,
        tail_bound: tail + omitted,
    })
}

/// Smallest `j >= 1` with `floor(c ln j) >= m`, agreeing with [`floor_c_log`].
fn level_start(c: f64, m: u64) -> u64 {
    if m == 0 {
        return 1;
    }
    let mut j = (m as f64 / c).exp().ceil().max(1.0) as u64;
    while j > 1 && floor_c_log(c, j - 1) >= m {
        j -= 1;
    }
    while floor_c_log(c, j) < m {
        j += 1;
    }
    j
}

/// `sum_{l >= 0} q^floor(c ln(l + 1))`, summed level by level. Level `m`
/// holds the `j = l + 1` with `floor(c ln j) = m`, roughly `e^{m/c}(e^{1/c} - 1)` of them.
/// Converges iff `q e^{1/c} < 1`.
pub fn floor_log_series(q: f64, c: f64) -> Result<SeriesValue> {
    if !(0.0..1.0).contains(&q) || !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "floor-log series needs 0 <= q < 1 and c > 0, got q = {q}, c = {c}"
        )));
    }
    if q == 0.0 {
        // Only the m = 0 level survives: j in [1, e^{1/c}).
        let count = level_start(c, 1) - 1;
        return Ok(SeriesValue {
            value: count as f64,
            terms: 1,
            tail_bound: 0.0,
        });
    }
    let rho = q * (1.0 / c).exp();
    if rho >= 1.0 {
        return Err(Error::SeriesDivergent(format!(
            "floor-log series diverges: q e^(1/c) = {rho} >= 1"
        )));
    }
    // Exact integer counts while e^{m/c} fits comfortably in u64.
    let exact_limit = 2f64.powi(52);
    let growth = (1.0 / c).exp() - 1.0;
    let mut sum = 0.0;
    let mut qm = 1.0;
    let mut m = 0u64;
    let mut lo = 1u64;
    loop {
        let next_exp = ((m + 1) as f64 / c).exp();
        sum += if next_exp < exact_limit {
            let hi = level_start(c, m + 1);
            let k = hi - lo;
            lo = hi;
            qm * k as f64
        } else {
            // Upper bound on the level size, weighted: rho^m growth + q^m.
            rho.powf(m as f64) * growth + qm
        };
        m += 1;
        qm *= q;
        // Levels m.. contribute at most sum q^k (e^{k/c} growth + 1).
        let tail = growth * rho.powf(m as f64) / (1.0 - rho) + qm / (1.0 - q);
        if tail <= 1e-16 * sum || m >= MAX_SERIES_TERMS {
            return Ok(SeriesValue {
                value: sum + tail,
                terms: m,
                tail_bound: tail,
            });
        }
    }
}

/// Bound on `sum_{y >= R+1} (alpha + c ln y) y^{-p}` for `p > 1` when the
/// summand is nonincreasing on `[R, inf)`.
fn log_power_tail(alpha: f64, c: f64, p: f64, r: f64) -> Option<f64> {
    if p * (alpha + c * r.ln()) < c {
        return None;
    }
    let q = p - 1.0;
    let base = r.powf(-q);
    Some(base * (alpha / q + c * (r.ln() / q + 1.0 / (q * q))))
}

/// `S = sum_{r >= 1} (n + c ln((r+1)(N-1))) (((r+1)^a - 1)/a)^{-delta}`,
/// the `x`-independent part of the spatial-diameter series. Converges iff
/// `a delta > 1`.
pub fn spatial_series(n_agents: usize, n: u64, c: f64, a: f64, delta: f64) -> Result<SeriesValue> {
    if !(a > 0.0) {
        return Err(Error::DivergentEnvelope(a));
    }
    let p = a * delta;
    if !(p > 1.0) || !delta.is_finite() {
        return Err(Error::SeriesDivergent(format!(
            "spatial series needs a*delta > 1, got a = {a}, delta = {delta}"
        )));
    }
    let alpha = n as f64 + c * ((n_agents.max(2) - 1) as f64).ln();
    let mut sum = 0.0;
    let mut r = 1u64;
    loop {
        let y = (r + 1) as f64;
        let g = (a * y.ln()).exp_m1() / a;
        sum += (alpha + c * y.ln()) * (-delta * g.ln()).exp();
        r += 1;
        if r % 64 == 0 || r >= MAX_SERIES_TERMS {
            // Terms r.. : g_r >= (r+1)^a (1 - (R+1)^{-a}) / a.
            let big_r = r as f64;
            let factor = (a / (1.0 - (big_r + 1.0).powf(-a))).powf(delta);
            if let Some(tail) = log_power_tail(alpha, c, p, big_r) {
                let tail = factor * tail;
                if tail <= 1e-14 * sum || r >= MAX_SERIES_TERMS {
                    return Ok(SeriesValue {
                        value: sum + tail,
                        terms: r - 1,
                        tail_bound: tail,
                    });
                }
            } else if r >= MAX_SERIES_TERMS {
                return Err(Error::SeriesDivergent(
                    "spatial series tail is not yet monotone at the truncation cap".into(),
                ));
            }
        }
    }
}
