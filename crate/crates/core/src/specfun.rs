//! Special-function kernels: log-gamma, Pochhammer symbols, and the
//! generalized hypergeometric series pFq with convergence classification.
//!
//! The capacity theorems are stated in terms of ₃F₁, ₄F₁, ₄F₂ and ₅F₂. With
//! p = q + 2 these series have zero radius of convergence, so `pfq_series`
//! treats them as asymptotic expansions: it sums up to the smallest-magnitude
//! term (optimal truncation) and reports the magnitude of the first omitted
//! term as the error estimate. Whether that estimate is small enough to use
//! is the caller's decision; the quadrature backend in [`crate::bounds`] is
//! the authoritative evaluation path.

use crate::error::{Error, Result};

/// Relative size of the first omitted term above which a truncated series is
/// classified as [`ConvergenceClass::Diverged`].
pub const DIVERGENCE_THRESHOLD: f64 = 1e-3;

/// Largest number of upper or lower parameters accepted by `pfq_series`.
pub const MAX_PFQ_PARAMS: usize = 8;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Lanczos approximation, g = 7, 9 coefficients. Relative accuracy on the
// positive real axis is a few ulps, comfortably below the 1e-12 contract.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the gamma function for positive arguments.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    if x < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        // ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x), valid for 0 < x < 0.5.
        let reflected = lanczos_ln_gamma(1.0 - x);
        return Ok((std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - reflected);
    }
    Ok(lanczos_ln_gamma(x))
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x - 1.0 + i as f64);
    }
    let t = x + LANCZOS_G - 0.5;
    LN_SQRT_2PI + (x - 0.5) * t.ln() - t + acc.ln()
}

/// Rising factorial (m)ᵢ = m(m+1)⋯(m+i−1), defined via the product so that
/// nonpositive-integer bases yield exact zeros instead of gamma-ratio poles.
pub fn pochhammer(m: f64, i: u32) -> f64 {
    let mut acc = 1.0;
    for j in 0..i {
        acc *= m + j as f64;
    }
    acc
}

/// Both sides of the Legendre duplication identity
/// Γ(2x) = 2^{2x−1}/√π · Γ(x)Γ(x+1/2), evaluated through `log_gamma`.
///
/// Exposed so the identity can be checked as a test of the log-gamma kernel.
pub fn duplication_check(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!(
            "duplication_check requires x > 0, got {x}"
        )));
    }
    let lhs = log_gamma(2.0 * x)?.exp();
    let ln_rhs = (2.0 * x - 1.0) * std::f64::consts::LN_2 - 0.5 * std::f64::consts::PI.ln()
        + log_gamma(x)?
        + log_gamma(x + 0.5)?;
    Ok((lhs, ln_rhs.exp()))
}

/// Parameter pack for the generalized hypergeometric series
/// ₚFq(a₁…aₚ; b₁…b_q; z).
#[derive(Debug, Clone, PartialEq)]
pub struct PFqParams {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub argument: f64,
}

impl PFqParams {
    pub fn new(upper: Vec<f64>, lower: Vec<f64>, argument: f64) -> Self {
        Self {
            upper,
            lower,
            argument,
        }
    }
}

/// How the partial sum of a pFq series should be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceClass {
    /// The series converges and the partial sum met the stopping tolerance.
    Convergent,
    /// Formally divergent series summed to its smallest term; the value is an
    /// asymptotic approximation with the reported error estimate.
    AsymptoticTruncated,
    /// The partial sum is not trustworthy and callers must treat it as failure.
    Diverged,
}

/// Outcome of a truncated pFq summation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub value: f64,
    pub terms_used: usize,
    pub convergence_class: ConvergenceClass,
    /// Magnitude of the first omitted term.
    pub error_estimate: f64,
}

impl SeriesResult {
    /// True when the value may be used as a numerical result.
    pub fn usable(&self) -> bool {
        self.convergence_class != ConvergenceClass::Diverged
    }

    /// Error estimate relative to the partial sum.
    pub fn relative_error(&self) -> f64 {
        self.error_estimate / self.value.abs().max(f64::MIN_POSITIVE)
    }
}

/// Sum ₚFq(a;b;z) = Σᵢ Πⱼ(aⱼ)ᵢ / Πⱼ(bⱼ)ᵢ · zⁱ/i! with the default
/// divergence threshold. See [`pfq_series_with_threshold`].
pub fn pfq_series(params: &PFqParams, max_terms: usize) -> Result<SeriesResult> {
    pfq_series_with_threshold(params, max_terms, DIVERGENCE_THRESHOLD)
}

/// Sum the pFq series, classifying convergence.
///
/// * p ≤ q, or p = q+1 with |z| < 1: convergent; terms are added until the
///   next term falls below machine precision relative to the partial sum.
/// * p ≥ q+2 (or p = q+1 with |z| ≥ 1): asymptotic; terms are added while
///   their magnitudes decrease and summation stops at the smallest term.
/// * Terminating series (an upper parameter is a nonpositive integer) are
///   summed exactly.
///
/// Term magnitudes are tracked in log space so gamma-scale growth in the
/// coefficients cannot overflow before the stopping rule fires.
pub fn pfq_series_with_threshold(
    params: &PFqParams,
    max_terms: usize,
    threshold: f64,
) -> Result<SeriesResult> {
    let p = params.upper.len();
    let q = params.lower.len();
    if p > MAX_PFQ_PARAMS || q > MAX_PFQ_PARAMS {
        return Err(Error::Domain(format!(
            "pfq_series supports at most {MAX_PFQ_PARAMS} parameters per list (p={p}, q={q})"
        )));
    }
    for &b in &params.lower {
        if b <= 0.0 && b.fract() == 0.0 {
            return Err(Error::Domain(format!(
                "lower parameter {b} is a pole of the series denominator"
            )));
        }
    }
    if !params.argument.is_finite() {
        return Err(Error::Domain("pfq argument must be finite".into()));
    }
    if max_terms < 2 {
        return Err(Error::Domain("pfq_series requires max_terms >= 2".into()));
    }

    let z = params.argument;
    if z == 0.0 {
        return Ok(SeriesResult {
            value: 1.0,
            terms_used: 1,
            convergence_class: ConvergenceClass::Convergent,
            error_estimate: 0.0,
        });
    }
    let asymptotic = p >= q + 2 || (p == q + 1 && z.abs() >= 1.0);

    // Running term in log-magnitude + sign form; term 0 is 1.
    let mut ln_term = 0.0_f64;
    let mut sign = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut terms_used = 1usize;

    for i in 0..max_terms {
        // Ratio term_{i+1} / term_i.
        let idx = i as f64;
        let mut ln_ratio = z.abs().ln() - (idx + 1.0).ln();
        let mut ratio_sign = z.signum();
        let mut terminated = false;
        for &a in &params.upper {
            let f = a + idx;
            if f == 0.0 {
                terminated = true;
                break;
            }
            ln_ratio += f.abs().ln();
            ratio_sign *= f.signum();
        }
        if terminated {
            // An upper parameter hit zero: the series terminates here.
            return Ok(SeriesResult {
                value: sum,
                terms_used,
                convergence_class: ConvergenceClass::Convergent,
                error_estimate: 0.0,
            });
        }
        for &b in &params.lower {
            let f = b + idx;
            ln_ratio -= f.abs().ln();
            ratio_sign *= f.signum();
        }

        let ln_next = ln_term + ln_ratio;
        let next_abs = ln_next.exp();

        if asymptotic && ln_next >= ln_term {
            // Optimal truncation: the next term would grow, so it is the
            // first omitted term and bounds the asymptotic error.
            return Ok(finish(sum, terms_used, next_abs, threshold, true));
        }

        sum += ratio_sign * sign * next_abs;
        ln_term = ln_next;
        sign *= ratio_sign;
        terms_used += 1;

        if next_abs <= f64::EPSILON * sum.abs() {
            // Terms reached the round-off floor; estimate the first omitted
            // term from one more ratio. An asymptotic series truncated this
            // deep is still only an asymptotic approximation.
            let omitted = next_abs * ratio_magnitude(params, i + 1);
            return Ok(SeriesResult {
                value: sum,
                terms_used,
                convergence_class: if asymptotic {
                    ConvergenceClass::AsymptoticTruncated
                } else {
                    ConvergenceClass::Convergent
                },
                error_estimate: omitted,
            });
        }
        if !sum.is_finite() {
            return Ok(SeriesResult {
                value: sum,
                terms_used,
                convergence_class: ConvergenceClass::Diverged,
                error_estimate: f64::INFINITY,
            });
        }
    }

    // Term budget exhausted. For a convergent series cut early the first
    // omitted term does not bound the tail, so inflate it to a geometric
    // tail bound using the largest remaining term ratio.
    let first_omitted = (ln_term + ratio_magnitude_ln(params, max_terms)).exp();
    let omitted = if asymptotic {
        first_omitted
    } else {
        let r = remaining_ratio_sup(params, max_terms);
        if r < 1.0 {
            first_omitted / (1.0 - r)
        } else {
            f64::INFINITY
        }
    };
    Ok(finish(sum, terms_used, omitted, threshold, asymptotic))
}

/// Supremum of |term_{i+1}/term_i| over i ≥ start for a convergent-mode
/// series. The ratio tends to |z| (p = q+1) or 0 (p ≤ q) and any transient
/// extremum occurs while some |param + i| factor is still settling, so a
/// bounded lookahead suffices.
fn remaining_ratio_sup(params: &PFqParams, start: usize) -> f64 {
    let limit = if params.upper.len() == params.lower.len() + 1 {
        params.argument.abs()
    } else {
        0.0
    };
    let mut sup: f64 = limit;
    for i in start..start + 256 {
        sup = sup.max(ratio_magnitude(params, i));
    }
    sup
}

fn finish(
    sum: f64,
    terms_used: usize,
    omitted: f64,
    threshold: f64,
    asymptotic: bool,
) -> SeriesResult {
    let relative = omitted / sum.abs().max(f64::MIN_POSITIVE);
    let convergence_class = if !sum.is_finite() || !relative.is_finite() || relative > threshold {
        ConvergenceClass::Diverged
    } else if asymptotic {
        ConvergenceClass::AsymptoticTruncated
    } else {
        ConvergenceClass::Convergent
    };
    SeriesResult {
        value: sum,
        terms_used,
        convergence_class,
        error_estimate: omitted,
    }
}

fn ratio_magnitude(params: &PFqParams, i: usize) -> f64 {
    ratio_magnitude_ln(params, i).exp()
}

fn ratio_magnitude_ln(params: &PFqParams, i: usize) -> f64 {
    let idx = i as f64;
    let mut ln = params.argument.abs().ln() - (idx + 1.0).ln();
    for &a in &params.upper {
        ln += (a + idx).abs().max(f64::MIN_POSITIVE).ln();
    }
    for &b in &params.lower {
        ln -= (b + idx).abs().ln();
    }
    ln
}
