//! Capacity lower bounds for the zero-forcing uplink: pointwise formulas,
//! per-user ergodic bounds at a fixed distance, and cell averages over the
//! radial user placement.
//!
//! Every averaged quantity has two analytic backends:
//!
//! * **Quadrature** (authoritative): numerical expectation of the defining
//!   log formula over the gamma shadowing law, nested with an adaptive radial
//!   integral for cell averages.
//! * **Series**: the closed hypergeometric forms. Their ₚF_q kernels have
//!   p = q + 2, i.e. zero radius of convergence, so they are summed with
//!   optimal truncation and accepted only while the reported truncation error
//!   is usable. Callers should treat the series value as a cross-check.

use std::cell::Cell;
use std::f64::consts::LN_2;

use crate::channel::{CellGeometry, FadingParams};
use crate::error::{Error, Result};
use crate::quadrature::{gamma_expectation_quad, integrate_adaptive, QuadResult};
use crate::specfun::{log_gamma, pfq_series, PFqParams, SeriesResult};

/// Relative tolerance of a standalone gamma expectation.
const INNER_TOL: f64 = 1e-8;
/// Tighter inner tolerance when nested inside the radial integral.
const NESTED_INNER_TOL: f64 = 1e-9;
/// Relative tolerance of the radial integral.
const RADIAL_TOL: f64 = 1e-7;
/// Term budget for the hypergeometric backends.
const SERIES_MAX_TERMS: usize = 600;

/// Scenario under evaluation: array size, transmit SNR, pilot length, cell
/// geometry (which carries the user count) and the fading law.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Base-station antenna count M.
    pub m_antennas: usize,
    /// Linear per-user transmit SNR after reference-distance normalization.
    pub p_u: f64,
    /// Pilot length τ (symbols of orthogonal training), τ ≥ K.
    pub tau: usize,
    pub geometry: CellGeometry,
    pub fading: FadingParams,
}

impl SystemConfig {
    pub fn new(
        m_antennas: usize,
        p_u: f64,
        tau: usize,
        geometry: CellGeometry,
        fading: FadingParams,
    ) -> Result<Self> {
        if m_antennas <= geometry.users {
            return Err(Error::Config(format!(
                "need more antennas than users, got M={m_antennas}, K={}",
                geometry.users
            )));
        }
        if tau < geometry.users {
            return Err(Error::Config(format!(
                "pilot length must cover all users, got tau={tau}, K={}",
                geometry.users
            )));
        }
        if !(p_u > 0.0) || !p_u.is_finite() {
            return Err(Error::Config(format!("transmit SNR must be positive, got {p_u}")));
        }
        Ok(Self {
            m_antennas,
            p_u,
            tau,
            geometry,
            fading,
        })
    }

    /// Number of users K.
    pub fn users(&self) -> usize {
        self.geometry.users
    }

    /// Zero-forcing array gain M − K.
    pub fn array_gain(&self) -> f64 {
        (self.m_antennas - self.users()) as f64
    }

    /// Rate penalty log₂(1 + K/τ) of the imperfect-CSI bound.
    pub fn pilot_penalty(&self) -> f64 {
        log2_1p(self.users() as f64 / self.tau as f64)
    }
}

/// Which evaluation path produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Quadrature,
    Series,
    MonteCarlo,
}

/// Backend-specific metadata attached to an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalDetail {
    Quadrature { evaluations: usize },
    Series { terms: usize },
    MonteCarlo { trials: u64, ci_half_width: f64 },
}

/// A capacity value in bits/s/Hz with provenance and an error estimate.
///
/// `bits` is the raw bound value. The imperfect-CSI bound can be negative for
/// small β; averages keep the raw value and reporting layers may clamp via
/// [`EvalResult::achievable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub bits: f64,
    pub backend: Backend,
    pub error_estimate: f64,
    pub detail: EvalDetail,
}

impl EvalResult {
    /// The bound clamped at zero, the largest rate actually guaranteed.
    pub fn achievable(&self) -> f64 {
        self.bits.max(0.0)
    }
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

// ---------------------------------------------------------------------------
// Pointwise bounds (fixed large-scale gain)
// ---------------------------------------------------------------------------

/// Perfect-CSI capacity lower bound at a fixed large-scale gain:
/// log₂(1 + β p_u (M − K)).
pub fn pointwise_bound_perfect(beta: f64, config: &SystemConfig) -> f64 {
    log2_1p(beta * config.p_u * config.array_gain())
}

/// Imperfect-CSI capacity lower bound at a fixed large-scale gain:
/// log₂(1 + τ p_u² (M−K) β²) − log₂(1 + τ p_u β) − log₂(1 + K/τ).
///
/// The value may be negative for small β; callers that average over the
/// fading keep the raw value.
pub fn pointwise_bound_imperfect(beta: f64, config: &SystemConfig) -> f64 {
    let tau = config.tau as f64;
    let p = config.p_u;
    log2_1p(tau * p * p * config.array_gain() * beta * beta)
        - log2_1p(tau * p * beta)
        - config.pilot_penalty()
}

/// The cited imperfect-CSI bound this crate's closed forms weaken, evaluated
/// verbatim including the interference sum over all users:
/// log₂(1 + τp_u²(M−K)β_k² / ((τp_uβ_k+1)·Σᵢ p_uβᵢ/(τp_uβᵢ+1) + τp_uβ_k + 1)).
pub fn reference_bound_imperfect(beta_all: &[f64], k: usize, config: &SystemConfig) -> f64 {
    let tau = config.tau as f64;
    let p = config.p_u;
    let beta_k = beta_all[k];
    let interference: f64 = beta_all
        .iter()
        .map(|&b| p * b / (tau * p * b + 1.0))
        .sum();
    let numerator = tau * p * p * config.array_gain() * beta_k * beta_k;
    let denominator = (tau * p * beta_k + 1.0) * interference + tau * p * beta_k + 1.0;
    log2_1p(numerator / denominator)
}

// ---------------------------------------------------------------------------
// Gamma expectations (quadrature backend)
// ---------------------------------------------------------------------------

/// Numerical expectation E[f(μ)] under μ ~ Gamma(m, omega).
pub fn gamma_expectation(f: impl Fn(f64) -> f64, m: f64, omega: f64) -> Result<EvalResult> {
    let q = gamma_expectation_quad(f, m, omega, INNER_TOL)?;
    Ok(quad_eval(q))
}

fn quad_eval(q: QuadResult) -> EvalResult {
    EvalResult {
        bits: q.value,
        backend: Backend::Quadrature,
        error_estimate: q.error_estimate,
        detail: EvalDetail::Quadrature {
            evaluations: q.evaluations,
        },
    }
}

fn perfect_at(distance: f64, config: &SystemConfig, tol: f64) -> Result<QuadResult> {
    let fading = &config.fading;
    let c = config.p_u * config.array_gain() / distance.powf(fading.path_loss_exponent);
    gamma_expectation_quad(
        move |mu| log2_1p(c * mu),
        fading.m_shadow,
        fading.omega,
        tol,
    )
}

fn imperfect_at(distance: f64, config: &SystemConfig, tol: f64) -> Result<QuadResult> {
    let fading = &config.fading;
    let v = fading.path_loss_exponent;
    let tau = config.tau as f64;
    let p = config.p_u;
    let q1 = tau * p * p * config.array_gain() / distance.powf(2.0 * v);
    let q2 = tau * p / distance.powf(v);
    let xi1 = gamma_expectation_quad(
        move |mu| log2_1p(q1 * mu * mu),
        fading.m_shadow,
        fading.omega,
        tol,
    )?;
    let xi2 = gamma_expectation_quad(
        move |mu| log2_1p(q2 * mu),
        fading.m_shadow,
        fading.omega,
        tol,
    )?;
    Ok(QuadResult {
        value: xi1.value - xi2.value - config.pilot_penalty(),
        error_estimate: xi1.error_estimate + xi2.error_estimate,
        evaluations: xi1.evaluations + xi2.evaluations,
    })
}

/// Ergodic capacity lower bound of a user at distance `distance` with
/// perfect CSI: E_μ[log₂(1 + p_u(M−K) μ / D^v)]. Quadrature backend.
pub fn ergodic_capacity_perfect(distance: f64, config: &SystemConfig) -> Result<EvalResult> {
    check_distance(distance)?;
    Ok(quad_eval(perfect_at(distance, config, INNER_TOL)?))
}

/// Ergodic capacity lower bound of a user at distance `distance` with
/// imperfect CSI: E_μ[Ξ₁ − Ξ₂] − log₂(1 + K/τ). Quadrature backend.
pub fn ergodic_capacity_imperfect(distance: f64, config: &SystemConfig) -> Result<EvalResult> {
    check_distance(distance)?;
    Ok(quad_eval(imperfect_at(distance, config, INNER_TOL)?))
}

fn check_distance(distance: f64) -> Result<()> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!(
            "user distance must be positive and finite, got {distance}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cell averages (radial integral over the user placement law)
// ---------------------------------------------------------------------------

/// Average of `f` over the radial placement law:
/// (2/(R² − R₀²)) ∫ x f(x) dx on [R₀, R].
pub fn radial_average(
    f: impl Fn(f64) -> f64,
    geom: &CellGeometry,
    rel_tol: f64,
) -> Result<QuadResult> {
    let (r0, r) = (geom.exclusion_radius, geom.cell_radius);
    let outer = integrate_adaptive(|x| x * f(x), r0, r, rel_tol)?;
    let scale = 2.0 / (r * r - r0 * r0);
    Ok(QuadResult {
        value: scale * outer.value,
        error_estimate: scale * outer.error_estimate,
        evaluations: outer.evaluations,
    })
}

fn cell_average(
    config: &SystemConfig,
    inner: impl Fn(f64, &SystemConfig, f64) -> Result<QuadResult>,
) -> Result<EvalResult> {
    let failure: Cell<Option<Error>> = Cell::new(None);
    let inner_error = Cell::new(0.0f64);
    let integrand = |x: f64| match inner(x, config, NESTED_INNER_TOL) {
        Ok(q) => {
            inner_error.set(inner_error.get().max(q.error_estimate));
            q.value
        }
        Err(e) => {
            if failure.take().is_none() {
                failure.set(Some(e));
            }
            0.0
        }
    };
    let avg = radial_average(integrand, &config.geometry, RADIAL_TOL)?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok(EvalResult {
        bits: avg.value,
        backend: Backend::Quadrature,
        error_estimate: avg.error_estimate + inner_error.get(),
        detail: EvalDetail::Quadrature {
            evaluations: avg.evaluations,
        },
    })
}

/// Cell-average ergodic capacity lower bound with perfect CSI, by nested
/// quadrature over (distance, shadowing).
pub fn cell_average_perfect(config: &SystemConfig) -> Result<EvalResult> {
    cell_average(config, perfect_at)
}

/// Cell-average ergodic capacity lower bound with imperfect CSI, by nested
/// quadrature over (distance, shadowing).
pub fn cell_average_imperfect(config: &SystemConfig) -> Result<EvalResult> {
    cell_average(config, imperfect_at)
}

// ---------------------------------------------------------------------------
// Series backend (hypergeometric closed forms, optimal truncation)
// ---------------------------------------------------------------------------

fn series_eval(upper: Vec<f64>, lower: Vec<f64>, z: f64) -> Result<SeriesResult> {
    let r = pfq_series(&PFqParams::new(upper, lower, z), SERIES_MAX_TERMS)?;
    if !r.usable() {
        return Err(Error::Eval {
            reason: "hypergeometric series diverged at this argument; use the quadrature backend"
                .into(),
            partial: r.value,
            error_estimate: r.error_estimate,
        });
    }
    Ok(r)
}

fn series_result(bits: f64, error_estimate: f64, terms: usize) -> EvalResult {
    EvalResult {
        bits,
        backend: Backend::Series,
        error_estimate,
        detail: EvalDetail::Series { terms },
    }
}

/// Series backend for [`ergodic_capacity_perfect`]:
/// (Ω p_u (M−K) m / (ln2 · D^v)) · ₃F₁(m+1, 1, 1; 2; −Ω p_u (M−K)/D^v).
pub fn ergodic_capacity_perfect_series(
    distance: f64,
    config: &SystemConfig,
) -> Result<EvalResult> {
    check_distance(distance)?;
    let fading = &config.fading;
    let (m, omega) = (fading.m_shadow, fading.omega);
    let c = config.p_u * config.array_gain() / distance.powf(fading.path_loss_exponent);
    let s = series_eval(vec![m + 1.0, 1.0, 1.0], vec![2.0], -omega * c)?;
    let prefactor = omega * c * m / LN_2;
    Ok(series_result(
        prefactor * s.value,
        prefactor * s.error_estimate,
        s.terms_used,
    ))
}

/// log prefactor of the Ξ₁ expectation without the distance factor:
/// τ Ω² p_u² (M−K) 2^{m+1} Γ(m/2+1) Γ(m/2+3/2) / (√π ln2 Γ(m)).
fn ln_xi1_prefactor(config: &SystemConfig) -> Result<f64> {
    let fading = &config.fading;
    let (m, omega) = (fading.m_shadow, fading.omega);
    let tau = config.tau as f64;
    Ok(tau.ln()
        + 2.0 * omega.ln()
        + 2.0 * config.p_u.ln()
        + config.array_gain().ln()
        + (m + 1.0) * LN_2
        + log_gamma(m / 2.0 + 1.0)?
        + log_gamma(m / 2.0 + 1.5)?
        - 0.5 * std::f64::consts::PI.ln()
        - LN_2.ln()
        - log_gamma(m)?)
}

/// Series backend for [`ergodic_capacity_imperfect`]: the ₄F₁ form of Ξ₁
/// minus the ₃F₁ form of Ξ₂ minus the pilot penalty.
pub fn ergodic_capacity_imperfect_series(
    distance: f64,
    config: &SystemConfig,
) -> Result<EvalResult> {
    check_distance(distance)?;
    let fading = &config.fading;
    let (m, omega) = (fading.m_shadow, fading.omega);
    let v = fading.path_loss_exponent;
    let tau = config.tau as f64;
    let p = config.p_u;

    let z1 = -4.0 * tau * omega * omega * p * p * config.array_gain() / distance.powf(2.0 * v);
    let s1 = series_eval(
        vec![m / 2.0 + 1.0, m / 2.0 + 1.5, 1.0, 1.0],
        vec![2.0],
        z1,
    )?;
    let pref1 = (ln_xi1_prefactor(config)? - 2.0 * v * distance.ln()).exp();

    let z2 = -tau * omega * p / distance.powf(v);
    let s2 = series_eval(vec![m + 1.0, 1.0, 1.0], vec![2.0], z2)?;
    let pref2 = tau * omega * p * m / (LN_2 * distance.powf(v));

    Ok(series_result(
        pref1 * s1.value - pref2 * s2.value - config.pilot_penalty(),
        pref1 * s1.error_estimate + pref2 * s2.error_estimate,
        s1.terms_used + s2.terms_used,
    ))
}

/// Difference of the radially-integrated ₚF_q kernel at the two cell edges:
/// F(z(R₀))/R₀^w − F(z(R))/R^w with z(x) = z_scale/x^{z_pow}.
struct EdgeSeries {
    value: f64,
    error: f64,
    terms: usize,
}

fn edge_series(
    upper: Vec<f64>,
    lower: Vec<f64>,
    z_scale: f64,
    z_pow: f64,
    weight_pow: f64,
    geom: &CellGeometry,
) -> Result<EdgeSeries> {
    let (r0, r) = (geom.exclusion_radius, geom.cell_radius);
    let near = series_eval(upper.clone(), lower.clone(), z_scale / r0.powf(z_pow))?;
    let far = series_eval(upper, lower, z_scale / r.powf(z_pow))?;
    Ok(EdgeSeries {
        value: near.value / r0.powf(weight_pow) - far.value / r.powf(weight_pow),
        error: near.error_estimate / r0.powf(weight_pow) + far.error_estimate / r.powf(weight_pow),
        terms: near.terms_used + far.terms_used,
    })
}

/// Series backend for [`cell_average_perfect`]: the ₄F₂ edge difference.
pub fn cell_average_perfect_series(config: &SystemConfig) -> Result<EvalResult> {
    let fading = &config.fading;
    let (m, omega) = (fading.m_shadow, fading.omega);
    let v = fading.path_loss_exponent;
    if v <= 2.0 {
        return Err(Error::Domain(
            "closed-form cell average requires a path-loss exponent above 2".into(),
        ));
    }
    let geom = &config.geometry;
    let (r0, r) = (geom.exclusion_radius, geom.cell_radius);
    let pu_mk = config.p_u * config.array_gain();
    let a = (v - 2.0) / v;
    let edges = edge_series(
        vec![a, m + 1.0, 1.0, 1.0],
        vec![a + 1.0, 2.0],
        -omega * pu_mk,
        v,
        v - 2.0,
        geom,
    )?;
    let prefactor = 2.0 * omega * pu_mk * m / (LN_2 * (r * r - r0 * r0) * (v - 2.0));
    Ok(series_result(
        prefactor * edges.value,
        prefactor * edges.error,
        edges.terms,
    ))
}

/// Series backend for [`cell_average_imperfect`]: the ₅F₂ edge difference for
/// the Ξ₁ average minus the ₄F₂ edge difference for the Ξ₂ average minus the
/// pilot penalty.
///
/// The Ξ₁ block keeps the 2^{m+1} prefactor of the per-user Ξ₁ form; the
/// radial integration contributes 1/((R²−R₀²)(v−1)) and no further powers of
/// two, as direct term-by-term integration shows.
pub fn cell_average_imperfect_series(config: &SystemConfig) -> Result<EvalResult> {
    let fading = &config.fading;
    let (m, omega) = (fading.m_shadow, fading.omega);
    let v = fading.path_loss_exponent;
    if v <= 2.0 {
        return Err(Error::Domain(
            "closed-form cell average requires a path-loss exponent above 2".into(),
        ));
    }
    let geom = &config.geometry;
    let (r0, r) = (geom.exclusion_radius, geom.cell_radius);
    let tau = config.tau as f64;
    let p = config.p_u;

    let a1 = (v - 1.0) / v;
    let xi1_edges = edge_series(
        vec![a1, m / 2.0 + 1.0, m / 2.0 + 1.5, 1.0, 1.0],
        vec![a1 + 1.0, 2.0],
        -4.0 * tau * omega * omega * p * p * config.array_gain(),
        2.0 * v,
        2.0 * v - 2.0,
        geom,
    )?;
    let pref1 =
        (ln_xi1_prefactor(config)? - (r * r - r0 * r0).ln() - (v - 1.0).ln()).exp();

    let a2 = (v - 2.0) / v;
    let xi2_edges = edge_series(
        vec![a2, m + 1.0, 1.0, 1.0],
        vec![a2 + 1.0, 2.0],
        -tau * omega * p,
        v,
        v - 2.0,
        geom,
    )?;
    let pref2 = 2.0 * tau * omega * p * m / (LN_2 * (r * r - r0 * r0) * (v - 2.0));

    Ok(series_result(
        pref1 * xi1_edges.value - pref2 * xi2_edges.value - config.pilot_penalty(),
        pref1 * xi1_edges.error + pref2 * xi2_edges.error,
        xi1_edges.terms + xi2_edges.terms,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{distance_quantile, CellGeometry, FadingParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn config(m_antennas: usize, p_u: f64, tau: usize, users: usize, m: f64) -> SystemConfig {
        SystemConfig::new(
            m_antennas,
            p_u,
            tau,
            CellGeometry::new(100.0, 1000.0, users).unwrap(),
            FadingParams::mean_normalized(m, 3.6).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(
            8,
            1.0,
            4,
            CellGeometry::new(100.0, 1000.0, 9).unwrap(),
            FadingParams::mean_normalized(1.0, 3.6).unwrap()
        )
        .is_err());
        assert!(SystemConfig::new(
            100,
            0.0,
            9,
            CellGeometry::new(100.0, 1000.0, 9).unwrap(),
            FadingParams::mean_normalized(1.0, 3.6).unwrap()
        )
        .is_err());
    }

    #[test]
    fn pointwise_perfect_values() {
        let cfg = config(100, 10.0, 9, 9, 3.3);
        assert_eq!(pointwise_bound_perfect(0.0, &cfg), 0.0);
        // beta engineered so that beta * p_u * (M-K) = 1
        let beta = 1.0 / (10.0 * 91.0);
        assert_relative_eq!(pointwise_bound_perfect(beta, &cfg), 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            pointwise_bound_perfect(0.01, &cfg),
            3.336_283_387_864_432_4,
            max_relative = 1e-13
        );
    }

    #[test]
    fn pointwise_imperfect_values() {
        let cfg = config(100, 10.0, 9, 9, 3.3);
        // tau = K makes the penalty exactly one bit.
        assert_relative_eq!(cfg.pilot_penalty(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(
            pointwise_bound_imperfect(0.0, &cfg),
            -1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            pointwise_bound_imperfect(0.01, &cfg),
            1.274_065_442_958_086_7,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reference_bound_zero_and_asymptote() {
        let cfg = config(100, 10.0, 9, 9, 3.3);
        assert_eq!(reference_bound_imperfect(&[0.0; 9], 3, &cfg), 0.0);

        // K = 1, tau = 1: for beta -> infinity the bound approaches
        // log2(tau p_u (M-K) beta / 2).
        let cfg1 = config(100, 10.0, 1, 1, 3.3);
        let beta = 1e6;
        let got = reference_bound_imperfect(&[beta], 0, &cfg1);
        let asymptote = (1.0 * 10.0 * 99.0 * beta / 2.0).log2();
        assert_relative_eq!(got, asymptote, max_relative = 1e-3);
    }

    #[test]
    fn novel_bound_never_exceeds_reference_bound() {
        // The closed-form bound is derived by weakening the reference bound,
        // so it must sit below it for every parameter draw.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let users = rng.random_range(1..=8usize);
            let tau = users + rng.random_range(0..=4usize);
            let m_antennas = users + rng.random_range(1..=64usize);
            let p_u = 10f64.powf(rng.random_range(-2.0..6.0));
            let cfg = SystemConfig::new(
                m_antennas,
                p_u,
                tau,
                CellGeometry::new(100.0, 1000.0, users).unwrap(),
                FadingParams::mean_normalized(1.0, 3.6).unwrap(),
            )
            .unwrap();
            let betas: Vec<f64> = (0..users)
                .map(|_| 10f64.powf(rng.random_range(-12.0..0.0)))
                .collect();
            for k in 0..users {
                let novel = pointwise_bound_imperfect(betas[k], &cfg);
                let reference = reference_bound_imperfect(&betas, k, &cfg);
                assert!(
                    novel <= reference + 1e-12,
                    "novel {novel} > reference {reference} at k={k}, betas={betas:?}"
                );
            }
        }
    }

    #[test]
    fn gamma_expectation_trivials_and_log_kernel() {
        let one = gamma_expectation(|_| 1.0, 2.5, 0.4).unwrap();
        assert_relative_eq!(one.bits, 1.0, max_relative = 1e-10);
        let mean = gamma_expectation(|x| x, 2.5, 0.4).unwrap();
        assert_relative_eq!(mean.bits, 1.0, max_relative = 1e-8);
        // E[ln(1+mu)] at shape = scale = 1 equals e·E1(1) nats.
        let nats = gamma_expectation(|x| x.ln_1p(), 1.0, 1.0).unwrap();
        assert_relative_eq!(nats.bits, 0.596_347_362_323_194_1, max_relative = 1e-6);
    }

    #[test]
    fn ergodic_perfect_limits_and_reference() {
        // p_u -> 0: value decreases to zero from above.
        let tiny = config(100, 1e-12, 9, 9, 3.3);
        let v = ergodic_capacity_perfect(500.0, &tiny).unwrap();
        assert!(v.bits > 0.0 && v.bits < 1e-9, "bits = {}", v.bits);

        // m = 1, omega = 1, effective gain c = p_u(M-K)/D^v = 1 at D = 1:
        // e·E1(1)/ln 2 bits.
        let cfg = SystemConfig::new(
            100,
            1.0 / 91.0,
            9,
            CellGeometry::new(100.0, 1000.0, 9).unwrap(),
            FadingParams::new(1.0, 1.0, 1.0, 3.6).unwrap(),
        )
        .unwrap();
        let v = ergodic_capacity_perfect(1.0, &cfg).unwrap();
        assert_relative_eq!(v.bits, 0.860_347_382_270_886, max_relative = 1e-7);

        assert!(ergodic_capacity_perfect(0.0, &cfg).is_err());
    }

    #[test]
    fn ergodic_perfect_matches_monte_carlo() {
        // c = 10 with m = 3.3, omega = 1/3.3: quadrature against a direct
        // Monte Carlo average over the shadowing law.
        let m = 3.3;
        let omega = 1.0 / m;
        let c = 10.0;
        let cfg = SystemConfig::new(
            100,
            c / 91.0,
            9,
            CellGeometry::new(100.0, 1000.0, 9).unwrap(),
            FadingParams::new(m, omega, 1.0, 3.6).unwrap(),
        )
        .unwrap();
        let quad = ergodic_capacity_perfect(1.0, &cfg).unwrap();

        let gamma = Gamma::new(m, omega).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000_000u64;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let x = log2_1p(c * gamma.sample(&mut rng));
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = (sumsq - sum * sum / n as f64) / (n - 1) as f64;
        let ci = 1.96 * (var / n as f64).sqrt();
        assert!(
            (quad.bits - mean).abs() <= 3.0 * ci,
            "quad {} vs mc {mean} +/- {ci}",
            quad.bits
        );
    }

    #[test]
    fn ergodic_imperfect_limits() {
        // p_u -> 0 leaves only the pilot penalty.
        let tiny = config(100, 1e-15, 9, 9, 3.3);
        let v = ergodic_capacity_imperfect(500.0, &tiny).unwrap();
        assert_relative_eq!(v.bits, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn radial_average_normalization() {
        let geom = CellGeometry::new(100.0, 1000.0, 9).unwrap();
        let r = radial_average(|_| 1.0, &geom, 1e-10).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn cell_average_degenerate_annulus() {
        // As R0 -> R the cell average collapses to the edge value.
        let r = 1000.0;
        let r0 = r * (1.0 - 1e-7);
        let cfg = SystemConfig::new(
            128,
            10.0 * 500f64.powf(3.6),
            9,
            CellGeometry::new(r0, r, 9).unwrap(),
            FadingParams::mean_normalized(3.3, 3.6).unwrap(),
        )
        .unwrap();
        let avg = cell_average_perfect(&cfg).unwrap();
        let edge = ergodic_capacity_perfect(r, &cfg).unwrap();
        assert_relative_eq!(avg.bits, edge.bits, max_relative = 1e-6);
    }

    #[test]
    fn cell_average_ordering_and_csi_loss() {
        let p_u = 10.0 * 500f64.powf(3.6);
        let cfg = config(128, p_u, 9, 9, 3.3);
        let perfect = cell_average_perfect(&cfg).unwrap();
        let imperfect = cell_average_imperfect(&cfg).unwrap();
        assert!(imperfect.bits < perfect.bits);
        assert!(imperfect.bits > 0.0);
    }

    #[test]
    fn monotone_in_antennas_and_power() {
        let p_u = 10.0 * 500f64.powf(3.6);
        let mut last = 0.0;
        for m_antennas in [32, 64, 128, 256] {
            let v = ergodic_capacity_perfect(500.0, &config(m_antennas, p_u, 9, 9, 3.3))
                .unwrap()
                .bits;
            assert!(v > last, "not increasing in M at {m_antennas}");
            last = v;
        }
        let mut last = 0.0;
        for p_db in [5.0, 10.0, 20.0] {
            let p_u = 10f64.powf(p_db / 10.0) * 500f64.powf(3.6);
            let v = ergodic_capacity_perfect(500.0, &config(128, p_u, 9, 9, 3.3))
                .unwrap()
                .bits;
            assert!(v > last, "not increasing in p_u at {p_db} dB");
            last = v;
        }
    }

    #[test]
    fn series_matches_quadrature_when_truncation_is_tight() {
        // Small effective argument: optimal truncation leaves a sub-1e-8
        // relative error, and the asymptotic sum must then agree with the
        // quadrature backend to 1e-6 relative.
        let m = 3.3;
        let cfg = SystemConfig::new(
            100,
            0.01 / 99.0 * m, // omega*c = 0.01
            9,
            CellGeometry::new(100.0, 1000.0, 9).unwrap(),
            FadingParams::mean_normalized(m, 3.6).unwrap(),
        )
        .unwrap();
        let series = ergodic_capacity_perfect_series(1.0, &cfg).unwrap();
        let quad = ergodic_capacity_perfect(1.0, &cfg).unwrap();
        assert!(
            series.error_estimate / series.bits.abs() < 1e-8,
            "truncation not tight: {}",
            series.error_estimate / series.bits.abs()
        );
        assert_relative_eq!(series.bits, quad.bits, max_relative = 1e-6);
    }

    #[test]
    fn series_rejects_divergent_argument() {
        // Full-scale SNR drives |z| far above 1 where optimal truncation is
        // useless; the series backend must refuse rather than return junk.
        let cfg = config(128, 10.0 * 500f64.powf(3.6), 9, 9, 3.3);
        assert!(ergodic_capacity_perfect_series(200.0, &cfg).is_err());
    }

    #[test]
    fn cell_average_series_cross_checks_quadrature() {
        // Moderate SNR keeps the edge arguments small enough for tight
        // truncation of the 4F2 / 5F2 forms.
        let cfg = config(100, 1e4, 9, 9, 3.3);
        let s = cell_average_perfect_series(&cfg).unwrap();
        let q = cell_average_perfect(&cfg).unwrap();
        assert_relative_eq!(s.bits, q.bits, max_relative = 1e-6);

        let s = cell_average_imperfect_series(&cfg).unwrap();
        let q = cell_average_imperfect(&cfg).unwrap();
        assert!(
            (s.bits - q.bits).abs() <= 1e-6 * q.bits.abs().max(1.0),
            "series {} vs quadrature {}",
            s.bits,
            q.bits
        );
    }

    #[test]
    fn appendix_series_partial_sums_approach_expectation() {
        // At omega*c = 0.05 the alternating expansion of E[log2(1+c mu)] is
        // dominated; budget-truncated partial sums must stay within their
        // reported error of the quadrature value.
        let (m, omega, c) = (2.0, 0.5, 0.1);
        let quad = gamma_expectation(move |mu| log2_1p(c * mu), m, omega).unwrap();
        let prefactor = omega * c * m / LN_2;
        for budget in [4usize, 8, 12, 20, 40] {
            let s = pfq_series(
                &PFqParams::new(vec![m + 1.0, 1.0, 1.0], vec![2.0], -omega * c),
                budget,
            )
            .unwrap();
            let value = prefactor * s.value;
            let err = prefactor * s.error_estimate;
            assert!(
                (value - quad.bits).abs() <= err + 1e-12,
                "budget {budget}: |{value} - {}| > {err}",
                quad.bits
            );
        }
    }

    #[test]
    fn cell_average_matches_two_dimensional_monte_carlo() {
        // Sample (distance, shadowing) directly and average the pointwise
        // bound: an independent route to the nested quadrature value.
        let p_u = 10.0 * 500f64.powf(3.6);
        let cfg = config(128, p_u, 9, 9, 3.3);
        let quad = cell_average_perfect(&cfg).unwrap();

        let gamma = Gamma::new(3.3, 1.0 / 3.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 2_000_000u64;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let d = distance_quantile(&cfg.geometry, rng.random::<f64>());
            let beta = gamma.sample(&mut rng) / d.powf(3.6);
            let x = pointwise_bound_perfect(beta, &cfg);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = (sumsq - sum * sum / n as f64) / (n - 1) as f64;
        let ci = 1.96 * (var / n as f64).sqrt();
        assert!(
            (quad.bits - mean).abs() <= 3.0 * ci,
            "quad {} vs mc {mean} +/- {ci}",
            quad.bits
        );
    }
}
