//! Monte Carlo link-level simulator: exact zero-forcing uplink capacity with
//! perfect CSI, and the pilot/MMSE estimation pipeline for imperfect CSI.
//!
//! Trials are independent; each derives its RNG stream from (seed,
//! trial_index), so estimates are bit-identical regardless of scheduling or
//! worker count. Aggregation is a deterministic ordered reduction.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::SystemConfig;
use crate::channel::{realize_channel, sample_user_distance};
use crate::error::{Error, Result};

/// Gram matrices with a larger spectral condition number are treated as
/// numerically singular and their trial discarded.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Largest tolerated fraction of discarded trials (1 = 0.1%).
const MAX_DISCARD_PER_MILLE: u64 = 1;

/// Channel knowledge available to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiMode {
    Perfect,
    Imperfect,
}

impl CsiMode {
    pub fn label(&self) -> &'static str {
        match self {
            CsiMode::Perfect => "perfect",
            CsiMode::Imperfect => "imperfect",
        }
    }
}

/// Per-trial result: one capacity value per user.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub per_user_bits: Vec<f64>,
    pub seed_index: u64,
    pub csi_mode: CsiMode,
}

/// Aggregated Monte Carlo estimate with a 95% normal confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    /// Mean over trials of the per-user average capacity.
    pub mean_bits: f64,
    /// 95% confidence half-width, 1.96·s/√n.
    pub ci_half_width: f64,
    /// Trials contributing to the estimate.
    pub trials: u64,
    /// Trials discarded for numerically singular Gram matrices.
    pub discarded: u64,
}

/// RNG stream for one trial: the seed selects the generator, the trial index
/// selects the counter-based stream.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// Post-detection SNR of each user under zero-forcing: p_u / [(GᴴG)⁻¹]ₖₖ.
pub fn zf_sinr(g: &DMatrix<Complex64>, p_u: f64) -> Result<Vec<f64>> {
    let inverse = gram_inverse(g)?;
    Ok((0..g.ncols())
        .map(|k| p_u / inverse[(k, k)].re)
        .collect())
}

fn gram_inverse(g: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let gram = g.ad_mul(g);
    let eigen = gram.symmetric_eigenvalues();
    let max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min > CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "Gram matrix condition {:.3e} exceeds {CONDITION_LIMIT:.0e}",
            max / min
        )));
    }
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Singular("Cholesky factorization of the Gram matrix failed".into())
    })?;
    Ok(chol.inverse())
}

/// MMSE channel estimate from one pilot block:
/// Ĝ = (G + W/√(τ p_u)) · diag(τ p_u βᵢ / (τ p_u βᵢ + 1))
/// with W an M×K matrix of i.i.d. unit-variance complex Gaussians. The βᵢ
/// are assumed known to the estimator.
pub fn estimate_channel_mmse<R: Rng + ?Sized>(
    g: &DMatrix<Complex64>,
    beta: &[f64],
    config: &SystemConfig,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let (m, k) = g.shape();
    let tau_pu = config.tau as f64 * config.p_u;
    let noise_scale = 1.0 / tau_pu.sqrt();
    let mut ghat = DMatrix::<Complex64>::zeros(m, k);
    for col in 0..k {
        let shrink = tau_pu * beta[col] / (tau_pu * beta[col] + 1.0);
        for row in 0..m {
            let w = complex_gaussian(rng);
            ghat[(row, col)] = (g[(row, col)] + w * noise_scale) * shrink;
        }
    }
    ghat
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(rand_distr::StandardNormal);
    let im: f64 = rng.sample(rand_distr::StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Per-user capacity when the receiver zero-forces on an estimate Ĝ while the
/// signal propagates through the true G.
///
/// With A† = (ĜᴴĜ)⁻¹Ĝᴴ the detector output for user k is
/// √p_u·xₖ − √p_u·(A†(Ĝ−G))ₖ·x + (A†w)ₖ, so the residual estimation error and
/// the filtered noise act as additional noise with their realized powers:
/// SINR_k = p_u / (‖A†ₖ‖² + p_u·‖(A†(Ĝ−G))ₖ‖²).
fn imperfect_user_bits(
    g: &DMatrix<Complex64>,
    ghat: &DMatrix<Complex64>,
    p_u: f64,
) -> Result<Vec<f64>> {
    let inverse = gram_inverse(ghat)?;
    let combiner = inverse * ghat.adjoint();
    let delta = ghat - g;
    let leak = &combiner * &delta;
    Ok((0..g.ncols())
        .map(|k| {
            let noise = combiner.row(k).norm_squared();
            let leakage = leak.row(k).norm_squared();
            let sinr = p_u / (noise + p_u * leakage);
            sinr.ln_1p() / std::f64::consts::LN_2
        })
        .collect())
}

/// Run one trial: sample distances, realize the channel, detect, and return
/// per-user capacities.
pub fn simulate_trial(
    config: &SystemConfig,
    mode: CsiMode,
    seed: u64,
    trial_index: u64,
) -> Result<TrialOutcome> {
    let mut rng = trial_rng(seed, trial_index);
    let k = config.users();
    let distances: Vec<f64> = (0..k)
        .map(|_| sample_user_distance(&config.geometry, &mut rng))
        .collect();
    let real = realize_channel(config, &config.fading, &distances, &mut rng)?;
    let per_user_bits = match mode {
        CsiMode::Perfect => zf_sinr(&real.g, config.p_u)?
            .into_iter()
            .map(|sinr| sinr.ln_1p() / std::f64::consts::LN_2)
            .collect(),
        CsiMode::Imperfect => {
            let ghat = estimate_channel_mmse(&real.g, &real.beta, config, &mut rng);
            imperfect_user_bits(&real.g, &ghat, config.p_u)?
        }
    };
    Ok(TrialOutcome {
        per_user_bits,
        seed_index: trial_index,
        csi_mode: mode,
    })
}

fn run(config: &SystemConfig, mode: CsiMode, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(Error::Config("Monte Carlo run needs at least one trial".into()));
    }
    let k = config.users() as f64;
    let outcomes: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            simulate_trial(config, mode, seed, t)
                .map(|o| o.per_user_bits.iter().sum::<f64>() / k)
        })
        .collect();

    let mut discarded = 0u64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut kept = 0u64;
    for outcome in outcomes {
        match outcome {
            Ok(value) => {
                sum += value;
                sumsq += value * value;
                kept += 1;
            }
            Err(Error::Singular(_)) => discarded += 1,
            Err(e) => return Err(e),
        }
    }
    if discarded * 1000 >= MAX_DISCARD_PER_MILLE * trials.max(1) && discarded > 0 {
        return Err(Error::Singular(format!(
            "{discarded} of {trials} trials discarded; estimates would be biased"
        )));
    }
    let n = kept as f64;
    let mean = sum / n;
    let variance = if kept > 1 {
        ((sumsq - sum * sum / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean_bits: mean,
        ci_half_width: 1.96 * (variance / n).sqrt(),
        trials: kept,
        discarded,
    })
}

/// Monte Carlo estimate of the per-user average exact ZF capacity with
/// perfect CSI.
pub fn run_perfect_csi(config: &SystemConfig, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    run(config, CsiMode::Perfect, trials, seed)
}

/// Monte Carlo estimate of the per-user average capacity with pilot-based
/// MMSE channel estimation and ZF on the estimate.
pub fn run_imperfect_csi(
    config: &SystemConfig,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    run(config, CsiMode::Imperfect, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{cell_average_perfect, SystemConfig};
    use crate::channel::{CellGeometry, FadingParams};
    use approx::assert_relative_eq;
    use nalgebra::SVD;

    fn config(m_antennas: usize, p_u: f64, users: usize) -> SystemConfig {
        SystemConfig::new(
            m_antennas,
            p_u,
            users,
            CellGeometry::new(100.0, 1000.0, users).unwrap(),
            FadingParams::mean_normalized(3.3, 3.6).unwrap(),
        )
        .unwrap()
    }

    fn db(p: f64) -> f64 {
        10f64.powf(p / 10.0) * 500f64.powf(3.6)
    }

    #[test]
    fn zf_sinr_single_column() {
        let g = DMatrix::from_vec(
            3,
            1,
            vec![
                Complex64::new(1.0, 2.0),
                Complex64::new(-0.5, 0.25),
                Complex64::new(0.0, -1.5),
            ],
        );
        let sinr = zf_sinr(&g, 2.0).unwrap();
        assert_eq!(sinr.len(), 1);
        assert_relative_eq!(sinr[0], 2.0 * g.column(0).norm_squared(), max_relative = 1e-12);
    }

    #[test]
    fn zf_sinr_orthogonal_columns() {
        // Orthogonal columns: the Gram matrix is diagonal, so each user sees
        // p_u times its own column energy.
        let mut g = DMatrix::<Complex64>::zeros(4, 2);
        g[(0, 0)] = Complex64::new(2.0, 0.0);
        g[(1, 0)] = Complex64::new(0.0, 1.0);
        g[(2, 1)] = Complex64::new(0.0, -3.0);
        g[(3, 1)] = Complex64::new(1.0, 1.0);
        let sinr = zf_sinr(&g, 0.5).unwrap();
        assert_relative_eq!(sinr[0], 0.5 * 5.0, max_relative = 1e-12);
        assert_relative_eq!(sinr[1], 0.5 * 11.0, max_relative = 1e-12);
    }

    #[test]
    fn zf_sinr_matches_pseudo_inverse_oracle() {
        // Independent route: rows of the SVD pseudo-inverse give the noise
        // amplification directly, sinr_k = p_u / ||pinv row k||².
        let mut rng = trial_rng(300, 0);
        let g = DMatrix::from_fn(8, 3, |_, _| complex_gaussian(&mut rng));
        let sinr = zf_sinr(&g, 1.7).unwrap();

        let svd = SVD::new(g.clone(), true, true);
        let pinv = svd.pseudo_inverse(1e-14).unwrap();
        for k in 0..3 {
            let oracle = 1.7 / pinv.row(k).norm_squared();
            assert_relative_eq!(sinr[k], oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn zf_sinr_rejects_rank_deficient() {
        let mut rng = trial_rng(301, 0);
        let col: Vec<Complex64> = (0..6).map(|_| complex_gaussian(&mut rng)).collect();
        let mut entries = col.clone();
        entries.extend_from_slice(&col);
        let g = DMatrix::from_vec(6, 2, entries);
        assert!(matches!(zf_sinr(&g, 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn mmse_estimate_limits() {
        let cfg = config(16, 1e12, 4);
        let beta = [0.5, 1.0, 1.5, 2.0];
        let mut rng = trial_rng(302, 0);
        let g = DMatrix::from_fn(16, 4, |_, _| complex_gaussian(&mut rng));

        // tau p_u -> infinity: the estimate converges to the true channel.
        let ghat = estimate_channel_mmse(&g, &beta, &cfg, &mut rng);
        let max_rel = g
            .iter()
            .zip(ghat.iter())
            .map(|(a, b)| (a - b).norm() / a.norm())
            .fold(0.0f64, f64::max);
        assert!(max_rel < 1e-4, "max relative deviation {max_rel}");

        // p_u -> 0: the shrinkage kills the estimate entirely.
        let cfg0 = config(16, 1e-30, 4);
        let ghat0 = estimate_channel_mmse(&g, &beta, &cfg0, &mut rng);
        assert!(ghat0.iter().all(|c| c.norm() < 1e-10));
    }

    #[test]
    fn mmse_error_variance_matches_formula() {
        // Empirical per-column variance of Ĝ-G against β/(τ p_u β + 1).
        let users = 4;
        let m = 32;
        let cfg = config(m, db(10.0), users);
        let beta = [2e-9f64, 5e-10, 1e-9, 3e-10];
        let mut rng = trial_rng(303, 0);
        let g = DMatrix::from_fn(m, users, |_, c| complex_gaussian(&mut rng) * beta[c].sqrt());
        let trials = 20_000;
        let mut err2 = vec![0.0f64; users];
        for _ in 0..trials {
            let ghat = estimate_channel_mmse(&g, &beta, &cfg, &mut rng);
            let delta = &ghat - &g;
            for k in 0..users {
                err2[k] += delta.column(k).norm_squared() / m as f64;
            }
        }
        let tau_pu = cfg.tau as f64 * cfg.p_u;
        for k in 0..users {
            let empirical = err2[k] / trials as f64;
            let predicted = beta[k] / (tau_pu * beta[k] + 1.0);
            assert!(
                (empirical / predicted - 1.0).abs() < 0.03,
                "column {k}: empirical {empirical} vs predicted {predicted}"
            );
        }
    }

    #[test]
    fn perfect_runs_are_deterministic() {
        let cfg = config(16, db(10.0), 4);
        let a = run_perfect_csi(&cfg, 500, 77).unwrap();
        let b = run_perfect_csi(&cfg, 500, 77).unwrap();
        assert_eq!(a, b);
        let c = run_imperfect_csi(&cfg, 500, 77).unwrap();
        let d = run_imperfect_csi(&cfg, 500, 77).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn vanishing_power_gives_vanishing_capacity() {
        let cfg = config(16, 1e-300, 4);
        let est = run_perfect_csi(&cfg, 200, 5).unwrap();
        assert!(est.mean_bits >= 0.0 && est.mean_bits < 1e-12);
    }

    #[test]
    fn tiny_array_still_dominates_bound() {
        // M = 3, K = 2: the smallest array the bound is stated for.
        let cfg = SystemConfig::new(
            3,
            db(10.0),
            2,
            CellGeometry::new(100.0, 1000.0, 2).unwrap(),
            FadingParams::mean_normalized(3.3, 3.6).unwrap(),
        )
        .unwrap();
        let sim = run_perfect_csi(&cfg, 100_000, 13).unwrap();
        let bound = cell_average_perfect(&cfg).unwrap();
        assert!(
            sim.mean_bits >= bound.bits - sim.ci_half_width,
            "sim {} +/- {} below bound {}",
            sim.mean_bits,
            sim.ci_half_width,
            bound.bits
        );
    }

    #[test]
    fn imperfect_approaches_perfect_as_pilot_length_grows() {
        // τ p_u → ∞ must be driven through the pilot length: growing p_u
        // alone also scales the data power, leaving a constant K/τ
        // self-noise floor. With τ huge the estimate is exact relative to
        // the data SNR and the imperfect pipeline reproduces perfect CSI.
        let cfg = SystemConfig::new(
            32,
            db(10.0),
            10_000_000,
            CellGeometry::new(100.0, 1000.0, 6).unwrap(),
            FadingParams::mean_normalized(3.3, 3.6).unwrap(),
        )
        .unwrap();
        let perfect = run_perfect_csi(&cfg, 20_000, 21).unwrap();
        let imperfect = run_imperfect_csi(&cfg, 20_000, 21).unwrap();
        let gap = (perfect.mean_bits - imperfect.mean_bits).abs();
        assert!(
            gap <= perfect.ci_half_width + imperfect.ci_half_width,
            "gap {gap} exceeds combined CI"
        );
    }

    #[test]
    fn imperfect_below_perfect_at_finite_snr() {
        let cfg = config(64, db(10.0), 9);
        let perfect = run_perfect_csi(&cfg, 10_000, 33).unwrap();
        let imperfect = run_imperfect_csi(&cfg, 10_000, 33).unwrap();
        assert!(
            imperfect.mean_bits < perfect.mean_bits,
            "imperfect {} not below perfect {}",
            imperfect.mean_bits,
            perfect.mean_bits
        );
    }

    #[test]
    fn ci_scales_as_inverse_square_root() {
        let cfg = config(32, db(10.0), 6);
        let small = run_perfect_csi(&cfg, 1_000, 41).unwrap();
        let large = run_perfect_csi(&cfg, 100_000, 41).unwrap();
        let ratio = small.ci_half_width / large.ci_half_width;
        assert!(
            (ratio / 10.0 - 1.0).abs() < 0.2,
            "CI ratio {ratio} not within 20% of sqrt(100)"
        );
    }
}
