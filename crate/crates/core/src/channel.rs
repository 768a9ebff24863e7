//! Stochastic channel models: gamma shadowing, Nakagami fast fading, distance
//! path loss, radial user placement inside an annular cell, and assembly of
//! full channel realizations G = H · diag(√β).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::bounds::SystemConfig;
use crate::error::{Error, Result};

/// Fading parameters: gamma shadowing shape/scale, Nakagami fast-fading
/// shape, and the distance path-loss exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingParams {
    /// Gamma shadowing shape mₖ.
    pub m_shadow: f64,
    /// Gamma shadowing scale Ωₖ.
    pub omega: f64,
    /// Nakagami shape of the fast-fading envelope (1 = Rayleigh).
    pub m_fast: f64,
    /// Path-loss exponent v.
    pub path_loss_exponent: f64,
}

impl FadingParams {
    pub fn new(m_shadow: f64, omega: f64, m_fast: f64, path_loss_exponent: f64) -> Result<Self> {
        if !(m_shadow > 0.0) || !(omega > 0.0) {
            return Err(Error::Config(format!(
                "shadowing shape and scale must be positive, got ({m_shadow}, {omega})"
            )));
        }
        if !(m_fast >= 0.5) {
            return Err(Error::Config(format!(
                "Nakagami fast-fading shape must be >= 0.5, got {m_fast}"
            )));
        }
        if !(2.0..=6.0).contains(&path_loss_exponent) {
            return Err(Error::Config(format!(
                "path-loss exponent must lie in [2, 6], got {path_loss_exponent}"
            )));
        }
        Ok(Self {
            m_shadow,
            omega,
            m_fast,
            path_loss_exponent,
        })
    }

    /// Shadowing normalized to unit mean (Ω = 1/m) with Rayleigh fast fading.
    pub fn mean_normalized(m_shadow: f64, path_loss_exponent: f64) -> Result<Self> {
        Self::new(m_shadow, 1.0 / m_shadow, 1.0, path_loss_exponent)
    }
}

/// Annular cell: users placed uniformly over area between the exclusion
/// radius and the cell edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    /// Exclusion radius R₀ (no user closer to the base station).
    pub exclusion_radius: f64,
    /// Outer cell radius R.
    pub cell_radius: f64,
    /// Number of users K.
    pub users: usize,
}

impl CellGeometry {
    pub fn new(exclusion_radius: f64, cell_radius: f64, users: usize) -> Result<Self> {
        if !(exclusion_radius > 0.0) || !(cell_radius > exclusion_radius) {
            return Err(Error::Config(format!(
                "cell radii must satisfy 0 < R0 < R, got R0={exclusion_radius}, R={cell_radius}"
            )));
        }
        if users == 0 {
            return Err(Error::Config("cell must contain at least one user".into()));
        }
        Ok(Self {
            exclusion_radius,
            cell_radius,
            users,
        })
    }
}

/// One draw of the uplink channel: fast fading H, large-scale gains β, their
/// product G, and the user distances that produced β.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// M×K channel matrix, G = H · diag(√β).
    pub g: DMatrix<Complex64>,
    /// M×K unit-power fast-fading matrix.
    pub h: DMatrix<Complex64>,
    /// Per-user large-scale gain βₖ = μₖ / Dₖ^v.
    pub beta: Vec<f64>,
    /// Per-user distance to the base station in meters.
    pub distances: Vec<f64>,
}

/// Large-scale channel gain β = μ / D^v.
pub fn large_scale_gain(mu: f64, distance: f64, path_loss_exponent: f64) -> f64 {
    mu / distance.powf(path_loss_exponent)
}

/// One gamma shadowing variate μ ~ Gamma(m_shadow, omega).
pub fn sample_shadowing<R: Rng + ?Sized>(params: &FadingParams, rng: &mut R) -> f64 {
    Gamma::new(params.m_shadow, params.omega)
        .expect("validated fading parameters")
        .sample(rng)
}

/// One fast-fading coefficient: Nakagami envelope with uniform phase.
///
/// The envelope power |h|² is Gamma(m_fast, 1/m_fast), so E[|h|²] = 1; for
/// m_fast = 1 the output is circularly-symmetric complex Gaussian with unit
/// variance.
pub fn sample_fast_fading<R: Rng + ?Sized>(m_fast: f64, rng: &mut R) -> Complex64 {
    let power: f64 = Gamma::new(m_fast, 1.0 / m_fast)
        .expect("validated Nakagami shape")
        .sample(rng);
    let envelope = power.sqrt();
    let phase = std::f64::consts::TAU * rng.random::<f64>();
    Complex64::from_polar(envelope, phase)
}

/// Distance at quantile `u` of the radial placement law, the inverse CDF of
/// the pdf f(x) ∝ x on [R₀, R]: D = √(R₀² + u·(R² − R₀²)).
pub fn distance_quantile(geom: &CellGeometry, u: f64) -> f64 {
    let r0sq = geom.exclusion_radius * geom.exclusion_radius;
    let rsq = geom.cell_radius * geom.cell_radius;
    (r0sq + u * (rsq - r0sq)).sqrt()
}

/// One user distance drawn from the radial placement law.
pub fn sample_user_distance<R: Rng + ?Sized>(geom: &CellGeometry, rng: &mut R) -> f64 {
    distance_quantile(geom, rng.random::<f64>())
}

/// Scale the columns of a fast-fading matrix by √β to form G.
pub fn apply_large_scale(h: &DMatrix<Complex64>, beta: &[f64]) -> DMatrix<Complex64> {
    let mut g = h.clone();
    for (k, &b) in beta.iter().enumerate() {
        let root = b.sqrt();
        for entry in g.column_mut(k).iter_mut() {
            *entry *= root;
        }
    }
    g
}

/// Draw a full channel realization for the given user distances.
///
/// Per user: fresh shadowing variate and a fresh column of i.i.d. fast
/// fading. The fill order is fixed (users outermost, antennas inner) so a
/// given RNG stream always produces the same realization bit for bit.
pub fn realize_channel<R: Rng + ?Sized>(
    config: &SystemConfig,
    params: &FadingParams,
    distances: &[f64],
    rng: &mut R,
) -> Result<ChannelRealization> {
    let m = config.m_antennas;
    let k = config.users();
    if m <= k {
        return Err(Error::Config(format!(
            "zero-forcing requires more antennas than users (M={m}, K={k})"
        )));
    }
    if distances.len() != k {
        return Err(Error::Config(format!(
            "expected {k} user distances, got {}",
            distances.len()
        )));
    }
    let geom = &config.geometry;
    for &d in distances {
        if !(geom.exclusion_radius..=geom.cell_radius).contains(&d) {
            return Err(Error::Config(format!(
                "user distance {d} outside [{}, {}]",
                geom.exclusion_radius, geom.cell_radius
            )));
        }
    }

    let mut beta = Vec::with_capacity(k);
    for &d in distances {
        let mu = sample_shadowing(params, rng);
        beta.push(large_scale_gain(mu, d, params.path_loss_exponent));
    }

    let mut entries = Vec::with_capacity(m * k);
    for _ in 0..k {
        for _ in 0..m {
            entries.push(sample_fast_fading(params.m_fast, rng));
        }
    }
    let h = DMatrix::from_vec(m, k, entries);
    let g = apply_large_scale(&h, &beta);

    Ok(ChannelRealization {
        g,
        h,
        beta,
        distances: distances.to_vec(),
    })
}
