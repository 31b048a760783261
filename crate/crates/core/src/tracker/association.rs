//! Gating and single-best association per multi-object particle.

use nalgebra::{Matrix2, Vector2};

use crate::assign::{auction, Benefits};
use crate::error::{Error, Result};
use crate::measure::Observation;

use super::{MbComponent, TrackerConfig};

/// Result of updating one component with one gated measurement.
#[derive(Clone, Copy, Debug)]
pub struct GateEntry {
    /// `log(p_D N(z; m, S))`.
    pub log_likelihood: f64,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Per component, per measurement gate outcome.
#[derive(Clone, Debug)]
pub struct GatingTable {
    pub entries: Vec<Vec<Option<GateEntry>>>,
    pub measurements: usize,
}

pub(crate) fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// Symmetric part of `p`, with negative eigenvalues clamped to zero when
/// the matrix is not positive semidefinite.
pub(crate) fn psd_repair(p: &Matrix2<f64>) -> Matrix2<f64> {
    let s = symmetrize(p);
    let tol = -1e-12 * s.trace().abs().max(f64::MIN_POSITIVE);
    if s[(0, 0)] >= tol && s[(1, 1)] >= tol && s.determinant() >= tol * s.trace().abs() {
        return s;
    }
    let eig = s.symmetric_eigen();
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    symmetrize(&(eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Kalman update with identity observation matrix.
pub fn ekf_update(
    mean: &Vector2<f64>,
    cov: &Matrix2<f64>,
    z: &Vector2<f64>,
    r: &Matrix2<f64>,
) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    let s = cov + r;
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let k = cov * s_inv;
    let m = mean + k * (z - mean);
    let p = cov - k * s * k.transpose();
    Ok((m, psd_repair(&p)))
}

fn log_gaussian(nu: &Vector2<f64>, s: &Matrix2<f64>, s_inv: &Matrix2<f64>) -> f64 {
    let d2 = (nu.transpose() * s_inv * nu)[(0, 0)];
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * s.determinant().ln() - 0.5 * d2
}

pub fn build_gating(components: &[MbComponent], obs: &[Observation], cfg: &TrackerConfig) -> Result<GatingTable> {
    let r = cfg.r_matrix();
    let gate2 = cfg.gate_radius * cfg.gate_radius;
    let log_pd = cfg.p_detect.ln();
    let entries = components
        .iter()
        .map(|c| {
            let mean = c.mean_vec();
            let s = c.cov + r;
            let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
            obs.iter()
                .map(|o| {
                    let z = Vector2::new(o.z.delay, o.z.doppler);
                    let nu = z - mean;
                    let d2 = (nu.transpose() * s_inv * nu)[(0, 0)];
                    if d2 > gate2 || cfg.p_detect <= 0.0 {
                        return Ok(None);
                    }
                    let (m, p) = ekf_update(&mean, &c.cov, &z, &r)?;
                    Ok(Some(GateEntry {
                        log_likelihood: log_pd + log_gaussian(&nu, &s, &s_inv),
                        mean: m,
                        cov: p,
                    }))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GatingTable {
        entries,
        measurements: obs.len(),
    })
}

/// Data-association hypothesis of one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    /// Measurement index per included component (`None` = missed).
    pub theta: Vec<Option<usize>>,
    /// Natural log of the association likelihood.
    pub log_likelihood: f64,
}

fn clutter_log_intensity(cfg: &TrackerConfig, volume: f64) -> f64 {
    if cfg.clutter_rate > 0.0 {
        (cfg.clutter_rate / volume).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log of `e^{-λ_c} (λ_c/V)^{N_FA} Π p_D N(z; ẑ, S) Π (1 - p_D)`, with
/// `0 · log 0 = 0`.
pub fn association_log_likelihood(
    theta: &[Option<usize>],
    included: &[usize],
    gating: &GatingTable,
    cfg: &TrackerConfig,
    volume: f64,
) -> f64 {
    let kappa = clutter_log_intensity(cfg, volume);
    let mut total = -cfg.clutter_rate;
    let mut detected = 0;
    for (&i, t) in included.iter().zip(theta) {
        match t {
            Some(j) => match &gating.entries[i][*j] {
                Some(e) => {
                    total += e.log_likelihood;
                    detected += 1;
                }
                None => return f64::NEG_INFINITY,
            },
            None => total += (1.0 - cfg.p_detect).ln(),
        }
    }
    let false_alarms = gating.measurements - detected;
    if false_alarms > 0 {
        total += false_alarms as f64 * kappa;
    }
    total
}

/// Most probable association for the components in `included`.
pub fn associate(included: &[usize], gating: &GatingTable, cfg: &TrackerConfig, volume: f64) -> Association {
    let nz = gating.measurements;
    let n = included.len();
    let kappa = clutter_log_intensity(cfg, volume);
    let miss = (1.0 - cfg.p_detect).ln();
    // Without clutter every unused measurement zeroes the likelihood, so
    // detections dominate lexicographically: a bonus larger than any
    // likelihood spread stands in for -κ = +∞.
    let detect_offset = if kappa.is_finite() { -kappa } else { 1e6 };
    let cols = nz + n;
    let benefit: Benefits = included
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let mut r: Vec<Option<f64>> = gating.entries[i]
                .iter()
                .map(|e| e.map(|e| e.log_likelihood + detect_offset))
                .collect();
            r.extend((0..n).map(|k| (k == row && miss.is_finite()).then_some(miss)));
            r
        })
        .collect();
    let theta: Vec<Option<usize>> = match auction(&benefit, cols) {
        Some(cols_of) => cols_of.into_iter().map(|j| (j < nz).then_some(j)).collect(),
        None => vec![None; n],
    };
    let log_likelihood = association_log_likelihood(&theta, included, gating, cfg, volume);
    Association { theta, log_likelihood }
}
