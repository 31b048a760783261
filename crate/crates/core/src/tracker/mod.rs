//! Multi-object-particle multi-Bernoulli path tracker.
//!
//! Each Bernoulli component is one candidate eigenpath with an existence
//! weight and a Gaussian `(τ, a)` state. A step predicts every component,
//! samples `M` particles (inclusion sets), finds each particle's single best
//! association by auction, weights the particles by their association
//! likelihood, merges the per-particle EKF updates back into components,
//! prunes/confirms, and finally turns the measurements left unassociated by
//! the best particle into births for the next step.

mod association;
mod transition;

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PathState;
use crate::measure::{ClutterModel, Observation};

pub use association::{
    associate, association_log_likelihood, build_gating, ekf_update, Association, GateEntry, GatingTable,
};
pub use transition::{predict_state, transition_jacobian, MotionModel};

use association::{psd_repair, symmetrize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub p_survival: f64,
    pub p_detect: f64,
    /// Expected clutter count per epoch.
    pub clutter_rate: f64,
    pub birth_weight: f64,
    pub birth_cov: [[f64; 2]; 2],
    pub process_noise_q: [[f64; 2]; 2],
    pub measurement_noise_r: [[f64; 2]; 2],
    pub num_particles: usize,
    pub prune_threshold: f64,
    pub confirm_threshold: f64,
    pub exist_threshold: f64,
    /// Mahalanobis gate radius.
    pub gate_radius: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            p_survival: 0.999,
            p_detect: 0.99,
            clutter_rate: 1.0,
            birth_weight: 0.1,
            birth_cov: [[1e-4, 0.0], [0.0, 1e-6]],
            process_noise_q: [[1e-4, 0.0], [0.0, 1e-6]],
            measurement_noise_r: [[1e-5, 0.0], [0.0, 1e-6]],
            num_particles: 200,
            prune_threshold: 1e-4,
            confirm_threshold: 0.75,
            exist_threshold: 0.25,
            gate_radius: 4.0,
        }
    }
}

fn matrix(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

fn check_covariance(field: &'static str, m: &[[f64; 2]; 2]) -> Result<()> {
    let p = matrix(m);
    let symmetric = (p[(0, 1)] - p[(1, 0)]).abs() <= 1e-15 * p.norm();
    if !symmetric || p[(0, 0)] < 0.0 || p[(1, 1)] < 0.0 || p.determinant() < 0.0 || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::config(field, "must be a symmetric positive semidefinite 2x2 matrix"));
    }
    Ok(())
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("tracker.p_survival", self.p_survival),
            ("tracker.p_detect", self.p_detect),
            ("tracker.birth_weight", self.birth_weight),
            ("tracker.prune_threshold", self.prune_threshold),
            ("tracker.confirm_threshold", self.confirm_threshold),
            ("tracker.exist_threshold", self.exist_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if !(self.prune_threshold < self.exist_threshold && self.exist_threshold < self.confirm_threshold) {
            return Err(Error::config(
                "tracker.exist_threshold",
                "thresholds must satisfy prune < exist < confirm",
            ));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(Error::config("tracker.clutter_rate", "must be non-negative"));
        }
        if self.num_particles == 0 {
            return Err(Error::config("tracker.num_particles", "must be at least 1"));
        }
        if !(self.gate_radius > 0.0) {
            return Err(Error::config("tracker.gate_radius", "must be positive"));
        }
        check_covariance("tracker.birth_cov", &self.birth_cov)?;
        check_covariance("tracker.process_noise_q", &self.process_noise_q)?;
        check_covariance("tracker.measurement_noise_r", &self.measurement_noise_r)?;
        Ok(())
    }

    pub fn q_matrix(&self) -> Matrix2<f64> {
        matrix(&self.process_noise_q)
    }

    pub fn r_matrix(&self) -> Matrix2<f64> {
        matrix(&self.measurement_noise_r)
    }

    pub fn birth_matrix(&self) -> Matrix2<f64> {
        matrix(&self.birth_cov)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MbComponent {
    pub id: u64,
    pub weight: f64,
    pub mean: PathState,
    pub cov: Matrix2<f64>,
    /// Sticky once the weight has exceeded the confirmation threshold.
    pub confirmed: bool,
    /// Amplitude of the last associated measurement.
    pub amplitude: f64,
}

impl MbComponent {
    pub fn mean_vec(&self) -> Vector2<f64> {
        Vector2::new(self.mean.delay, self.mean.doppler)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MbDensity {
    pub epoch: usize,
    pub components: Vec<MbComponent>,
}

/// One sampled hypothesis about which components exist, with its best
/// association and the resulting per-component posteriors.
#[derive(Clone, Debug)]
pub struct MultiObjectParticle {
    pub included: Vec<usize>,
    pub theta: Vec<Option<usize>>,
    pub log_likelihood: f64,
    pub weight: f64,
    /// Updated `(mean, cov)` per entry of `included`.
    pub posteriors: Vec<(Vector2<f64>, Matrix2<f64>)>,
}

/// Reported path estimate of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEstimate {
    pub id: u64,
    pub weight: f64,
    pub state: PathState,
    pub cov: Matrix2<f64>,
    pub confirmed: bool,
    pub existing: bool,
    pub amplitude: f64,
}

/// Output of one tracker step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    /// Every surviving component after pruning (before births).
    pub tracks: Vec<TrackEstimate>,
    pub n_hat: usize,
}

impl StepReport {
    pub fn estimates(&self) -> Vec<PathState> {
        self.tracks.iter().filter(|t| t.existing).map(|t| t.state).collect()
    }

    pub fn existing(&self) -> impl Iterator<Item = &TrackEstimate> {
        self.tracks.iter().filter(|t| t.existing)
    }
}

/// New components from measurements, weight `w_b`, covariance `P_b`.
pub fn birth(unassociated: &[Observation], cfg: &TrackerConfig, next_id: &mut u64) -> Vec<MbComponent> {
    unassociated
        .iter()
        .map(|o| {
            let id = *next_id;
            *next_id += 1;
            MbComponent {
                id,
                weight: cfg.birth_weight,
                mean: o.z,
                cov: cfg.birth_matrix(),
                confirmed: false,
                amplitude: o.amplitude.unwrap_or(1.0),
            }
        })
        .collect()
}

/// Survival, state transition and covariance propagation of every component.
pub fn predict(density: &MbDensity, cfg: &TrackerConfig, motion: &MotionModel) -> Result<MbDensity> {
    let q = cfg.q_matrix();
    let components = density
        .components
        .iter()
        .map(|c| {
            let f = transition_jacobian(&c.mean, motion)?;
            let mean = predict_state(&c.mean, motion)?;
            let cov = symmetrize(&(f * c.cov * f.transpose() + q));
            Ok(MbComponent {
                weight: cfg.p_survival * c.weight,
                mean,
                cov,
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MbDensity {
        epoch: density.epoch + 1,
        components,
    })
}

/// Draw `m` inclusion sets: component `i` is in a set when `u < w_i`.
pub fn sample_particles<G: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut G) -> Vec<Vec<usize>> {
    (0..m)
        .map(|_| {
            weights
                .iter()
                .enumerate()
                .filter_map(|(i, &w)| (rng.random::<f64>() < w).then_some(i))
                .collect()
        })
        .collect()
}

/// Exponentiate and normalise log-likelihoods. If every particle is
/// impossible the weights fall back to uniform.
pub fn normalize_log_weights(log_l: &[f64]) -> Vec<f64> {
    let max = log_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / log_l.len() as f64; log_l.len()];
    }
    let w: Vec<f64> = log_l.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Particle-weighted existence, mean and covariance (with spread-of-means
/// term) per component. Components in no particle keep their predicted state
/// with zero weight.
pub fn merge_posterior(predicted: &[MbComponent], particles: &[MultiObjectParticle]) -> Vec<MbComponent> {
    let n = predicted.len();
    let mut weight = vec![0.0f64; n];
    let mut mean_acc = vec![Vector2::<f64>::zeros(); n];
    for p in particles {
        for (k, &i) in p.included.iter().enumerate() {
            weight[i] += p.weight;
            mean_acc[i] += p.posteriors[k].0 * p.weight;
        }
    }
    let means: Vec<Vector2<f64>> = (0..n)
        .map(|i| {
            if weight[i] > 0.0 {
                mean_acc[i] / weight[i]
            } else {
                predicted[i].mean_vec()
            }
        })
        .collect();
    let mut cov_acc = vec![Matrix2::<f64>::zeros(); n];
    for p in particles {
        for (k, &i) in p.included.iter().enumerate() {
            let (m, c) = &p.posteriors[k];
            let d = m - means[i];
            cov_acc[i] += (c + d * d.transpose()) * p.weight;
        }
    }
    predicted
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if weight[i] > 0.0 {
                MbComponent {
                    weight: weight[i].min(1.0),
                    mean: PathState::new(means[i][0], means[i][1]),
                    cov: psd_repair(&(cov_acc[i] / weight[i])),
                    ..c.clone()
                }
            } else {
                MbComponent {
                    weight: 0.0,
                    ..c.clone()
                }
            }
        })
        .collect()
}

/// Drop weak components, update confirmation and report existing paths.
pub fn prune_confirm(density: &MbDensity, cfg: &TrackerConfig) -> (MbDensity, Vec<TrackEstimate>, usize) {
    let mut components = Vec::new();
    let mut tracks = Vec::new();
    for c in &density.components {
        if c.weight < cfg.prune_threshold {
            continue;
        }
        let confirmed = c.confirmed || c.weight > cfg.confirm_threshold;
        let existing = confirmed && c.weight > cfg.exist_threshold;
        let kept = MbComponent { confirmed, ..c.clone() };
        tracks.push(TrackEstimate {
            id: kept.id,
            weight: kept.weight,
            state: kept.mean,
            cov: kept.cov,
            confirmed,
            existing,
            amplitude: kept.amplitude,
        });
        components.push(kept);
    }
    let n_hat = tracks.iter().filter(|t| t.existing).count();
    (
        MbDensity {
            epoch: density.epoch,
            components,
        },
        tracks,
        n_hat,
    )
}

/// The recursive filter state.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub motion: MotionModel,
    pub clutter: ClutterModel,
    pub density: MbDensity,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, motion: MotionModel, clutter: ClutterModel) -> Result<Self> {
        cfg.validate()?;
        if !(clutter.volume() > 0.0) {
            return Err(Error::config("tracker.surveillance_window", "must have positive area"));
        }
        Ok(Self {
            cfg,
            motion,
            clutter,
            density: MbDensity::default(),
            next_id: 0,
        })
    }

    /// One full recursion on the measurement set of the next epoch.
    pub fn step<G: Rng + ?Sized>(&mut self, obs: &[Observation], rng: &mut G) -> Result<StepReport> {
        let cfg = &self.cfg;
        let predicted = predict(&self.density, cfg, &self.motion)?;
        let comps = &predicted.components;
        let gating = build_gating(comps, obs, cfg)?;
        let weights: Vec<f64> = comps.iter().map(|c| c.weight).collect();
        let sets = sample_particles(&weights, cfg.num_particles, rng);

        let volume = self.clutter.volume();
        let mut cache: HashMap<Vec<usize>, Association> = HashMap::new();
        let associations: Vec<Association> = sets
            .iter()
            .map(|set| {
                cache
                    .entry(set.clone())
                    .or_insert_with(|| associate(set, &gating, cfg, volume))
                    .clone()
            })
            .collect();
        let log_l: Vec<f64> = associations.iter().map(|a| a.log_likelihood).collect();
        let particle_w = normalize_log_weights(&log_l);

        let particles: Vec<MultiObjectParticle> = sets
            .into_iter()
            .zip(associations)
            .zip(&particle_w)
            .map(|((included, assoc), &weight)| {
                let posteriors = included
                    .iter()
                    .zip(&assoc.theta)
                    .map(|(&i, t)| match t.and_then(|j| gating.entries[i][j]) {
                        Some(e) => (e.mean, e.cov),
                        None => (comps[i].mean_vec(), comps[i].cov),
                    })
                    .collect();
                MultiObjectParticle {
                    included,
                    theta: assoc.theta,
                    log_likelihood: assoc.log_likelihood,
                    weight,
                    posteriors,
                }
            })
            .collect();

        let mut merged = merge_posterior(comps, &particles);
        let map = particles
            .iter()
            .enumerate()
            .fold(0, |best, (l, p)| if p.weight > particles[best].weight { l } else { best });
        let mut used = vec![false; obs.len()];
        if let Some(p) = particles.get(map) {
            for (&i, t) in p.included.iter().zip(&p.theta) {
                if let Some(j) = *t {
                    used[j] = true;
                    if let Some(a) = obs[j].amplitude {
                        merged[i].amplitude = a;
                    }
                }
            }
        }

        let (mut density, tracks, n_hat) = prune_confirm(
            &MbDensity {
                epoch: predicted.epoch,
                components: merged,
            },
            cfg,
        );
        let unassociated: Vec<Observation> = obs
            .iter()
            .zip(&used)
            .filter_map(|(o, &u)| (!u).then_some(*o))
            .collect();
        density.components.extend(birth(&unassociated, cfg, &mut self.next_id));
        self.density = density;
        Ok(StepReport {
            epoch: predicted.epoch,
            tracks,
            n_hat,
        })
    }
}

#[cfg(test)]
mod tests;
