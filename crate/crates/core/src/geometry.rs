//! Mirror-reflection ray geometry for shallow water.
//!
//! Transmitter and receiver sit at the same depth. Every boundary bounce is
//! unfolded into an image source, so a path is fully described by the
//! horizontal range `D1` (shared by all paths) and an equivalent vertical
//! offset `D2` that depends only on the reflection sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Receiver (and transmitter) depth below the surface, m.
    pub receiver_depth_h10: f64,
    /// Distance from the receiver depth to the bottom, m.
    pub bottom_clearance_h20: f64,
    /// Horizontal range at the first epoch, m.
    pub initial_range_dsr: f64,
    /// Relative speed, m/s. Positive when the ends close on each other.
    pub relative_speed_v: f64,
    pub sound_speed_c: f64,
    /// Observation interval between epochs, s.
    pub block_length_t: f64,
    pub spreading_exponent_beta: f64,
    pub max_reflections: usize,
    /// Amplitude multiplier applied per surface bounce.
    pub surface_loss: f64,
    /// Amplitude multiplier applied per bottom bounce.
    pub bottom_loss: f64,
    /// Scales each path's Doppler deviation from the path-mean Doppler when
    /// rendering ground truth. 1.0 leaves the ray geometry untouched.
    pub doppler_spread_multiplier: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            receiver_depth_h10: 50.0,
            bottom_clearance_h20: 100.0,
            initial_range_dsr: 500.0,
            relative_speed_v: -5.0,
            sound_speed_c: 1500.0,
            block_length_t: 1.0,
            spreading_exponent_beta: 1.5,
            max_reflections: 2,
            surface_loss: 1.0,
            bottom_loss: 1.0,
            doppler_spread_multiplier: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scenario.receiver_depth_h10", self.receiver_depth_h10),
            ("scenario.bottom_clearance_h20", self.bottom_clearance_h20),
            ("scenario.initial_range_dsr", self.initial_range_dsr),
            ("scenario.sound_speed_c", self.sound_speed_c),
            ("scenario.block_length_t", self.block_length_t),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {value}")));
            }
        }
        if !(1.0..=2.0).contains(&self.spreading_exponent_beta) {
            return Err(Error::config(
                "scenario.spreading_exponent_beta",
                "must lie in [1, 2]",
            ));
        }
        if !self.relative_speed_v.is_finite() || self.relative_speed_v.abs() >= self.sound_speed_c {
            return Err(Error::config(
                "scenario.relative_speed_v",
                "must be finite and subsonic",
            ));
        }
        for (field, value) in [
            ("scenario.surface_loss", self.surface_loss),
            ("scenario.bottom_loss", self.bottom_loss),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::config(field, "must lie in (0, 1]"));
            }
        }
        if !(self.doppler_spread_multiplier >= 0.0 && self.doppler_spread_multiplier.is_finite()) {
            return Err(Error::config(
                "scenario.doppler_spread_multiplier",
                "must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn water_depth(&self) -> f64 {
        self.receiver_depth_h10 + self.bottom_clearance_h20
    }

    /// Horizontal range at a 1-based epoch.
    pub fn range_at(&self, epoch: usize) -> f64 {
        self.initial_range_dsr - self.relative_speed_v * self.block_length_t * (epoch as f64 - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Surface,
    Bottom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub label: usize,
    /// Boundary hits in propagation order; empty for the direct path.
    pub signature: Vec<Boundary>,
    /// Unfolded vertical offset `D2`, m.
    pub equivalent_depth: f64,
}

impl PathSpec {
    pub fn bounces(&self, boundary: Boundary) -> usize {
        self.signature.iter().filter(|&&b| b == boundary).count()
    }

    /// Product of per-bounce boundary losses.
    pub fn reflection_gain(&self, cfg: &ScenarioConfig) -> f64 {
        cfg.surface_loss.powi(self.bounces(Boundary::Surface) as i32)
            * cfg.bottom_loss.powi(self.bounces(Boundary::Bottom) as i32)
    }
}

/// Delay and Doppler scaling factor of one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub delay: f64,
    pub doppler: f64,
}

impl PathState {
    pub fn new(delay: f64, doppler: f64) -> Self {
        Self { delay, doppler }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathArrival {
    pub spec: PathSpec,
    pub amplitude: f64,
    pub state: PathState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSnapshot {
    pub epoch: usize,
    pub range_d1: f64,
    pub paths: Vec<PathArrival>,
}

impl ChannelSnapshot {
    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    pub fn states(&self) -> Vec<PathState> {
        self.paths.iter().map(|p| p.state).collect()
    }

    /// Stretch (or shrink) the spread of Doppler factors around their mean.
    pub fn with_doppler_spread(mut self, multiplier: f64) -> Self {
        if self.paths.is_empty() || multiplier == 1.0 {
            return self;
        }
        let mean = self.paths.iter().map(|p| p.state.doppler).sum::<f64>() / self.paths.len() as f64;
        for p in &mut self.paths {
            p.state.doppler = mean + multiplier * (p.state.doppler - mean);
        }
        self
    }

    /// Merge arrivals that share `(τ, a)` to within `tol_delay` and
    /// `tol_doppler`, summing their amplitudes. Such arrivals are physically
    /// indistinguishable: surface-bottom and bottom-surface paths, for
    /// instance, unfold to the same image depth.
    pub fn resolvable(&self, tol_delay: f64, tol_doppler: f64) -> Self {
        let mut paths: Vec<PathArrival> = Vec::with_capacity(self.paths.len());
        for p in &self.paths {
            let twin = paths.iter_mut().find(|q| {
                (q.state.delay - p.state.delay).abs() <= tol_delay
                    && (q.state.doppler - p.state.doppler).abs() <= tol_doppler
            });
            match twin {
                Some(q) => q.amplitude += p.amplitude,
                None => paths.push(p.clone()),
            }
        }
        Self {
            epoch: self.epoch,
            range_d1: self.range_d1,
            paths,
        }
    }
}

/// Direct path plus every image-source path with up to `max_reflections`
/// alternating boundary hits.
pub fn enumerate_paths(cfg: &ScenarioConfig) -> Vec<PathSpec> {
    let h10 = cfg.receiver_depth_h10;
    let h20 = cfg.bottom_clearance_h20;
    let depth = cfg.water_depth();
    let mut paths = vec![PathSpec {
        label: 0,
        signature: Vec::new(),
        equivalent_depth: 0.0,
    }];
    for n in 1..=cfg.max_reflections {
        for first in [Boundary::Surface, Boundary::Bottom] {
            let signature: Vec<Boundary> = (0..n)
                .map(|i| match (first, i % 2) {
                    (Boundary::Surface, 0) | (Boundary::Bottom, 1) => Boundary::Surface,
                    _ => Boundary::Bottom,
                })
                .collect();
            // Even bounce counts cross the full column n times; odd counts
            // add the leg to the first boundary and back.
            let equivalent_depth = if n % 2 == 0 {
                n as f64 * depth
            } else {
                let first_leg = match first {
                    Boundary::Surface => h10,
                    Boundary::Bottom => h20,
                };
                2.0 * first_leg + (n - 1) as f64 * depth
            };
            paths.push(PathSpec {
                label: paths.len(),
                signature,
                equivalent_depth,
            });
        }
    }
    paths
}

/// Delay and Doppler of a path at horizontal range `d1`.
pub fn path_params(d1: f64, spec: &PathSpec, cfg: &ScenarioConfig) -> Result<PathState> {
    if !(d1 > 0.0) {
        return Err(Error::NonPositive {
            what: "horizontal range D1",
            value: d1,
        });
    }
    let c = cfg.sound_speed_c;
    let delay = d1.hypot(spec.equivalent_depth) / c;
    let doppler = cfg.relative_speed_v * d1 / (c * c * delay);
    Ok(PathState { delay, doppler })
}

/// Recover `(D1, D2)` from a path state.
pub fn invert_params(state: &PathState, cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let v = cfg.relative_speed_v;
    if v == 0.0 {
        return Err(Error::InversionUndefined);
    }
    let c = cfg.sound_speed_c;
    let (tau, a) = (state.delay, state.doppler);
    let d1 = c * c * tau * a / v;
    let d2_sq = c * c * tau * tau - c.powi(4) * tau * tau * a * a / (v * v);
    Ok((d1, d2_sq.max(0.0).sqrt()))
}

/// Spreading-loss amplitude, unity for the direct path at the initial range.
pub fn amplitude_of(path_length: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if !(path_length > 0.0) {
        return Err(Error::NonPositive {
            what: "path length",
            value: path_length,
        });
    }
    Ok((path_length / cfg.initial_range_dsr).powf(-cfg.spreading_exponent_beta / 2.0))
}

fn arrival(d1: f64, spec: &PathSpec, cfg: &ScenarioConfig) -> Result<PathArrival> {
    let state = path_params(d1, spec, cfg)?;
    let amplitude = amplitude_of(d1.hypot(spec.equivalent_depth), cfg)? * spec.reflection_gain(cfg);
    Ok(PathArrival {
        spec: spec.clone(),
        amplitude,
        state,
    })
}

/// Ground-truth snapshot at a 1-based epoch, straight from the ray geometry.
pub fn snapshot_at(cfg: &ScenarioConfig, paths: &[PathSpec], epoch: usize) -> Result<ChannelSnapshot> {
    let range_d1 = cfg.range_at(epoch);
    let paths = paths
        .iter()
        .map(|spec| arrival(range_d1, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelSnapshot {
        epoch,
        range_d1,
        paths,
    })
}

/// Advance a snapshot by one block. The range opens by `-v T`.
pub fn evolve_snapshot(snap: &ChannelSnapshot, cfg: &ScenarioConfig) -> Result<ChannelSnapshot> {
    let range_d1 = snap.range_d1 - cfg.relative_speed_v * cfg.block_length_t;
    let paths = snap
        .paths
        .iter()
        .map(|p| arrival(range_d1, &p.spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelSnapshot {
        epoch: snap.epoch + 1,
        range_d1,
        paths,
    })
}

/// Ground truth for epochs `1..=epochs`, with the Doppler-spread knob applied.
pub fn ground_truth(cfg: &ScenarioConfig, epochs: usize) -> Result<Vec<ChannelSnapshot>> {
    let paths = enumerate_paths(cfg);
    (1..=epochs)
        .map(|k| Ok(snapshot_at(cfg, &paths, k)?.with_doppler_spread(cfg.doppler_spread_multiplier)))
        .collect()
}

/// CSV with columns `epoch,path_label,tau_s,doppler,amplitude`.
pub fn write_truth_csv<W: std::io::Write>(out: W, snapshots: &[ChannelSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "path_label", "tau_s", "doppler", "amplitude"])?;
    for snap in snapshots {
        for p in &snap.paths {
            w.write_record([
                snap.epoch.to_string(),
                p.spec.label.to_string(),
                p.state.delay.to_string(),
                p.state.doppler.to_string(),
                p.amplitude.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct() -> PathSpec {
        PathSpec {
            label: 0,
            signature: vec![],
            equivalent_depth: 0.0,
        }
    }

    fn with_d2(d2: f64) -> PathSpec {
        PathSpec {
            label: 1,
            signature: vec![Boundary::Surface],
            equivalent_depth: d2,
        }
    }

    #[test]
    fn five_paths_for_two_reflections() {
        let cfg = ScenarioConfig::default();
        let paths = enumerate_paths(&cfg);
        let d2: Vec<f64> = paths.iter().map(|p| p.equivalent_depth).collect();
        assert_eq!(d2, vec![0.0, 100.0, 200.0, 300.0, 300.0]);
        assert_eq!(paths[3].signature, vec![Boundary::Surface, Boundary::Bottom]);
        assert_eq!(paths[4].signature, vec![Boundary::Bottom, Boundary::Surface]);
    }

    #[test]
    fn direct_only_without_reflections() {
        let cfg = ScenarioConfig {
            max_reflections: 0,
            ..Default::default()
        };
        let paths = enumerate_paths(&cfg);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].equivalent_depth, 0.0);
    }

    #[test]
    fn symmetric_column_gives_equal_double_bounce_depths() {
        let cfg = ScenarioConfig {
            receiver_depth_h10: 70.0,
            bottom_clearance_h20: 70.0,
            max_reflections: 3,
            ..Default::default()
        };
        let paths = enumerate_paths(&cfg);
        assert_eq!(paths[3].equivalent_depth, 4.0 * 70.0);
        assert_eq!(paths[4].equivalent_depth, 4.0 * 70.0);
        // Third order: 2*h + 2*(2h) either way.
        assert_eq!(paths[5].equivalent_depth, 6.0 * 70.0);
        assert_eq!(paths[6].equivalent_depth, 6.0 * 70.0);
    }

    #[test]
    fn direct_path_params() {
        let cfg = ScenarioConfig::default();
        let s = path_params(500.0, &direct(), &cfg).unwrap();
        assert!((s.delay - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.doppler + 1.0 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn reflected_path_params() {
        let cfg = ScenarioConfig::default();
        let s = path_params(500.0, &with_d2(300.0), &cfg).unwrap();
        assert!((s.delay - 0.388_730_126_323_02).abs() < 1e-12);
        assert!((s.doppler + 2.858_309_752_375_147e-3).abs() < 1e-15);
        assert!((-3.4e-3..=-2.6e-3).contains(&s.doppler));
    }

    #[test]
    fn rejects_non_positive_range() {
        let cfg = ScenarioConfig::default();
        assert!(matches!(
            path_params(0.0, &direct(), &cfg),
            Err(Error::NonPositive { .. })
        ));
        assert!(path_params(-1.0, &direct(), &cfg).is_err());
    }

    #[test]
    fn invert_examples() {
        let cfg = ScenarioConfig::default();
        let (d1, d2) = invert_params(&PathState::new(1.0 / 3.0, -1.0 / 300.0), &cfg).unwrap();
        assert!((d1 - 500.0).abs() < 1e-9);
        assert!(d2.abs() < 1e-5);

        let s = path_params(500.0, &with_d2(300.0), &cfg).unwrap();
        let (d1, d2) = invert_params(&s, &cfg).unwrap();
        assert!((d1 - 500.0).abs() < 1e-6);
        assert!((d2 - 300.0).abs() < 1e-6);

        let (d1, d2) = invert_params(&PathState::new(0.4, 0.0), &cfg).unwrap();
        assert_eq!(d1, 0.0);
        assert!((d2 - 600.0).abs() < 1e-12);
    }

    #[test]
    fn invert_rejects_static_geometry() {
        let cfg = ScenarioConfig {
            relative_speed_v: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            invert_params(&PathState::new(0.3, 0.0), &cfg),
            Err(Error::InversionUndefined)
        ));
    }

    #[test]
    fn amplitude_examples() {
        let cfg = ScenarioConfig::default();
        assert_eq!(amplitude_of(500.0, &cfg).unwrap(), 1.0);
        assert!((amplitude_of(1000.0, &cfg).unwrap() - 0.594_603_557_501_360_5).abs() < 1e-15);
        let spherical = ScenarioConfig {
            spreading_exponent_beta: 2.0,
            ..Default::default()
        };
        assert!((amplitude_of(1000.0, &spherical).unwrap() - 0.5).abs() < 1e-15);
        assert!(amplitude_of(0.0, &cfg).is_err());
    }

    #[test]
    fn boundary_losses_multiply() {
        let cfg = ScenarioConfig {
            surface_loss: 0.5,
            bottom_loss: 0.8,
            ..Default::default()
        };
        let paths = enumerate_paths(&cfg);
        let snap = snapshot_at(&cfg, &paths, 1).unwrap();
        let free = snapshot_at(&ScenarioConfig::default(), &paths, 1).unwrap();
        assert!((snap.paths[3].amplitude - 0.4 * free.paths[3].amplitude).abs() < 1e-15);
    }

    #[test]
    fn static_geometry_does_not_evolve() {
        let cfg = ScenarioConfig {
            relative_speed_v: 0.0,
            ..Default::default()
        };
        let snap = snapshot_at(&cfg, &enumerate_paths(&cfg), 1).unwrap();
        let next = evolve_snapshot(&snap, &cfg).unwrap();
        assert_eq!(snap.states(), next.states());
        assert_eq!(next.epoch, 2);
    }

    #[test]
    fn direct_delay_grows_as_range_opens() {
        let cfg = ScenarioConfig::default();
        let mut snap = snapshot_at(&cfg, &enumerate_paths(&cfg), 1).unwrap();
        assert!((snap.paths[0].state.delay - 1.0 / 3.0).abs() < 1e-15);
        for _ in 0..25 {
            let next = evolve_snapshot(&snap, &cfg).unwrap();
            assert!(next.paths[0].state.delay > snap.paths[0].state.delay);
            assert!((next.range_d1 - snap.range_d1 - 5.0).abs() < 1e-12);
            snap = next;
        }
        // evolve and direct construction agree
        let direct = snapshot_at(&cfg, &enumerate_paths(&cfg), 26).unwrap();
        for (a, b) in snap.paths.iter().zip(&direct.paths) {
            assert!((a.state.delay - b.state.delay).abs() < 1e-12);
        }
    }

    #[test]
    fn doppler_spread_knob_preserves_mean() {
        let cfg = ScenarioConfig::default();
        let snap = snapshot_at(&cfg, &enumerate_paths(&cfg), 1).unwrap();
        let mean = |s: &ChannelSnapshot| s.paths.iter().map(|p| p.state.doppler).sum::<f64>() / 5.0;
        let wide = snap.clone().with_doppler_spread(2.0);
        assert!((mean(&snap) - mean(&wide)).abs() < 1e-15);
        let spread = |s: &ChannelSnapshot| {
            let d: Vec<f64> = s.paths.iter().map(|p| p.state.doppler).collect();
            d.iter().cloned().fold(f64::MIN, f64::max) - d.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!((spread(&wide) - 2.0 * spread(&snap)).abs() < 1e-15);
    }

    #[test]
    fn resolvable_merges_mirror_image_paths() {
        let snap = &ground_truth(&ScenarioConfig::default(), 1).unwrap()[0];
        let merged = snap.resolvable(1e-9, 1e-12);
        assert_eq!(merged.path_count(), 4);
        assert_eq!(merged.paths[3].amplitude, snap.paths[3].amplitude + snap.paths[4].amplitude);
        assert_eq!(merged.paths[..3], snap.paths[..3]);
    }

    #[test]
    fn truth_csv_layout() {
        let cfg = ScenarioConfig::default();
        let truth = ground_truth(&cfg, 2).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &truth).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,path_label,tau_s,doppler,amplitude"));
        assert_eq!(text.lines().count(), 1 + 10);
        assert!(lines.next().unwrap().starts_with("1,0,0.333"));
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = ScenarioConfig {
            spreading_exponent_beta: 2.5,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => {
                assert_eq!(field, "scenario.spreading_exponent_beta")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn inversion_round_trips(
            d1 in 10.0f64..5000.0,
            d2 in 0.0f64..2000.0,
            v in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0],
        ) {
            let cfg = ScenarioConfig { relative_speed_v: v, ..Default::default() };
            let s = path_params(d1, &with_d2(d2), &cfg).unwrap();
            let (r1, r2) = invert_params(&s, &cfg).unwrap();
            // D2 comes out of a difference of squares, so the error is bounded
            // relative to the path length rather than to D2 itself.
            let scale = d1.hypot(d2);
            prop_assert!((r1 - d1).abs() <= 1e-12 * scale);
            prop_assert!((r2 - d2).abs() <= 1e-6 * scale);
        }

        #[test]
        fn doppler_bounded_and_ordered(d1 in 10.0f64..5000.0, v in -20.0f64..20.0) {
            let cfg = ScenarioConfig { relative_speed_v: v, max_reflections: 4, ..Default::default() };
            let mut paths = enumerate_paths(&cfg);
            paths.sort_by(|a, b| a.equivalent_depth.partial_cmp(&b.equivalent_depth).unwrap());
            let bound = v.abs() / cfg.sound_speed_c;
            let mut prev: Option<(f64, PathState)> = None;
            for p in &paths {
                let s = path_params(d1, p, &cfg).unwrap();
                prop_assert!(s.doppler.abs() <= bound * (1.0 + 1e-15));
                if p.equivalent_depth == 0.0 {
                    prop_assert!((s.doppler.abs() - bound).abs() <= 1e-15 * bound.max(1e-300) * 4.0);
                } else if v != 0.0 {
                    prop_assert!(s.doppler.abs() < bound);
                }
                if let Some((d2, ps)) = prev {
                    if p.equivalent_depth > d2 {
                        prop_assert!(s.delay > ps.delay);
                        if v != 0.0 {
                            prop_assert!(s.doppler.abs() < ps.doppler.abs());
                        }
                    }
                }
                prev = Some((p.equivalent_depth, s));
            }
        }
    }
}
