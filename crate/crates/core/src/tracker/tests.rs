use super::*;
use crate::measure::SurveillanceWindow;
use proptest::prelude::{any, prop_assert, proptest};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn window() -> SurveillanceWindow {
    SurveillanceWindow {
        tau_min: 0.3,
        tau_max: 0.6,
        a_min: -6.7e-3,
        a_max: 6.7e-3,
    }
}

fn clutter(rate: f64) -> ClutterModel {
    ClutterModel {
        rate_lambda_c: rate,
        window: window(),
    }
}

fn obs(tau: f64, a: f64) -> Observation {
    Observation {
        z: PathState::new(tau, a),
        amplitude: None,
    }
}

fn component(w: f64, tau: f64, a: f64, cov: Matrix2<f64>) -> MbComponent {
    MbComponent {
        id: 0,
        weight: w,
        mean: PathState::new(tau, a),
        cov,
        confirmed: false,
        amplitude: 1.0,
    }
}

fn q() -> Matrix2<f64> {
    Matrix2::new(1e-4, 0.0, 0.0, 1e-6)
}

#[test]
fn births_carry_birth_prior() {
    let cfg = TrackerConfig::default();
    let mut id = 0;
    assert!(birth(&[], &cfg, &mut id).is_empty());
    let b = birth(&[obs(0.35, -3e-3), obs(0.36, -2.9e-3), obs(0.4, -2.8e-3)], &cfg, &mut id);
    assert_eq!(b.len(), 3);
    assert!(b.iter().all(|c| c.weight == 0.1 && c.cov == cfg.birth_matrix()));
    assert_eq!(b.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn first_epoch_births_every_measurement() {
    let mut t = Tracker::new(TrackerConfig::default(), MotionModel::new(-5.0, 1500.0, 1.0), clutter(1.0)).unwrap();
    let z = vec![obs(0.33, -3.3e-3), obs(0.34, -3.2e-3), obs(0.36, -3.0e-3), obs(0.39, -2.9e-3)];
    let r = t.step(&z, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(r.n_hat, 0);
    assert_eq!(t.density.components.len(), 4);
}

#[test]
fn predict_identity_cases() {
    let cfg = TrackerConfig {
        p_survival: 1.0,
        process_noise_q: [[0.0; 2]; 2],
        ..Default::default()
    };
    let d = MbDensity {
        epoch: 3,
        components: vec![component(0.8, 0.4, 0.0, q())],
    };
    let p = predict(&d, &cfg, &MotionModel::new(0.0, 1500.0, 1.0)).unwrap();
    assert_eq!(p.components[0].mean, d.components[0].mean);
    assert_eq!(p.components[0].weight, 0.8);
    // F = [[1, -T], [0, 1]] at a = 0, so only the covariance moves.
    let f = Matrix2::new(1.0, -1.0, 0.0, 1.0);
    assert!((p.components[0].cov - f * q() * f.transpose()).norm() < 1e-18);
}

#[test]
fn predict_survival_and_covariance_growth() {
    let cfg = TrackerConfig::default();
    let d = MbDensity {
        epoch: 0,
        components: vec![component(0.8, 1.0 / 3.0, -1.0 / 300.0, q())],
    };
    let p = predict(&d, &cfg, &MotionModel::new(-5.0, 1500.0, 1.0)).unwrap();
    assert!((p.components[0].weight - 0.7992).abs() < 1e-15);
    assert!(p.components[0].cov.trace() > d.components[0].cov.trace());
    assert_eq!(p.epoch, 1);
}

#[test]
fn sampling_extremes_and_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(sample_particles(&[1.0, 1.0, 1.0], 50, &mut rng).iter().all(|s| s == &vec![0, 1, 2]));
    assert!(sample_particles(&[0.0, 0.0], 50, &mut rng).iter().all(|s| s.is_empty()));
    let sets = sample_particles(&[0.5], 10_000, &mut rng);
    let rate = sets.iter().filter(|s| !s.is_empty()).count() as f64 / 10_000.0;
    assert!((rate - 0.5).abs() < 0.02);
}

#[test]
fn dominant_likelihood_association() {
    let cfg = TrackerConfig::default();
    let c = vec![component(0.9, 0.35, -3e-3, q())];
    let z = vec![obs(0.35, -3e-3)];
    let g = build_gating(&c, &z, &cfg).unwrap();
    let a = associate(&[0], &g, &cfg, window().volume());
    assert_eq!(a.theta, vec![Some(0)]);
}

#[test]
fn empty_measurement_set_likelihood() {
    let cfg = TrackerConfig::default();
    let c = vec![component(0.9, 0.35, -3e-3, q()), component(0.9, 0.4, -3e-3, q())];
    let g = build_gating(&c, &[], &cfg).unwrap();
    let a = associate(&[0, 1], &g, &cfg, window().volume());
    assert_eq!(a.theta, vec![None, None]);
    let expect = -cfg.clutter_rate + 2.0 * (1.0 - cfg.p_detect).ln();
    assert!((a.log_likelihood - expect).abs() < 1e-12);
}

#[test]
fn infeasible_association_is_all_missed() {
    let cfg = TrackerConfig {
        p_detect: 1.0,
        ..Default::default()
    };
    let c = vec![component(0.9, 0.35, -3e-3, q())];
    let z = vec![obs(0.55, 3e-3)];
    let g = build_gating(&c, &z, &cfg).unwrap();
    let a = associate(&[0], &g, &cfg, window().volume());
    assert_eq!(a.theta, vec![None]);
    assert_eq!(a.log_likelihood, f64::NEG_INFINITY);
}

#[test]
fn ekf_perfect_and_useless_measurements() {
    let m = Vector2::new(0.35, -3e-3);
    let z = Vector2::new(0.36, -2.9e-3);
    let (m1, _) = ekf_update(&m, &q(), &z, &(Matrix2::identity() * 1e-12)).unwrap();
    assert!((m1 - z).norm() < 1e-7);
    let (m2, p2) = ekf_update(&m, &q(), &z, &(Matrix2::identity() * 1e12)).unwrap();
    assert!((m2 - m).norm() < 1e-14);
    assert!((p2 - q()).norm() < 1e-18);
}

#[test]
fn ekf_matches_hand_arithmetic() {
    let p = q();
    let r = Matrix2::new(1e-5, 0.0, 0.0, 1e-6);
    let m = Vector2::new(0.35, -3e-3);
    let z = m + Vector2::new(1e-2, 1e-3);
    let (m1, p1) = ekf_update(&m, &p, &z, &r).unwrap();
    // Diagonal P and R decouple: K = diag(p/(p+r)).
    let k0 = 1e-4 / (1e-4 + 1e-5);
    let k1 = 1e-6 / (1e-6 + 1e-6);
    assert!((m1[0] - (0.35 + k0 * 1e-2)).abs() < 1e-15);
    assert!((m1[1] - (-3e-3 + k1 * 1e-3)).abs() < 1e-18);
    assert!((p1[(0, 0)] - (1.0 - k0) * 1e-4).abs() < 1e-18);
    assert!((p1[(1, 1)] - (1.0 - k1) * 1e-6).abs() < 1e-20);
    assert_eq!(p1[(0, 1)], 0.0);
}

#[test]
fn ekf_singular_innovation() {
    let zero = Matrix2::zeros();
    let m = Vector2::new(0.35, -3e-3);
    assert!(matches!(ekf_update(&m, &zero, &m, &zero), Err(Error::SingularInnovation)));
}

fn particle(included: Vec<usize>, weight: f64, posts: Vec<(Vector2<f64>, Matrix2<f64>)>) -> MultiObjectParticle {
    MultiObjectParticle {
        theta: vec![None; included.len()],
        included,
        log_likelihood: 0.0,
        weight,
        posteriors: posts,
    }
}

#[test]
fn merge_single_particle() {
    let pred = vec![component(0.6, 0.35, -3e-3, q()), component(0.4, 0.4, -2.9e-3, q())];
    let post = (Vector2::new(0.351, -3.01e-3), q() * 0.5);
    let merged = merge_posterior(&pred, &[particle(vec![0], 1.0, vec![post])]);
    assert_eq!(merged[0].weight, 1.0);
    assert_eq!(merged[0].mean_vec(), post.0);
    assert_eq!(merged[0].cov, post.1);
    assert_eq!(merged[1].weight, 0.0);
    assert_eq!(merged[1].mean, pred[1].mean);
}

#[test]
fn merge_identical_particles_has_no_spread() {
    let pred = vec![component(0.6, 0.35, -3e-3, q())];
    let post = (Vector2::new(0.351, -3.01e-3), q() * 0.5);
    let merged = merge_posterior(
        &pred,
        &[particle(vec![0], 0.5, vec![post]), particle(vec![0], 0.5, vec![post])],
    );
    assert!((merged[0].cov - post.1).norm() < 1e-18);
}

#[test]
fn merge_random_particles_psd_and_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let pred = vec![component(0.6, 0.35, -3e-3, q())];
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.01).collect();
        let sum: f64 = raw.iter().sum();
        let parts: Vec<MultiObjectParticle> = raw
            .iter()
            .map(|w| {
                let m = Vector2::new(0.35 + 0.01 * rng.random::<f64>(), -3e-3 + 1e-4 * rng.random::<f64>());
                let l = Matrix2::new(rng.random::<f64>(), 0.0, rng.random::<f64>(), rng.random::<f64>()) * 1e-3;
                particle(vec![0], w / sum, vec![(m, l * l.transpose())])
            })
            .collect();
        let merged = merge_posterior(&pred, &parts);
        let c = merged[0].cov;
        assert!(c[(0, 0)] >= 0.0 && c.determinant() >= -1e-30);
        let mean_trace: f64 = parts.iter().map(|p| p.weight * p.posteriors[0].1.trace()).sum();
        assert!(c.trace() >= mean_trace * (1.0 - 1e-12));
    }
}

#[test]
fn prune_confirm_thresholds() {
    let cfg = TrackerConfig::default();
    let d = MbDensity {
        epoch: 1,
        components: vec![
            component(0.9, 0.35, -3e-3, q()),
            component(0.5, 0.36, -3e-3, q()),
            component(1e-5, 0.37, -3e-3, q()),
        ],
    };
    let (out, tracks, n) = prune_confirm(&d, &cfg);
    assert_eq!(out.components.len(), 2);
    assert!(out.components[0].confirmed && tracks[0].existing);
    assert!(!out.components[1].confirmed && !tracks[1].existing);
    assert_eq!(n, 1);

    let all = MbDensity {
        epoch: 1,
        components: vec![component(1.0, 0.35, -3e-3, q()); 3],
    };
    assert_eq!(prune_confirm(&all, &cfg).2, 3);
    let (empty, t, n) = prune_confirm(&MbDensity::default(), &cfg);
    assert!(empty.components.is_empty() && t.is_empty() && n == 0);
}

#[test]
fn confirmation_is_sticky() {
    let cfg = TrackerConfig::default();
    let mut c = component(0.4, 0.35, -3e-3, q());
    c.confirmed = true;
    let (_, tracks, n) = prune_confirm(&MbDensity { epoch: 1, components: vec![c] }, &cfg);
    assert!(tracks[0].confirmed && tracks[0].existing && n == 1);
}

fn truth_run(epochs: usize) -> Vec<Vec<PathState>> {
    let cfg = crate::geometry::ScenarioConfig::default();
    crate::geometry::ground_truth(&cfg, epochs)
        .unwrap()
        .iter()
        .map(|s| {
            // The two double-bounce arrivals coincide; keep one.
            let mut st = s.states();
            st.dedup();
            st
        })
        .collect()
}

#[test]
fn clean_measurements_converge_to_truth() {
    let cfg = TrackerConfig {
        p_detect: 0.999,
        clutter_rate: 0.01,
        measurement_noise_r: [[1e-10, 0.0], [0.0, 1e-12]],
        ..Default::default()
    };
    let truth = truth_run(12);
    let mut t = Tracker::new(cfg, MotionModel::new(-5.0, 1500.0, 1.0), clutter(0.01)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut last = None;
    for states in &truth {
        let z: Vec<Observation> = states.iter().map(|s| obs(s.delay, s.doppler)).collect();
        last = Some(t.step(&z, &mut rng).unwrap());
    }
    let r = last.unwrap();
    assert_eq!(r.n_hat, truth[11].len());
    for s in &truth[11] {
        let best = r
            .estimates()
            .iter()
            .map(|e| ((e.delay - s.delay).abs(), (e.doppler - s.doppler).abs()))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert!(best.0 < 1e-8 && best.1 < 1e-9);
    }
}

#[test]
fn missed_detections_decay_weights() {
    let cfg = TrackerConfig::default();
    let mut t = Tracker::new(cfg.clone(), MotionModel::new(-5.0, 1500.0, 1.0), clutter(1.0)).unwrap();
    t.density = MbDensity {
        epoch: 0,
        components: vec![component(1.0, 0.35, -3e-3, q())],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut prev = 1.0;
    let mut ended = false;
    for _ in 0..200 {
        let r = t.step(&[], &mut rng).unwrap();
        match t.density.components.first() {
            Some(c) => {
                // Exact missed-detection posterior, with Monte Carlo slack.
                let w = prev * cfg.p_survival;
                let exact = w * (1.0 - cfg.p_detect) / (1.0 - w * cfg.p_detect);
                assert!(c.weight <= 1.5 * exact, "{} vs {}", c.weight, exact);
                prev = c.weight;
            }
            None => {
                assert_eq!(r.n_hat, 0);
                ended = true;
                break;
            }
        }
    }
    assert!(ended);
}

#[test]
fn steps_are_deterministic() {
    let truth = truth_run(6);
    let run = || {
        let mut t = Tracker::new(TrackerConfig::default(), MotionModel::new(-5.0, 1500.0, 1.0), clutter(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        truth
            .iter()
            .map(|s| {
                let z: Vec<Observation> = s.iter().map(|x| obs(x.delay + 1e-4, x.doppler)).collect();
                t.step(&z, &mut rng).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn config_threshold_order() {
    let bad = TrackerConfig {
        exist_threshold: 0.9,
        ..Default::default()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig { .. })));
}

fn enumerate_best(n: usize, nz: usize, ll: &dyn Fn(&[Option<usize>]) -> f64) -> (f64, Vec<Option<usize>>) {
    fn rec(
        i: usize,
        n: usize,
        nz: usize,
        cur: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        ll: &dyn Fn(&[Option<usize>]) -> f64,
        best: &mut (f64, Vec<Option<usize>>),
    ) {
        if i == n {
            let v = ll(cur);
            if v > best.0 {
                *best = (v, cur.clone());
            }
            return;
        }
        cur.push(None);
        rec(i + 1, n, nz, cur, used, ll, best);
        cur.pop();
        for j in 0..nz {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                rec(i + 1, n, nz, cur, used, ll, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, vec![None; n]);
    rec(0, n, nz, &mut Vec::new(), &mut vec![false; nz], ll, &mut best);
    best
}

proptest! {
    #[test]
    fn association_matches_enumeration(
        n in 1usize..5,
        nz in 0usize..5,
        seed in any::<u64>(),
        p_d in 0.5f64..0.999,
        rate in 0.1f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TrackerConfig { p_detect: p_d, clutter_rate: rate, ..Default::default() };
        let comps: Vec<MbComponent> = (0..n)
            .map(|_| component(0.9, 0.35 + 0.02 * rng.random::<f64>(), -3e-3 + 1e-3 * rng.random::<f64>(), q()))
            .collect();
        let z: Vec<Observation> = (0..nz)
            .map(|_| obs(0.35 + 0.02 * rng.random::<f64>(), -3e-3 + 1e-3 * rng.random::<f64>()))
            .collect();
        let g = build_gating(&comps, &z, &cfg).unwrap();
        let included: Vec<usize> = (0..n).collect();
        let v = window().volume();
        let a = associate(&included, &g, &cfg, v);
        let (best, theta) = enumerate_best(n, nz, &|t| association_log_likelihood(t, &included, &g, &cfg, v));
        prop_assert!((a.log_likelihood - best).abs() < 1e-9, "{} vs {}", a.log_likelihood, best);
        if a.theta != theta {
            // Only an exact tie may pick a different event.
            let other = association_log_likelihood(&theta, &included, &g, &cfg, v);
            prop_assert!((other - a.log_likelihood).abs() < 1e-9);
        }
    }
}
