use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rse_core::attackability::{analyze, verify_certificates};
use rse_core::decoder::{eq_tol, feasibility_oracle, Decoder, Feasibility, NoiseFeasibleSet};
use rse_core::detect::DetectorKind;
use rse_core::linalg;
use rse_core::model::{build_f, per_step_norms};
use rse_core::par::Execution;
use rse_core::sim::{run_closed_loop, AuthPolicy, LoopConfig, NoiseKind, NoiseRealization, NoiseSpec};
use rse_core::synth::AttackPlan;
use rse_core::{build_o, SensorSet, SystemModel};

fn small_int(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-3i32..=3) as f64
}

/// Random observable model with integer entries, or `None` when the draw is
/// not observable over the window.
fn random_model(seed: u64, max_n: usize, max_p: usize, delta_w: f64) -> Option<SystemModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    let p = rng.random_range(1..=max_p);
    let window = rng.random_range(n..=n + 1);
    let a = DMatrix::from_fn(n, n, |_, _| small_int(&mut rng) / 2.0);
    let c = DMatrix::from_fn(p, n, |_, _| small_int(&mut rng));
    SystemModel::new(a, DMatrix::zeros(n, 1), c, delta_w, window).ok()
}

fn random_subset(rng: &mut ChaCha8Rng, p: usize, share: f64) -> SensorSet {
    let idx = (0..p).filter(|_| rng.random_bool(share)).collect();
    SensorSet::new(idx, p).unwrap()
}

fn per_step_noise(rng: &mut ChaCha8Rng, p: usize, window: usize, radius: f64) -> DVector<f64> {
    let mut w: DVector<f64> = DVector::from_fn(p * window, |_, _| rng.random_range(-1.0..1.0));
    for k in 0..window {
        let nrm = (0..p).map(|i| w[i * window + k].powi(2)).sum::<f64>().sqrt();
        let scale = radius * rng.random_range(0.0..1.0) / nrm.max(1e-300);
        for i in 0..p {
            w[i * window + k] *= scale;
        }
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_ignores_scaling_and_permutation(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, inner in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(rows, inner, |_, _| small_int(&mut rng));
        let r = DMatrix::from_fn(inner, cols, |_, _| small_int(&mut rng));
        let m = l * r;
        let base = linalg::rank_with_tol(&m, 1e-9);
        for c in [1e-6, 1e6] {
            prop_assert_eq!(linalg::rank_with_tol(&(&m * c), 1e-9), base);
        }
        let mut perm: Vec<usize> = (0..rows).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % rows);
        let shuffled = DMatrix::from_fn(rows, cols, |i, j| m[(perm[i], cols - 1 - j)]);
        prop_assert_eq!(linalg::rank_with_tol(&shuffled, 1e-9), base);
    }

    #[test]
    fn sensor_set_complement_partitions(idx in proptest::collection::btree_set(0usize..8, 0..8)) {
        let s = SensorSet::new(idx.iter().copied().collect(), 8).unwrap();
        prop_assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
        let c = s.complement(8);
        prop_assert!(c.indices().iter().all(|i| !s.contains(*i)));
        prop_assert_eq!(s.union(&c), SensorSet::all(8));
    }

    #[test]
    fn f_matrix_has_expected_shape_and_rank(seed in any::<u64>()) {
        let Some(m) = random_model(seed, 3, 4, 0.0) else { return Ok(()); };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let k = random_subset(&mut rng, m.sensor_count(), 0.4);
        let f = build_f(&m, &k);
        let w = m.window();
        prop_assert_eq!(f.nrows(), (m.sensor_count() - k.len()) * w + k.len() * (w - 1));
        prop_assert!(linalg::rank_with_tol(&f, 1e-9) <= m.state_dim());
        prop_assert_eq!(linalg::rank_with_tol(&build_o(&m, &m.all_sensors()), 1e-9), m.state_dim());
    }

    #[test]
    fn attackability_verdicts_are_nested_and_certified(seed in any::<u64>()) {
        let Some(m) = random_model(seed, 4, 5, 0.0) else { return Ok(()); };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let k = random_subset(&mut rng, m.sensor_count(), 0.4);
        let v = analyze(&m, &k);
        if v.id2.attackable {
            prop_assert!(v.id1.attackable);
        }
        if v.id1.attackable {
            prop_assert!(v.single_step.attackable);
        }
        let scale = 1.0 + linalg::norm2(m.a()) + linalg::norm2(&build_o(&m, &m.all_sensors()));
        prop_assert!(verify_certificates(&m, &v) <= 10.0 * m.tolerances().rank_tol * scale);
    }

    #[test]
    fn decoder_output_is_consistent_and_minimal(seed in any::<u64>()) {
        let delta = 0.1;
        let Some(m) = random_model(seed, 2, 5, delta) else { return Ok(()); };
        let (p, w, n) = (m.sensor_count(), m.window(), m.state_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let o = build_o(&m, &m.all_sensors());
        let x = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let mut y = &o * x + per_step_noise(&mut rng, p, w, delta);
        for i in random_subset(&mut rng, p, 0.4).indices() {
            for s in 0..w {
                y[i * w + s] += rng.random_range(-20.0..20.0);
            }
        }
        let omega = NoiseFeasibleSet::per_step(delta);
        let r = Decoder::new(&m, omega).decode(&y);
        prop_assert!(r.feasible);
        prop_assert!((&y - &o * &r.x_hat - &r.w_hat - &r.a_hat).norm() <= eq_tol(&y));
        prop_assert!(per_step_norms(&r.w_hat, p, w).iter().all(|&v| v <= delta * (1.0 + 1e-9)));
        for i in r.support.complement(p).indices() {
            prop_assert!(r.a_hat.rows(i * w, w).iter().all(|&v| v == 0.0));
        }
        for card in 0..r.support.len() {
            for g in SensorSet::subsets_of_size(p, card) {
                let f = feasibility_oracle(&m, &g.complement(p), &y, &omega);
                prop_assert!(!f.is_feasible(), "smaller support {} is feasible", g);
            }
        }
        let again = Decoder::new(&m, omega).with_execution(Execution::Sequential).decode(&y);
        prop_assert_eq!(&again.x_hat, &r.x_hat);
        prop_assert_eq!(&again.support, &r.support);
    }

    #[test]
    fn hidden_injections_leave_no_support(seed in any::<u64>(), scale in 1.0f64..1e3) {
        let delta = 0.05;
        let Some(m) = random_model(seed, 3, 4, delta) else { return Ok(()); };
        let (p, w, n) = (m.sensor_count(), m.window(), m.state_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        // Large compromised sets, so that most draws leave a blind direction.
        let k = random_subset(&mut rng, p, 0.8);
        let null = linalg::null_space(&build_o(&m, &k.complement(p)), m.tolerances().rank_tol);
        if null.ncols() == 0 {
            return Ok(());
        }
        let coef = DVector::from_fn(null.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let z = &null * coef * scale;
        let o = build_o(&m, &m.all_sensors());
        let x = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let y = &o * (&x + &z) + per_step_noise(&mut rng, p, w, delta);
        let r = Decoder::new(&m, NoiseFeasibleSet::per_step(delta)).decode(&y);
        prop_assert!(r.support.is_empty(), "support {}", r.support);
    }

    #[test]
    fn generated_noise_respects_bounds(seed in any::<u64>(), half in 0.0f64..1.0, radius in 0.0f64..1.0) {
        let m = rse_core::fixtures::vtf(1.0);
        let spec = NoiseSpec {
            process: NoiseKind::UniformElementwise { lo: -half, hi: half },
            measurement: NoiseKind::Ball { radius },
            seed,
        };
        let noise = NoiseRealization::generate(&spec, &m, 200);
        prop_assert!(noise.process.iter().all(|v| v.amax() <= half && v.norm() <= spec.process.bound(2) * (1.0 + 1e-12)));
        prop_assert!(noise.measurement.iter().all(|v| v.norm() <= radius * (1.0 + 1e-12)));
        prop_assert_eq!(NoiseRealization::generate(&spec, &m, 200), noise);
    }
}

/// Random bias on the compromised sensors at every step, authenticated or not.
fn noisy_plan(seed: u64, compromised: &SensorSet, p: usize, len: usize) -> AttackPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttackPlan {
        compromised: compromised.clone(),
        sensors: p,
        target: DetectorKind::IdII,
        start_time: 0,
        attacks: (0..len)
            .map(|_| DVector::from_fn(p, |i, _| if compromised.contains(i) { rng.random_range(-1.0..1.0) } else { 0.0 }))
            .collect(),
        z: Vec::new(),
        alpha: Vec::new(),
        epsilon: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loop_replays_and_authenticated_entries_stay_clean(seed in any::<u64>(), period in 1usize..12, phase in 0usize..12) {
        let m = rse_core::fixtures::vtf_default();
        let cfg = LoopConfig::open_loop(150);
        let noise = NoiseRealization::generate(&NoiseSpec::uniform(0.05, seed), &m, cfg.plant_steps(&m));
        let k = SensorSet::from_one_based(&[2, 3], 3).unwrap();
        let plan = noisy_plan(seed, &k, 3, cfg.plant_steps(&m));
        let policy = AuthPolicy::periodic(3, &k, period, phase % period);
        let a = run_closed_loop(&m, &cfg, &noise, Some(&plan), &policy).unwrap();
        let b = run_closed_loop(&m, &cfg, &noise, Some(&plan), &policy).unwrap();
        prop_assert_eq!(&a, &b);
        for row in &a.rows {
            prop_assert_eq!(&row.authenticated, &policy.authenticated_at(row.t));
            for &i in row.authenticated.indices() {
                prop_assert_eq!(row.attack[i], 0.0);
            }
            for i in 0..3 {
                prop_assert_eq!(row.y_delivered[i], row.y[i] + row.attack[i]);
                if !k.contains(i) {
                    prop_assert_eq!(row.attack[i], 0.0);
                }
            }
            if row.alarm.id1_alarm {
                prop_assert!(row.alarm.id2_alarm);
                prop_assert!(!row.support.is_empty());
            }
        }
    }
}

#[test]
fn oracle_agrees_with_decoder_on_clean_data() {
    let m = rse_core::fixtures::vtf_default();
    let o = build_o(&m, &m.all_sensors());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
        let y = &o * x + per_step_noise(&mut rng, 3, 2, m.delta_w());
        let f = feasibility_oracle(&m, &m.all_sensors(), &y, &NoiseFeasibleSet::for_model(&m, Default::default()));
        assert!(matches!(f, Feasibility::Feasible { .. }), "{f:?}");
    }
}
