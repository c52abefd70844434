mod common;

use std::f64::consts::PI;

use lssm::audit::check_pointwise_inequalities;
use lssm::checkpoint::{decode, encode};
use lssm::config::parse_config_str;
use lssm::dynamics::{advection, nonlinear_viscosity, FlowParams, ForcingSpec};
use lssm::field::{Grid, Spectral, SpectralVelocity};
use lssm::integrate::{InitialCondition, SimState, StepRecord};
use lssm::noise::{NoiseMode, NoiseSpec, RngStream};
use lssm::stats::StatsAccumulator;
use proptest::prelude::*;

fn random_field(sp: &Spectral, seed: u64, kmax: i32, energy: f64) -> SpectralVelocity {
    let mut rng = RngStream::new(seed, 0);
    InitialCondition::Random { kmax, energy }.build(sp, &mut rng).unwrap()
}

fn grid8() -> Spectral {
    Spectral::new(Grid::new(8, 2.0 * PI).unwrap())
}

fn flow(r: f64) -> FlowParams {
    FlowParams { nu: 0.1, nu_bar: 0.05, r, forcing: ForcingSpec::None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent_and_solenoidal(c in prop::array::uniform7(-2.0f64..2.0)) {
        let sp = grid8();
        let w = sp
            .from_fn(|x| {
                [
                    c[0] * x[1].sin() + c[1] * (2.0 * x[0]).cos(),
                    c[2] * (x[0] + x[2]).sin() + c[3] * x[1].cos(),
                    c[4] * x[0].cos() * x[1].sin() + c[5] * (x[2] - 2.0 * x[1]).sin() + c[6] * x[2].cos(),
                ]
            })
            .unwrap();
        let p1 = sp.project(&w).unwrap();
        let p2 = sp.project(&p1).unwrap();
        prop_assert!(p1.divergence_residual() <= 1e-12);
        prop_assert!(p1.sub(&p2).unwrap().norm_l2_sq() <= 1e-28 * p1.norm_l2_sq());
        prop_assert!(p1.norm_l2_sq() <= w.norm_l2_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn random_fields_are_real_and_solenoidal(seed in any::<u64>(), energy in 0.1f64..100.0) {
        let sp = grid8();
        let u = random_field(&sp, seed, 2, energy);
        let rep = u.invariant_report();
        prop_assert!(rep.holds(1e-12));
        prop_assert!(common::rel(u.norm_l2_sq(), energy) <= 1e-12);
        // Spectral → physical → spectral is the identity on band-limited fields.
        let back = sp.from_physical(&sp.to_physical(&u));
        prop_assert!(back.sub(&u).unwrap().norm_l2_sq() <= 1e-24 * energy);
    }

    #[test]
    fn advection_is_energy_neutral(seed in any::<u64>()) {
        let sp = grid8();
        let u = random_field(&sp, seed, 2, 10.0);
        let a = advection(&sp, &u).unwrap();
        let scale = (a.norm_l2_sq() * u.norm_l2_sq()).sqrt();
        prop_assert!(a.inner_product(&u).unwrap().abs() <= 1e-10 * scale);
    }

    #[test]
    fn power_law_dissipates_lr_norm(seed in any::<u64>(), r in 2.0f64..4.0) {
        let sp = grid8();
        let u = random_field(&sp, seed, 2, 5.0);
        let nl = nonlinear_viscosity(&sp, &u, 1.0, r).unwrap();
        let lr = sp.gradient(&u).norm_lr_r(r).unwrap();
        // (P∇·(|∇u|^{r−2}∇u), u) = −‖∇u‖ᵣʳ on the collocation grid.
        prop_assert!(common::rel(nl.inner_product(&u).unwrap(), -lr) <= 1e-10);
    }

    #[test]
    fn pointwise_inequalities_hold(seed in any::<u64>(), r in 2.0f64..4.0) {
        let sp = grid8();
        let u = random_field(&sp, seed, 2, 3.0);
        let f = random_field(&sp, seed.wrapping_add(1), 2, 1.0);
        let rep = check_pointwise_inequalities(&sp, &[u], &f, &flow(r)).unwrap();
        prop_assert!(rep.pass(), "{:?}", rep.violations);
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise(seed in any::<u64>(), t in 0.0f64..1e3, step in any::<u64>()) {
        let sp = grid8();
        let mut rng = RngStream::new(seed, 3);
        let _ = rng.standard_normal();
        let state = SimState { u: random_field(&sp, seed, 2, 1.0), t, step_index: step, rng };
        let bytes = encode(&state);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back), bytes);
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        prop_assert_eq!(back.step_index, step);
    }

    #[test]
    fn accumulators_concatenate(split in 1usize..19, dt in 0.001f64..0.1) {
        let recs: Vec<StepRecord> = (0..20)
            .map(|i| StepRecord {
                t: i as f64 * dt,
                dt,
                ke_pre: 1.0 + i as f64,
                ke_post: 2.0 + i as f64,
                grad_l2_sq: (i * i) as f64,
                grad_lr_r: i as f64,
                trace_gg: 0.5,
                noise_dot_u: 0.1 * i as f64,
                ..Default::default()
            })
            .collect();
        let mut whole = StatsAccumulator::default();
        let (mut a, mut b) = (StatsAccumulator::default(), StatsAccumulator::default());
        for (i, r) in recs.iter().enumerate() {
            whole.push(r).unwrap();
            if i < split { a.push(r).unwrap() } else { b.push(r).unwrap() }
        }
        let joined = a.concat(&b).unwrap();
        prop_assert_eq!(joined.steps, whole.steps);
        prop_assert!(common::rel(joined.int_grad_l2_sq, whole.int_grad_l2_sq) <= 1e-12);
        prop_assert!(common::rel(joined.elapsed, whole.elapsed) <= 1e-12);
        prop_assert!(common::rel(joined.sum_noise_dot_u, whole.sum_noise_dot_u) <= 1e-12);
        prop_assert_eq!(joined.boundary_ke_end, whole.boundary_ke_end);
        prop_assert_eq!(joined.boundary_ke_start, whole.boundary_ke_start);
    }

    #[test]
    fn config_echo_roundtrips(nu in 0.001f64..1.0, nu_bar in 0.0f64..1.0, r in 2.0f64..5.0, seed in 0..=i64::MAX as u64) {
        let text = format!(
            "seed = {seed}\n[grid]\nn = 16\nell = 6.283185307179586\n[flow]\nnu = {nu:?}\nnu_bar = {nu_bar:?}\nr = {r:?}\n[time]\ndt_max = 0.01\nT = 1.0\n"
        );
        let cfg = parse_config_str(&text, &[]).unwrap();
        let again = parse_config_str(&cfg.to_toml(), &[]).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn multiplicative_amplitude_is_one_lipschitz(a in any::<u64>(), b in any::<u64>()) {
        let sp = grid8();
        let g = *sp.grid();
        let ns = NoiseSpec::power_law(g, 1, 0.1, 0.0, NoiseMode::Multiplicative, Default::default()).unwrap();
        let v = random_field(&sp, a, 2, 1.0 + (a % 11) as f64);
        let w = random_field(&sp, b, 2, 1.0 + (b % 5) as f64);
        let lhs = (ns.amplitude(&v) - ns.amplitude(&w)).abs();
        let rhs = v.sub(&w).unwrap().norm_l2_sq().sqrt();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}
