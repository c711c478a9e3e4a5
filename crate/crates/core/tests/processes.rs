use lqg_mc::brownian::{find_cone_excursions, sample_correlated_bm};
use lqg_mc::quadrant::{sample_quadrant_loop, QuadrantBridgeSpec};
use lqg_mc::rng::seeded;
use lqg_mc::stable::{increment_jumps, reflect_at_infimum, running_infimum, sample_stable_path, JumpSign, StableSpec};
use lqg_mc::stats::{binomial_stderr, is_non_increasing_within, two_sample_ks};
use lqg_mc::{GammaParams, StreamKey};
use proptest::prelude::*;

#[test]
fn brownian_scaling() {
    let p = GammaParams::pure();
    let u = 7.0;
    let n = 4000;
    let mut a = seeded(1);
    let mut b = seeded(2);
    let (mut x1, mut xu, mut y1, mut yu) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let base = sample_correlated_bm(&p, 1.0, 64, &mut a).unwrap();
        let long = sample_correlated_bm(&p, u, 64, &mut b).unwrap();
        // time 1/2 on both after rescaling by 1/u in time
        let (bx, by) = base.point(32);
        let (lx, ly) = long.point(32);
        x1.push(bx);
        y1.push(by);
        xu.push(lx / u.sqrt());
        yu.push(ly / u.sqrt());
    }
    assert!(two_sample_ks(&x1, &xu).unwrap().p_value > 0.01);
    assert!(two_sample_ks(&y1, &yu).unwrap().p_value > 0.01);
}

#[test]
fn loop_acceptance_shrinks_with_delta() {
    let deltas = [0.4, 0.2, 0.1, 0.05];
    let n = 300u64;
    let key = StreamKey::new(3);
    let rates: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let spec = QuadrantBridgeSpec::relaxed_loop(0.5, d, 64);
            let attempts: u64 = (0..n).map(|i| sample_quadrant_loop(&spec, &key, i).unwrap().attempts).sum();
            n as f64 / attempts as f64
        })
        .collect();
    let se: Vec<f64> = rates.iter().map(|&r| binomial_stderr(r, (n as f64 / r) as usize)).collect();
    assert!(is_non_increasing_within(&rates, &se, 2.0), "{rates:?}");
    assert!(rates[0] > rates[3]);
}

#[test]
fn stable_self_similarity() {
    let spec = StableSpec::three_halves();
    let u: f64 = 5.0;
    let n = 4000;
    let mut a = seeded(4);
    let mut b = seeded(5);
    let mut base = vec![vec![]; 3];
    let mut long = vec![vec![]; 3];
    for _ in 0..n {
        let p1 = sample_stable_path(&spec, 1.0, 30, 0.0, 10.0, &mut a).unwrap();
        let pu = sample_stable_path(&spec, u, 30, 0.0, 10.0, &mut b).unwrap();
        for (k, i) in [10, 20, 30].into_iter().enumerate() {
            base[k].push(p1.path.values()[i]);
            long[k].push(pu.path.values()[i] * u.powf(-1.0 / 1.5));
        }
    }
    for k in 0..3 {
        let ks = two_sample_ks(&base[k], &long[k]).unwrap();
        assert!(ks.p_value > 0.01, "marginal {k}: {ks:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cone_records_close_on_the_grid(seed in 0u64..10_000, alpha in -0.9f64..0.9) {
        let path = lqg_mc::brownian::sample_correlated_bm_rho(alpha, 1.0, 400, &mut seeded(seed)).unwrap();
        for r in find_cone_excursions(&path, 0.0, f64::INFINITY).unwrap() {
            let (x, y) = path.point(r.end_index);
            let close = (x - r.base.0).min(y - r.base.1);
            prop_assert!(close <= r.tolerance, "{r:?}");
            prop_assert!(r.terminal_displacement >= -r.tolerance);
            for k in r.start_index + 1..r.end_index {
                let (a, b) = path.point(k);
                prop_assert!(a > r.base.0 && b > r.base.1);
            }
        }
    }

    #[test]
    fn infimum_and_reflection(seed in 0u64..10_000, x0 in -2.0f64..2.0) {
        let spec = StableSpec::three_halves();
        let p = sample_stable_path(&spec, 1.0, 200, x0, 10.0, &mut seeded(seed)).unwrap();
        let inf = p.running_infimum();
        prop_assert_eq!(inf[0], x0.min(p.path.values()[0]));
        prop_assert!(inf.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(running_infimum(p.path.values()), inf);
        let reflected = reflect_at_infimum(&p.path);
        prop_assert!(reflected.values().iter().all(|&v| v >= 0.0));
        // X − I jumps up exactly when X does
        let threshold = 0.05;
        let a = increment_jumps(&p.path, JumpSign::Positive, threshold);
        let b = increment_jumps(&reflected, JumpSign::Positive, threshold);
        prop_assert_eq!(a.len(), b.len());
        for (j, k) in a.iter().zip(&b) {
            prop_assert_eq!(j.time, k.time);
            prop_assert!((j.size - k.size).abs() < 1e-12);
        }
    }
}
