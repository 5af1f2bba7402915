use std::sync::Arc;

use ecbound_core::simulate::{sample_lt_generator, sample_random_linear, sample_raptor_generator};
use ecbound_core::{
    exact_block_error, gf_rank, monte_carlo, CodeKind, DegreeDistribution, Ensemble, EnsembleParams, RaptorParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Upper 0.999 quantiles of the chi-square distribution.
const CHI2_999: [f64; 7] = [0.0, 10.828, 13.816, 16.266, 18.467, 20.515, 22.458];

fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

#[test]
fn entries_are_uniform() {
    for (q, seed) in [(2u32, 1u64), (3, 2), (5, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; q as usize];
        let mut draws = 0usize;
        while draws < 1_000_000 {
            let m = sample_random_linear(1000, EnsembleParams::new(0.5, q).unwrap(), &mut rng).unwrap();
            for &x in m.data() {
                counts[x as usize] += 1;
            }
            draws += m.data().len();
        }
        let expected = vec![draws as f64 / q as f64; q as usize];
        assert!(chi_square(&counts, &expected) < CHI2_999[q as usize - 1], "q={q}: {counts:?}");
    }
}

#[test]
fn replay_with_same_seed() {
    let params = EnsembleParams::new(0.5, 3).unwrap();
    let a = sample_random_linear(50, params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_random_linear(50, params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    let r = RaptorParams::three_gpp();
    let a = sample_raptor_generator(100, &r, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let b = sample_raptor_generator(100, &r, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rank_defect_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = EnsembleParams::new(0.5, 2).unwrap();
    for _ in 0..20 {
        let h = sample_random_linear(1000, params, &mut rng).unwrap();
        assert!(gf_rank(&h).unwrap() >= h.rows() - 10);
    }
}

#[test]
fn lt_column_degrees_follow_omega() {
    let params = RaptorParams::three_gpp();
    let terms = params.omega.terms().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = vec![0u64; terms.len()];
    let (h, per) = (200usize, 10_000usize);
    for _ in 0..10 {
        let g = sample_lt_generator(h, per, &params, &mut rng);
        for j in 0..per {
            let d: u32 = (0..h).map(|i| g.get(i, j) as u32).sum();
            let idx = terms.iter().position(|&(deg, _)| deg == d).expect("degree in support");
            counts[idx] += 1;
        }
    }
    let expected: Vec<f64> = terms.iter().map(|&(_, p)| p * 100_000.0).collect();
    assert!(chi_square(&counts, &expected) < CHI2_999[terms.len() - 1], "{counts:?}");
}

#[test]
fn lt_degree_is_capped_at_intermediate_count() {
    let params = RaptorParams::new(0.5, 1.0, DegreeDistribution::new(vec![(40, 1.0)]).unwrap()).unwrap();
    let g = sample_lt_generator(10, 50, &params, &mut ChaCha8Rng::seed_from_u64(9));
    for j in 0..50 {
        assert_eq!((0..10).map(|i| g.get(i, j) as u32).sum::<u32>(), 10);
    }
}

#[test]
fn raptor_generator_shape() {
    let params = RaptorParams::three_gpp();
    let code = sample_raptor_generator(500, &params, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(code.generator.cols(), 500);
    assert_eq!(code.generator.rows(), 396);
    assert_eq!(code.intermediate, 400);
    assert!((code.realized_rate() - 0.792).abs() < 1e-12);
}

#[test]
fn fixed_code_monte_carlo_matches_exact() {
    let params = EnsembleParams::new(0.5, 2).unwrap();
    let h = sample_random_linear(12, params, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let exact = exact_block_error(&h, CodeKind::ParityCheck, 0.3).unwrap();
    let ensemble = Ensemble::Fixed {
        code: Arc::new(h),
        kind: CodeKind::ParityCheck,
    };
    let est = monte_carlo(&ensemble, 12, 0.3, 1_000_000, 22).unwrap();
    assert!((est.p_hat - exact).abs() <= 3.0 * est.ci_halfwidth, "{} vs {exact}", est.p_hat);
}

#[test]
fn monte_carlo_is_deterministic_across_thread_counts() {
    let ensemble = Ensemble::Raptor(RaptorParams::three_gpp());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo(&ensemble, 100, 0.25, 5000, 77).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn exponent_slope_from_simulation() {
    let params = EnsembleParams::new(0.5, 2).unwrap();
    let e = Ensemble::RandomLinear(params);
    let a = monte_carlo(&e, 100, 0.4, 100_000, 31).unwrap();
    let b = monte_carlo(&e, 200, 0.4, 100_000, 32).unwrap();
    let slope = (a.p_hat / b.p_hat).log2() / 100.0;
    let eg = 0.029446844526784283;
    assert!(slope > eg / 2.0 && slope < eg * 2.0, "slope {slope}");
}
