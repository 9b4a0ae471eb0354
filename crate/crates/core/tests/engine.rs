mod common;

use common::*;
use gpe::params::Role;
use proptest::prelude::*;

#[test]
fn conserving_messages_are_exact_negations() {
    let mut r = rng(21);
    for case in 0..10 {
        let dim = 2 + case % 2;
        let g = random_graph(&mut r, 40 + 10 * case, dim, 2, 8.0);
        let (engine, params) = engine_with_params(engine_config(dim, 8, 3, 2, true), case as u64);
        let trace = trace_of(&engine, &params, &g);
        assert_eq!(trace.rounds.len(), 3);
        for round in &trace.rounds {
            assert!(round.forward.iter().zip(&round.backward).all(|(f, b)| *b == -*f));
            assert!(round.directed_sum(8).iter().all(|v| *v == 0.0));
            let mut total = [0.0f64; 8];
            for row in round.aggregates.chunks(8) {
                total.iter_mut().zip(row).for_each(|(t, v)| *t += v);
            }
            assert!(total.iter().all(|v| v.abs() <= 1e-9), "case {case}: {total:?}");
        }
    }
}

#[test]
fn aggregates_match_incident_messages() {
    let mut r = rng(5);
    let g = random_graph(&mut r, 60, 2, 2, 6.0);
    let (engine, params) = engine_with_params(engine_config(2, 8, 2, 2, true), 4);
    let trace = trace_of(&engine, &params, &g);
    let round = &trace.rounds[0];
    let mut expect = vec![0.0; g.num_nodes() * 8];
    for (k, &(s, d)) in round.oriented.iter().enumerate() {
        for c in 0..8 {
            expect[s * 8 + c] += round.forward[k * 8 + c];
            expect[d * 8 + c] += round.backward[k * 8 + c];
        }
    }
    for (a, b) in expect.iter().zip(&round.aggregates) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn non_conserving_messages_are_not_antisymmetric() {
    let mut r = rng(8);
    let g = random_graph(&mut r, 50, 2, 2, 8.0);
    let (engine, params) = engine_with_params(engine_config(2, 8, 2, 2, false), 2);
    let trace = trace_of(&engine, &params, &g);
    let sum = trace.rounds[0].directed_sum(8);
    assert!(sum.iter().any(|v| v.abs() > 1e-6), "{sum:?}");
}

#[test]
fn message_evaluations_are_rounds_times_pairs() {
    let mut r = rng(13);
    for (case, rounds) in [1usize, 2, 5].into_iter().enumerate() {
        let g = random_graph(&mut r, 80, 2 + case % 2, 2, 7.0);
        let p = g.num_pairs() as u64;
        assert!(p > 0);
        let dim = g.dim;
        let (on, params) = engine_with_params(engine_config(dim, 8, rounds, 2, true), 1);
        let (off, _) = engine_with_params(engine_config(dim, 8, rounds, 2, false), 1);
        let a = on.forward(&g, &params, &stats(dim), &gravity(dim)).unwrap();
        let b = off.forward(&g, &params, &stats(dim), &gravity(dim)).unwrap();
        assert_eq!(a.message_evals, rounds as u64 * p);
        assert_eq!(b.message_evals, 2 * rounds as u64 * p);
    }
}

#[test]
fn forward_is_translation_invariant() {
    for seed in 0..20 {
        assert_translation_invariant(seed, 2 + (seed as usize % 2), seed % 3 != 0);
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    for seed in 0..20 {
        assert_permutation_equivariant(100 + seed, 2 + (seed as usize % 2), seed % 3 != 0);
    }
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(3);
    let g = random_graph(&mut r, 120, 3, 2, 8.0);
    let (engine, params) = engine_with_params(engine_config(3, 16, 3, 2, true), 3);
    let a = engine.forward(&g, &params, &stats(3), &gravity(3)).unwrap();
    let b = engine.forward(&g, &params, &stats(3), &gravity(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gradients_match_finite_differences() {
    for conserve in [true, false] {
        let report = gradient_check(conserve);
        for role in [Role::NodeEncoder, Role::EdgeEncoder, Role::EdgeProcessor, Role::NodeProcessor, Role::NodeDecoder] {
            let (_, checked, err) = report.iter().find(|w| w.0 == role).copied().unwrap();
            assert!(checked > 0, "{role:?} has no checked gradients");
            assert!(err < 1e-4, "{role:?}: rel err {err}");
        }
    }
}

#[test]
fn graph_of_wrong_dimension_is_rejected() {
    let mut r = rng(1);
    let g = random_graph(&mut r, 10, 3, 2, 4.0);
    let (engine, params) = engine_with_params(engine_config(2, 8, 1, 2, true), 1);
    assert_eq!(engine.forward(&g, &params, &stats(3), &gravity(3)).unwrap_err().exit_code(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_directed_messages_cancel(seed in any::<u64>(), n in 2usize..120, dim in 2usize..4) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, dim, 1, 7.0);
        let (engine, params) = engine_with_params(engine_config(dim, 4, 2, 1, true), seed);
        let trace = trace_of(&engine, &params, &g);
        for round in &trace.rounds {
            prop_assert!(round.directed_sum(4).iter().all(|v| *v == 0.0));
            let mut total = [0.0f64; 4];
            for row in round.aggregates.chunks(4) {
                total.iter_mut().zip(row).for_each(|(t, v)| *t += v);
            }
            prop_assert!(total.iter().all(|v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn prop_translation_invariance(seed in any::<u64>(), dim in 2usize..4, conserve in any::<bool>()) {
        assert_translation_invariant(seed, dim, conserve);
    }

    #[test]
    fn prop_permutation_equivariance(seed in any::<u64>(), dim in 2usize..4, conserve in any::<bool>()) {
        assert_permutation_equivariant(seed, dim, conserve);
    }
}
