mod common;

use common::*;

#[test]
fn terminal_sequences_of_the_enumerable_model() {
    let seqs = enumerate_sequences(3, 2);
    assert_eq!(seqs.len(), 7);
    let p = captionrl::model::ModelParams::init_uniform(enum_dims(), 0.6, 3).unwrap();
    let f = frames(2, 3, 5);
    let total: f64 = seqs.iter().map(|s| seq_prob(&p, &f, s)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn expected_single_sample_gradient_is_exact() {
    for seed in [1, 2, 3] {
        let gap = reinforce_enumeration_gap(seed, false);
        assert!(gap < 1e-6, "seed {seed}: {gap:e}");
    }
}

#[test]
fn baseline_leaves_expected_gradient_unchanged() {
    for seed in [4, 5] {
        let gap = reinforce_enumeration_gap(seed, true);
        assert!(gap < 1e-6, "seed {seed}: {gap:e}");
    }
}

#[test]
fn trained_baseline_reduces_gradient_variance() {
    let v = variance_comparison(10_000);
    println!(
        "variance without {:.6e}, with {:.6e}, ratio {:.2}, coords not worse {:.3}",
        v.without_baseline,
        v.with_baseline,
        v.without_baseline / v.with_baseline,
        v.coords_not_worse
    );
    assert!(v.with_baseline <= v.without_baseline);
}
