use myodecode_core::analysis::{
    holm_bonferroni, paired_ttest, quartiles, regularized_beta, student_t_two_sided, tukey_outliers,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;

fn oracle_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[test]
fn ttest_reference_example() {
    let r = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
    assert!((r.t - 3.873).abs() < 1e-3);
    assert!((r.p - 0.0305).abs() < 1e-3);
    assert!((r.p - oracle_two_sided(r.t, 3.0)).abs() < 1e-10);
    assert_eq!(r.df, 3);
}

#[test]
fn incomplete_beta_matches_reference() {
    for &(a, b) in &[(0.5, 0.5), (1.5, 0.5), (10.0, 0.5), (3.0, 7.0), (50.0, 0.5)] {
        for i in 1..20 {
            let x = f64::from(i) / 20.0;
            let got = regularized_beta(a, b, x);
            let want = beta_reg(a, b, x);
            assert!(
                (got - want).abs() < 1e-12,
                "I_{x}({a}, {b}): {got} vs {want}"
            );
        }
    }
}

proptest! {
    #[test]
    fn t_tail_matches_reference(t in -20.0..20.0f64, df in 1usize..60) {
        let got = student_t_two_sided(t, df as f64);
        let want = oracle_two_sided(t, df as f64);
        prop_assert!((got - want).abs() < 1e-10, "t={t} df={df}: {got} vs {want}");
    }

    #[test]
    fn ttest_sign_flips_with_order(a in prop::collection::vec(-5.0..5.0f64, 3..12), shift in 0.01..2.0f64) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x - shift * (1.0 + 0.1 * i as f64)).collect();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert!((ab.p - ba.p).abs() < 1e-15);
        prop_assert!(ab.t > 0.0);
    }

    #[test]
    fn holm_adjusted_properties(p in prop::collection::vec(0.0..=1.0f64, 1..10), extra in 0usize..4, alpha in 0.001..0.2f64) {
        let m = p.len() + extra;
        let h = holm_bonferroni(&p, alpha, m).unwrap();
        for i in 0..p.len() {
            prop_assert!(h.adjusted[i] >= p[i]);
            prop_assert!(h.adjusted[i] <= 1.0);
            prop_assert_eq!(h.rejected[i], h.adjusted[i] <= alpha);
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(h.adjusted[i] <= h.adjusted[j]);
                }
            }
        }
        // Never rejects more than plain Bonferroni would allow at the smallest p.
        let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
        if min * m as f64 > alpha {
            prop_assert!(h.rejected.iter().all(|r| !r));
        }
    }

    #[test]
    fn tukey_is_affine_invariant(v in prop::collection::vec(-100.0..100.0f64, 4..30), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let base = tukey_outliers(&v).unwrap();
        let moved: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        // Skip draws where a value sits within rounding of a fence.
        let (q1, q3) = quartiles(&v);
        let iqr = q3 - q1;
        let fences_close = v
            .iter()
            .any(|x| (x - (q1 - 1.5 * iqr)).abs() < 1e-9 || (x - (q3 + 1.5 * iqr)).abs() < 1e-9);
        if !fences_close {
            prop_assert_eq!(tukey_outliers(&moved).unwrap(), base);
        }
    }
}

#[test]
fn holm_reference_example() {
    let h = holm_bonferroni(&[0.01, 0.2, 0.03], 0.05, 3).unwrap();
    assert_eq!(h.rejected.iter().filter(|r| **r).count(), 1);
    assert!(h.rejected[0]);
}

#[test]
fn tukey_reference_example() {
    let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
    v.push(100.0);
    let flagged: Vec<f64> = v
        .iter()
        .zip(tukey_outliers(&v).unwrap())
        .filter(|(_, f)| *f)
        .map(|(x, _)| *x)
        .collect();
    assert_eq!(flagged, [100.0]);
}
