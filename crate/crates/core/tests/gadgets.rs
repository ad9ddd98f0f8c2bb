use oid_core::gadgets::{
    build_gadget, check_dummy_dominance, counterexample_fixture, exhaustive_min, find_submodularity_violation,
    random_instance, reference_instances, theory_report, tight_eta_sq_bound, unweighted_f, verify_cover_value,
    GadgetMatrix, X3CInstance,
};
use oid_core::linalg::{symmetric_eigenvalues, DenseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `tr(M⁻¹)` through the eigenvalues, independent of the Cholesky path.
fn trace_inv_by_eigen(g: &GadgetMatrix, ids: &[usize]) -> f64 {
    let eig = symmetric_eigenvalues(&g.selection_matrix(ids).gram()).unwrap();
    eig.iter().map(|l| 1.0 / l).sum()
}

#[test]
fn minimum_hits_theta_exactly_when_a_cover_exists() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut with_cover, mut without) = (0, 0);
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let has = inst.has_exact_cover();
        let g = build_gadget(inst, None).unwrap();
        let ex = exhaustive_min(&g).unwrap();
        assert_eq!(ex.admits_exact_cover, has);
        if has {
            with_cover += 1;
            assert!((ex.best_f - g.theta()).abs() < 1e-8);
        } else {
            without += 1;
            assert!(ex.best_f > g.theta() + 1e-9);
        }
        let oracle = trace_inv_by_eigen(&g, &g.with_dummies(&ex.best_choice));
        assert!((oracle - ex.best_f).abs() < 1e-8 * oracle);
    }
    eprintln!("{with_cover} instances with a cover, {without} without");
    assert!(with_cover > 0 && without > 0);
}

/// Near-misses: a choice covering all but one element, with no exact cover
/// available. The minimum sits at or above alpha.
#[test]
fn near_miss_choices_stay_above_alpha() {
    let cases = [
        X3CInstance::new(6, vec![[1, 2, 3], [3, 4, 5], [2, 4, 6]]).unwrap(),
        X3CInstance::new(6, vec![[1, 2, 3], [3, 4, 5], [1, 4, 6], [2, 5, 6]]).unwrap(),
        X3CInstance::new(9, vec![[1, 2, 3], [3, 4, 5], [6, 7, 8], [1, 4, 9], [2, 5, 9]]).unwrap(),
    ];
    for inst in cases {
        assert!(!inst.has_exact_cover());
        let g = build_gadget(inst, Some(12.0)).unwrap();
        let ex = exhaustive_min(&g).unwrap();
        assert_eq!(ex.best_coverage, g.k() - 1, "{:?}", ex.best_choice);
        assert!(ex.best_f >= g.alpha() - 1e-9, "{} < {}", ex.best_f, g.alpha());
    }
}

#[test]
fn random_no_cover_instances_stay_above_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..300 {
        let inst = random_instance(&mut rng);
        if inst.has_exact_cover() {
            continue;
        }
        let g = build_gadget(inst, None).unwrap();
        let ex = exhaustive_min(&g).unwrap();
        checked += 1;
        tightest = tightest.min(ex.best_f - g.alpha());
    }
    eprintln!("{checked} instances without a cover, smallest f - alpha = {tightest:.3e}");
    assert!(checked > 0);
    assert!(tightest >= -1e-9);
}

#[test]
fn selections_without_every_dummy_lose() {
    for inst in reference_instances().into_iter().skip(1) {
        let g = build_gadget(inst, None).unwrap();
        let (checked, violations) = check_dummy_dominance(&g).unwrap();
        assert!(checked > 0);
        assert_eq!(violations, 0);
    }
}

#[test]
fn cover_values_match_formula_across_eta() {
    for inst in reference_instances() {
        let k = inst.universe_size();
        let lo = tight_eta_sq_bound(k);
        assert!(build_gadget(inst.clone(), Some(lo - 0.1)).is_err());
        for eta_sq in [lo, 12.0, 40.0] {
            let g = build_gadget(inst.clone(), Some(eta_sq)).unwrap();
            let cover: Vec<usize> = (0..g.q()).collect();
            let c = verify_cover_value(&g, &cover).unwrap();
            assert!(c.is_exact_cover && c.consistent_with(g.theta()));
            let oracle = trace_inv_by_eigen(&g, &g.with_dummies(&cover));
            assert!((oracle - g.theta()).abs() < 1e-9);
        }
    }
}

#[test]
fn counterexample_values_and_violations() {
    let fx = counterexample_fixture();
    assert!(fx.is_nested());
    let r = fx.evaluate().unwrap();
    for (got, want) in r.values().iter().zip([12.0, 10.333, 6.6250, 4.4783]) {
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }
    assert!(r.violates_supermodularity());
    let w = find_submodularity_violation(3, 0, 5000).expect("a witness within 5000 draws");
    assert!(w.gain_b > w.gain_a);
    let fa = unweighted_f(&w.a).unwrap();
    let ax = append(&w.a, &w.x);
    assert!(((unweighted_f(&ax).unwrap() - fa) - w.gain_a).abs() < 1e-9);
}

fn append(m: &DenseMatrix, x: &[f64]) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = (0..m.cols()).map(|j| m.column(j)).collect();
    cols.push(x.to_vec());
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    DenseMatrix::from_columns(m.rows(), &refs).unwrap()
}

#[test]
fn full_report_passes() {
    let report = theory_report(&counterexample_fixture(), 12.0, 0);
    let failed: Vec<_> = report.iter().filter(|c| !c.pass).collect();
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn gadget_spec_round_trips_through_json() {
    let g = build_gadget(reference_instances().remove(1), Some(12.0)).unwrap();
    let json = serde_json::to_string(&g.to_spec()).unwrap();
    let back = GadgetMatrix::from_spec(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.matrix(), g.matrix());
    assert!((back.theta() - g.theta()).abs() < 1e-12);
}
