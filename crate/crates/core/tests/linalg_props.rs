use oid_core::linalg::{objective_f, symmetric_eigenvalues, trace_of_inverse, weighted_gram, DenseMatrix, GramInverse};
use oid_core::objective::ObjectiveState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

/// Plain Gauss–Jordan inverse with partial pivoting, independent of the
/// Cholesky path under test.
fn gauss_jordan_inverse(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for col in 0..n {
        let p = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, p);
        inv.swap(col, p);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    DenseMatrix::from_rows(&inv).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_of_inverse_matches_eigenvalues(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, d, d + 2);
        let mut m = a.gram();
        m.add_diagonal(0.1);
        let eig = symmetric_eigenvalues(&m).unwrap();
        let want: f64 = eig.iter().map(|l| 1.0 / l).sum();
        let got = trace_of_inverse(&m).unwrap();
        prop_assert!((got - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn eigenvalues_sum_to_trace(seed in any::<u64>(), d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, d, d).gram();
        let eig = symmetric_eigenvalues(&m).unwrap();
        prop_assert!((eig.iter().sum::<f64>() - m.trace()).abs() < 1e-9);
        prop_assert!(eig.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn objective_is_monotone(seed in any::<u64>(), d in 1usize..6, extra in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_matrix(&mut rng, d, d + extra);
        let s_cols = d + rng.random_range(0..extra);
        let cols: Vec<Vec<f64>> = (0..s_cols).map(|j| t.column(j)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let s = DenseMatrix::from_columns(d, &refs).unwrap();
        let (Ok(fs), Ok(ft)) = (
            objective_f(&s, &vec![1.0; s_cols], 0.0),
            objective_f(&t, &vec![1.0; d + extra], 0.0),
        ) else {
            return Ok(());
        };
        prop_assert!(ft <= fs + 1e-9 * fs.max(1.0));
    }

    #[test]
    fn adds_are_path_independent(seed in any::<u64>(), d in 1usize..8, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let sig: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut a = ObjectiveState::new(0.05, d).unwrap();
        for &i in &order {
            a.commit_add(i, &vs[i], sig[i]).unwrap();
        }
        order.reverse();
        order.rotate_left(n / 2);
        let mut b = ObjectiveState::new(0.05, d).unwrap();
        for &i in &order {
            b.commit_add(i, &vs[i], sig[i]).unwrap();
        }
        prop_assert!((a.current_f() - b.current_f()).abs() <= 1e-7 * a.current_f());
    }

    #[test]
    fn marginal_gain_is_nonnegative(seed in any::<u64>(), d in 1usize..8, n in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ObjectiveState::new(1e-3, d).unwrap();
        for i in 0..n {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.commit_add(i, &v, rng.random_range(0.5..2.0)).unwrap();
        }
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert!(s.marginal_gain(&v, 1.0).unwrap() >= -1e-9);
    }
}

/// 100 random add/downdate chains: the maintained inverse matches direct
/// inversion and the maintained `f` matches a from-scratch evaluation.
#[test]
fn sherman_morrison_chains_track_direct_inversion() {
    let mut worst_inv: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=10);
        let len = rng.random_range(1..=30);
        let gamma = 0.5;
        let mut g = GramInverse::scaled_identity(gamma, d).unwrap();
        let mut members: Vec<(Vec<f64>, f64)> = Vec::new();
        for _ in 0..len {
            if !members.is_empty() && rng.random_bool(0.35) {
                let (v, s) = members.remove(rng.random_range(0..members.len()));
                g = g.rank_one_update(&v, -1.0 / (s * s)).unwrap();
            } else {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = rng.random_range(0.5..2.0);
                g = g.rank_one_update(&v, 1.0 / (s * s)).unwrap();
                members.push((v, s));
            }
        }
        let cols: Vec<&[f64]> = members.iter().map(|(v, _)| v.as_slice()).collect();
        let sig: Vec<f64> = members.iter().map(|m| m.1).collect();
        let vb = DenseMatrix::from_columns(d, &cols).unwrap();
        let direct = gauss_jordan_inverse(&weighted_gram(&vb, &sig, gamma).unwrap());
        worst_inv = worst_inv.max(g.inverse().frobenius_distance(&direct));
        let f_direct = if members.is_empty() {
            d as f64 / gamma
        } else {
            objective_f(&vb, &sig, gamma).unwrap()
        };
        worst_f = worst_f.max((g.trace() - f_direct).abs());
    }
    assert!(worst_inv < 1e-8, "inverse drift {worst_inv:e}");
    assert!(worst_f < 1e-7, "trace drift {worst_f:e}");
}

#[test]
fn objective_state_chains_match_scratch() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.random_range(1..=10);
        let mut s = ObjectiveState::new(0.2, d).unwrap();
        let mut pool: Vec<(usize, Vec<f64>, f64)> = Vec::new();
        for step in 0..rng.random_range(1..=30) {
            let selected: Vec<usize> = s.selected().collect();
            if !selected.is_empty() && rng.random_bool(0.3) {
                s.commit_remove(selected[rng.random_range(0..selected.len())]).unwrap();
            } else {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let sigma = rng.random_range(0.5..2.0);
                s.commit_add(step, &v, sigma).unwrap();
                pool.push((step, v, sigma));
            }
        }
        let chosen: Vec<&(usize, Vec<f64>, f64)> = pool.iter().filter(|p| s.contains(p.0)).collect();
        let f = if chosen.is_empty() {
            d as f64 / 0.2
        } else {
            let cols: Vec<&[f64]> = chosen.iter().map(|p| p.1.as_slice()).collect();
            let sig: Vec<f64> = chosen.iter().map(|p| p.2).collect();
            objective_f(&DenseMatrix::from_columns(d, &cols).unwrap(), &sig, 0.2).unwrap()
        };
        assert!((s.current_f() - f).abs() < 1e-7, "seed {seed}: {} vs {f}", s.current_f());
    }
}

#[test]
fn update_then_downdate_restores() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a = random_matrix(&mut rng, 6, 9);
    let mut m = a.gram();
    m.add_diagonal(0.3);
    let g = GramInverse::from_gram(&m, 0.3).unwrap();
    for _ in 0..20 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = g.rank_one_update(&v, 2.0).unwrap().rank_one_update(&v, -2.0).unwrap();
        assert!(back.inverse().frobenius_distance(g.inverse()) < 1e-8);
    }
}
