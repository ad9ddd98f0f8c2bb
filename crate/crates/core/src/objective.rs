//! Incremental evaluation of `f(B) = tr((γI + V_B C_B⁻² V_Bᵀ)⁻¹)` while a
//! search adds or removes items.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, GramInverse};

/// Commits between from-scratch re-inversions.
pub const REFRESH_INTERVAL: usize = 64;

/// Below this Sherman–Morrison denominator a ridge-regularized removal is
/// evaluated from scratch: the downdate cancels almost all of `1 − w·vᵀA⁻¹v`.
pub const ILL_CONDITIONED_DOWNDATE: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Member {
    id: usize,
    vector: Vec<f64>,
    weight: f64,
}

/// Search state for one interview: the selected items and the maintained
/// inverse of their regularized Gram matrix.
#[derive(Debug)]
pub struct ObjectiveState {
    dim: usize,
    gamma: f64,
    members: Vec<Member>,
    gram_inverse: GramInverse,
    current_f: f64,
    evals: AtomicU64,
    since_refresh: usize,
}

impl Clone for ObjectiveState {
    fn clone(&self) -> Self {
        ObjectiveState {
            dim: self.dim,
            gamma: self.gamma,
            members: self.members.clone(),
            gram_inverse: self.gram_inverse.clone(),
            current_f: self.current_f,
            evals: AtomicU64::new(self.evals.load(Ordering::Relaxed)),
            since_refresh: self.since_refresh,
        }
    }
}

fn weight_of(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(1.0 / (sigma * sigma))
}

impl ObjectiveState {
    /// Empty selection: the inverse is `(1/γ)I` and `f = d/γ`.
    pub fn new(gamma: f64, dim: usize) -> Result<Self> {
        let gram_inverse = GramInverse::scaled_identity(gamma, dim)?;
        Ok(ObjectiveState {
            dim,
            gamma,
            members: Vec::new(),
            current_f: gram_inverse.trace(),
            gram_inverse,
            evals: AtomicU64::new(0),
            since_refresh: 0,
        })
    }

    /// Starts from a full selection, inverting the assembled Gram matrix
    /// directly. `gamma` may be zero when the items span the space.
    pub fn with_items<'a, I>(gamma: f64, dim: usize, items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [f64], f64)>,
    {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        let mut members: Vec<Member> = Vec::new();
        for (id, v, sigma) in items {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if members.iter().any(|m| m.id == id) {
                return Err(Error::invalid(format!("item {id} listed twice")));
            }
            members.push(Member {
                id,
                vector: v.to_vec(),
                weight: weight_of(sigma)?,
            });
        }
        let gram_inverse = GramInverse::from_gram(&assemble(dim, gamma, &members), gamma)?;
        Ok(ObjectiveState {
            dim,
            gamma,
            members,
            current_f: gram_inverse.trace(),
            gram_inverse,
            evals: AtomicU64::new(0),
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn current_f(&self) -> f64 {
        self.current_f
    }

    pub fn gram_inverse(&self) -> &GramInverse {
        &self.gram_inverse
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|m| m.id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.members.iter().any(|m| m.id == id)
    }

    /// `f(B) − f(B ∪ {v})`. Read-only apart from the evaluation counter, so
    /// distinct candidates can be scored concurrently.
    pub fn marginal_gain(&self, v: &[f64], sigma: f64) -> Result<f64> {
        let w = weight_of(sigma)?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        Ok(-self.gram_inverse.trace_delta(v, w)?)
    }

    /// `f(B ∖ {id}) − f(B)`; errors when the removal leaves the Gram
    /// matrix singular or indefinite.
    pub fn removal_increment(&self, id: usize) -> Result<f64> {
        let m = self.member(id)?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        if self.downdate_is_ill_conditioned(m)? {
            let rest: Vec<Member> = self.members.iter().filter(|o| o.id != id).cloned().collect();
            return Ok(linalg::trace_of_inverse(&assemble(self.dim, self.gamma, &rest))? - self.current_f);
        }
        self.gram_inverse.trace_delta(&m.vector, -m.weight)
    }

    fn downdate_is_ill_conditioned(&self, m: &Member) -> Result<bool> {
        Ok(self.gamma > 0.0
            && self.gram_inverse.update_denominator(&m.vector, -m.weight)? < ILL_CONDITIONED_DOWNDATE)
    }

    pub fn commit_add(&mut self, id: usize, v: &[f64], sigma: f64) -> Result<()> {
        if self.contains(id) {
            return Err(Error::invalid(format!("item {id} already selected")));
        }
        let weight = weight_of(sigma)?;
        self.gram_inverse = self.gram_inverse.rank_one_update(v, weight)?;
        self.members.push(Member {
            id,
            vector: v.to_vec(),
            weight,
        });
        self.after_commit()
    }

    pub fn commit_remove(&mut self, id: usize) -> Result<()> {
        let pos = self
            .members
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| Error::invalid(format!("item {id} is not selected")))?;
        let m = &self.members[pos];
        if self.downdate_is_ill_conditioned(m)? {
            self.members.remove(pos);
            return self.refresh();
        }
        self.gram_inverse = self.gram_inverse.rank_one_update(&m.vector, -m.weight)?;
        self.members.remove(pos);
        self.after_commit()
    }

    /// Objective of the current selection with the ridge term dropped, when
    /// the selected vectors span the latent space.
    pub fn unregularized_f(&self) -> Option<f64> {
        if self.members.len() < self.dim {
            return None;
        }
        let gram = assemble(self.dim, 0.0, &self.members);
        linalg::trace_of_inverse(&gram).ok()
    }

    /// Re-inverts the Gram matrix from the member list.
    pub fn refresh(&mut self) -> Result<()> {
        let gram = assemble(self.dim, self.gamma, &self.members);
        self.gram_inverse = GramInverse::from_gram(&gram, self.gamma)?;
        self.current_f = self.gram_inverse.trace();
        self.since_refresh = 0;
        Ok(())
    }

    fn after_commit(&mut self) -> Result<()> {
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh()
        } else {
            self.current_f = self.gram_inverse.trace();
            Ok(())
        }
    }

    fn member(&self, id: usize) -> Result<&Member> {
        self.members
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::invalid(format!("item {id} is not selected")))
    }
}

fn assemble(dim: usize, gamma: f64, members: &[Member]) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(dim, dim);
    for m in members {
        g.add_outer(&m.vector, m.weight);
    }
    g.add_diagonal(gamma);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::objective_f;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_values() {
        assert_eq!(ObjectiveState::new(1.0, 3).unwrap().current_f(), 3.0);
        let s = ObjectiveState::new(1e-6, 20).unwrap();
        assert!((s.current_f() - 2e7).abs() < 1e-6);
        let mut g = DenseMatrix::identity(20);
        for i in 0..20 {
            g[(i, i)] = 1e-6;
        }
        let direct = linalg::trace_of_inverse(&g).unwrap();
        assert!((s.current_f() - direct).abs() < 1e-9 * direct);
        assert!(ObjectiveState::new(0.0, 3).is_err());
        assert!(ObjectiveState::new(-1.0, 3).is_err());
    }

    #[test]
    fn tiny_ridge_removals_fall_back_to_direct() {
        // 3 heavy vectors in 6 dims: every downdate cancels to ~1e-9
        let vs = [[3.0, 1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 2.0, 5.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 4.0, 0.0, 0.0]];
        let items = vs.iter().enumerate().map(|(i, v)| (i, &v[..], 1e-2));
        let mut s = ObjectiveState::with_items(1e-3, 6, items).unwrap();
        let m = s.member(1).unwrap();
        assert!(s.downdate_is_ill_conditioned(m).unwrap());
        let inc = s.removal_increment(1).unwrap();
        let rest = DenseMatrix::from_columns(6, &[&vs[0], &vs[2]]).unwrap();
        let direct = objective_f(&rest, &[1e-2, 1e-2], 1e-3).unwrap();
        assert!((s.current_f() + inc - direct).abs() < 1e-6 * direct);
        s.commit_remove(1).unwrap();
        assert!((s.current_f() - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn gain_on_two_by_two() {
        let s = ObjectiveState::new(1.0, 2).unwrap();
        let g = s.marginal_gain(&[1.0, 0.0], 1.0).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        assert_eq!(s.eval_count(), 1);
        assert_eq!(s.marginal_gain(&[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(s.current_f(), 2.0);
    }

    #[test]
    fn gain_matches_from_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let gamma = 0.05;
        let mut s = ObjectiveState::new(gamma, d).unwrap();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut sig = Vec::new();
        for id in 0..3 {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sg = rng.random_range(0.5..2.0);
            s.commit_add(id, &v, sg).unwrap();
            cols.push(v);
            sig.push(sg);
        }
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sg = 0.8;
        let before = {
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            objective_f(&DenseMatrix::from_columns(d, &refs).unwrap(), &sig, gamma).unwrap()
        };
        cols.push(v.clone());
        sig.push(sg);
        let after = {
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            objective_f(&DenseMatrix::from_columns(d, &refs).unwrap(), &sig, gamma).unwrap()
        };
        let gain = s.marginal_gain(&v, sg).unwrap();
        assert!((gain - (before - after)).abs() < 1e-8);
    }

    #[test]
    fn add_then_remove_restores() {
        let mut s = ObjectiveState::new(0.5, 3).unwrap();
        s.commit_add(0, &[1.0, 2.0, 0.0], 1.0).unwrap();
        let f0 = s.current_f();
        s.commit_add(7, &[0.0, 1.0, -1.0], 0.7).unwrap();
        assert!(s.current_f() < f0);
        s.commit_remove(7).unwrap();
        assert!((s.current_f() - f0).abs() < 1e-8);
        assert!(s.commit_remove(7).is_err());
        assert!(s.commit_add(0, &[1.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn removal_that_breaks_rank_is_rejected() {
        let cols = [[1.0, 0.0], [0.0, 1.0]];
        let s = ObjectiveState::with_items(0.0, 2, cols.iter().enumerate().map(|(i, c)| (i, &c[..], 1.0)))
            .unwrap();
        assert!((s.current_f() - 2.0).abs() < 1e-12);
        assert!(s.removal_increment(0).is_err());
    }

    #[test]
    fn counterexample_with_tiny_ridge() {
        let m1 = [
            [1., 0., 1., 0., 0.],
            [1., 0., 0., 0., 0.],
            [0., 1., 0., 1., 1.],
            [0., 0., 1., 1., 0.],
            [0., 0., 0., 1., 1.],
        ];
        let mut s = ObjectiveState::new(1e-9, 5).unwrap();
        for (i, c) in m1.iter().enumerate() {
            s.commit_add(i, c, 1.0).unwrap();
        }
        assert!((s.current_f() - 12.0).abs() < 1e-2);
        s.commit_add(5, &[0., 1., 0., 0., 0.], 1.0).unwrap();
        assert!((s.current_f() - 10.333).abs() < 1e-2);
    }

    #[test]
    fn random_add_remove_sequence_tracks_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 5;
        let gamma = 0.1;
        let pool: Vec<(Vec<f64>, f64)> = (0..12)
            .map(|_| {
                (
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect();
        let mut s = ObjectiveState::new(gamma, d).unwrap();
        for _ in 0..20 {
            let id = rng.random_range(0..pool.len());
            if s.contains(id) {
                s.commit_remove(id).unwrap();
            } else {
                s.commit_add(id, &pool[id].0, pool[id].1).unwrap();
            }
        }
        let ids: Vec<usize> = s.selected().collect();
        let refs: Vec<&[f64]> = ids.iter().map(|&i| pool[i].0.as_slice()).collect();
        let sig: Vec<f64> = ids.iter().map(|&i| pool[i].1).collect();
        let scratch = objective_f(&DenseMatrix::from_columns(d, &refs).unwrap(), &sig, gamma).unwrap();
        assert!((s.current_f() - scratch).abs() < 1e-7);
    }

    #[test]
    fn refresh_keeps_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = ObjectiveState::new(1e-3, 4).unwrap();
        for id in 0..(REFRESH_INTERVAL + 5) {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.commit_add(id, &v, 1.0).unwrap();
        }
        let before = s.current_f();
        s.refresh().unwrap();
        assert!((before - s.current_f()).abs() < 1e-10);
        assert!(s.unregularized_f().unwrap() > s.current_f());
    }
}
