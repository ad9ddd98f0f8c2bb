//! Probabilistic matrix factorization trained by stochastic gradient descent,
//! plus fold-in of new users and per-item noise estimation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{RatingScale, RatingsDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigenvalues, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub latent_dim: usize,
    /// Weight of the Gaussian-prior (L2) penalty on every factor.
    pub regularization: f64,
    pub momentum: f64,
    /// Initial SGD step; decays linearly towards zero over `epochs`.
    pub learning_rate: f64,
    pub epochs: usize,
    /// Standard deviation of the zero-mean Gaussian initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            latent_dim: 20,
            regularization: 0.1,
            momentum: 0.0,
            learning_rate: 0.005,
            epochs: 40,
            init_std: 0.1,
            seed: 0,
        }
    }
}

/// Learning rate for `epoch` (0-based) under the linear decay schedule.
pub fn step_size(hyper: &Hyperparameters, epoch: usize) -> f64 {
    hyper.learning_rate * (1.0 - epoch as f64 / hyper.epochs as f64)
}

/// Latent factors. Users and items are stored one contiguous `latent_dim`
/// vector each (user-major / item-major row-major arrays).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub hyper: Hyperparameters,
    num_users: usize,
    num_items: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

impl FactorModel {
    pub fn from_parts(
        hyper: Hyperparameters,
        num_users: usize,
        num_items: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Result<Self> {
        let d = hyper.latent_dim;
        if d == 0 {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        if user_factors.len() != num_users * d {
            return Err(Error::DimensionMismatch {
                expected: num_users * d,
                actual: user_factors.len(),
            });
        }
        if item_factors.len() != num_items * d {
            return Err(Error::DimensionMismatch {
                expected: num_items * d,
                actual: item_factors.len(),
            });
        }
        if user_factors.iter().chain(&item_factors).any(|x| !x.is_finite()) {
            return Err(Error::invalid("factor entries must be finite"));
        }
        Ok(FactorModel {
            hyper,
            num_users,
            num_items,
            user_factors,
            item_factors,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.hyper.latent_dim
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn user(&self, i: usize) -> &[f64] {
        let d = self.latent_dim();
        &self.user_factors[i * d..(i + 1) * d]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        let d = self.latent_dim();
        &self.item_factors[j * d..(j + 1) * d]
    }

    /// `d × |items|` matrix whose columns are the given item vectors.
    pub fn item_matrix(&self, items: &[usize]) -> Result<DenseMatrix> {
        let cols: Vec<&[f64]> = items.iter().map(|&j| self.item(j)).collect();
        DenseMatrix::from_columns(self.latent_dim(), &cols)
    }

    /// `U_iᵀ V_j`, unclamped.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users {
            return Err(Error::OutOfRange {
                id: user,
                bound: self.num_users,
            });
        }
        if item >= self.num_items {
            return Err(Error::OutOfRange {
                id: item,
                bound: self.num_items,
            });
        }
        Ok(dot(self.user(user), self.item(item)))
    }

    pub fn predict_clamped(&self, user: usize, item: usize, scale: RatingScale) -> Result<f64> {
        Ok(scale.clamp(self.predict(user, item)?))
    }

    /// RMSE over the triples of `dataset`, optionally clamping predictions.
    pub fn rmse(&self, dataset: &RatingsDataset, clamp: Option<RatingScale>) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::invalid("RMSE of an empty dataset"));
        }
        let mut sse = 0.0;
        for r in dataset.ratings() {
            let mut p = self.predict(r.user, r.item)?;
            if let Some(s) = clamp {
                p = s.clamp(p);
            }
            sse += (r.value - p).powi(2);
        }
        Ok((sse / dataset.len() as f64).sqrt())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: FactorModel = serde_json::from_slice(&fs::read(path)?)?;
        // re-validate shape invariants
        FactorModel::from_parts(m.hyper, m.num_users, m.num_items, m.user_factors, m.item_factors)
    }
}

/// Regularized squared error `Σ_obs (r − uᵀv)² + λ(‖u‖² + ‖v‖²)`, the
/// per-observation form SGD descends.
pub fn training_loss(model: &FactorModel, dataset: &RatingsDataset) -> f64 {
    let lambda = model.hyper.regularization;
    dataset
        .ratings()
        .iter()
        .map(|r| {
            let (u, v) = (model.user(r.user), model.item(r.item));
            (r.value - dot(u, v)).powi(2) + lambda * (dot(u, u) + dot(v, v))
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Loss after each epoch.
    pub losses: Vec<f64>,
    pub train_rmse: f64,
}

pub fn train(dataset: &RatingsDataset, hyper: &Hyperparameters) -> Result<FactorModel> {
    train_with_report(dataset, hyper).map(|(m, _)| m)
}

/// SGD over shuffled triples with a linearly decaying step. Factors of users
/// or items without ratings never move from their initialization.
pub fn train_with_report(
    dataset: &RatingsDataset,
    hyper: &Hyperparameters,
) -> Result<(FactorModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if hyper.latent_dim == 0 || hyper.epochs == 0 {
        return Err(Error::invalid("latent_dim and epochs must be >= 1"));
    }
    if !(hyper.regularization >= 0.0) || !(hyper.init_std > 0.0) || !(hyper.learning_rate > 0.0) {
        return Err(Error::invalid("regularization, init_std and learning_rate out of range"));
    }
    if !(0.0..1.0).contains(&hyper.momentum) {
        return Err(Error::invalid("momentum must be in [0, 1)"));
    }
    let d = hyper.latent_dim;
    let (m, n) = (dataset.num_users(), dataset.num_items());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let init = Normal::new(0.0, hyper.init_std).expect("positive std");
    let mut users: Vec<f64> = (0..m * d).map(|_| init.sample(&mut rng)).collect();
    let mut items: Vec<f64> = (0..n * d).map(|_| init.sample(&mut rng)).collect();
    let use_momentum = hyper.momentum > 0.0;
    let mut vel_u = if use_momentum { vec![0.0; m * d] } else { Vec::new() };
    let mut vel_v = if use_momentum { vec![0.0; n * d] } else { Vec::new() };

    let lambda = hyper.regularization;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    let mut grad_u = vec![0.0; d];
    let mut grad_v = vec![0.0; d];
    for epoch in 0..hyper.epochs {
        let lr = step_size(hyper, epoch);
        order.shuffle(&mut rng);
        for &k in &order {
            let r = dataset.ratings()[k];
            let (ui, vj) = (r.user * d, r.item * d);
            let err = r.value - dot(&users[ui..ui + d], &items[vj..vj + d]);
            for f in 0..d {
                let (u, v) = (users[ui + f], items[vj + f]);
                grad_u[f] = -err * v + lambda * u;
                grad_v[f] = -err * u + lambda * v;
            }
            if use_momentum {
                for f in 0..d {
                    vel_u[ui + f] = hyper.momentum * vel_u[ui + f] - lr * grad_u[f];
                    vel_v[vj + f] = hyper.momentum * vel_v[vj + f] - lr * grad_v[f];
                    users[ui + f] += vel_u[ui + f];
                    items[vj + f] += vel_v[vj + f];
                }
            } else {
                for f in 0..d {
                    users[ui + f] -= lr * grad_u[f];
                    items[vj + f] -= lr * grad_v[f];
                }
            }
        }
        let loss: f64 = dataset
            .ratings()
            .iter()
            .map(|r| {
                let (u, v) = (&users[r.user * d..][..d], &items[r.item * d..][..d]);
                (r.value - dot(u, v)).powi(2) + lambda * (dot(u, u) + dot(v, v))
            })
            .sum();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: lr {lr:.5} loss {loss:.4}");
        losses.push(loss);
    }
    let model = FactorModel::from_parts(*hyper, m, n, users, items)?;
    let train_rmse = model.rmse(dataset, None)?;
    Ok((model, TrainReport { losses, train_rmse }))
}

/// Per-item rating noise `σ_j`, the diagonal of `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: Vec<f64>,
    floor: f64,
}

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

impl NoiseModel {
    pub fn new(sigma: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::invalid("sigma floor must be positive"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= floor)) {
            return Err(Error::invalid("every sigma must be finite and >= floor"));
        }
        Ok(NoiseModel { sigma, floor })
    }

    /// Every item shares `sigma`.
    pub fn uniform(n: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; n], sigma.min(DEFAULT_SIGMA_FLOOR))
    }

    pub fn sigma(&self, item: usize) -> f64 {
        self.sigma[item]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// `σ_j = max(floor, RMS residual of item j)`; unrated items get the mean of
/// the rated items' σ.
pub fn estimate_noise(model: &FactorModel, dataset: &RatingsDataset, floor: f64) -> Result<NoiseModel> {
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); dataset.num_items()];
    for r in dataset.ratings() {
        residuals[r.item].push((r.value - model.predict(r.user, r.item)?).powi(2));
    }
    let mut sigma: Vec<Option<f64>> = residuals
        .into_iter()
        .map(|mut sq| {
            if sq.is_empty() {
                return None;
            }
            // order-independent summation
            sq.sort_by(f64::total_cmp);
            let ms = sq.iter().sum::<f64>() / sq.len() as f64;
            Some(ms.sqrt().max(floor))
        })
        .collect();
    let rated: Vec<f64> = sigma.iter().flatten().copied().collect();
    let fill = if rated.is_empty() {
        floor
    } else {
        rated.iter().sum::<f64>() / rated.len() as f64
    };
    for s in sigma.iter_mut() {
        s.get_or_insert(fill);
    }
    NoiseModel::new(sigma.into_iter().map(Option::unwrap).collect(), floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Fitted by gradient descent against all of the user's ratings.
    FoldedIn,
    /// Closed-form ridge estimate from interview answers.
    RidgeEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdUserProfile {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

impl ColdUserProfile {
    /// `‖self − other‖²`.
    pub fn squared_distance(&self, other: &[f64]) -> f64 {
        self.vector.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldInOptions {
    pub regularization: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FoldInOptions {
    fn default() -> Self {
        FoldInOptions {
            regularization: 0.1,
            seed: 0,
            tolerance: 1e-10,
            max_iters: 200_000,
        }
    }
}

/// `Σ_j (r_j − uᵀV_j)² + λ‖u‖²`.
pub fn fold_in_objective(model: &FactorModel, ratings: &[(usize, f64)], lambda: f64, u: &[f64]) -> f64 {
    ratings
        .iter()
        .map(|&(j, r)| (r - dot(u, model.item(j))).powi(2))
        .sum::<f64>()
        + lambda * dot(u, u)
}

/// Fits a new user's factor against fixed item factors by accelerated
/// gradient descent on the ridge objective, stopping once the gradient norm
/// drops below `tolerance`.
pub fn fold_in_user(model: &FactorModel, ratings: &[(usize, f64)], opts: &FoldInOptions) -> Result<ColdUserProfile> {
    if ratings.is_empty() {
        return Err(Error::invalid("fold-in needs at least one rating"));
    }
    if !(opts.regularization >= 0.0) {
        return Err(Error::invalid("fold-in regularization must be >= 0"));
    }
    let d = model.latent_dim();
    for &(j, _) in ratings {
        if j >= model.num_items() {
            return Err(Error::OutOfRange {
                id: j,
                bound: model.num_items(),
            });
        }
    }
    // quadratic form: grad = 2(H u − b), H = Σ v vᵀ + λI, b = Σ r v
    let mut h = DenseMatrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for &(j, r) in ratings {
        let v = model.item(j);
        h.add_outer(v, 1.0);
        for f in 0..d {
            b[f] += r * v[f];
        }
    }
    h.add_diagonal(opts.regularization);
    let eig = symmetric_eigenvalues(&h)?;
    let (l_max, l_min) = (eig[0], eig[d - 1].max(0.0));
    if !(l_max > 0.0) {
        // every item vector is zero and λ = 0: any u is optimal
        return Ok(ColdUserProfile {
            vector: vec![0.0; d],
            provenance: Provenance::FoldedIn,
        });
    }
    let step = 1.0 / (2.0 * l_max);
    let kappa_root = (l_max / l_min.max(l_max * 1e-16)).sqrt();
    let beta = (kappa_root - 1.0) / (kappa_root + 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = Normal::new(0.0, 0.1).expect("positive std");
    let mut u: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
    let mut prev = u.clone();
    let grad_at = |x: &[f64]| -> Vec<f64> {
        let hx = h.mul_vec(x);
        hx.iter().zip(&b).map(|(a, c)| 2.0 * (a - c)).collect()
    };
    for iter in 0..opts.max_iters {
        let g = grad_at(&u);
        let gnorm = dot(&g, &g).sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Divergence { epoch: iter });
        }
        if gnorm < opts.tolerance {
            break;
        }
        let y: Vec<f64> = u.iter().zip(&prev).map(|(a, p)| a + beta * (a - p)).collect();
        let gy = grad_at(&y);
        prev = std::mem::replace(&mut u, y.iter().zip(&gy).map(|(a, g)| a - step * g).collect());
    }
    Ok(ColdUserProfile {
        vector: u,
        provenance: Provenance::FoldedIn,
    })
}
