//! Cold-start interview simulation: warm/cold split, ground-truth profiles,
//! per-user candidate/test splits, interview selection, ridge estimation and
//! the two error metrics.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{split_warm_cold, RatingScale, RatingsDataset, WarmColdSplit};
use crate::error::{Error, Result};
use crate::linalg::{dot, weighted_gram, Cholesky, DenseMatrix};
use crate::pmf::{
    estimate_noise, fold_in_user, train, ColdUserProfile, FactorModel, FoldInOptions, Hyperparameters,
    NoiseModel, Provenance, DEFAULT_SIGMA_FLOOR,
};
use crate::selection::{
    run_algorithm, CandidatePool, InterviewPlan, ItemStats, SelectionAlgorithm, SelectionContext,
    VarianceMode, DEFAULT_SEARCH_GAMMA,
};

/// Ridge used by the estimator on real data.
pub const DEFAULT_REAL_GAMMA: f64 = 0.01;
/// Ridge for noiseless ideal-setting checks.
pub const DEFAULT_IDEAL_GAMMA: f64 = 1e-9;

pub const DEFAULT_SIGMA_GRID: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

/// `û = (γI + V_B C_B⁻² V_Bᵀ)⁻¹ V_B C_B⁻² r`, solved directly.
pub fn ridge_estimate(v_b: &DenseMatrix, sigmas: &[f64], ratings: &[f64], gamma: f64) -> Result<ColdUserProfile> {
    if v_b.cols() == 0 {
        return Err(Error::invalid("ridge estimate needs at least one item"));
    }
    if ratings.len() != v_b.cols() {
        return Err(Error::DimensionMismatch {
            expected: v_b.cols(),
            actual: ratings.len(),
        });
    }
    let a = weighted_gram(v_b, sigmas, gamma)?;
    let mut rhs = vec![0.0; v_b.rows()];
    for (j, (&s, &r)) in sigmas.iter().zip(ratings).enumerate() {
        let w = r / (s * s);
        for (i, x) in rhs.iter_mut().enumerate() {
            *x += v_b[(i, j)] * w;
        }
    }
    Ok(ColdUserProfile {
        vector: Cholesky::new(&a)?.solve(&rhs),
        provenance: Provenance::RidgeEstimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Ratings are exact inner products with the true profile.
    Ideal,
    /// Ratings are the user's actual held-out ratings.
    Real,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Ideal => "ideal",
            Setting::Real => "real",
        }
    }

    pub fn default_gamma(&self) -> f64 {
        match self {
            Setting::Ideal => DEFAULT_IDEAL_GAMMA,
            Setting::Real => DEFAULT_REAL_GAMMA,
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(Setting::Ideal),
            "real" => Ok(Setting::Real),
            other => Err(Error::invalid(format!("unknown setting {other:?} (ideal|real)"))),
        }
    }
}

/// One cold user's interview: the true profile, the items the interview may
/// draw from and the disjoint items it is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdUserTrial {
    pub user: usize,
    pub true_profile: ColdUserProfile,
    pub candidates: Vec<usize>,
    pub tests: Vec<usize>,
    pub setting: Setting,
    pub seed: u64,
    /// Actual ratings of candidate items (real setting only), sorted by item.
    candidate_ratings: Vec<(usize, f64)>,
    /// Actual ratings of test items (real setting only), sorted by item.
    test_ratings: Vec<(usize, f64)>,
}

fn check_disjoint(candidates: &[usize], tests: &[usize]) -> Result<()> {
    let c: HashSet<usize> = candidates.iter().copied().collect();
    if c.len() != candidates.len() {
        return Err(Error::invalid("duplicate candidate item"));
    }
    if let Some(t) = tests.iter().find(|t| c.contains(t)) {
        return Err(Error::invalid(format!("item {t} is both a candidate and a test item")));
    }
    Ok(())
}

impl ColdUserTrial {
    pub fn ideal(
        user: usize,
        true_profile: ColdUserProfile,
        candidates: Vec<usize>,
        tests: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        check_disjoint(&candidates, &tests)?;
        Ok(ColdUserTrial {
            user,
            true_profile,
            candidates,
            tests,
            setting: Setting::Ideal,
            seed,
            candidate_ratings: Vec::new(),
            test_ratings: Vec::new(),
        })
    }

    /// Real-setting trial; both rating lists must come from the user.
    pub fn real(
        user: usize,
        true_profile: ColdUserProfile,
        mut candidate_ratings: Vec<(usize, f64)>,
        mut test_ratings: Vec<(usize, f64)>,
        seed: u64,
    ) -> Result<Self> {
        candidate_ratings.sort_by_key(|r| r.0);
        test_ratings.sort_by_key(|r| r.0);
        let candidates: Vec<usize> = candidate_ratings.iter().map(|r| r.0).collect();
        let tests: Vec<usize> = test_ratings.iter().map(|r| r.0).collect();
        check_disjoint(&candidates, &tests)?;
        Ok(ColdUserTrial {
            user,
            true_profile,
            candidates,
            tests,
            setting: Setting::Real,
            seed,
            candidate_ratings,
            test_ratings,
        })
    }

    fn actual(list: &[(usize, f64)], item: usize) -> Result<f64> {
        list.binary_search_by_key(&item, |r| r.0)
            .map(|k| list[k].1)
            .map_err(|_| Error::invalid(format!("no rating recorded for item {item}")))
    }
}

/// Read-only state shared by every trial of an experiment.
#[derive(Debug, Clone)]
pub struct TrialEnv<'a> {
    pub model: &'a FactorModel,
    pub noise: &'a NoiseModel,
    /// Indexed by item id.
    pub item_stats: &'a [ItemStats],
    /// Variance of warm-user predictions, indexed by item id.
    pub item_variance: &'a [f64],
    pub num_warm_users: usize,
    pub scale: Option<RatingScale>,
    /// Adds `N(0, σ_j²)` to revealed ideal-setting ratings.
    pub observation_noise: bool,
}

impl TrialEnv<'_> {
    /// The candidate pool an algorithm sees; test items never enter it.
    pub fn pool_for(&self, trial: &ColdUserTrial) -> Result<CandidatePool> {
        let variances = trial
            .candidates
            .iter()
            .map(|&j| {
                self.item_variance.get(j).copied().ok_or(Error::OutOfRange {
                    id: j,
                    bound: self.item_variance.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CandidatePool::from_model(self.model, self.noise, &trial.candidates)?
            .with_stats(self.item_stats, self.num_warm_users)?
            .with_variances(variances)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub user: usize,
    pub algorithm: SelectionAlgorithm,
    pub budget: usize,
    pub prediction_rmse: f64,
    pub profile_error: f64,
    pub runtime_ms: f64,
    pub evals: u64,
    pub truncated: bool,
    pub selected: Vec<usize>,
}

/// Estimation knobs for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub selection: SelectionContext,
    /// Ridge of the profile estimator.
    pub ridge_gamma: f64,
}

/// Runs one algorithm on one trial: selects on the pool, reveals ratings on
/// the selection, estimates the profile and scores it on the test items.
pub fn run_trial(
    trial: &ColdUserTrial,
    env: &TrialEnv<'_>,
    algorithm: SelectionAlgorithm,
    budget: usize,
    opts: &TrialOptions,
) -> Result<TrialResult> {
    let pool = env.pool_for(trial)?;
    let started = Instant::now();
    let plan = run_algorithm(algorithm, &pool, budget, &opts.selection)?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    score_plan(trial, env, algorithm, budget, &plan, opts, runtime_ms)
}

fn score_plan(
    trial: &ColdUserTrial,
    env: &TrialEnv<'_>,
    algorithm: SelectionAlgorithm,
    budget: usize,
    plan: &InterviewPlan,
    opts: &TrialOptions,
    runtime_ms: f64,
) -> Result<TrialResult> {
    let model = env.model;
    let truth = &trial.true_profile.vector;
    let mut rng = ChaCha8Rng::seed_from_u64(trial.seed ^ 0x5eed_0b5e);
    let mut revealed = Vec::with_capacity(plan.items.len());
    for &j in &plan.items {
        let r = match trial.setting {
            Setting::Ideal => {
                let exact = dot(model.item(j), truth);
                if env.observation_noise {
                    let sigma = env.noise.sigma(j);
                    exact + Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng)
                } else {
                    exact
                }
            }
            Setting::Real => ColdUserTrial::actual(&trial.candidate_ratings, j)?,
        };
        revealed.push(r);
    }
    let sigmas: Vec<f64> = match opts.selection.variance_mode(algorithm) {
        VarianceMode::Shared(s) => vec![s; plan.items.len()],
        VarianceMode::PerItem => plan.items.iter().map(|&j| env.noise.sigma(j)).collect(),
    };
    let estimate = ridge_estimate(&model.item_matrix(&plan.items)?, &sigmas, &revealed, opts.ridge_gamma)?;

    let mut sq = 0.0;
    for &j in &trial.tests {
        let pred = dot(model.item(j), &estimate.vector);
        let (pred, actual) = match trial.setting {
            Setting::Ideal => (pred, dot(model.item(j), truth)),
            Setting::Real => (
                env.scale.map_or(pred, |s| s.clamp(pred)),
                ColdUserTrial::actual(&trial.test_ratings, j)?,
            ),
        };
        sq += (pred - actual).powi(2);
    }
    let prediction_rmse = if trial.tests.is_empty() {
        0.0
    } else {
        (sq / trial.tests.len() as f64).sqrt()
    };
    Ok(TrialResult {
        user: trial.user,
        algorithm,
        budget,
        prediction_rmse,
        profile_error: estimate.squared_distance(truth),
        runtime_ms,
        evals: plan.evaluations,
        truncated: plan.truncated,
        selected: plan.items.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub algorithms: Vec<SelectionAlgorithm>,
    pub budgets: Vec<usize>,
    pub seed: u64,
    pub warm_fraction: f64,
    /// Fraction of each cold user's items offered to the interview.
    pub candidate_fraction: f64,
    pub hyper: Hyperparameters,
    /// Ridge of the profile estimator; the setting's default when absent.
    pub ridge_gamma: Option<f64>,
    pub search_gamma: f64,
    pub fold_in_regularization: f64,
    /// σ of the shared-variance variants; grid-searched when absent.
    pub shared_sigma: Option<f64>,
    pub sigma_grid: Vec<f64>,
    /// Cold users reserved for fitting the shared σ.
    pub validation_users: usize,
    pub observation_noise: bool,
    /// Evaluate at most this many cold users.
    pub max_cold_users: Option<usize>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            setting: Setting::Real,
            algorithms: SelectionAlgorithm::ALL.to_vec(),
            budgets: vec![2, 4, 6, 8, 10],
            seed: 0,
            warm_fraction: 0.7,
            candidate_fraction: 0.5,
            hyper: Hyperparameters::default(),
            ridge_gamma: None,
            search_gamma: DEFAULT_SEARCH_GAMMA,
            fold_in_regularization: 0.1,
            shared_sigma: None,
            sigma_grid: DEFAULT_SIGMA_GRID.to_vec(),
            validation_users: 20,
            observation_noise: false,
            max_cold_users: None,
            threads: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.contains(&0) {
            return Err(Error::invalid("budgets must be positive"));
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction < 1.0) {
            return Err(Error::invalid("candidate_fraction must be in (0, 1)"));
        }
        if self.sigma_grid.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("sigma grid values must be positive"));
        }
        if self.ridge_gamma.is_some_and(|g| !(g >= 0.0)) || !(self.search_gamma > 0.0) {
            return Err(Error::invalid("ridge_gamma must be >= 0 and search_gamma > 0"));
        }
        Ok(())
    }

    pub fn ridge_gamma(&self) -> f64 {
        self.ridge_gamma.unwrap_or_else(|| self.setting.default_gamma())
    }
}

/// Everything derived from the warm users before any interview runs.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub split: WarmColdSplit,
    pub model: FactorModel,
    pub noise: NoiseModel,
    pub item_stats: Vec<ItemStats>,
    pub item_variance: Vec<f64>,
    /// Items with at least one warm rating.
    pub known_items: Vec<usize>,
    pub validation: Vec<ColdUserTrial>,
    pub trials: Vec<ColdUserTrial>,
    pub scale: Option<RatingScale>,
}

fn user_seed(seed: u64, user: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (user as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Splits users, trains on the warm ones and builds one trial per cold user.
pub fn prepare(dataset: &RatingsDataset, config: &SimulationConfig) -> Result<PreparedExperiment> {
    config.validate()?;
    let split = split_warm_cold(dataset, config.warm_fraction, config.seed)?;
    let model = train(&split.warm, &config.hyper)?;
    prepare_with_model(dataset, split, model, config)
}

/// As [`prepare`] with an already trained model over the warm users.
pub fn prepare_with_model(
    dataset: &RatingsDataset,
    split: WarmColdSplit,
    model: FactorModel,
    config: &SimulationConfig,
) -> Result<PreparedExperiment> {
    config.validate()?;
    if model.num_items() != dataset.num_items() {
        return Err(Error::DimensionMismatch {
            expected: dataset.num_items(),
            actual: model.num_items(),
        });
    }
    let noise = estimate_noise(&model, &split.warm, DEFAULT_SIGMA_FLOOR)?;
    let item_stats = ItemStats::from_dataset(&split.warm);
    let known_items: Vec<usize> = (0..dataset.num_items())
        .filter(|&j| item_stats[j].rating_count > 0)
        .collect();
    let item_variance = prediction_variances(&model, &split.warm_users);
    let is_known: Vec<bool> = item_stats.iter().map(|s| s.rating_count > 0).collect();

    let by_user = dataset.by_user();
    let fold = FoldInOptions {
        regularization: config.fold_in_regularization,
        seed: config.seed,
        ..FoldInOptions::default()
    };
    let mut cold = split.cold_users.clone();
    cold.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0xc01d));
    let build = |&user: &usize| -> Result<Option<ColdUserTrial>> {
        let rated: Vec<(usize, f64)> = by_user[user].iter().copied().filter(|r| is_known[r.0]).collect();
        if rated.len() < 2 {
            return Ok(None);
        }
        let truth = fold_in_user(&model, &rated, &fold)?;
        let seed = user_seed(config.seed, user);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Some(match config.setting {
            Setting::Ideal => {
                let mut items = known_items.clone();
                items.shuffle(&mut rng);
                let cut = ((config.candidate_fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
                let mut candidates = items[..cut].to_vec();
                let mut tests = items[cut..].to_vec();
                candidates.sort_unstable();
                tests.sort_unstable();
                ColdUserTrial::ideal(user, truth, candidates, tests, seed)?
            }
            Setting::Real => {
                let mut items = rated;
                items.shuffle(&mut rng);
                let cut = ((config.candidate_fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
                let tests = items.split_off(cut);
                ColdUserTrial::real(user, truth, items, tests, seed)?
            }
        }))
    };
    let n_validation = if config.shared_sigma.is_none()
        && config.algorithms.iter().any(|a| a.uses_shared_sigma())
    {
        config.validation_users.min(cold.len() / 5)
    } else {
        0
    };
    let validation = cold[..n_validation]
        .par_iter()
        .map(build)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut eval_users = cold[n_validation..].to_vec();
    eval_users.sort_unstable();
    if let Some(max) = config.max_cold_users {
        eval_users.truncate(max);
    }
    let trials = eval_users
        .par_iter()
        .map(build)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(PreparedExperiment {
        scale: dataset.scale(),
        split,
        model,
        noise,
        item_stats,
        item_variance,
        known_items,
        validation,
        trials,
    })
}

/// Population variance of `U_iᵀV_j` over `users`, for every item.
pub fn prediction_variances(model: &FactorModel, users: &[usize]) -> Vec<f64> {
    if users.is_empty() {
        return vec![0.0; model.num_items()];
    }
    let n = users.len() as f64;
    (0..model.num_items())
        .into_par_iter()
        .map(|j| {
            let v = model.item(j);
            let preds: Vec<f64> = users.iter().map(|&u| dot(model.user(u), v)).collect();
            let mean = preds.iter().sum::<f64>() / n;
            preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

impl PreparedExperiment {
    pub fn env(&self, observation_noise: bool) -> TrialEnv<'_> {
        TrialEnv {
            model: &self.model,
            noise: &self.noise,
            item_stats: &self.item_stats,
            item_variance: &self.item_variance,
            num_warm_users: self.split.warm_users.len(),
            scale: self.scale,
            observation_noise,
        }
    }

    /// Mean candidate-pool size over the evaluated trials.
    pub fn mean_pool_size(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().map(|t| t.candidates.len()).sum::<usize>() as f64 / self.trials.len() as f64
    }

    /// The grid σ whose forward-greedy interviews give the lowest mean
    /// validation RMSE; 1.0 without validation users.
    pub fn fit_shared_sigma(&self, config: &SimulationConfig) -> Result<f64> {
        if let Some(s) = config.shared_sigma {
            return Ok(s);
        }
        if self.validation.is_empty() || config.sigma_grid.is_empty() {
            return Ok(1.0);
        }
        let mut budgets = config.budgets.clone();
        budgets.sort_unstable();
        let budget = budgets.get(budgets.len() / 2).copied().unwrap_or(10);
        let env = self.env(config.observation_noise);
        let mut best = (f64::INFINITY, 1.0);
        for &sigma in &config.sigma_grid {
            let opts = TrialOptions {
                selection: SelectionContext {
                    gamma: config.search_gamma,
                    shared_sigma: sigma,
                    seed: config.seed,
                },
                ridge_gamma: config.ridge_gamma(),
            };
            let errs = self
                .validation
                .par_iter()
                .map(|t| run_trial(t, &env, SelectionAlgorithm::AFG1, budget, &opts).map(|r| r.prediction_rmse))
                .collect::<Result<Vec<f64>>>()?;
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            log::debug!("validation sigma {sigma}: rmse {mean:.5}");
            if mean < best.0 {
                best = (mean, sigma);
            }
        }
        Ok(best.1)
    }

    /// Runs every (cold user, algorithm, budget) cell.
    pub fn run(&self, config: &SimulationConfig) -> Result<Vec<TrialResult>> {
        let shared_sigma = self.fit_shared_sigma(config)?;
        let opts = TrialOptions {
            selection: SelectionContext {
                gamma: config.search_gamma,
                shared_sigma,
                seed: config.seed,
            },
            ridge_gamma: config.ridge_gamma(),
        };
        let env = self.env(config.observation_noise);
        let cells: Vec<(usize, SelectionAlgorithm, usize)> = (0..self.trials.len())
            .flat_map(|t| {
                config
                    .algorithms
                    .iter()
                    .flat_map(move |&a| config.budgets.iter().map(move |&b| (t, a, b)))
            })
            .collect();
        cells
            .par_iter()
            .map(|&(t, alg, b)| {
                let trial = &self.trials[t];
                let opts = TrialOptions {
                    selection: SelectionContext {
                        seed: user_seed(config.seed, trial.user),
                        ..opts.selection
                    },
                    ..opts
                };
                run_trial(trial, &env, alg, b, &opts)
            })
            .collect()
    }
}

/// One aggregated row of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub setting: Setting,
    pub algorithm: SelectionAlgorithm,
    pub budget: usize,
    pub n_users: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_profile_err: f64,
    pub std_profile_err: f64,
    pub mean_runtime_ms: f64,
    pub mean_evals: f64,
}

/// Mean and sample standard deviation; `(0, 0)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const RESULT_HEADER: [&str; 11] = [
    "dataset",
    "setting",
    "algorithm",
    "budget",
    "n_users",
    "mean_rmse",
    "std_rmse",
    "mean_profile_err",
    "std_profile_err",
    "mean_runtime_ms",
    "mean_evals",
];

/// Which column a plot-data file tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Rmse,
    ProfileError,
    RuntimeMs,
}

impl PlotMetric {
    pub const ALL: [PlotMetric; 3] = [PlotMetric::Rmse, PlotMetric::ProfileError, PlotMetric::RuntimeMs];

    pub fn name(&self) -> &'static str {
        match self {
            PlotMetric::Rmse => "rmse",
            PlotMetric::ProfileError => "profile_err",
            PlotMetric::RuntimeMs => "runtime_ms",
        }
    }

    fn of(&self, row: &ResultRow) -> f64 {
        match self {
            PlotMetric::Rmse => row.mean_rmse,
            PlotMetric::ProfileError => row.mean_profile_err,
            PlotMetric::RuntimeMs => row.mean_runtime_ms,
        }
    }
}

impl ResultTable {
    /// Groups per (algorithm, budget) in configuration order. Results are
    /// sorted by user first so the aggregate does not depend on scheduling.
    pub fn aggregate(dataset: &str, config: &SimulationConfig, results: &[TrialResult]) -> ResultTable {
        let mut rows = Vec::new();
        for &alg in &config.algorithms {
            for &b in &config.budgets {
                let mut cell: Vec<&TrialResult> = results
                    .iter()
                    .filter(|r| r.algorithm == alg && r.budget == b)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                cell.sort_by_key(|r| r.user);
                let col = |f: fn(&TrialResult) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let (mean_rmse, std_rmse) = mean_std(&col(|r| r.prediction_rmse));
                let (mean_profile_err, std_profile_err) = mean_std(&col(|r| r.profile_error));
                rows.push(ResultRow {
                    dataset: dataset.to_string(),
                    setting: config.setting,
                    algorithm: alg,
                    budget: b,
                    n_users: cell.len(),
                    mean_rmse,
                    std_rmse,
                    mean_profile_err,
                    std_profile_err,
                    mean_runtime_ms: mean_std(&col(|r| r.runtime_ms)).0,
                    mean_evals: mean_std(&col(|r| r.evals as f64)).0,
                });
            }
        }
        ResultTable { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, alg: SelectionAlgorithm, budget: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.algorithm == alg && r.budget == budget)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.setting.name().to_string(),
                r.algorithm.name().to_string(),
                r.budget.to_string(),
                r.n_users.to_string(),
                r.mean_rmse.to_string(),
                r.std_rmse.to_string(),
                r.mean_profile_err.to_string(),
                r.std_profile_err.to_string(),
                r.mean_runtime_ms.to_string(),
                r.mean_evals.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `budget` column followed by one column per algorithm.
    pub fn write_plot_csv<W: Write>(&self, metric: PlotMetric, out: W) -> Result<()> {
        let mut algs: Vec<SelectionAlgorithm> = Vec::new();
        let mut budgets: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !algs.contains(&r.algorithm) {
                algs.push(r.algorithm);
            }
            if !budgets.contains(&r.budget) {
                budgets.push(r.budget);
            }
        }
        budgets.sort_unstable();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["budget".to_string()];
        header.extend(algs.iter().map(|a| a.name().to_string()));
        w.write_record(&header)?;
        for b in budgets {
            let mut rec = vec![b.to_string()];
            for &a in &algs {
                rec.push(self.row(a, b).map(|r| metric.of(r).to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub results: Vec<TrialResult>,
    pub shared_sigma: f64,
    pub ridge_gamma: f64,
    pub mean_pool_size: f64,
    pub warm_users: usize,
    pub cold_users: usize,
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Trains on the warm users, then interviews every cold user with every
/// configured algorithm and budget.
pub fn run_experiment(name: &str, dataset: &RatingsDataset, config: &SimulationConfig) -> Result<ExperimentOutput> {
    in_pool(config.threads, || {
        let prepared = prepare(dataset, config)?;
        run_prepared(name, &prepared, config)
    })?
}

pub fn run_prepared(name: &str, prepared: &PreparedExperiment, config: &SimulationConfig) -> Result<ExperimentOutput> {
    let shared_sigma = prepared.fit_shared_sigma(config)?;
    let cfg = SimulationConfig {
        shared_sigma: Some(shared_sigma),
        ..config.clone()
    };
    let results = prepared.run(&cfg)?;
    let truncated = results.iter().filter(|r| r.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} interviews were truncated to their candidate pool");
    }
    Ok(ExperimentOutput {
        table: ResultTable::aggregate(name, config, &results),
        results,
        shared_sigma,
        ridge_gamma: config.ridge_gamma(),
        mean_pool_size: prepared.mean_pool_size(),
        warm_users: prepared.split.warm_users.len(),
        cold_users: prepared.split.cold_users.len(),
    })
}
