//! Interview-item selection: greedy searches over the objective and the
//! popularity/entropy/variance baselines they are compared with.

mod baselines;
mod greedy;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataio::RatingsDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, DenseMatrix};
use crate::objective::ObjectiveState;
use crate::pmf::{FactorModel, NoiseModel};

pub use baselines::{baseline_select, entropy_bits, BaselineMethod};
pub use greedy::{backward_greedy, backward_greedy_lazy, forward_greedy, forward_greedy_lazy};

/// Ridge used inside greedy search so every prefix objective is finite.
pub const DEFAULT_SEARCH_GAMMA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub vector: Vec<f64>,
    pub sigma: f64,
}

/// Warm-user rating metadata for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemStats {
    pub rating_count: usize,
    /// Counts per rating level, lowest level first.
    pub histogram: Vec<usize>,
}

impl ItemStats {
    /// Histograms over the rounded rating levels of `dataset`, indexed by item.
    pub fn from_dataset(dataset: &RatingsDataset) -> Vec<ItemStats> {
        let (lo, hi) = match dataset.scale() {
            Some(s) => (s.min.round(), s.max.round()),
            None => dataset.ratings().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
                (a.min(r.value.round()), b.max(r.value.round()))
            }),
        };
        let levels = if hi >= lo { (hi - lo) as usize + 1 } else { 1 };
        let mut stats = vec![
            ItemStats {
                rating_count: 0,
                histogram: vec![0; levels],
            };
            dataset.num_items()
        ];
        for r in dataset.ratings() {
            let bin = ((r.value.round() - lo).max(0.0) as usize).min(levels - 1);
            let s = &mut stats[r.item];
            s.rating_count += 1;
            s.histogram[bin] += 1;
        }
        stats
    }
}

/// The items a selection run may look at. Only ids placed in the pool are
/// ever visible to an algorithm.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    dim: usize,
    items: Vec<Candidate>,
    stats: Option<Vec<ItemStats>>,
    num_warm_users: Option<usize>,
    prediction_variance: Option<Vec<f64>>,
}

impl CandidatePool {
    pub fn new(dim: usize, items: Vec<Candidate>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        let mut ids: Vec<usize> = items.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("candidate ids must be unique"));
        }
        for c in &items {
            if c.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.vector.len(),
                });
            }
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(Error::invalid(format!("item {} has sigma {}", c.id, c.sigma)));
            }
        }
        Ok(CandidatePool {
            dim,
            items,
            stats: None,
            num_warm_users: None,
            prediction_variance: None,
        })
    }

    /// Pool of `ids` using the model's item vectors and the noise model's σ.
    pub fn from_model(model: &FactorModel, noise: &NoiseModel, ids: &[usize]) -> Result<Self> {
        let items = ids
            .iter()
            .map(|&id| {
                if id >= model.num_items() {
                    return Err(Error::OutOfRange {
                        id,
                        bound: model.num_items(),
                    });
                }
                Ok(Candidate {
                    id,
                    vector: model.item(id).to_vec(),
                    sigma: noise.sigma(id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(model.latent_dim(), items)
    }

    /// Attaches per-item rating counts and histograms (`all_stats` is indexed
    /// by item id) and the number of warm users they were gathered from.
    pub fn with_stats(mut self, all_stats: &[ItemStats], num_warm_users: usize) -> Result<Self> {
        let mut picked = Vec::with_capacity(self.items.len());
        for c in &self.items {
            let s = all_stats.get(c.id).ok_or(Error::OutOfRange {
                id: c.id,
                bound: all_stats.len(),
            })?;
            if s.histogram.iter().sum::<usize>() != s.rating_count {
                return Err(Error::invalid(format!("histogram of item {} does not sum to its count", c.id)));
            }
            picked.push(s.clone());
        }
        self.stats = Some(picked);
        self.num_warm_users = Some(num_warm_users);
        Ok(self)
    }

    /// Attaches, per candidate, the variance of `U_iᵀV_j` over `warm_users`.
    pub fn with_prediction_variance(mut self, model: &FactorModel, warm_users: &[usize]) -> Result<Self> {
        if warm_users.is_empty() {
            return Err(Error::invalid("prediction variance needs at least one warm user"));
        }
        let n = warm_users.len() as f64;
        let mut out = Vec::with_capacity(self.items.len());
        for c in &self.items {
            let preds = warm_users
                .iter()
                .map(|&u| model.predict(u, c.id))
                .collect::<Result<Vec<f64>>>()?;
            let mean = preds.iter().sum::<f64>() / n;
            out.push(preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n);
        }
        self.prediction_variance = Some(out);
        Ok(self)
    }

    pub fn with_variances(mut self, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != self.items.len() {
            return Err(Error::DimensionMismatch {
                expected: self.items.len(),
                actual: variances.len(),
            });
        }
        self.prediction_variance = Some(variances);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Candidate] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|c| c.id)
    }

    pub fn get(&self, id: usize) -> Option<&Candidate> {
        self.items.iter().find(|c| c.id == id)
    }

    pub fn stats(&self) -> Option<&[ItemStats]> {
        self.stats.as_deref()
    }

    pub fn num_warm_users(&self) -> Option<usize> {
        self.num_warm_users
    }

    pub fn prediction_variance(&self) -> Option<&[f64]> {
        self.prediction_variance.as_deref()
    }

    /// Whether the candidate vectors span the latent space.
    pub fn spans(&self) -> bool {
        if self.items.len() < self.dim {
            return false;
        }
        let mut g = DenseMatrix::zeros(self.dim, self.dim);
        for c in &self.items {
            g.add_outer(&c.vector, 1.0 / (c.sigma * c.sigma));
        }
        Cholesky::new(&g).is_ok()
    }
}

/// How `C` is formed during a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// `C = σI`: one σ for every item.
    Shared(f64),
    /// `C = diag(σ_j)` from the pool.
    PerItem,
}

impl VarianceMode {
    pub fn sigma(&self, c: &Candidate) -> f64 {
        match *self {
            VarianceMode::Shared(s) => s,
            VarianceMode::PerItem => c.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub action: Action,
    pub item: usize,
    /// Objective after this step.
    pub f_value: f64,
    pub evals_so_far: u64,
    pub elapsed: Duration,
}

/// Result of one selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct InterviewPlan {
    /// Selected items: insertion order for forward searches and baselines,
    /// ascending id for backward searches.
    pub items: Vec<usize>,
    /// Adds (forward, baselines) or removals (backward) in execution order.
    pub steps: Vec<PlanStep>,
    /// Objective of the final selection under the search ridge.
    pub final_f: f64,
    pub gamma: f64,
    pub evaluations: u64,
    pub wall_time: Duration,
    /// The budget exceeded the pool and the plan holds the whole pool.
    pub truncated: bool,
}

impl InterviewPlan {
    pub fn f_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.f_value).collect()
    }

    /// `step,item_id,f_value,evals_so_far,elapsed_ms`, one row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "item_id", "f_value", "evals_so_far", "elapsed_ms"])?;
        for (k, s) in self.steps.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                s.item.to_string(),
                format!("{:.10e}", s.f_value),
                s.evals_so_far.to_string(),
                format!("{:.3}", s.elapsed.as_secs_f64() * 1e3),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) struct StepClock {
    start: Instant,
}

impl StepClock {
    pub(crate) fn start() -> Self {
        StepClock { start: Instant::now() }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

/// Objective trace for a fixed ordering: adds the items one by one.
pub(crate) fn trace_additions(
    pool: &CandidatePool,
    order: &[usize],
    mode: VarianceMode,
    gamma: f64,
    clock: &StepClock,
) -> Result<(Vec<PlanStep>, f64)> {
    let mut state = ObjectiveState::new(gamma, pool.dim())?;
    let mut steps = Vec::with_capacity(order.len());
    for &id in order {
        let c = pool.get(id).ok_or_else(|| Error::invalid(format!("item {id} not in pool")))?;
        state.commit_add(id, &c.vector, mode.sigma(c))?;
        steps.push(PlanStep {
            action: Action::Add,
            item: id,
            f_value: state.current_f(),
            evals_so_far: 0,
            elapsed: clock.elapsed(),
        });
    }
    Ok((steps, state.current_f()))
}

pub(crate) fn check_budget(pool: &CandidatePool, budget: usize) -> Result<(usize, bool)> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("candidate pool is empty"));
    }
    if budget > pool.len() {
        log::warn!("budget {budget} exceeds pool of {}; plan truncated", pool.len());
        Ok((pool.len(), true))
    } else {
        Ok((budget, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectionAlgorithm {
    FG1,
    FG2,
    AFG1,
    AFG2,
    BG1,
    BG2,
    ABG1,
    ABG2,
    PI,
    RS,
    HV,
    Ent,
    Ent0,
}

impl SelectionAlgorithm {
    pub const ALL: [SelectionAlgorithm; 13] = [
        Self::FG1,
        Self::FG2,
        Self::AFG1,
        Self::AFG2,
        Self::BG1,
        Self::BG2,
        Self::ABG1,
        Self::ABG2,
        Self::PI,
        Self::RS,
        Self::HV,
        Self::Ent,
        Self::Ent0,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::FG1 => "FG1",
            Self::FG2 => "FG2",
            Self::AFG1 => "AFG1",
            Self::AFG2 => "AFG2",
            Self::BG1 => "BG1",
            Self::BG2 => "BG2",
            Self::ABG1 => "ABG1",
            Self::ABG2 => "ABG2",
            Self::PI => "PI",
            Self::RS => "RS",
            Self::HV => "HV",
            Self::Ent => "Ent",
            Self::Ent0 => "Ent0",
        }
    }

    /// "1"-variants force a single shared σ.
    pub fn uses_shared_sigma(&self) -> bool {
        matches!(self, Self::FG1 | Self::AFG1 | Self::BG1 | Self::ABG1)
    }

    pub fn is_backward(&self) -> bool {
        matches!(self, Self::BG1 | Self::BG2 | Self::ABG1 | Self::ABG2)
    }

    pub fn is_lazy(&self) -> bool {
        matches!(self, Self::AFG1 | Self::AFG2 | Self::ABG1 | Self::ABG2)
    }

    /// The eager counterpart of a lazy variant.
    pub fn eager(&self) -> Self {
        match self {
            Self::AFG1 => Self::FG1,
            Self::AFG2 => Self::FG2,
            Self::ABG1 => Self::BG1,
            Self::ABG2 => Self::BG2,
            other => *other,
        }
    }

    pub fn baseline(&self) -> Option<BaselineMethod> {
        match self {
            Self::PI => Some(BaselineMethod::PopularItems),
            Self::RS => Some(BaselineMethod::RandomSample),
            Self::HV => Some(BaselineMethod::HighVariance),
            Self::Ent => Some(BaselineMethod::Entropy),
            Self::Ent0 => Some(BaselineMethod::Entropy0),
            _ => None,
        }
    }
}

impl fmt::Display for SelectionAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

/// Knobs shared by every algorithm in one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionContext {
    pub gamma: f64,
    /// σ used by the "1"-variants.
    pub shared_sigma: f64,
    pub seed: u64,
}

impl Default for SelectionContext {
    fn default() -> Self {
        SelectionContext {
            gamma: DEFAULT_SEARCH_GAMMA,
            shared_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SelectionContext {
    pub fn variance_mode(&self, alg: SelectionAlgorithm) -> VarianceMode {
        if alg.uses_shared_sigma() {
            VarianceMode::Shared(self.shared_sigma)
        } else {
            VarianceMode::PerItem
        }
    }
}

/// Floor on the ridge of a backward search that cannot span, relative to the
/// heaviest item weight `‖v‖²/σ²`. Below it every downdate cancels to
/// rounding noise.
pub const BACKWARD_RELATIVE_GAMMA: f64 = 1e-6;

/// Ridge a backward search runs with: none when the final selection can
/// still span the space, otherwise the configured search ridge raised to
/// the relative floor.
pub fn backward_gamma(pool: &CandidatePool, budget: usize, mode: VarianceMode, configured: f64) -> f64 {
    if budget >= pool.dim() && pool.spans() {
        return 0.0;
    }
    let heaviest = pool
        .items()
        .iter()
        .map(|c| dot(&c.vector, &c.vector) / mode.sigma(c).powi(2))
        .fold(0.0, f64::max);
    configured.max(BACKWARD_RELATIVE_GAMMA * heaviest)
}

pub fn run_algorithm(
    alg: SelectionAlgorithm,
    pool: &CandidatePool,
    budget: usize,
    ctx: &SelectionContext,
) -> Result<InterviewPlan> {
    let mode = ctx.variance_mode(alg);
    match alg {
        SelectionAlgorithm::FG1 | SelectionAlgorithm::FG2 => forward_greedy(pool, budget, mode, ctx.gamma),
        SelectionAlgorithm::AFG1 | SelectionAlgorithm::AFG2 => {
            forward_greedy_lazy(pool, budget, mode, ctx.gamma)
        }
        SelectionAlgorithm::BG1 | SelectionAlgorithm::BG2 => {
            backward_greedy(pool, budget, mode, backward_gamma(pool, budget, mode, ctx.gamma))
        }
        SelectionAlgorithm::ABG1 | SelectionAlgorithm::ABG2 => {
            backward_greedy_lazy(pool, budget, mode, backward_gamma(pool, budget, mode, ctx.gamma))
        }
        _ => {
            let method = alg.baseline().expect("baseline variant");
            baseline_select(pool, budget, method, ctx.seed, ctx.gamma)
        }
    }
}
