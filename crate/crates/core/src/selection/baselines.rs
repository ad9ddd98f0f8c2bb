use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{check_budget, trace_additions, CandidatePool, InterviewPlan, StepClock, VarianceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMethod {
    /// Most ratings among warm users.
    PopularItems,
    /// Uniform sample without replacement.
    RandomSample,
    /// Largest variance of predicted ratings over warm users.
    HighVariance,
    /// Largest Shannon entropy of the observed rating histogram.
    Entropy,
    /// Entropy with "unrated" counted as one more rating level.
    Entropy0,
}

impl BaselineMethod {
    fn label(&self) -> &'static str {
        match self {
            Self::PopularItems => "PI",
            Self::RandomSample => "RS",
            Self::HighVariance => "HV",
            Self::Entropy => "Ent",
            Self::Entropy0 => "Ent0",
        }
    }
}

/// Shannon entropy in bits of a count histogram; empty histograms have 0.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Top `k` pool positions by score, ties to the smaller item id.
fn top_by_score(pool: &CandidatePool, scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| pool.items()[a].id.cmp(&pool.items()[b].id))
    });
    order.truncate(k);
    order.into_iter().map(|i| pool.items()[i].id).collect()
}

/// Picks `budget` items by a heuristic score. The recorded `f` trace uses
/// per-item σ and the search ridge `gamma`.
pub fn baseline_select(
    pool: &CandidatePool,
    budget: usize,
    method: BaselineMethod,
    seed: u64,
    gamma: f64,
) -> Result<InterviewPlan> {
    let clock = StepClock::start();
    let (k, truncated) = check_budget(pool, budget)?;
    let missing = |what| Error::MissingMetadata {
        method: method.label(),
        what,
    };
    let items = match method {
        BaselineMethod::RandomSample => {
            let mut ids: Vec<usize> = pool.ids().collect();
            ids.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, ids.len(), k).into_iter().map(|i| ids[i]).collect()
        }
        BaselineMethod::PopularItems => {
            let stats = pool.stats().ok_or_else(|| missing("rating counts"))?;
            let scores: Vec<f64> = stats.iter().map(|s| s.rating_count as f64).collect();
            top_by_score(pool, &scores, k)
        }
        BaselineMethod::HighVariance => {
            let var = pool.prediction_variance().ok_or_else(|| missing("warm-user predictions"))?;
            top_by_score(pool, var, k)
        }
        BaselineMethod::Entropy => {
            let stats = pool.stats().ok_or_else(|| missing("rating histograms"))?;
            let scores: Vec<f64> = stats.iter().map(|s| entropy_bits(&s.histogram)).collect();
            top_by_score(pool, &scores, k)
        }
        BaselineMethod::Entropy0 => {
            let stats = pool.stats().ok_or_else(|| missing("rating histograms"))?;
            let users = pool.num_warm_users().ok_or_else(|| missing("the warm-user count"))?;
            let scores: Vec<f64> = stats
                .iter()
                .map(|s| {
                    let mut h = Vec::with_capacity(s.histogram.len() + 1);
                    h.push(users.saturating_sub(s.rating_count));
                    h.extend_from_slice(&s.histogram);
                    entropy_bits(&h)
                })
                .collect();
            top_by_score(pool, &scores, k)
        }
    };
    let (steps, final_f) = trace_additions(pool, &items, VarianceMode::PerItem, gamma, &clock)?;
    Ok(InterviewPlan {
        items,
        steps,
        final_f,
        gamma,
        evaluations: 0,
        wall_time: clock.elapsed(),
        truncated,
    })
}
