use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::objective::ObjectiveState;

use super::{check_budget, Action, CandidatePool, InterviewPlan, PlanStep, StepClock, VarianceMode};

/// Heap entry: larger `key` first, then smaller id. `round` records when the
/// key was last computed.
#[derive(Debug, Clone, Copy)]
struct Keyed {
    key: f64,
    round: usize,
    idx: usize,
    id: usize,
}

impl Keyed {
    fn beats(&self, other: &Keyed) -> bool {
        self.cmp(other) == Ordering::Greater
    }
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Keyed {}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn finish(
    items: Vec<usize>,
    steps: Vec<PlanStep>,
    state: &ObjectiveState,
    clock: &StepClock,
    truncated: bool,
) -> InterviewPlan {
    InterviewPlan {
        items,
        steps,
        final_f: state.current_f(),
        gamma: state.gamma(),
        evaluations: state.eval_count(),
        wall_time: clock.elapsed(),
        truncated,
    }
}

/// Adds, one at a time, the candidate with the largest marginal gain
/// `f(B) − f(B ∪ {v})` until the budget is spent. Ties go to the smaller id.
pub fn forward_greedy(pool: &CandidatePool, budget: usize, mode: VarianceMode, gamma: f64) -> Result<InterviewPlan> {
    let clock = StepClock::start();
    let (target, truncated) = check_budget(pool, budget)?;
    let mut state = ObjectiveState::new(gamma, pool.dim())?;
    let mut taken = vec![false; pool.len()];
    let mut steps = Vec::with_capacity(target);
    let mut items = Vec::with_capacity(target);
    while items.len() < target {
        let mut best: Option<Keyed> = None;
        for (idx, c) in pool.items().iter().enumerate() {
            if taken[idx] {
                continue;
            }
            let cand = Keyed {
                key: state.marginal_gain(&c.vector, mode.sigma(c))?,
                round: items.len(),
                idx,
                id: c.id,
            };
            if best.is_none_or(|b| cand.beats(&b)) {
                best = Some(cand);
            }
        }
        let best = best.expect("pool larger than selection");
        let c = &pool.items()[best.idx];
        state.commit_add(c.id, &c.vector, mode.sigma(c))?;
        taken[best.idx] = true;
        items.push(c.id);
        steps.push(PlanStep {
            action: Action::Add,
            item: c.id,
            f_value: state.current_f(),
            evals_so_far: state.eval_count(),
            elapsed: clock.elapsed(),
        });
    }
    Ok(finish(items, steps, &state, &clock, truncated))
}

/// Forward greedy with lazily refreshed gains. A popped gain that is stale is
/// recomputed and the item taken only if it still beats the queue head;
/// otherwise it goes back with its fresh value. The result matches
/// [`forward_greedy`] whenever gains only shrink as the selection grows.
pub fn forward_greedy_lazy(
    pool: &CandidatePool,
    budget: usize,
    mode: VarianceMode,
    gamma: f64,
) -> Result<InterviewPlan> {
    let clock = StepClock::start();
    let (target, truncated) = check_budget(pool, budget)?;
    let mut state = ObjectiveState::new(gamma, pool.dim())?;
    let mut heap = BinaryHeap::with_capacity(pool.len());
    for (idx, c) in pool.items().iter().enumerate() {
        heap.push(Keyed {
            key: state.marginal_gain(&c.vector, mode.sigma(c))?,
            round: 0,
            idx,
            id: c.id,
        });
    }
    let mut steps = Vec::with_capacity(target);
    let mut items = Vec::with_capacity(target);
    while items.len() < target {
        let round = items.len();
        let mut top = heap.pop().expect("pool larger than selection");
        if top.round != round {
            let c = &pool.items()[top.idx];
            top.key = state.marginal_gain(&c.vector, mode.sigma(c))?;
            top.round = round;
            if heap.peek().is_some_and(|head| !top.beats(head)) {
                heap.push(top);
                continue;
            }
        }
        let c = &pool.items()[top.idx];
        state.commit_add(c.id, &c.vector, mode.sigma(c))?;
        items.push(c.id);
        steps.push(PlanStep {
            action: Action::Add,
            item: c.id,
            f_value: state.current_f(),
            evals_so_far: state.eval_count(),
            elapsed: clock.elapsed(),
        });
    }
    Ok(finish(items, steps, &state, &clock, truncated))
}

fn full_state(pool: &CandidatePool, mode: VarianceMode, gamma: f64) -> Result<ObjectiveState> {
    ObjectiveState::with_items(
        gamma,
        pool.dim(),
        pool.items().iter().map(|c| (c.id, c.vector.as_slice(), mode.sigma(c))),
    )
}

/// Removal cost, or `None` when removing would make the Gram matrix singular.
fn removal_cost(state: &ObjectiveState, id: usize) -> Result<Option<f64>> {
    match state.removal_increment(id) {
        Ok(x) => Ok(Some(x)),
        Err(Error::DegenerateUpdate { .. } | Error::NotPositiveDefinite { .. } | Error::Singular { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn sorted(mut ids: Vec<usize>) -> Vec<usize> {
    ids.sort_unstable();
    ids
}

/// Starts from the whole pool and repeatedly drops the item whose removal
/// increases `f` the least, until `budget` items remain. Removals that would
/// make the Gram matrix singular are skipped.
pub fn backward_greedy(pool: &CandidatePool, budget: usize, mode: VarianceMode, gamma: f64) -> Result<InterviewPlan> {
    let clock = StepClock::start();
    let (target, truncated) = check_budget(pool, budget)?;
    let mut state = full_state(pool, mode, gamma)?;
    let mut alive = vec![true; pool.len()];
    let mut steps = Vec::with_capacity(pool.len() - target);
    while state.len() > target {
        // minimizing the increment == maximizing its negation
        let mut best: Option<Keyed> = None;
        for (idx, c) in pool.items().iter().enumerate() {
            if !alive[idx] {
                continue;
            }
            let Some(inc) = removal_cost(&state, c.id)? else {
                continue;
            };
            let cand = Keyed {
                key: -inc,
                round: 0,
                idx,
                id: c.id,
            };
            if best.is_none_or(|b| cand.beats(&b)) {
                best = Some(cand);
            }
        }
        let Some(best) = best else {
            return Err(Error::Infeasible {
                remaining: state.len(),
                target,
            });
        };
        let id = pool.items()[best.idx].id;
        state.commit_remove(id)?;
        alive[best.idx] = false;
        steps.push(PlanStep {
            action: Action::Remove,
            item: id,
            f_value: state.current_f(),
            evals_so_far: state.eval_count(),
            elapsed: clock.elapsed(),
        });
    }
    let items = sorted(state.selected().collect());
    Ok(finish(items, steps, &state, &clock, truncated))
}

/// Backward greedy with lazily refreshed removal costs (min-queue); a stale
/// cost is recomputed on pop and the item removed only if it is still the
/// cheapest.
pub fn backward_greedy_lazy(
    pool: &CandidatePool,
    budget: usize,
    mode: VarianceMode,
    gamma: f64,
) -> Result<InterviewPlan> {
    let clock = StepClock::start();
    let (target, truncated) = check_budget(pool, budget)?;
    let mut state = full_state(pool, mode, gamma)?;
    let key_of = |state: &ObjectiveState, id: usize| -> Result<f64> {
        Ok(removal_cost(state, id)?.map_or(f64::NEG_INFINITY, |inc| -inc))
    };
    let mut heap = BinaryHeap::with_capacity(pool.len());
    if state.len() > target {
        for (idx, c) in pool.items().iter().enumerate() {
            heap.push(Keyed {
                key: key_of(&state, c.id)?,
                round: 0,
                idx,
                id: c.id,
            });
        }
    }
    let mut steps = Vec::with_capacity(pool.len() - target);
    let mut round = 0;
    while state.len() > target {
        let mut top = heap.pop().expect("more items than target");
        if top.round != round {
            top.key = key_of(&state, top.id)?;
            top.round = round;
            if heap.peek().is_some_and(|head| !top.beats(head)) {
                heap.push(top);
                continue;
            }
        }
        if top.key == f64::NEG_INFINITY {
            return Err(Error::Infeasible {
                remaining: state.len(),
                target,
            });
        }
        state.commit_remove(top.id)?;
        round += 1;
        steps.push(PlanStep {
            action: Action::Remove,
            item: top.id,
            f_value: state.current_f(),
            evals_so_far: state.eval_count(),
            elapsed: clock.elapsed(),
        });
    }
    let items = sorted(state.selected().collect());
    Ok(finish(items, steps, &state, &clock, truncated))
}
