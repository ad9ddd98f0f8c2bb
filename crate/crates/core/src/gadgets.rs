//! Exact-cover-by-3-sets gadgets and the counterexamples showing the
//! interview objective is neither supermodular nor submodular, as
//! executable fixtures.
//!
//! A gadget turns an X3C instance over `{1..3q}` into `n` binary "set
//! vectors" (three ones each) plus `k = 3q` "dummy" vectors `η·e_j`. With
//! budget `q + k` and unit noise, a selection made of all dummies and an
//! exact cover reaches
//!
//! ```text
//! θ = q/(3+η²) + (k−q)/η²
//! ```
//!
//! and every other selection does strictly worse. Two sets overlapping in
//! one element (with the rest disjoint) reach `α = θ + 2/((2+η²)(4+η²)(3+η²))`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, objective_f, symmetric_eigenvalues, DenseMatrix};

/// Largest number of q-subsets an exhaustive oracle will enumerate.
pub const EXHAUSTIVE_CAP: u64 = 10_000;

/// Calls `visit` with every k-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// An X3C instance: a universe `{1..3q}` and 3-element subsets of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct X3CInstance {
    universe_size: usize,
    sets: Vec<[usize; 3]>,
}

impl X3CInstance {
    pub fn new(universe_size: usize, sets: Vec<[usize; 3]>) -> Result<Self> {
        if universe_size == 0 || !universe_size.is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "universe size must be a positive multiple of 3, got {universe_size}"
            )));
        }
        for s in &sets {
            let distinct: BTreeSet<usize> = s.iter().copied().collect();
            if distinct.len() != 3 || s.iter().any(|&e| e == 0 || e > universe_size) {
                return Err(Error::invalid(format!(
                    "set {s:?} must hold 3 distinct elements of 1..={universe_size}"
                )));
            }
        }
        Ok(X3CInstance { universe_size, sets })
    }

    pub fn q(&self) -> usize {
        self.universe_size / 3
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn sets(&self) -> &[[usize; 3]] {
        &self.sets
    }

    /// Number of universe elements covered by the chosen sets.
    pub fn coverage(&self, chosen: &[usize]) -> usize {
        chosen
            .iter()
            .flat_map(|&i| self.sets[i])
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn is_exact_cover(&self, chosen: &[usize]) -> bool {
        chosen.len() == self.q() && self.coverage(chosen) == self.universe_size
    }

    pub fn has_exact_cover(&self) -> bool {
        let mut found = false;
        for_each_combination(self.sets.len(), self.q(), |c| found |= self.is_exact_cover(c));
        found
    }
}

/// `½[√(5k²+4) − k + 4]`, the smallest admissible η².
pub fn tight_eta_sq_bound(k: usize) -> f64 {
    let k = k as f64;
    0.5 * ((5.0 * k * k + 4.0).sqrt() - k + 4.0)
}

pub fn theta(q: usize, k: usize, eta_sq: f64) -> f64 {
    q as f64 / (3.0 + eta_sq) + (k - q) as f64 / eta_sq
}

pub fn alpha(q: usize, k: usize, eta_sq: f64) -> f64 {
    theta(q, k, eta_sq) + 2.0 / ((2.0 + eta_sq) * (4.0 + eta_sq) * (3.0 + eta_sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GadgetMatrix {
    instance: X3CInstance,
    eta_sq: f64,
    theta: f64,
    alpha: f64,
}

/// Serialized form of a gadget instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GadgetSpec {
    pub universe_size: usize,
    pub sets: Vec<[usize; 3]>,
    pub eta: f64,
}

/// Builds the gadget; without an explicit η² the tight bound is rounded up.
pub fn build_gadget(instance: X3CInstance, eta_sq: Option<f64>) -> Result<GadgetMatrix> {
    let k = instance.universe_size();
    let bound = tight_eta_sq_bound(k);
    let eta_sq = eta_sq.unwrap_or_else(|| bound.ceil());
    if !(eta_sq >= bound) {
        return Err(Error::invalid(format!("eta^2 = {eta_sq} is below the bound {bound:.4}")));
    }
    let q = instance.q();
    Ok(GadgetMatrix {
        theta: theta(q, k, eta_sq),
        alpha: alpha(q, k, eta_sq),
        instance,
        eta_sq,
    })
}

/// Outcome of evaluating one cover selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverCheck {
    pub f_value: f64,
    pub is_exact_cover: bool,
}

impl CoverCheck {
    /// `f = θ` exactly when the selection is an exact cover.
    pub fn consistent_with(&self, theta: f64) -> bool {
        let at_theta = (self.f_value - theta).abs() < 1e-8;
        if self.is_exact_cover {
            at_theta
        } else {
            self.f_value > theta + 1e-12 && !at_theta
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub best_f: f64,
    pub best_choice: Vec<usize>,
    pub best_coverage: usize,
    pub admits_exact_cover: bool,
    /// Smallest `f` among choices that are not exact covers.
    pub best_non_cover_f: Option<f64>,
    pub evaluated: u64,
}

impl GadgetMatrix {
    pub fn instance(&self) -> &X3CInstance {
        &self.instance
    }

    pub fn q(&self) -> usize {
        self.instance.q()
    }

    pub fn k(&self) -> usize {
        self.instance.universe_size()
    }

    /// Number of set vectors.
    pub fn n(&self) -> usize {
        self.instance.sets().len()
    }

    pub fn eta_sq(&self) -> f64 {
        self.eta_sq
    }

    pub fn eta(&self) -> f64 {
        self.eta_sq.sqrt()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn budget(&self) -> usize {
        self.q() + self.k()
    }

    /// Column ids `n..n+k` are the dummies.
    pub fn dummy_ids(&self) -> std::ops::Range<usize> {
        self.n()..self.n() + self.k()
    }

    /// Column `id` of the `k × (n+k)` matrix `W`.
    pub fn column(&self, id: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.k()];
        if id < self.n() {
            for &e in &self.instance.sets()[id] {
                v[e - 1] = 1.0;
            }
        } else {
            v[id - self.n()] = self.eta();
        }
        v
    }

    pub fn matrix(&self) -> DenseMatrix {
        self.selection_matrix(&(0..self.n() + self.k()).collect::<Vec<_>>())
    }

    pub fn selection_matrix(&self, ids: &[usize]) -> DenseMatrix {
        let cols: Vec<Vec<f64>> = ids.iter().map(|&i| self.column(i)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        DenseMatrix::from_columns(self.k(), &refs).expect("gadget columns are well formed")
    }

    /// `f` of a column selection with unit noise and no ridge; `+∞` when the
    /// selection does not span.
    pub fn selection_f(&self, ids: &[usize]) -> Result<f64> {
        match objective_f(&self.selection_matrix(ids), &vec![1.0; ids.len()], 0.0) {
            Ok(f) => Ok(f),
            Err(Error::Singular { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Set-vector choice together with every dummy.
    pub fn with_dummies(&self, chosen: &[usize]) -> Vec<usize> {
        chosen.iter().copied().chain(self.dummy_ids()).collect()
    }

    pub fn to_spec(&self) -> GadgetSpec {
        GadgetSpec {
            universe_size: self.k(),
            sets: self.instance.sets().to_vec(),
            eta: self.eta(),
        }
    }

    pub fn from_spec(spec: &GadgetSpec) -> Result<Self> {
        build_gadget(
            X3CInstance::new(spec.universe_size, spec.sets.clone())?,
            Some(spec.eta * spec.eta),
        )
    }

    fn check_choice(&self, chosen: &[usize]) -> Result<()> {
        if chosen.len() != self.q() {
            return Err(Error::invalid(format!(
                "a cover choice has {} sets, got {}",
                self.q(),
                chosen.len()
            )));
        }
        if let Some(&bad) = chosen.iter().find(|&&i| i >= self.n()) {
            return Err(Error::OutOfRange { id: bad, bound: self.n() });
        }
        Ok(())
    }

    /// Spectrum of `BBᵀ` for the selection `ids`, descending.
    pub fn gram_spectrum(&self, ids: &[usize]) -> Result<Vec<f64>> {
        symmetric_eigenvalues(&self.selection_matrix(ids).gram())
    }
}

/// Evaluates `chosen` set vectors plus all dummies.
pub fn verify_cover_value(g: &GadgetMatrix, chosen: &[usize]) -> Result<CoverCheck> {
    g.check_choice(chosen)?;
    let ids = g.with_dummies(chosen);
    let f_value = objective_f(&g.selection_matrix(&ids), &vec![1.0; ids.len()], 0.0)?;
    Ok(CoverCheck {
        f_value,
        is_exact_cover: g.instance().is_exact_cover(chosen),
    })
}

/// `tr(BBᵀ)` for a budget-sized selection holding every dummy.
pub fn gadget_trace(g: &GadgetMatrix, selection: &[usize]) -> Result<f64> {
    let ids: BTreeSet<usize> = selection.iter().copied().collect();
    if ids.len() != selection.len() || selection.len() != g.budget() {
        return Err(Error::invalid(format!(
            "selection must hold {} distinct items",
            g.budget()
        )));
    }
    if g.dummy_ids().any(|d| !ids.contains(&d)) {
        return Err(Error::invalid("selection must include every dummy vector"));
    }
    if let Some(&bad) = selection.iter().find(|&&i| i >= g.n() + g.k()) {
        return Err(Error::OutOfRange { id: bad, bound: g.n() + g.k() });
    }
    Ok(g.selection_matrix(selection).gram().trace())
}

/// Minimizes `f` over every q-subset of set vectors (with all dummies).
pub fn exhaustive_min(g: &GadgetMatrix) -> Result<ExhaustiveResult> {
    let total = binomial(g.n(), g.q());
    if total > EXHAUSTIVE_CAP {
        return Err(Error::invalid(format!(
            "{total} subsets exceed the exhaustive cap {EXHAUSTIVE_CAP}"
        )));
    }
    if total == 0 {
        return Err(Error::invalid("fewer sets than q"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut best_non_cover: Option<f64> = None;
    let mut admits = false;
    let mut failure = None;
    for_each_combination(g.n(), g.q(), |c| {
        if failure.is_some() {
            return;
        }
        match g.selection_f(&g.with_dummies(c)) {
            Ok(f) => {
                if g.instance().is_exact_cover(c) {
                    admits = true;
                } else {
                    best_non_cover = Some(best_non_cover.map_or(f, |b: f64| b.min(f)));
                }
                if best.as_ref().is_none_or(|(b, _)| f < *b) {
                    best = Some((f, c.to_vec()));
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (best_f, best_choice) = best.expect("at least one subset");
    Ok(ExhaustiveResult {
        best_coverage: g.instance().coverage(&best_choice),
        best_f,
        best_choice,
        admits_exact_cover: admits,
        best_non_cover_f: best_non_cover,
        evaluated: total,
    })
}

/// Eigenvalues of `B'B'ᵀ` (set vectors only) restricted to the elements
/// covered by the first pair of overlapping chosen sets plus the elements
/// the choice leaves uncovered. For one overlap in a cover of `3q−1`
/// elements this is `(4, 2, 0, 0, 0, 0)`.
pub fn overlap_component_spectrum(g: &GadgetMatrix, chosen: &[usize]) -> Result<Vec<f64>> {
    g.check_choice(chosen)?;
    let sets = g.instance().sets();
    let mut pair = None;
    'outer: for (a_pos, &a) in chosen.iter().enumerate() {
        for &b in &chosen[a_pos + 1..] {
            if sets[a].iter().any(|e| sets[b].contains(e)) {
                pair = Some((a, b));
                break 'outer;
            }
        }
    }
    let (a, b) = pair.ok_or_else(|| Error::invalid("no two chosen sets overlap"))?;
    let covered: BTreeSet<usize> = chosen.iter().flat_map(|&i| sets[i]).collect();
    let mut coords: BTreeSet<usize> = sets[a].iter().chain(&sets[b]).copied().collect();
    coords.extend((1..=g.k()).filter(|e| !covered.contains(e)));
    let coords: Vec<usize> = coords.into_iter().collect();
    let full = g.selection_matrix(chosen).gram();
    let mut sub = DenseMatrix::zeros(coords.len(), coords.len());
    for (i, &ci) in coords.iter().enumerate() {
        for (j, &cj) in coords.iter().enumerate() {
            sub[(i, j)] = full[(ci - 1, cj - 1)];
        }
    }
    symmetric_eigenvalues(&sub)
}

/// For every budget-sized selection missing at least one dummy, checks that
/// some all-dummy selection has strictly smaller `f`. Returns the number of
/// selections checked and the number of violations.
pub fn check_dummy_dominance(g: &GadgetMatrix) -> Result<(u64, u64)> {
    let total_cols = g.n() + g.k();
    let size = g.budget();
    if binomial(total_cols, size) > EXHAUSTIVE_CAP {
        return Err(Error::invalid("instance too large for the dummy-dominance check"));
    }
    let best_all_dummy = exhaustive_min(g)?.best_f;
    let n = g.n();
    let mut checked = 0;
    let mut violations = 0;
    let mut failure = None;
    for_each_combination(total_cols, size, |c| {
        if failure.is_some() || c.iter().filter(|&&i| i >= n).count() == g.k() {
            return;
        }
        checked += 1;
        match g.selection_f(c) {
            Ok(f) if f > best_all_dummy => {}
            Ok(_) => violations += 1,
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok((checked, violations)),
    }
}

/// The binary matrices witnessing that `f(M) = tr((MMᵀ)⁻¹)` is not
/// supermodular: the columns of `m1` are a subset of those of `m2`, yet
/// adding `x` helps `m2` more than `m1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleFixture {
    pub m1: DenseMatrix,
    pub m2: DenseMatrix,
    pub x: Vec<f64>,
    /// Reference values for `f(M1), f(M1∪x), f(M2), f(M2∪x)`.
    pub expected: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleReport {
    pub f_m1: f64,
    pub f_m1_x: f64,
    pub f_m2: f64,
    pub f_m2_x: f64,
}

impl CounterexampleReport {
    pub fn gain_small(&self) -> f64 {
        self.f_m1_x - self.f_m1
    }

    pub fn gain_large(&self) -> f64 {
        self.f_m2_x - self.f_m2
    }

    /// Supermodularity would need `gain_small ≤ gain_large`.
    pub fn violates_supermodularity(&self) -> bool {
        self.gain_small() > self.gain_large()
    }

    pub fn values(&self) -> [f64; 4] {
        [self.f_m1, self.f_m1_x, self.f_m2, self.f_m2_x]
    }
}

pub fn counterexample_fixture() -> CounterexampleFixture {
    let m1 = DenseMatrix::from_rows(&[
        vec![1., 1., 0., 0., 0.],
        vec![0., 0., 1., 0., 0.],
        vec![1., 0., 0., 1., 0.],
        vec![0., 0., 1., 1., 1.],
        vec![0., 0., 1., 0., 1.],
    ])
    .expect("static fixture");
    let m2 = DenseMatrix::from_rows(&[
        vec![0., 0., 1., 0., 1., 1.],
        vec![1., 0., 0., 0., 0., 1.],
        vec![0., 1., 0., 0., 1., 1.],
        vec![1., 1., 0., 1., 0., 0.],
        vec![1., 0., 0., 1., 0., 1.],
    ])
    .expect("static fixture");
    CounterexampleFixture {
        m1,
        m2,
        x: vec![0., 1., 0., 0., 0.],
        expected: [12.0, 10.333, 6.6250, 4.4783],
    }
}

fn append_column(m: &DenseMatrix, x: &[f64]) -> Result<DenseMatrix> {
    let mut cols: Vec<Vec<f64>> = (0..m.cols()).map(|j| m.column(j)).collect();
    cols.push(x.to_vec());
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    DenseMatrix::from_columns(m.rows(), &refs)
}

/// `tr((MMᵀ)⁻¹)`.
pub fn unweighted_f(m: &DenseMatrix) -> Result<f64> {
    linalg::trace_of_inverse(&m.gram())
}

impl CounterexampleFixture {
    /// Whether every column of `m1` occurs among the columns of `m2`.
    pub fn is_nested(&self) -> bool {
        let big: Vec<Vec<f64>> = (0..self.m2.cols()).map(|j| self.m2.column(j)).collect();
        (0..self.m1.cols()).all(|j| big.contains(&self.m1.column(j)))
    }

    pub fn evaluate(&self) -> Result<CounterexampleReport> {
        Ok(CounterexampleReport {
            f_m1: unweighted_f(&self.m1)?,
            f_m1_x: unweighted_f(&append_column(&self.m1, &self.x)?)?,
            f_m2: unweighted_f(&self.m2)?,
            f_m2_x: unweighted_f(&append_column(&self.m2, &self.x)?)?,
        })
    }
}

/// `A ⊂ B` (as column sets) and `x` with
/// `f(B∪x) − f(B) > f(A∪x) − f(A)`, which submodularity forbids.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodularityWitness {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub x: Vec<f64>,
    pub gain_a: f64,
    pub gain_b: f64,
}

/// Random search over binary `dim × dim` matrices `A`, extensions `B ⊇ A`
/// and vectors `x` for a submodularity violation.
pub fn find_submodularity_violation(dim: usize, seed: u64, trials: usize) -> Option<SubmodularityWitness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect() };
    for _ in 0..trials {
        let a = DenseMatrix::from_row_major(dim, dim, bits(dim * dim)).ok()?;
        let Ok(fa) = unweighted_f(&a) else { continue };
        let mut b = a.clone();
        for _ in 0..(1 + trials % 3) {
            b = append_column(&b, &bits(dim)).ok()?;
        }
        let x = bits(dim);
        let (Ok(fb), Ok(fax), Ok(fbx)) = (
            unweighted_f(&b),
            unweighted_f(&append_column(&a, &x).ok()?),
            unweighted_f(&append_column(&b, &x).ok()?),
        ) else {
            continue;
        };
        let (gain_a, gain_b) = (fax - fa, fbx - fb);
        if gain_b > gain_a + 1e-9 {
            return Some(SubmodularityWitness { a, b, x, gain_a, gain_b });
        }
    }
    None
}

/// One line of the theory verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheck {
    pub name: String,
    pub expected: String,
    pub computed: String,
    pub pass: bool,
}

impl TheoryCheck {
    fn new(name: impl Into<String>, expected: impl Into<String>, computed: impl Into<String>, pass: bool) -> Self {
        TheoryCheck {
            name: name.into(),
            expected: expected.into(),
            computed: computed.into(),
            pass,
        }
    }

    fn close(name: impl Into<String>, expected: f64, computed: f64, tol: f64) -> Self {
        Self::new(
            name,
            format!("{expected:.6}"),
            format!("{computed:.6}"),
            (expected - computed).abs() <= tol,
        )
    }
}

/// Instances with a known exact cover (the first `q` sets) for q = 1, 2, 3.
pub fn reference_instances() -> Vec<X3CInstance> {
    vec![
        X3CInstance::new(3, vec![[1, 2, 3]]),
        X3CInstance::new(6, vec![[1, 2, 3], [4, 5, 6], [3, 4, 5], [2, 5, 6]]),
        X3CInstance::new(
            9,
            vec![[1, 2, 3], [4, 5, 6], [7, 8, 9], [3, 4, 5], [6, 7, 8], [1, 5, 9], [2, 4, 8]],
        ),
    ]
    .into_iter()
    .map(|r| r.expect("static instance"))
    .collect()
}

fn spectrum_matches(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| (a - b).abs() <= tol)
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Runs every numerical check of the hardness constructions and the
/// counterexample at the given η², reporting expected against computed.
pub fn theory_report(fixture: &CounterexampleFixture, eta_sq: f64, seed: u64) -> Vec<TheoryCheck> {
    let mut out = Vec::new();
    let labels = ["f(M1)", "f(M1+x)", "f(M2)", "f(M2+x)"];
    match fixture.evaluate() {
        Ok(r) => {
            for ((label, want), got) in labels.iter().zip(fixture.expected).zip(r.values()) {
                out.push(TheoryCheck::close(format!("counterexample {label}"), want, got, 1e-3));
            }
            out.push(TheoryCheck::new(
                "counterexample breaks supermodularity",
                "gain(M1) > gain(M2)",
                format!("{:.4} vs {:.4}", r.gain_small(), r.gain_large()),
                r.violates_supermodularity(),
            ));
        }
        Err(e) => out.push(TheoryCheck::new("counterexample evaluation", "finite values", e.to_string(), false)),
    }

    for inst in reference_instances() {
        let q = inst.q();
        let g = match build_gadget(inst, Some(eta_sq)) {
            Ok(g) => g,
            Err(e) => {
                out.push(TheoryCheck::new(format!("q={q} gadget"), "built", e.to_string(), false));
                continue;
            }
        };
        out.push(TheoryCheck::new(
            format!("q={q} theta / alpha"),
            "formula",
            format!("{:.6} / {:.6}", g.theta(), g.alpha()),
            g.alpha() > g.theta(),
        ));
        let cover: Vec<usize> = (0..q).collect();
        match verify_cover_value(&g, &cover) {
            Ok(c) => out.push(TheoryCheck::close(format!("q={q} f(cover) = theta"), g.theta(), c.f_value, 1e-8)),
            Err(e) => out.push(TheoryCheck::new(format!("q={q} f(cover)"), "finite", e.to_string(), false)),
        }
        match exhaustive_min(&g) {
            Ok(ex) => {
                let non_cover_ok = ex.best_non_cover_f.is_none_or(|f| f > g.theta() + 1e-12);
                out.push(TheoryCheck::new(
                    format!("q={q} exhaustive minimum over {} subsets", ex.evaluated),
                    format!("{:.6}, non-covers above", g.theta()),
                    format!(
                        "{:.6}, best non-cover {}",
                        ex.best_f,
                        ex.best_non_cover_f.map_or("none".into(), |f| format!("{f:.6}"))
                    ),
                    (ex.best_f - g.theta()).abs() <= 1e-8 && non_cover_ok,
                ));
            }
            Err(e) => out.push(TheoryCheck::new(format!("q={q} exhaustive"), "ran", e.to_string(), false)),
        }
        let mut want = vec![eta_sq + 3.0; q];
        want.extend(vec![eta_sq; g.k() - q]);
        match g.gram_spectrum(&g.with_dummies(&cover)) {
            Ok(spec) => out.push(TheoryCheck::new(
                format!("q={q} cover spectrum"),
                fmt_list(&want),
                fmt_list(&spec),
                spectrum_matches(&spec, &want, 1e-7),
            )),
            Err(e) => out.push(TheoryCheck::new(format!("q={q} cover spectrum"), fmt_list(&want), e.to_string(), false)),
        }
        if binomial(g.n() + g.k(), g.budget()) <= EXHAUSTIVE_CAP {
            match check_dummy_dominance(&g) {
                Ok((checked, bad)) => out.push(TheoryCheck::new(
                    format!("q={q} selections missing a dummy are worse"),
                    "0 violations",
                    format!("{bad} of {checked}"),
                    bad == 0,
                )),
                Err(e) => out.push(TheoryCheck::new(format!("q={q} dummy dominance"), "ran", e.to_string(), false)),
            }
        }
        if q == 3 {
            // sets {1,2,3} and {3,4,5} share element 3; {7,8,9} is disjoint
            let overlap = [0, 3, 2];
            match verify_cover_value(&g, &overlap) {
                Ok(c) => out.push(TheoryCheck::close("one-overlap selection f = alpha", g.alpha(), c.f_value, 1e-8)),
                Err(e) => out.push(TheoryCheck::new("one-overlap f", "finite", e.to_string(), false)),
            }
            match overlap_component_spectrum(&g, &overlap) {
                Ok(spec) => {
                    let nonzero: Vec<f64> = spec.iter().copied().filter(|x| x.abs() > 1e-7).collect();
                    out.push(TheoryCheck::new(
                        "overlap component nonzero eigenvalues",
                        "[4.0000, 2.0000]",
                        fmt_list(&nonzero),
                        spectrum_matches(&nonzero, &[4.0, 2.0], 1e-7),
                    ));
                }
                Err(e) => out.push(TheoryCheck::new("overlap spectrum", "[4, 2]", e.to_string(), false)),
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let k = inst.universe_size();
        let n = inst.sets().len();
        let q = inst.q();
        let g = match build_gadget(inst, Some(eta_sq)) {
            Ok(g) => g,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let chosen = rand::seq::index::sample(&mut rng, n, q).into_vec();
        match gadget_trace(&g, &g.with_dummies(&chosen)) {
            Ok(t) => worst = worst.max((t - (k as f64 + k as f64 * eta_sq)).abs()),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    out.push(TheoryCheck::new(
        "tr(BB^T) = k + k*eta^2 on 100 random selections",
        "max deviation <= 1e-9",
        failure.unwrap_or_else(|| format!("{worst:.2e}")),
        worst <= 1e-9,
    ));
    out
}

/// A random instance with q in 1..=3 and between q and 3q+1 sets.
pub fn random_instance(rng: &mut impl Rng) -> X3CInstance {
    let q = rng.random_range(1..=3);
    let k = 3 * q;
    let n = rng.random_range(q..=k + 1);
    let sets = (0..n)
        .map(|_| {
            let picked = rand::seq::index::sample(rng, k, 3).into_vec();
            [picked[0] + 1, picked[1] + 1, picked[2] + 1]
        })
        .collect();
    X3CInstance::new(k, sets).expect("valid random instance")
}
