//! Sequential floating forward selection over any deterministic evaluator.
//!
//! The search alternates an inclusion step (add the candidate with the best
//! score) with repeated conditional exclusion (drop the member whose removal
//! scores best, while that beats the current score). It stops when an
//! inclusion step starts from a set it has already expanded, or when the
//! optional size bound is reached.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Debug, Display};

pub type Subset<F> = BTreeSet<F>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FsError {
    #[error("evaluator returned {second} for {set} after previously returning {first}")]
    NonDeterministic { set: String, first: f64, second: f64 },
    #[error("pinned feature {0} is not in the universal set")]
    PinnedOutsideUniverse(String),
    #[error("brute force over {0} features exceeds the 20-feature limit")]
    TooLarge(usize),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("no admissible subset")]
    NoAdmissibleSubset,
}

/// Maps a feature set to an accuracy in `[0, 1]`.
pub trait Evaluator<F> {
    fn evaluate(&mut self, set: &Subset<F>) -> Result<f64, FsError>;
}

impl<F, T> Evaluator<F> for T
where
    T: FnMut(&Subset<F>) -> f64,
{
    fn evaluate(&mut self, set: &Subset<F>) -> Result<f64, FsError> {
        Ok(self(set))
    }
}

fn show<F: Display>(set: &Subset<F>) -> String {
    let names: Vec<String> = set.iter().map(|f| f.to_string()).collect();
    format!("{{{}}}", names.join(","))
}

/// Memoizes an evaluator by canonical set. With `audit` on, cache hits call
/// the evaluator again and fail on any difference.
pub struct CachedEvaluator<F, E> {
    inner: E,
    cache: BTreeMap<Subset<F>, f64>,
    audit: bool,
    calls: usize,
}

impl<F: Ord + Clone + Display, E: Evaluator<F>> CachedEvaluator<F, E> {
    pub fn new(inner: E, audit: bool) -> Self {
        Self { inner, cache: BTreeMap::new(), audit, calls: 0 }
    }

    pub fn score(&mut self, set: &Subset<F>) -> Result<f64, FsError> {
        if let Some(&first) = self.cache.get(set) {
            if self.audit {
                self.calls += 1;
                let second = self.inner.evaluate(set)?;
                if second.to_bits() != first.to_bits() {
                    return Err(FsError::NonDeterministic { set: show(set), first, second });
                }
            }
            return Ok(first);
        }
        self.calls += 1;
        let v = self.inner.evaluate(set)?;
        self.cache.insert(set.clone(), v);
        Ok(v)
    }

    /// Number of calls made to the wrapped evaluator.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Inclusion,
    Exclusion,
}

/// One evaluated candidate; serialized as one line of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub iteration: usize,
    pub step: Step,
    pub candidate: Vec<String>,
    pub accuracy: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone)]
pub struct FsState<F> {
    pub current: Subset<F>,
    pub history: Vec<Subset<F>>,
    history_index: BTreeSet<Subset<F>>,
    pub iteration: usize,
    pub pinned: Subset<F>,
    pub v_max: Option<usize>,
}

impl<F: Ord + Clone> FsState<F> {
    /// Starts from the pinned set with an empty history.
    pub fn new(pinned: Subset<F>, v_max: Option<usize>) -> Self {
        Self {
            current: pinned.clone(),
            history: Vec::new(),
            history_index: BTreeSet::new(),
            iteration: 0,
            pinned,
            v_max,
        }
    }

    pub fn in_history(&self, set: &Subset<F>) -> bool {
        self.history_index.contains(set)
    }

    fn push_history(&mut self, set: Subset<F>) {
        if self.history_index.insert(set.clone()) {
            self.history.push(set);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inclusion<F> {
    Added(F),
    /// Every feature is already selected.
    Exhausted,
    /// The current set was expanded before.
    Revisited,
    /// The size bound forbids another addition.
    AtSizeLimit,
}

fn candidate_names<F: Display>(set: &Subset<F>) -> Vec<String> {
    set.iter().map(|f| f.to_string()).collect()
}

/// Adds the feature whose inclusion scores best (smallest feature on ties).
pub fn inclusion_step<F, E>(
    state: &mut FsState<F>,
    universal: &Subset<F>,
    evaluator: &mut CachedEvaluator<F, E>,
    trace: &mut Vec<TraceEvent>,
) -> Result<Inclusion<F>, FsError>
where
    F: Ord + Clone + Display,
    E: Evaluator<F>,
{
    if state.in_history(&state.current) {
        return Ok(Inclusion::Revisited);
    }
    if matches!(state.v_max, Some(v) if state.current.len() >= v) {
        return Ok(Inclusion::AtSizeLimit);
    }
    let mut best: Option<(F, f64, Subset<F>)> = None;
    let mut events = Vec::new();
    for x in universal.iter().filter(|x| !state.current.contains(*x)) {
        let mut cand = state.current.clone();
        cand.insert(x.clone());
        let acc = evaluator.score(&cand)?;
        events.push(TraceEvent {
            iteration: state.iteration,
            step: Step::Inclusion,
            candidate: candidate_names(&cand),
            accuracy: acc,
            chosen: false,
        });
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((x.clone(), acc, cand));
        }
    }
    let Some((x, _, next)) = best else {
        return Ok(Inclusion::Exhausted);
    };
    let chosen_names = candidate_names(&next);
    for e in &mut events {
        e.chosen = e.candidate == chosen_names;
    }
    trace.extend(events);
    let previous = std::mem::replace(&mut state.current, next);
    state.push_history(previous);
    state.iteration += 1;
    Ok(Inclusion::Added(x))
}

/// Removes the non-pinned member whose removal scores best, when that score
/// beats the current one by more than `-tolerance` (plain `>` at zero
/// tolerance). Sets of fewer than two members are left alone.
pub fn exclusion_step<F, E>(
    state: &mut FsState<F>,
    evaluator: &mut CachedEvaluator<F, E>,
    tolerance: f64,
    trace: &mut Vec<TraceEvent>,
) -> Result<Option<F>, FsError>
where
    F: Ord + Clone + Display,
    E: Evaluator<F>,
{
    let removable: Vec<F> = state.current.iter().filter(|x| !state.pinned.contains(*x)).cloned().collect();
    if removable.is_empty() || state.current.len() < 2 {
        return Ok(None);
    }
    let current_acc = evaluator.score(&state.current)?;
    let mut best: Option<(F, f64, Subset<F>)> = None;
    let mut events = Vec::new();
    for x in removable {
        let mut cand = state.current.clone();
        cand.remove(&x);
        let acc = evaluator.score(&cand)?;
        events.push(TraceEvent {
            iteration: state.iteration,
            step: Step::Exclusion,
            candidate: candidate_names(&cand),
            accuracy: acc,
            chosen: false,
        });
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((x, acc, cand));
        }
    }
    let (x, acc, next) = best.expect("at least one removable feature");
    let removed = acc > current_acc - tolerance;
    if removed {
        let chosen_names = candidate_names(&next);
        for e in &mut events {
            e.chosen = e.candidate == chosen_names;
        }
        state.current = next;
        state.iteration += 1;
    }
    trace.extend(events);
    Ok(removed.then_some(x))
}

#[derive(Debug, Clone)]
pub struct SffsOptions<F> {
    pub pinned: Subset<F>,
    pub v_max: Option<usize>,
    /// Removal threshold slack; zero reproduces the strict comparison.
    pub tolerance: f64,
    /// Re-evaluate on cache hits to detect a non-deterministic evaluator.
    pub audit: bool,
}

impl<F> Default for SffsOptions<F> {
    fn default() -> Self {
        Self { pinned: BTreeSet::new(), v_max: None, tolerance: 0.0, audit: false }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome<F> {
    pub selected: Subset<F>,
    pub accuracy: f64,
    pub trace: Vec<TraceEvent>,
    pub evaluations: usize,
    pub iterations: usize,
}

fn check_pinned<F: Ord + Display>(universal: &Subset<F>, pinned: &Subset<F>) -> Result<(), FsError> {
    match pinned.iter().find(|p| !universal.contains(*p)) {
        Some(p) => Err(FsError::PinnedOutsideUniverse(p.to_string())),
        None => Ok(()),
    }
}

/// Floating forward selection starting from the pinned set.
pub fn sffs<F, E>(universal: &Subset<F>, evaluator: E, options: &SffsOptions<F>) -> Result<SelectionOutcome<F>, FsError>
where
    F: Ord + Clone + Display,
    E: Evaluator<F>,
{
    check_pinned(universal, &options.pinned)?;
    let mut cached = CachedEvaluator::new(evaluator, options.audit);
    let mut state = FsState::new(options.pinned.clone(), options.v_max);
    let mut trace = Vec::new();
    while let Inclusion::Added(_) = inclusion_step(&mut state, universal, &mut cached, &mut trace)? {
        while exclusion_step(&mut state, &mut cached, options.tolerance, &mut trace)?.is_some() {}
    }
    let accuracy = cached.score(&state.current)?;
    log::debug!("sffs finished after {} iterations, {} evaluations", state.iteration, cached.calls());
    Ok(SelectionOutcome {
        selected: state.current,
        accuracy,
        trace,
        evaluations: cached.calls(),
        iterations: state.iteration,
    })
}

/// Plain sequential forward selection: keep adding the best candidate while
/// it strictly improves the score.
pub fn forward_selection<F, E>(
    universal: &Subset<F>,
    evaluator: E,
    pinned: &Subset<F>,
    v_max: Option<usize>,
) -> Result<SelectionOutcome<F>, FsError>
where
    F: Ord + Clone + Display,
    E: Evaluator<F>,
{
    check_pinned(universal, pinned)?;
    let mut cached = CachedEvaluator::new(evaluator, false);
    let mut current = pinned.clone();
    let mut acc = if current.is_empty() { f64::NEG_INFINITY } else { cached.score(&current)? };
    let mut iterations = 0;
    loop {
        if matches!(v_max, Some(v) if current.len() >= v) {
            break;
        }
        let mut best: Option<(Subset<F>, f64)> = None;
        for x in universal.iter().filter(|x| !current.contains(*x)) {
            let mut cand = current.clone();
            cand.insert(x.clone());
            let a = cached.score(&cand)?;
            if best.as_ref().is_none_or(|(_, b)| a > *b) {
                best = Some((cand, a));
            }
        }
        match best {
            Some((cand, a)) if a > acc => {
                current = cand;
                acc = a;
                iterations += 1;
            }
            _ => break,
        }
    }
    Ok(SelectionOutcome { selected: current, accuracy: acc, trace: Vec::new(), evaluations: cached.calls(), iterations })
}

/// Exact maximizer over every non-empty subset that contains `pinned` and
/// respects `v_max`. Ties go to the smaller set, then to the
/// lexicographically smaller canonical member list.
pub fn brute_force_best<F, E>(
    universal: &Subset<F>,
    mut evaluator: E,
    pinned: &Subset<F>,
    v_max: Option<usize>,
) -> Result<(Subset<F>, f64), FsError>
where
    F: Ord + Clone + Display,
    E: Evaluator<F>,
{
    let items: Vec<F> = universal.iter().cloned().collect();
    if items.len() > 20 {
        return Err(FsError::TooLarge(items.len()));
    }
    check_pinned(universal, pinned)?;
    let mut best: Option<(Vec<F>, f64)> = None;
    for mask in 1u32..(1u32 << items.len()) {
        let members: Vec<F> = (0..items.len()).filter(|i| mask & (1 << i) != 0).map(|i| items[i].clone()).collect();
        if matches!(v_max, Some(v) if members.len() > v) || !pinned.iter().all(|p| members.contains(p)) {
            continue;
        }
        let set: Subset<F> = members.iter().cloned().collect();
        let acc = evaluator.evaluate(&set)?;
        let better = match &best {
            None => true,
            Some((bm, ba)) => acc > *ba || (acc == *ba && (members.len(), &members) < (bm.len(), bm)),
        };
        if better {
            best = Some((members, acc));
        }
    }
    best.map(|(m, a)| (m.into_iter().collect(), a)).ok_or(FsError::NoAdmissibleSubset)
}

/// True when no single allowed addition or removal strictly improves `set`.
pub fn is_locally_optimal<F, E>(
    set: &Subset<F>,
    universal: &Subset<F>,
    evaluator: &mut E,
    pinned: &Subset<F>,
    v_max: Option<usize>,
) -> Result<bool, FsError>
where
    F: Ord + Clone + Debug,
    E: Evaluator<F>,
{
    let here = evaluator.evaluate(set)?;
    if !matches!(v_max, Some(v) if set.len() >= v) {
        for x in universal.iter().filter(|x| !set.contains(*x)) {
            let mut c = set.clone();
            c.insert(x.clone());
            if evaluator.evaluate(&c)? > here {
                return Ok(false);
            }
        }
    }
    if set.len() >= 2 {
        for x in set.iter().filter(|x| !pinned.contains(*x)) {
            let mut c = set.clone();
            c.remove(x);
            if evaluator.evaluate(&c)? > here {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    type S = Subset<u8>;

    fn set(xs: &[u8]) -> S {
        xs.iter().copied().collect()
    }

    fn table(entries: &[(&[u8], f64)]) -> impl FnMut(&S) -> f64 + Clone {
        let map: BTreeMap<S, f64> = entries.iter().map(|(k, v)| (set(k), *v)).collect();
        move |s: &S| map.get(s).copied().unwrap_or(0.0)
    }

    #[test]
    fn size_evaluator_adds_smallest_missing() {
        let u = set(&[0, 1, 2, 3]);
        let mut ev = CachedEvaluator::new(|s: &S| s.len() as f64 / 4.0, false);
        let mut st = FsState::new(set(&[2]), None);
        let mut trace = Vec::new();
        assert_eq!(inclusion_step(&mut st, &u, &mut ev, &mut trace).unwrap(), Inclusion::Added(0));
        assert_eq!(st.current, set(&[0, 2]));
        assert_eq!(st.iteration, 1);
        assert_eq!(st.history, vec![set(&[2])]);
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.iter().filter(|e| e.chosen).count(), 1);
    }

    #[test]
    fn unique_best_singleton_is_added() {
        let u = set(&[0, 1, 2]);
        let mut ev = CachedEvaluator::new(table(&[(&[0], 0.2), (&[1], 0.7), (&[2], 0.4)]), false);
        let mut st = FsState::new(set(&[]), None);
        assert_eq!(inclusion_step(&mut st, &u, &mut ev, &mut Vec::new()).unwrap(), Inclusion::Added(1));
    }

    #[test]
    fn inclusion_never_duplicates_pinned() {
        let u = set(&[0, 1]);
        let mut ev = CachedEvaluator::new(|_: &S| 0.5, false);
        let mut st = FsState::new(set(&[0]), None);
        assert_eq!(inclusion_step(&mut st, &u, &mut ev, &mut Vec::new()).unwrap(), Inclusion::Added(1));
        st.history.clear();
        st.history_index.clear();
        assert_eq!(inclusion_step(&mut st, &u, &mut ev, &mut Vec::new()).unwrap(), Inclusion::Exhausted);
    }

    #[test]
    fn monotone_evaluator_never_removes() {
        let mut ev = CachedEvaluator::new(|s: &S| s.len() as f64, false);
        let mut st = FsState::new(set(&[]), None);
        st.current = set(&[0, 1, 2]);
        assert_eq!(exclusion_step(&mut st, &mut ev, 0.0, &mut Vec::new()).unwrap(), None);
    }

    #[test]
    fn harmful_feature_is_removed_but_pinned_stays() {
        let eval = table(&[(&[0, 1, 2], 0.5), (&[0, 1], 0.8), (&[0, 2], 0.4), (&[1, 2], 0.9)]);
        let mut ev = CachedEvaluator::new(eval.clone(), false);
        let mut st = FsState::new(set(&[]), None);
        st.current = set(&[0, 1, 2]);
        assert_eq!(exclusion_step(&mut st, &mut ev, 0.0, &mut Vec::new()).unwrap(), Some(0));
        let mut ev = CachedEvaluator::new(eval, false);
        let mut st = FsState::new(set(&[0]), None);
        st.current = set(&[0, 1, 2]);
        assert_eq!(exclusion_step(&mut st, &mut ev, 0.0, &mut Vec::new()).unwrap(), Some(2));
        assert!(st.current.contains(&0));
    }

    #[test]
    fn pair_table_selects_pair() {
        let u = set(&[0, 1, 2]);
        let ev = table(&[(&[0], 0.5), (&[1], 0.6), (&[0, 1], 0.9), (&[0, 1, 2], 0.85), (&[2], 0.1), (&[0, 2], 0.3), (&[1, 2], 0.4)]);
        let out = sffs(&u, ev.clone(), &SffsOptions::default()).unwrap();
        assert_eq!(out.selected, set(&[0, 1]));
        let (bf, acc) = brute_force_best(&u, ev, &set(&[]), None).unwrap();
        assert_eq!((bf, acc), (set(&[0, 1]), 0.9));
    }

    #[test]
    fn dominant_single_feature() {
        let u = set(&[0, 1, 2, 3]);
        let ev = |s: &S| if s == &set(&[2]) { 1.0 } else { 0.3 + 0.1 * s.len() as f64 };
        assert_eq!(sffs(&u, ev, &SffsOptions::default()).unwrap().selected, set(&[2]));
    }

    #[test]
    fn size_bound() {
        let u = set(&[0, 1, 2, 3]);
        let ev = |s: &S| s.len() as f64;
        let opts = SffsOptions { v_max: Some(2), ..SffsOptions::default() };
        assert_eq!(sffs(&u, ev, &opts).unwrap().selected, set(&[0, 1]));
        let (bf, _) = brute_force_best(&u, ev, &set(&[]), Some(2)).unwrap();
        assert_eq!(bf, set(&[0, 1]));
        let (one, _) = brute_force_best(&u, |s: &S| if s.contains(&3) { 0.9 } else { 0.1 }, &set(&[]), Some(1)).unwrap();
        assert_eq!(one, set(&[3]));
    }

    #[test]
    fn all_equal_evaluator_picks_smallest_subset() {
        let u = set(&[0, 1, 2]);
        let (bf, _) = brute_force_best(&u, |_: &S| 0.5, &set(&[]), None).unwrap();
        assert_eq!(bf, set(&[0]));
        let (bf, _) = brute_force_best(&u, |_: &S| 0.5, &set(&[2]), None).unwrap();
        assert_eq!(bf, set(&[2]));
    }

    #[test]
    fn brute_force_size_guard() {
        let u: S = (0..21).collect();
        assert_eq!(brute_force_best(&u, |_: &S| 0.0, &set(&[]), None), Err(FsError::TooLarge(21)));
    }

    #[test]
    fn non_deterministic_evaluator_is_caught() {
        let u = set(&[0, 1, 2]);
        let mut n = 0u32;
        let flaky = move |s: &S| {
            n += 1;
            s.len() as f64 * 0.1 + f64::from(n % 7) * 1e-3
        };
        let opts = SffsOptions { audit: true, ..SffsOptions::default() };
        assert!(matches!(sffs(&u, flaky, &opts), Err(FsError::NonDeterministic { .. })));
    }

    #[test]
    fn pinned_must_be_in_universe() {
        let opts = SffsOptions { pinned: set(&[9]), ..SffsOptions::default() };
        assert!(matches!(sffs(&set(&[0]), |_: &S| 0.0, &opts), Err(FsError::PinnedOutsideUniverse(_))));
    }

    #[test]
    fn evaluation_count_is_reproducible() {
        let u = set(&[0, 1, 2, 3, 4]);
        let ev = |s: &S| s.iter().map(|&x| f64::from(x) * 0.13 % 0.4).sum::<f64>() / (1.0 + s.len() as f64);
        let a = sffs(&u, ev, &SffsOptions::default()).unwrap();
        let b = sffs(&u, ev, &SffsOptions::default()).unwrap();
        assert_eq!(a.evaluations, b.evaluations);
        assert_eq!(a.trace, b.trace);
    }
}
