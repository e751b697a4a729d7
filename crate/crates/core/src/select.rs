//! Deterministic selection among near-equal optima.
//!
//! Candidates whose objective lies within a relative tolerance of the best
//! one are ties. Ties are broken by the smaller between-groups SSP trace,
//! then by the lexicographically smallest retained index set, then by the
//! labels. The outcome depends only on the set of candidates pushed, never on
//! the order, so pools from concurrent workers can be merged freely.

use std::cmp::Ordering;

use crate::config::Configuration;

/// Relative tolerance defining objective ties.
pub const OBJECTIVE_TIE_TOL: f64 = 1e-12;
const TRACE_TIE_TOL: f64 = 1e-12;

#[inline]
pub fn tie_band(best: f64, rel_tol: f64) -> f64 {
    rel_tol * best.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct Ranked<T> {
    pub objective: f64,
    pub between_trace: f64,
    pub config: Configuration,
    pub item: T,
}

#[derive(Debug, Clone)]
pub struct TiePool<T> {
    rel_tol: f64,
    best: f64,
    members: Vec<Ranked<T>>,
}

impl<T> Default for TiePool<T> {
    fn default() -> Self {
        Self::new(OBJECTIVE_TIE_TOL)
    }
}

impl<T> TiePool<T> {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            best: f64::INFINITY,
            members: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best_objective(&self) -> f64 {
        self.best
    }

    /// Whether a candidate with this objective would enter the pool.
    #[inline]
    pub fn admits(&self, objective: f64) -> bool {
        objective.is_finite()
            && (!self.best.is_finite()
                || objective <= self.best + tie_band(self.best, self.rel_tol))
    }

    pub fn push(&mut self, cand: Ranked<T>) {
        if !cand.objective.is_finite() {
            return;
        }
        if cand.objective < self.best {
            self.best = cand.objective;
            let cut = self.best + tie_band(self.best, self.rel_tol);
            self.members.retain(|m| m.objective <= cut);
        }
        if cand.objective <= self.best + tie_band(self.best, self.rel_tol) {
            self.members.push(cand);
        }
    }

    pub fn merge(mut self, other: TiePool<T>) -> TiePool<T> {
        for m in other.members {
            self.push(m);
        }
        self
    }

    /// The winning candidate and the number of objective ties (including the
    /// winner).
    pub fn finish(mut self) -> Option<(Ranked<T>, usize)> {
        let cut = self.best + tie_band(self.best, self.rel_tol);
        self.members.retain(|m| m.objective <= cut);
        let ties = self.members.len();
        let min_trace = self
            .members
            .iter()
            .map(|m| m.between_trace)
            .fold(f64::INFINITY, f64::min);
        let trace_cut = min_trace + tie_band(min_trace, TRACE_TIE_TOL);
        self.members.retain(|m| m.between_trace <= trace_cut);
        let winner = self
            .members
            .into_iter()
            .min_by(|a, b| lexicographic(&a.config, &b.config))?;
        Some((winner, ties))
    }
}

fn lexicographic(a: &Configuration, b: &Configuration) -> Ordering {
    a.retained()
        .cmp(b.retained())
        .then_with(|| a.labels().cmp(b.labels()))
}
