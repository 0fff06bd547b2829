//! Indexed Markov chain: labelled states, transition matrix, and the
//! stationary distribution once solved.

use crate::solver::{self, SolveError, SolveOptions, SolveReport, StochasticMatrix};

#[derive(Debug, Clone)]
pub struct ChainModel<S> {
    states: Vec<S>,
    matrix: StochasticMatrix,
    pi: Option<Vec<f64>>,
    report: Option<SolveReport>,
}

impl<S: PartialEq> ChainModel<S> {
    pub fn new(states: Vec<S>, matrix: StochasticMatrix) -> Self {
        assert_eq!(states.len(), matrix.len(), "one label per matrix row");
        Self {
            states,
            matrix,
            pi: None,
            report: None,
        }
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn matrix(&self) -> &StochasticMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &S) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    /// Transition probability between two labelled states.
    pub fn prob(&self, from: &S, to: &S) -> f64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.matrix.get(i, j),
            _ => 0.0,
        }
    }

    pub fn solve(&mut self, opts: &SolveOptions) -> Result<&[f64], SolveError> {
        let (pi, report) = solver::solve_stationary(&self.matrix, opts)?;
        self.set_stationary(pi, report);
        Ok(self.pi.as_deref().unwrap())
    }

    pub fn set_stationary(&mut self, pi: Vec<f64>, report: SolveReport) {
        assert_eq!(pi.len(), self.states.len());
        self.pi = Some(pi);
        self.report = Some(report);
    }

    pub fn pi(&self) -> Option<&[f64]> {
        self.pi.as_deref()
    }

    pub fn report(&self) -> Option<&SolveReport> {
        self.report.as_ref()
    }

    /// Stationary expectation of `f` over the labelled states.
    pub fn expect(&self, f: impl Fn(&S) -> f64) -> Option<f64> {
        let pi = self.pi.as_ref()?;
        Some(self.states.iter().zip(pi).map(|(s, &w)| w * f(s)).sum())
    }
}
