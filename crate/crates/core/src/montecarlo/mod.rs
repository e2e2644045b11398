//! Correlated scenario generation and credit-risk metrics around the
//! workbook evaluator.

mod cholesky;
mod metrics;
mod scenario;
mod simulate;

pub use cholesky::{cholesky, CholeskyFactor, PIVOT_EPS};
pub use metrics::{
    compute_risk_metrics, kahan_sum, loss_quantile, LossQuantile, MetricBindings, RiskMetrics,
};
pub use scenario::{generate_scenario, MacroVariable, Process, ScenarioPath, ScenarioSpec};
pub use simulate::{
    run_simulation, IterationRecord, ScenarioBinding, Simulation, SimulationOutcome,
};

use crate::workbook::{Interrupt, RecalcError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonteCarloError {
    #[error("correlation matrix is not positive definite (pivot {pivot})")]
    NotPd { pivot: usize },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("scenario binding: {0}")]
    Binding(String),
    #[error("iteration {iteration}: output `{output}` {message}")]
    Eval {
        iteration: u64,
        output: String,
        message: String,
    },
    #[error("no iterations")]
    Empty,
    #[error(transparent)]
    Interrupted(#[from] Interrupt),
}

impl MonteCarloError {
    pub fn code(&self) -> &'static str {
        match self {
            MonteCarloError::NotPd { .. } => "NOT_PD",
            MonteCarloError::InvalidSpec(_) => "BAD_REQUEST",
            MonteCarloError::Binding(_) => "SCHEMA",
            MonteCarloError::Eval { .. } => "EVAL",
            MonteCarloError::Empty => "EMPTY",
            MonteCarloError::Interrupted(Interrupt::BudgetExceeded(_)) => "BUDGET",
            MonteCarloError::Interrupted(Interrupt::Cancelled) => "TIMED_OUT",
        }
    }
}

impl From<RecalcError> for MonteCarloError {
    fn from(e: RecalcError) -> Self {
        match e {
            RecalcError::Interrupted(i) => MonteCarloError::Interrupted(i),
            other => MonteCarloError::Binding(other.to_string()),
        }
    }
}
