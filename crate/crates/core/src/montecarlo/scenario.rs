use serde::{Deserialize, Serialize};

use super::cholesky::{cholesky, CholeskyFactor};
use super::MonteCarloError;
use crate::rng::rng_new;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Process {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroVariable {
    pub name: String,
    pub process: Process,
    pub initial_value: f64,
    pub drift: f64,
    pub volatility: f64,
    pub input_binding_prefix: String,
}

/// Correlated macro-economic processes over a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub variables: Vec<MacroVariable>,
    pub horizon: u32,
    pub correlation: Vec<Vec<f64>>,
}

const DIAGONAL_EPS: f64 = 1e-12;

impl ScenarioSpec {
    pub fn from_json(bytes: &[u8]) -> Result<ScenarioSpec, MonteCarloError> {
        serde_json::from_slice(bytes).map_err(|e| MonteCarloError::InvalidSpec(e.to_string()))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::canonical::to_vec(self)
    }

    pub fn content_hash(&self) -> String {
        crate::canonical::sha256_hex(&self.canonical_bytes())
    }

    /// Checks every invariant and returns the Cholesky factor of the
    /// correlation matrix.
    pub fn validate(&self) -> Result<CholeskyFactor, MonteCarloError> {
        let bad = |m: String| Err(MonteCarloError::InvalidSpec(m));
        let m = self.variables.len();
        if m == 0 {
            return bad("at least one variable is required".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        let mut names = std::collections::BTreeSet::new();
        let mut prefixes = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !crate::workbook::valid_model_name(&v.name) || !names.insert(&v.name) {
                return bad(format!("variable name `{}` is invalid or repeated", v.name));
            }
            if v.input_binding_prefix.is_empty() || !prefixes.insert(&v.input_binding_prefix) {
                return bad(format!(
                    "binding prefix `{}` is empty or repeated",
                    v.input_binding_prefix
                ));
            }
            if !(v.initial_value.is_finite() && v.drift.is_finite() && v.volatility.is_finite()) {
                return bad(format!("variable `{}` has a non-finite parameter", v.name));
            }
            if v.volatility < 0.0 {
                return bad(format!("variable `{}` has negative volatility", v.name));
            }
            if v.process == Process::Multiplicative && v.initial_value <= 0.0 {
                return bad(format!(
                    "multiplicative variable `{}` needs a positive initial value",
                    v.name
                ));
            }
        }
        if self.correlation.len() != m || self.correlation.iter().any(|r| r.len() != m) {
            return bad(format!("correlation must be {m}x{m}"));
        }
        for (i, row) in self.correlation.iter().enumerate() {
            if (row[i] - 1.0).abs() > DIAGONAL_EPS {
                return bad(format!("correlation diagonal entry {} is not 1", i + 1));
            }
            if row.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                return bad(format!("correlation row {} has entries outside [-1, 1]", i + 1));
            }
        }
        cholesky(&self.correlation)
    }
}

/// One simulated path: levels of every variable at periods 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPath {
    pub iteration: u64,
    horizon: usize,
    values: Vec<f64>,
}

impl ScenarioPath {
    pub(crate) fn empty() -> ScenarioPath {
        ScenarioPath {
            iteration: 0,
            horizon: 0,
            values: Vec::new(),
        }
    }

    /// Level of variable `var` at period `t` (1-based).
    pub fn value(&self, var: usize, t: usize) -> f64 {
        self.values[var * self.horizon + t - 1]
    }

    pub fn terminal(&self, var: usize) -> f64 {
        self.value(var, self.horizon)
    }

    pub fn series(&self, var: usize) -> &[f64] {
        &self.values[var * self.horizon..(var + 1) * self.horizon]
    }
}

/// Reusable buffers for path generation.
#[derive(Debug, Default, Clone)]
pub struct PathScratch {
    eps: Vec<f64>,
    z: Vec<f64>,
    level: Vec<f64>,
}

/// Scenario for one iteration. Shocks are drawn period-major from stream
/// `(master_seed, iteration)` and correlated as `z = L ε`.
pub fn generate_scenario(
    master_seed: u64,
    iteration: u64,
    spec: &ScenarioSpec,
    factor: &CholeskyFactor,
) -> ScenarioPath {
    let mut path = ScenarioPath::empty();
    fill_scenario(master_seed, spec, factor, &mut PathScratch::default(), &mut path, iteration);
    path
}

pub(crate) fn fill_scenario(
    master_seed: u64,
    spec: &ScenarioSpec,
    factor: &CholeskyFactor,
    scratch: &mut PathScratch,
    path: &mut ScenarioPath,
    iteration: u64,
) {
    let m = spec.variables.len();
    let t_max = spec.horizon as usize;
    let mut rng = rng_new(master_seed, iteration);
    scratch.eps.resize(m, 0.0);
    scratch.z.resize(m, 0.0);
    scratch.level.clear();
    scratch.level.extend(spec.variables.iter().map(|v| v.initial_value));
    path.iteration = iteration;
    path.horizon = t_max;
    path.values.resize(m * t_max, 0.0);

    for t in 0..t_max {
        for e in scratch.eps.iter_mut() {
            *e = rng.normal();
        }
        factor.mul_vec(&scratch.eps, &mut scratch.z);
        for (k, v) in spec.variables.iter().enumerate() {
            let x = &mut scratch.level[k];
            let z = scratch.z[k];
            *x = match v.process {
                Process::Additive => *x + v.drift + v.volatility * z,
                Process::Multiplicative => {
                    *x * (v.drift - 0.5 * v.volatility * v.volatility + v.volatility * z).exp()
                }
            };
            path.values[k * t_max + t] = *x;
        }
    }
}
