use serde::{Deserialize, Serialize};

use super::MonteCarloError;
use crate::workbook::{DType, OutputField};

fn default_levels() -> Vec<f64> {
    vec![0.95, 0.99]
}

/// Which workbook outputs carry loss and default, and how to normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBindings {
    pub loss_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_output: Option<String>,
    pub exposure: f64,
    #[serde(default = "default_levels")]
    pub quantile_levels: Vec<f64>,
}

impl MetricBindings {
    pub fn new(loss_output: &str, exposure: f64) -> MetricBindings {
        MetricBindings {
            loss_output: loss_output.to_string(),
            default_output: None,
            exposure,
            quantile_levels: default_levels(),
        }
    }

    pub fn validate(&self, outputs: &[OutputField]) -> Result<(), MonteCarloError> {
        let field = |name: &str, dtype: DType| -> Result<(), MonteCarloError> {
            match outputs.iter().find(|o| o.name == name) {
                None => Err(MonteCarloError::Binding(format!("no output named `{name}`"))),
                Some(o) if o.dtype != dtype => Err(MonteCarloError::Binding(format!(
                    "output `{name}` is {}, expected {dtype}",
                    o.dtype
                ))),
                Some(_) => Ok(()),
            }
        };
        field(&self.loss_output, DType::Number)?;
        if let Some(d) = &self.default_output {
            field(d, DType::Boolean)?;
        }
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return Err(MonteCarloError::InvalidSpec("exposure must be positive".into()));
        }
        if self.quantile_levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(MonteCarloError::InvalidSpec(
                "quantile levels must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossQuantile {
    pub level: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMetrics {
    pub iterations: u64,
    pub defaults: u64,
    pub pd: f64,
    pub pd_stderr: f64,
    /// `None` when no iteration defaulted.
    pub lgd: Option<f64>,
    pub lgd_defined: bool,
    pub expected_loss: f64,
    pub loss_quantiles: Vec<LossQuantile>,
    pub min_loss: f64,
    pub max_loss: f64,
}

/// Compensated summation over the slice in order.
pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Lower order-statistic quantile: the sorted value at 0-based index
/// `ceil(p * N) - 1`.
pub fn loss_quantile(losses: &[f64], p: f64) -> Result<f64, MonteCarloError> {
    if losses.is_empty() {
        return Err(MonteCarloError::Empty);
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), p)])
}

fn quantile_index(n: usize, p: f64) -> usize {
    let x = p * n as f64;
    // absorb representation error in products like 0.07 * 100
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, n) - 1
}

/// Aggregates per-iteration results, in iteration order.
pub fn compute_risk_metrics(
    losses: &[f64],
    defaults: &[bool],
    bindings: &MetricBindings,
) -> Result<RiskMetrics, MonteCarloError> {
    assert_eq!(losses.len(), defaults.len());
    let n = losses.len();
    if n == 0 {
        return Err(MonteCarloError::Empty);
    }
    let nf = n as f64;
    let d = defaults.iter().filter(|x| **x).count();
    let pd = d as f64 / nf;
    let lgd = (d > 0).then(|| {
        let s = kahan_sum(
            losses
                .iter()
                .zip(defaults)
                .filter(|(_, dflt)| **dflt)
                .map(|(l, _)| l / bindings.exposure),
        );
        s / d as f64
    });
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let loss_quantiles = bindings
        .quantile_levels
        .iter()
        .map(|&level| LossQuantile {
            level,
            loss: sorted[quantile_index(n, level)],
        })
        .collect();
    Ok(RiskMetrics {
        iterations: n as u64,
        defaults: d as u64,
        pd,
        pd_stderr: (pd * (1.0 - pd) / nf).sqrt(),
        lgd,
        lgd_defined: lgd.is_some(),
        expected_loss: kahan_sum(losses.iter().copied()) / nf / bindings.exposure,
        loss_quantiles,
        min_loss: sorted[0],
        max_loss: sorted[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        let m = compute_risk_metrics(
            &[50.0, 0.0, 30.0, 0.0],
            &[true, false, true, false],
            &MetricBindings::new("loss", 100.0),
        )
        .unwrap();
        assert_eq!(m.pd, 0.5);
        assert!((m.lgd.unwrap() - 0.4).abs() < 1e-15);
        assert!((m.expected_loss - 0.2).abs() < 1e-15);
        assert_eq!((m.min_loss, m.max_loss), (0.0, 50.0));
    }

    #[test]
    fn single_default() {
        let m = compute_risk_metrics(&[5.0], &[true], &MetricBindings::new("loss", 10.0)).unwrap();
        assert_eq!((m.pd, m.pd_stderr), (1.0, 0.0));
    }

    #[test]
    fn no_defaults_leaves_lgd_undefined() {
        let m = compute_risk_metrics(&[0.0; 3], &[false; 3], &MetricBindings::new("loss", 1.0))
            .unwrap();
        assert_eq!(m.lgd, None);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["lgd_defined"], false);
        assert!(json["lgd"].is_null());
    }

    #[test]
    fn quantile_convention() {
        assert_eq!(loss_quantile(&[0.0, 10.0], 0.5).unwrap(), 0.0);
        assert_eq!(loss_quantile(&[4.0; 7], 0.01).unwrap(), 4.0);
        assert_eq!(loss_quantile(&[4.0; 7], 0.99).unwrap(), 4.0);
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(loss_quantile(&xs, 0.07).unwrap(), 7.0);
        assert_eq!(loss_quantile(&[], 0.5), Err(MonteCarloError::Empty));
    }

    #[test]
    fn kahan_beats_naive() {
        let xs = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000));
        assert!((kahan_sum(xs) - (1.0 + 1e-12)).abs() < 1e-15);
    }
}
