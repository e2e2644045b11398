use super::MonteCarloError;

/// Smallest pivot accepted as positive.
pub const PIVOT_EPS: f64 = 1e-12;
/// Symmetry tolerance for input matrices.
pub const SYMMETRY_EPS: f64 = 1e-12;

/// Lower-triangular Cholesky factor, stored dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.l.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// `out = L * x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.l[i * self.n..i * self.n + i + 1];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Largest elementwise `|L Lᵀ - sigma|`.
    pub fn residual(&self, sigma: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let k = i.min(j) + 1;
                let s: f64 = (0..k).map(|p| self.get(i, p) * self.get(j, p)).sum();
                worst = worst.max((s - sigma[i][j]).abs());
            }
        }
        worst
    }
}

/// Cholesky–Banachiewicz factorization of a symmetric positive definite
/// matrix. Pivot indices in errors are 1-based.
pub fn cholesky(sigma: &[Vec<f64>]) -> Result<CholeskyFactor, MonteCarloError> {
    let n = sigma.len();
    if n == 0 {
        return Err(MonteCarloError::InvalidSpec("empty matrix".into()));
    }
    for (i, row) in sigma.iter().enumerate() {
        if row.len() != n {
            return Err(MonteCarloError::InvalidSpec(format!(
                "row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(MonteCarloError::InvalidSpec(format!(
                    "entry ({}, {}) is not finite",
                    i + 1,
                    j + 1
                )));
            }
            if (v - sigma[j][i]).abs() > SYMMETRY_EPS {
                return Err(MonteCarloError::InvalidSpec(format!(
                    "matrix is not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = sigma[i][j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= PIVOT_EPS {
                    return Err(MonteCarloError::NotPd { pivot: i + 1 });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(CholeskyFactor { n, l })
}
