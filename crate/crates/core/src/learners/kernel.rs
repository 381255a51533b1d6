use serde::{Deserialize, Serialize};

use super::{Kernel, LearnError};
use crate::features::Row;

/// A kernel with its coefficients resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: Kernel,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn eval(&self, x: &Row<'_>, z: &Row<'_>) -> f64 {
        match self.kind {
            Kernel::Linear => x.dot(z),
            Kernel::Rbf => (-self.gamma * x.sq_dist(z)).exp(),
            Kernel::Poly => (self.gamma * x.dot(z) + self.coef0).powi(self.degree as i32),
            Kernel::Sigmoid => (self.gamma * x.dot(z) + self.coef0).tanh(),
        }
    }
}

/// Dimension-checked evaluation on plain vectors.
pub fn kernel_eval(kind: Kernel, gamma: f64, degree: u32, coef0: f64, x: &[f64], z: &[f64]) -> Result<f64, LearnError> {
    if x.len() != z.len() {
        return Err(LearnError::Dimension {
            expected: x.len(),
            got: z.len(),
        });
    }
    if kind != Kernel::Linear && gamma <= 0.0 {
        return Err(LearnError::InvalidConfig("gamma must be positive".into()));
    }
    let spec = KernelSpec {
        kind,
        gamma,
        degree,
        coef0,
    };
    Ok(spec.eval(&Row::Dense(x), &Row::Dense(z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        assert_eq!(
            kernel_eval(Kernel::Linear, 0.0, 3, 0.0, &[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            11.0
        );
        for g in [0.01, 1.0, 7.5] {
            assert_eq!(
                kernel_eval(Kernel::Rbf, g, 3, 0.0, &[0.3, -2.0], &[0.3, -2.0]).unwrap(),
                1.0
            );
        }
        // x.z = 2, (0.5 * 2 + 0)^3 = 1
        assert_eq!(
            kernel_eval(Kernel::Poly, 0.5, 3, 0.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap(),
            1.0
        );
        let s = kernel_eval(Kernel::Sigmoid, 0.5, 3, 0.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s, 1f64.tanh());
        assert!(kernel_eval(Kernel::Linear, 1.0, 3, 0.0, &[1.0], &[1.0, 2.0]).is_err());
        assert!(kernel_eval(Kernel::Rbf, 0.0, 3, 0.0, &[1.0], &[1.0]).is_err());
    }
}
