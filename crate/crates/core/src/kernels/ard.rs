use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffcore::Var;
use crate::error::{Error, Result};

/// Squared-exponential kernel with one lengthscale-square per input dimension.
///
/// Stored as logarithms so that positivity of `alpha` and every `gamma_i`
/// holds for any value the optimizer produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdParams {
    pub log_alpha: f64,
    pub log_gamma: Vec<f64>,
}

impl ArdParams {
    pub fn new(alpha: f64, gamma: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("ARD alpha must be positive, got {alpha}")));
        }
        if let Some(g) = gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!("ARD gamma entries must be positive, got {g}")));
        }
        if gamma.is_empty() {
            return Err(Error::Config("ARD kernel needs at least one dimension".into()));
        }
        Ok(Self {
            log_alpha: alpha.ln(),
            log_gamma: gamma.iter().map(|g| g.ln()).collect(),
        })
    }

    /// Same lengthscale-square in every dimension.
    pub fn isotropic(alpha: f64, gamma: f64, dim: usize) -> Result<Self> {
        Self::new(alpha, vec![gamma; dim])
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.log_gamma.iter().map(|g| g.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.log_gamma.len()
    }
}

/// `α·exp(−½ Σ_i (x_i − x2_i)²/γ_i)`.
pub fn ard_eval(x: &[f64], x2: &[f64], p: &ArdParams) -> Result<f64> {
    if x.len() != p.dim() || x2.len() != p.dim() {
        return Err(Error::shape(
            "ard_eval",
            format!("{}-dimensional inputs", p.dim()),
            format!("{} and {}", x.len(), x2.len()),
        ));
    }
    let q: f64 = x
        .iter()
        .zip(x2)
        .zip(&p.log_gamma)
        .map(|((a, b), lg)| (a - b).powi(2) * (-lg).exp())
        .sum();
    Ok(p.alpha() * (-0.5 * q).exp())
}

/// ARD cross-covariance between the rows of `x` and `z` on the tape.
///
/// `log_alpha` is 1×1 and `log_gamma` is 1×d.
pub fn ard_cross<'t>(x: Var<'t>, z: Var<'t>, log_alpha: Var<'t>, log_gamma: Var<'t>) -> Var<'t> {
    let inv_scale = log_gamma.scale(-0.5).exp();
    let xs = x * inv_scale;
    let zs = z * inv_scale;
    (log_alpha - xs.sq_dist(zs).scale(0.5)).exp()
}

/// Plain-value ARD Gram matrix between the rows of two matrices.
pub fn ard_matrix(x: &DMatrix<f64>, z: &DMatrix<f64>, p: &ArdParams) -> Result<DMatrix<f64>> {
    if x.ncols() != p.dim() || z.ncols() != p.dim() {
        return Err(Error::shape(
            "ard gram",
            format!("{} columns", p.dim()),
            format!("{} and {}", x.ncols(), z.ncols()),
        ));
    }
    let inv: Vec<f64> = p.log_gamma.iter().map(|g| (-g).exp()).collect();
    let alpha = p.alpha();
    Ok(DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
        let q: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - z[(j, k)]).powi(2) * inv[k]).sum();
        alpha * (-0.5 * q).exp()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_distance_gives_alpha() {
        let p = ArdParams::new(2.5, vec![0.3, 4.0]).unwrap();
        assert_relative_eq!(ard_eval(&[1.0, -2.0], &[1.0, -2.0], &p).unwrap(), 2.5, epsilon = 1e-14);
    }

    #[test]
    fn unit_offset() {
        let p = ArdParams::new(1.0, vec![1.0, 1.0]).unwrap();
        let v = ard_eval(&[1.0, 0.0], &[0.0, 0.0], &p).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ArdParams::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(ard_eval(&[1.0], &[0.0, 0.0], &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(ArdParams::new(0.0, vec![1.0]).is_err());
        assert!(ArdParams::new(1.0, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let p = ArdParams::new(1.7, vec![0.5, 2.0]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, 0.0]);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let tape = Tape::new();
        let k = ard_cross(
            tape.constant(x.clone()),
            tape.constant(z.clone()),
            tape.scalar(p.log_alpha),
            tape.constant(DMatrix::from_row_slice(1, 2, &p.log_gamma)),
        );
        assert_relative_eq!(k.value(), ard_matrix(&x, &z, &p).unwrap(), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in prop::collection::vec(-3.0..3.0f64, 3),
            b in prop::collection::vec(-3.0..3.0f64, 3),
            alpha in 0.1..5.0f64,
            g in prop::collection::vec(0.1..4.0f64, 3),
        ) {
            let p = ArdParams::new(alpha, g).unwrap();
            let kab = ard_eval(&a, &b, &p).unwrap();
            let kba = ard_eval(&b, &a, &p).unwrap();
            prop_assert_eq!(kab, kba);
            prop_assert!(kab > 0.0);
            prop_assert!(kab <= p.alpha() * (1.0 + 1e-15));
            if a != b {
                prop_assert!(kab < p.alpha());
            }
        }
    }
}
