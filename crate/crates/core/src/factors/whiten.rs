use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FactorError;
use crate::state::SatId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorClass {
    Gnss,
    Imu,
    Vision,
}

impl SensorClass {
    pub const ALL: [SensorClass; 3] = [SensorClass::Gnss, SensorClass::Imu, SensorClass::Vision];

    pub fn name(self) -> &'static str {
        match self {
            SensorClass::Gnss => "gnss",
            SensorClass::Imu => "imu",
            SensorClass::Vision => "vision",
        }
    }
}

/// Identifies one component of a residual vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Satellite(SatId),
    /// Pixel axis 0 (u) or 1 (v) of a feature observation.
    Feature { id: u64, axis: u8 },
    /// Component index of the 15-dim pre-integration residual.
    Preint(u8),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Satellite(s) => write!(f, "{s}"),
            Label::Feature { id, axis } => write!(f, "f{id}.{}", if *axis == 0 { 'u' } else { 'v' }),
            Label::Preint(i) => write!(f, "imu.{i}"),
        }
    }
}

/// A residual normalized componentwise by its standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenedResidual {
    pub source: SensorClass,
    /// Keyframe id of the epoch the residual belongs to.
    pub epoch: u64,
    pub raw: DVector<f64>,
    pub sigma: DVector<f64>,
    pub whitened: DVector<f64>,
    pub labels: Vec<Label>,
}

impl WhitenedResidual {
    pub fn len(&self) -> usize {
        self.whitened.len()
    }

    pub fn is_empty(&self) -> bool {
        self.whitened.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.whitened.norm_squared()
    }
}

pub fn whiten(
    source: SensorClass,
    epoch: u64,
    raw: DVector<f64>,
    sigma: DVector<f64>,
    labels: Vec<Label>,
) -> Result<WhitenedResidual, FactorError> {
    if sigma.len() != raw.len() {
        return Err(FactorError::LengthMismatch {
            raw: raw.len(),
            other: sigma.len(),
            what: "sigmas",
        });
    }
    if labels.len() != raw.len() {
        return Err(FactorError::LengthMismatch {
            raw: raw.len(),
            other: labels.len(),
            what: "labels",
        });
    }
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(FactorError::InvalidSigma(i));
    }
    let whitened = raw.component_div(&sigma);
    Ok(WhitenedResidual {
        source,
        epoch,
        raw,
        sigma,
        whitened,
        labels,
    })
}

/// Rewrites a correlated residual `r ~ N(0, Σ)` as `(r', σ)` with
/// independent components: with `Σ = L Lᵀ` and `L = L̃·diag(σ)`, `r' = L̃⁻¹ r`,
/// so `r' ⊘ σ = L⁻¹ r`.
pub fn decorrelate(raw: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>), FactorError> {
    let chol = cov.clone().cholesky().ok_or(FactorError::NotPositiveDefinite)?;
    let l = chol.l();
    let sigma = l.diagonal();
    let mut unit = l.clone();
    for (j, mut col) in unit.column_iter_mut().enumerate() {
        col /= sigma[j];
    }
    let decor = unit
        .solve_lower_triangular(raw)
        .ok_or(FactorError::NotPositiveDefinite)?;
    Ok((decor, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labels(n: usize) -> Vec<Label> {
        (0..n).map(|i| Label::Preint(i as u8)).collect()
    }

    #[test]
    fn arithmetic() {
        let w = whiten(SensorClass::Gnss, 0, DVector::from_vec(vec![3.0]), DVector::from_vec(vec![1.5]), labels(1)).unwrap();
        assert_eq!(w.whitened[0], 2.0);
    }

    #[test]
    fn zero_stays_zero() {
        let w = whiten(SensorClass::Imu, 0, DVector::zeros(4), DVector::from_element(4, 0.3), labels(4)).unwrap();
        assert_eq!(w.whitened, DVector::zeros(4));
    }

    #[test]
    fn bad_sigma_and_lengths_rejected() {
        let r = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(
            whiten(SensorClass::Vision, 0, r.clone(), DVector::from_vec(vec![1.0, 0.0]), labels(2)).unwrap_err(),
            FactorError::InvalidSigma(1)
        );
        assert!(whiten(SensorClass::Vision, 0, r.clone(), DVector::from_vec(vec![1.0, -1.0]), labels(2)).is_err());
        assert!(whiten(SensorClass::Vision, 0, r, DVector::from_vec(vec![1.0, 1.0]), labels(1)).is_err());
    }

    #[test]
    fn monte_carlo_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let sigmas = [0.5, 2.0, 7.5];
        let mut raw = DVector::zeros(n);
        let mut sig = DVector::zeros(n);
        for i in 0..n {
            let s = sigmas[i % 3];
            let z: f64 = StandardNormal.sample(&mut rng);
            raw[i] = s * z;
            sig[i] = s;
        }
        let w = whiten(SensorClass::Gnss, 0, raw, sig, vec![Label::Preint(0); n]).unwrap();
        let var = w.whitened.norm_squared() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn decorrelation_matches_cholesky_whitening() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.0, 1.0, 0.5, 0.2, 0.0, 0.7]);
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let r = DVector::from_vec(vec![0.4, -1.2, 0.8]);
        let (d, s) = decorrelate(&r, &cov).unwrap();
        let w = d.component_div(&s);
        let expected = cov.clone().cholesky().unwrap().l().solve_lower_triangular(&r).unwrap();
        assert!((w - expected).norm() < 1e-12);
        // squared norm equals the Mahalanobis distance
        let maha = r.dot(&(cov.try_inverse().unwrap() * &r));
        assert!((d.component_div(&s).norm_squared() - maha).abs() < 1e-10);
    }

    #[test]
    fn label_display() {
        assert_eq!(Label::Feature { id: 3, axis: 1 }.to_string(), "f3.v");
        assert_eq!(Label::Preint(4).to_string(), "imu.4");
    }
}
