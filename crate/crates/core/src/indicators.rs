//! Spectral robustness indicators of the classifier weight layer and the
//! value model that turns them into the server's correction weight.
//!
//! * SVE: Shannon entropy (nats) of the normalized singular-value spectrum.
//! * LSVR: share of the largest singular value in the spectrum sum.
//! * GDA: relative Frobenius norm of the residual left after projecting the
//!   current weights onto a reference (the previous snapshot's weights).
//! * gamma: `tau · GDA · LSVR / SVE`, clamped to `[0, gamma_max]`.

use crate::error::{Error, Result};
use crate::tensorlab::{svd, Matrix};

fn validate_spectrum(sigma: &[f64]) -> Result<f64> {
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("singular values"));
    }
    if sigma.iter().any(|s| *s < 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let total: f64 = sigma.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(total)
}

/// Singular value entropy. Zero singular values contribute nothing.
pub fn sve(sigma: &[f64]) -> Result<f64> {
    let total = validate_spectrum(sigma)?;
    let h = sigma
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * libm::log(p)
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Largest singular value ratio.
pub fn lsvr(sigma: &[f64]) -> Result<f64> {
    let total = validate_spectrum(sigma)?;
    let max = sigma.iter().copied().fold(0.0f64, f64::max);
    Ok(max / total)
}

/// Deviation of `curr` from the span of `prev`, in `[0, 1]`.
///
/// A zero `prev` leaves all of `curr` as residual and yields 1.
pub fn gda(prev: &Matrix, curr: &Matrix) -> Result<f64> {
    let cc = curr.frob_inner(curr)?;
    if cc == 0.0 {
        return Err(Error::ZeroFrobenius("current classifier weights"));
    }
    let pp = prev.frob_inner(prev)?;
    if pp == 0.0 {
        log::warn!("GDA reference has zero norm; reporting full deviation");
        return Ok(1.0);
    }
    let coef = prev.frob_inner(curr)? / pp;
    let residual: f64 = curr
        .as_slice()
        .iter()
        .zip(prev.as_slice())
        .map(|(c, p)| {
            let r = c - coef * p;
            r * r
        })
        .sum();
    Ok((libm::sqrt(residual) / libm::sqrt(cc)).min(1.0))
}

/// Parameters of the value model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueModel {
    pub tau: f64,
    pub gamma_max: f64,
}

impl Default for ValueModel {
    fn default() -> Self {
        Self {
            tau: 20.0,
            gamma_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    /// Clamped weight actually applied.
    pub value: f64,
    /// `tau · GDA · LSVR / SVE` before clamping.
    pub raw: f64,
    pub clamped: bool,
}

impl ValueModel {
    pub fn gamma(&self, gda: f64, lsvr: f64, sve: f64) -> Result<Gamma> {
        if sve == 0.0 {
            return Err(Error::ZeroEntropy);
        }
        if !(sve > 0.0) || !(self.tau >= 0.0) || !(gda >= 0.0) || !(lsvr >= 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "value model inputs out of range (tau={}, gda={gda}, lsvr={lsvr}, sve={sve})",
                self.tau
            )));
        }
        let raw = self.tau * gda * lsvr / sve;
        let value = raw.clamp(0.0, self.gamma_max.max(0.0));
        let clamped = value != raw;
        if clamped {
            log::info!("gamma clamped from {raw} to {value}");
        }
        Ok(Gamma {
            value,
            raw,
            clamped,
        })
    }
}

/// Indicators measured on the classifier layer at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorSnapshot {
    pub round: usize,
    pub sve: f64,
    pub lsvr: f64,
    pub gda: f64,
    pub gamma: Gamma,
}

pub fn snapshot(
    classifier_prev: &Matrix,
    classifier_curr: &Matrix,
    value_model: &ValueModel,
    round: usize,
) -> Result<IndicatorSnapshot> {
    if classifier_prev.shape() != classifier_curr.shape() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "classifier {:?} vs {:?}",
            classifier_prev.shape(),
            classifier_curr.shape()
        )));
    }
    let sigma = svd(classifier_curr)?.sigma;
    let sve = sve(&sigma)?;
    let lsvr = lsvr(&sigma)?;
    let gda = gda(classifier_prev, classifier_curr)?;
    let gamma = value_model.gamma(gda, lsvr, sve)?;
    Ok(IndicatorSnapshot {
        round,
        sve,
        lsvr,
        gda,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    // -(0.75 ln 0.75 + 0.25 ln 0.25), evaluated at 40 digits with mpmath.
    const SVE_3_1: f64 = 0.562_335_144_618_808_4;

    #[test]
    fn sve_examples() {
        assert!((sve(&[1.0; 4]).unwrap() - libm::log(4.0)).abs() < 1e-12);
        assert!((sve(&[3.0, 1.0]).unwrap() - SVE_3_1).abs() < 1e-12);
        assert_eq!(sve(&[5.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(sve(&[0.0, 0.0]), Err(Error::DegenerateSpectrum));
        assert_eq!(sve(&[1.0, -1.0]), Err(Error::DegenerateSpectrum));
    }

    #[test]
    fn lsvr_examples() {
        assert_eq!(lsvr(&[5.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(lsvr(&[1.0; 4]).unwrap(), 0.25);
        assert_eq!(lsvr(&[3.0, 1.0]).unwrap(), 0.75);
        assert!(lsvr(&[]).is_err());
    }

    #[test]
    fn gda_examples() {
        let prev = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let curr = Matrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert!((gda(&prev, &curr).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(gda(&prev, &prev.scaled(2.0)).unwrap(), 0.0);
        let orth = Matrix::new(1, 2, vec![0.0, -2.0]).unwrap();
        assert_eq!(gda(&prev, &orth).unwrap(), 1.0);
        assert_eq!(gda(&Matrix::zeros(1, 2), &curr).unwrap(), 1.0);
        assert!(gda(&prev, &Matrix::zeros(1, 2)).is_err());
        assert!(gda(&prev, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn gamma_examples() {
        let vm = ValueModel::default();
        let g = vm.gamma(0.1, 0.5, 1.0).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        assert_eq!(vm.gamma(0.0, 0.5, 1.0).unwrap().value, 0.0);
        let g = vm.gamma(0.8, 0.5, 1.386).unwrap();
        assert!((g.raw - 5.772_005_772_005_772).abs() < 1e-9);
        assert_eq!(g.value, 1.0);
        assert!(g.clamped);
        assert_eq!(vm.gamma(0.1, 0.5, 0.0), Err(Error::ZeroEntropy));
    }

    #[test]
    fn snapshot_identity_pair() {
        let id = Matrix::identity(3);
        let s = snapshot(&id, &id, &ValueModel::default(), 10).unwrap();
        assert_eq!(s.gda, 0.0);
        assert_eq!(s.gamma.value, 0.0);
        assert!((s.sve - libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn snapshot_rank_one_hits_entropy_guard() {
        let r1 = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let prev = Matrix::identity(2);
        assert_eq!(
            snapshot(&prev, &r1, &ValueModel::default(), 10),
            Err(Error::ZeroEntropy)
        );
    }
}
