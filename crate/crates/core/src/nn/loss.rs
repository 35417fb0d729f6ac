//! Loss functions and the L2 penalty.

use super::{Param, Scalar};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp<T: Scalar>(p: T) -> T {
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Binary cross-entropy `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_loss<T: Scalar>(prob: T, label: T) -> T {
    let p = clamp(prob);
    -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
}

/// Gradient of [`bce_loss`] with respect to the logit feeding the sigmoid
/// that produced `prob`.
///
/// This is the fused logistic gradient `p - y`; it ignores the clamp, so
/// saturated wrong predictions still receive a signal.
pub fn bce_logit_grad<T: Scalar>(prob: T, label: T) -> T {
    prob - label
}

/// `Σ_j α_j L_j`.
pub fn multitask_loss<T: Scalar>(per_task: &[T], alphas: &[T]) -> Result<T> {
    validate_alphas(alphas)?;
    if per_task.len() != alphas.len() {
        return Err(Error::Parameter(format!(
            "{} task losses but {} loss coefficients",
            per_task.len(),
            alphas.len()
        )));
    }
    Ok(per_task.iter().zip(alphas).map(|(&l, &a)| a * l).sum())
}

pub fn validate_alphas<T: Scalar>(alphas: &[T]) -> Result<()> {
    if alphas.iter().any(|a| !(*a >= T::zero()) || !a.is_finite()) {
        return Err(Error::Parameter("loss coefficients must be finite and >= 0".into()));
    }
    if alphas.iter().all(|a| a.is_zero()) {
        return Err(Error::Parameter("loss coefficients are all zero".into()));
    }
    Ok(())
}

/// Categorical cross-entropy `-Σ y_i ln ρ_i` over a probability vector.
pub fn cross_entropy<T: Scalar>(probs: &[T], onehot: &[T]) -> T {
    -probs
        .iter()
        .zip(onehot)
        .map(|(&p, &y)| y * clamp(p).ln())
        .sum::<T>()
}

/// `∂/∂ρ_i` of [`cross_entropy`] (on the clamped probabilities).
pub fn cross_entropy_grad<T: Scalar>(probs: &[T], onehot: &[T]) -> Vec<T> {
    probs
        .iter()
        .zip(onehot)
        .map(|(&p, &y)| {
            let lo = T::from_f64(PROB_CLAMP);
            if p < lo || p > T::one() - lo {
                T::zero()
            } else {
                -y / p
            }
        })
        .collect()
}

/// Cross-entropy over independent sigmoid units: the sum of per-unit BCE,
/// i.e. `cross_entropy(ρ, y) + cross_entropy(1 - ρ, 1 - y)`.
pub fn sigmoid_cross_entropy<T: Scalar>(probs: &[T], onehot: &[T]) -> T {
    probs.iter().zip(onehot).map(|(&p, &y)| bce_loss(p, y)).sum()
}

/// `β Σ w²` over the trainable, regularised parameters.
pub fn l2_penalty<'a, T: Scalar>(params: impl IntoIterator<Item = &'a Param<T>>, beta: T) -> T {
    beta * params
        .into_iter()
        .flat_map(|p| p.value.data().iter())
        .map(|&w| w * w)
        .sum::<T>()
}

/// Gradient of [`l2_penalty`] for one weight: `2 β w`.
pub fn l2_grad<T: Scalar>(w: T, beta: T) -> T {
    (T::one() + T::one()) * beta * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0f64 - 1e-12, 1.0) < 2e-7);
        assert!((bce_loss(0.9f64, 0.0) - 2.302585092994046).abs() < 1e-9);
        assert!(bce_loss(0.0f64, 1.0).is_finite());
        assert!(bce_loss(1.0f32, 0.0).is_finite());
    }

    #[test]
    fn multitask_examples() {
        let u = [1.0 / 7.0; 7];
        assert_eq!(multitask_loss(&[0.0f64; 7], &u).unwrap(), 0.0);
        assert!((multitask_loss(&[1.0f64; 7], &u).unwrap() - 1.0).abs() < 1e-12);
        let mut l = [0.0f64; 7];
        l[0] = 7.0;
        assert!((multitask_loss(&l, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(multitask_loss(&[1.0f64; 7], &[0.0; 7]).is_err());
        assert!(multitask_loss(&[1.0f64; 7], &[-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&[1.0f64, 0.0], &[1.0, 0.0]) < 1e-6);
        assert!((cross_entropy(&[0.5f64, 0.5], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy(&[0.25f64, 0.75], &[0.0, 1.0]) - 0.2876820724517809).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_ce_positive_when_imperfect() {
        assert!(sigmoid_cross_entropy(&[0.6f64, 0.4], &[1.0, 0.0]) > 0.0);
        assert!(sigmoid_cross_entropy(&[0.6f32, 0.7], &[1.0, 0.0]) > 0.0);
    }

    #[test]
    fn l2_examples() {
        let zero = Param {
            name: "w".into(),
            value: Tensor::<f64>::zeros(&[3]),
            trainable: true,
        };
        assert_eq!(l2_penalty([&zero], 1e-4), 0.0);
        let one = Param {
            name: "w".into(),
            value: Tensor::from_vec(&[1], vec![2.0f64]).unwrap(),
            trainable: true,
        };
        assert!((l2_penalty([&one], 1e-4) - 4e-4).abs() < 1e-15);
        assert!((l2_grad(2.0f64, 1e-4) - 4e-4).abs() < 1e-15);
    }
}
