//! Finite-difference gradient checking.
//!
//! The checker perturbs parameter entries in place, reruns the forward
//! closure, and compares central differences against the analytic gradients
//! from one backward sweep. Run it in f64: single precision cannot resolve
//! the differences reliably.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

const REL_FLOOR: f64 = 1e-8;

/// Check every entry of every parameter. `f` must rebuild the graph from
/// the live parameter values and return a scalar loss.
pub fn grad_check<T: Scalar>(f: impl Fn() -> Result<Tensor<T>>, params: &[Tensor<T>], eps: f64) -> Result<f64> {
    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    run_check(&f, params, eps, &entries)
}

/// Check a deterministic random subset of parameter entries (at most
/// `max_entries` in total, spread over all parameters).
pub fn grad_check_sampled<T: Scalar>(
    f: impl Fn() -> Result<Tensor<T>>,
    params: &[Tensor<T>],
    eps: f64,
    max_entries: usize,
    seed: u64,
) -> Result<f64> {
    let mut entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    entries.truncate(max_entries);
    run_check(&f, params, eps, &entries)
}

fn run_check<T: Scalar>(
    f: &impl Fn() -> Result<Tensor<T>>,
    params: &[Tensor<T>],
    eps: f64,
    entries: &[(usize, usize)],
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid("grad_check", format!("eps {} outside [1e-6, 1e-3]", eps)));
    }
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    loss.backward();
    let analytic: Vec<Vec<T>> = params.iter().map(|p| p.grad().clone()).collect();

    let eps_t = T::c(eps);
    let mut max_rel = 0.0f64;
    for &(pi, ei) in entries {
        let p = &params[pi];
        let orig = p.data()[ei];
        p.update_data(|d| d[ei] = orig + eps_t);
        let up = f()?.item();
        p.update_data(|d| d[ei] = orig - eps_t);
        let down = f()?.item();
        p.update_data(|d| d[ei] = orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("grad_check probe".into()));
        }
        let numeric = (up.to_f64_() - down.to_f64_()) / (2.0 * eps);
        let a = analytic[pi][ei].to_f64_();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_exact_up_to_roundoff() {
        let theta = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0]);
        let err = grad_check(|| Ok(theta.mul(&theta)?.sum_all()), &[theta.clone()], 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {}", err);
    }

    #[test]
    fn constant_loss_has_zero_gradients_both_ways() {
        let theta = Tensor::<f64>::leaf(vec![3], vec![0.5, -0.5, 2.0]);
        let err = grad_check(|| Ok(Tensor::scalar(3.0).scale(1.0)), &[theta.clone()], 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn conv_silu_sum_chain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::leaf(vec![4, 4, 2], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let k = Tensor::<f64>::leaf(vec![3, 3, 2, 2], (0..36).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let b = Tensor::<f64>::leaf(vec![2], vec![0.1, -0.2]);
        let err = grad_check(
            || Ok(x.conv2d(&k, &b, 1, 1)?.silu().sum_all()),
            &[x.clone(), k.clone(), b.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn rejects_bad_eps() {
        let theta = Tensor::<f64>::leaf(vec![1], vec![1.0]);
        assert!(grad_check(|| Ok(theta.sum_all()), &[theta.clone()], 1e-2).is_err());
    }

    #[test]
    fn layer_norm_and_softmax_grads() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::leaf(vec![2, 3, 4], (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let gamma = Tensor::<f64>::leaf(vec![4], (0..4).map(|_| rng.gen_range(0.5..1.5)).collect());
        let beta = Tensor::<f64>::leaf(vec![4], (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let err = grad_check(
            || {
                let y = x.layer_norm(&gamma, &beta, 1e-5)?;
                Ok(y.softmax_last().mul(&y)?.sum_all())
            },
            &[x.clone(), gamma.clone(), beta.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn bilinear_resize_grads() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::leaf(vec![3, 3, 2], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = grad_check(
            || Ok(x.bilinear_resize(5, 7)?.silu().sum_all()),
            &[x.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }
}
