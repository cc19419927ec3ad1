use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean cross-entropy of `logits[B×C]` against class indices.
pub fn softmax_cross_entropy<'t, T: Element>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    logits.softmax_cross_entropy(labels, None)
}

/// Cross-entropy where row `i` counts `weights[i]` times.
pub fn weighted_cross_entropy<'t, T: Element>(
    logits: Var<'t, T>,
    labels: &[usize],
    weights: &[f32],
) -> Result<Var<'t, T>> {
    logits.softmax_cross_entropy(labels, Some(weights))
}

/// KL(N(μ, σ²) ‖ N(0, I)) summed over latent dimensions and averaged over
/// the batch: `0.5 Σ (μ² + σ² − 1 − log σ²)`.
pub fn gaussian_kl<'t, T: Element>(mu: Var<'t, T>, logvar: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = mu.shape();
    if shape != logvar.shape() {
        return Err(Error::dim("gaussian_kl", &shape, &logvar.shape()));
    }
    let batch = shape.first().copied().unwrap_or(1).max(1);
    let per_elem = mu.square().add(logvar.exp())?.sub(logvar)?.add_scalar(-1.0);
    Ok(per_elem.sum(None)?.scale(0.5 / batch as f64))
}

/// Gaussian negative log-likelihood of `x` under `N(mu, exp(logvar))`,
/// summed over pixels and averaged over the batch. `None` means unit
/// variance, which reduces to half the squared error plus a constant.
pub fn gaussian_recon_nll<'t, T: Element>(
    x: Var<'t, T>,
    mu: Var<'t, T>,
    logvar: Option<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape != mu.shape() {
        return Err(Error::dim("gaussian_recon_nll", &shape, &mu.shape()));
    }
    let batch = shape.first().copied().unwrap_or(1).max(1);
    let pixels = x.value().numel() / batch;
    let sq = x.sub(mu)?.square();
    let body = match logvar {
        None => sq.sum(None)?.scale(0.5),
        Some(lv) => {
            if lv.shape() != shape {
                return Err(Error::dim("gaussian_recon_nll logvar", &shape, &lv.shape()));
            }
            let weighted = sq.mul(lv.neg().exp())?;
            lv.add(weighted)?.sum(None)?.scale(0.5)
        }
    };
    Ok(body.scale(1.0 / batch as f64).add_scalar(HALF_LN_2PI * pixels as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::{gradcheck, Tape, Tensor};

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        let tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::zeros(&[3, 4]));
        let lv = tape.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(gaussian_kl(mu, lv).unwrap().value().item(), 0.0);

        let mu = tape.constant(t(&[1, 1], vec![1.0]));
        let lv = tape.constant(t(&[1, 1], vec![0.0]));
        assert!((gaussian_kl(mu, lv).unwrap().value().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recon_nll_residual_zero_and_scaling() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let nll = gaussian_recon_nll(x, x, None).unwrap().value().item();
        assert!((nll - 3.0 * HALF_LN_2PI).abs() < 1e-12);

        let mu1 = tape.constant(x.value().map(|v| v + 0.1));
        let mu2 = tape.constant(x.value().map(|v| v + 0.2));
        let q1 = gaussian_recon_nll(x, mu1, None).unwrap().value().item() - 3.0 * HALF_LN_2PI;
        let q2 = gaussian_recon_nll(x, mu2, None).unwrap().value().item() - 3.0 * HALF_LN_2PI;
        assert!((q2 / q1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn learned_variance_reduces_to_fixed_at_zero_logvar() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], vec![0.0, 1.0]));
        let mu = tape.constant(t(&[1, 2], vec![0.5, 0.5]));
        let lv = tape.constant(Tensor::zeros(&[1, 2]));
        let a = gaussian_recon_nll(x, mu, None).unwrap().value().item();
        let b = gaussian_recon_nll(x, mu, Some(lv)).unwrap().value().item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = RngState::new(4);
        let mut rand = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            t(shape, (0..n).map(|_| rng.normal() as f64).collect())
        };
        let (logits, mu, lv, x) = (rand(&[3, 4]), rand(&[3, 5]), rand(&[3, 5]), rand(&[3, 5]));

        let r = gradcheck(
            |_, v| softmax_cross_entropy(v[0], &[0, 3, 1]),
            std::slice::from_ref(&logits),
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "ce {r:?}");
        let r = gradcheck(
            |_, v| weighted_cross_entropy(v[0], &[0, 3, 1], &[1.0, 5.0, 2.0]),
            &[logits],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "weighted ce {r:?}");
        let r = gradcheck(|_, v| gaussian_kl(v[0], v[1]), &[mu.clone(), lv.clone()], 1e-3, 1e-3).unwrap();
        assert!(r.passed(), "kl {r:?}");
        let r = gradcheck(
            |_, v| gaussian_recon_nll(v[0], v[1], None),
            &[x.clone(), mu.clone()],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "nll {r:?}");
        let r = gradcheck(
            |_, v| gaussian_recon_nll(v[0], v[1], Some(v[2])),
            &[x, mu, lv],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "nll learned {r:?}");
    }

    #[test]
    fn recon_gradient_wrt_mean_is_scaled_residual() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 2], vec![0.0, 1.0, 0.5, 0.25]));
        let mu = tape.leaf(t(&[2, 2], vec![0.5, 0.5, 0.5, 0.5]), true);
        let loss = gaussian_recon_nll(x, mu, None).unwrap();
        let g = tape.backward(loss).unwrap();
        let expected: Vec<f64> = mu
            .value()
            .data()
            .iter()
            .zip(x.value().data())
            .map(|(m, xv)| (m - xv) / 2.0)
            .collect();
        assert_eq!(g.get(mu).unwrap().data(), expected.as_slice());
    }
}
