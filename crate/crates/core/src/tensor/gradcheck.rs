use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing autodiff gradients with central finite differences.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index, autodiff, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tol: f64,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Entries whose gradients are both below this magnitude are compared
/// absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-4;

/// Checks the gradients of a scalar function of `inputs` against central
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)`, evaluated in f64.
///
/// `f` must be deterministic; any noise it uses has to be fixed by the
/// caller.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take_or_zeros(v)).collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        tol,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal() as f64).collect()).unwrap()
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = gradcheck(|tape, _| Ok(tape.constant(Tensor::scalar(4.0))), &[x], 1e-3, 1e-3).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn tanh_of_affine_passes() {
        let mut rng = RngState::new(1);
        let w = random(&[4, 3], &mut rng);
        let x = random(&[3, 1], &mut rng);
        let report = gradcheck(|_, v| v[0].matmul(v[1])?.tanh().sum(None), &[w, x], 1e-3, 1e-3).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly zero has a one-sided derivative; central
        // differences see 0.5 while autodiff reports 0.
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let report = gradcheck(|_, v| v[0].relu().sum(None), &[x], 1e-3, 1e-3).unwrap();
        assert!(!report.passed());
    }
}
