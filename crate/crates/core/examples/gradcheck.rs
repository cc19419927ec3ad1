//! Finite-difference check of the autodiff tape: a few primitive ops, then
//! the full hybrid loss of a small Chroma-VAE with respect to every
//! parameter.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use chroma_vae::nn::{gaussian_kl, softmax_cross_entropy};
use chroma_vae::tensor::{gradcheck, Tensor};
use chroma_vae::vae::{ChromaModel, ClassifierScope, HybridLossConfig, ModelSpec, PartitionSpec, ReconVariance};
use chroma_vae::{Result, RngState};

fn main() -> Result<()> {
    let mut rng = RngState::new(5);
    let mut rand = |shape: &[usize]| -> Result<Tensor<f64>> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect())
    };
    let a = rand(&[3, 4])?;
    let b = rand(&[4, 2])?;

    let rep = gradcheck(|_, v| v[0].matmul(v[1])?.tanh().sum(None), &[a.clone(), b], 1e-6, 1e-3)?;
    println!("tanh(a @ b)          max rel. err {:.2e}", rep.max_rel_error);
    let rep = gradcheck(
        |_, v| softmax_cross_entropy(v[0], &[0, 3, 1]),
        std::slice::from_ref(&a),
        1e-6,
        1e-3,
    )?;
    println!("cross-entropy        max rel. err {:.2e}", rep.max_rel_error);
    let rep = gradcheck(
        |_, v| gaussian_kl(v[0], v[1]),
        &[a.clone(), a.map(|x| 0.5 * x)],
        1e-6,
        1e-3,
    )?;
    println!("gaussian KL          max rel. err {:.2e}", rep.max_rel_error);

    for variance in [ReconVariance::Fixed, ReconVariance::Learned] {
        let mut spec = ModelSpec::new([1, 3, 3], PartitionSpec::new(4, 0.5)?);
        spec.encoder_hidden = vec![12];
        spec.decoder_hidden = vec![12];
        spec.classifier_hidden = vec![6];
        spec.scope = ClassifierScope::Z1;
        spec.recon_variance = variance;
        let loss = HybridLossConfig {
            lambda: 10.0,
            beta: 1.0,
            recon_variance: variance,
        };
        let mut mrng = RngState::new(9);
        let model = ChromaModel::new(spec, loss, &mut mrng)?;
        let x: Tensor<f64> = Tensor::new(&[2, 9], (0..18).map(|i| (i % 7) as f64 / 7.0).collect())?;
        let eps: Tensor<f64> = Tensor::new(&[2, 4], mrng.normal_vec(8))?.cast();
        let params: Vec<Tensor<f64>> = model.params().iter().map(|p| p.cast()).collect();
        let rep = gradcheck(
            |tp, v| {
                Ok(model
                    .bind_vars(v)?
                    .hybrid_loss(tp.constant(x.clone()), Some(&[1, 0]), &eps, &loss)?
                    .total)
            },
            &params,
            1e-6,
            1e-3,
        )?;
        println!(
            "hybrid loss {variance:?}: {} tensors, max rel. err {:.2e}, passed {}",
            params.len(),
            rep.max_rel_error,
            rep.passed()
        );
    }
    Ok(())
}
