use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Activation, AdamState, Mlp};
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor};

pub const PROBE_STEPS: usize = 200;
const PROBE_LR: f32 = 0.05;
const TRAIN_FRACTION: f64 = 0.8;

/// Held-out accuracy of a logistic-regression probe predicting `labels`
/// from `latents`. Features are standardized with training-split
/// statistics; the probe is one affine layer fit by full-batch Adam.
pub fn subspace_probe(latents: &Tensor, labels: &[usize], seed: u64) -> Result<f64> {
    let (n, d) = latents.dims2()?;
    if d == 0 {
        return Err(Error::contract("probe needs at least one latent dimension"));
    }
    if labels.len() != n {
        return Err(Error::dim("subspace_probe", &[n], &[labels.len()]));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::contract("probe labels contain a single class"));
    }
    let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::contract(format!("{n} examples are too few for an 80/20 split")));
    }

    let mut rng = RngState::new(seed);
    let order = rng.permutation(n);
    let (train_idx, test_idx) = order.split_at(n_train);
    let x_train = latents.gather_rows(train_idx)?;
    let mut mean = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    for row in x_train.data().chunks_exact(d) {
        for j in 0..d {
            mean[j] += row[j] as f64;
            sq[j] += (row[j] as f64).powi(2);
        }
    }
    let scale: Vec<(f32, f32)> = (0..d)
        .map(|j| {
            let m = mean[j] / n_train as f64;
            let var = (sq[j] / n_train as f64 - m * m).max(0.0);
            (m as f32, 1.0 / (var.sqrt() as f32).max(1e-6))
        })
        .collect();
    let standardize = |x: Tensor| -> Result<Tensor> {
        let data = x
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&scale).map(|(&v, &(m, s))| (v - m) * s))
            .collect();
        Tensor::new(x.shape(), data)
    };
    let x_train = standardize(x_train)?;
    let x_test = standardize(latents.gather_rows(test_idx)?)?;
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();

    let mut probe = Mlp::new(&[d, num_classes], Activation::Identity, Activation::Identity, &mut rng)?;
    let names = probe.param_names("probe");
    let mut adam = AdamState::new(PROBE_LR);
    for _ in 0..PROBE_STEPS {
        let tape = Tape::<f32>::new();
        let bound = probe.bind(&tape, true);
        let loss = bound
            .forward(tape.constant(x_train.clone()))?
            .softmax_cross_entropy(&y_train, None)?;
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = bound.vars().iter().map(|&v| grads.take_or_zeros(v)).collect();
        adam.step(probe.params_mut(), &grads, &names)?;
    }
    let pred = argmax_rows(&probe.predict(&x_test)?);
    let hits = pred.iter().zip(test_idx).filter(|(&p, &i)| p == labels[i]).count();
    Ok(hits as f64 / test_idx.len() as f64)
}
