//! Property suites over randomized inputs.

use proptest::prelude::*;

use chroma_vae::datasets::{
    flip_colors, inject_patch, make_colored_mnist, make_dominoes, Corner, Distribution, PatchTarget, RawImageSet,
};
use chroma_vae::eval::{latent_shift_profile, score, EvalHead};
use chroma_vae::imaging::{quantize, ChannelMap, ImageGrid};
use chroma_vae::nn::{gaussian_kl, softmax_cross_entropy, AdamState, KnnClassifier};
use chroma_vae::tensor::{gradcheck, Tape, Tensor, Var};
use chroma_vae::vae::{ChromaModel, ClassifierScope, HybridLossConfig, ModelSpec, PartitionSpec, ReconVariance};
use chroma_vae::{Result, RngState};

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-2.0..-0.05f64, 0.05..2.0f64], n)
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn check<F>(f: F, inputs: &[Tensor<f64>]) -> std::result::Result<(), TestCaseError>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let r = gradcheck(f, inputs, 1e-6, 1e-3).unwrap();
    prop_assert!(r.passed(), "{r:?}");
    Ok(())
}

/// Weighted sum so that every output element carries a distinct gradient.
fn reduce<'t>(tape: &'t Tape<f64>, v: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let n = v.value().numel();
    let w = Tensor::new(v.shape().as_slice(), (0..n).map(|i| 0.3 + 0.1 * i as f64).collect())?;
    v.mul(tape.constant(w))?.sum(None)
}

fn raw_images(n: usize, seed: u64) -> RawImageSet {
    let mut rng = RngState::new(seed);
    RawImageSet {
        pixels: (0..n * 16).map(|_| rng.uniform() as f32).collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
        height: 4,
        width: 4,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops_match_finite_differences(a in values(12, -2.0, 2.0), b in values(12, -2.0, 2.0)) {
        let (x, y) = (t(&[3, 4], a), t(&[3, 4], b));
        let xy = [x.clone(), y.clone()];
        check(|tp, v| reduce(tp, v[0].add(v[1])?), &xy)?;
        check(|tp, v| reduce(tp, v[0].sub(v[1])?), &xy)?;
        check(|tp, v| reduce(tp, v[0].mul(v[1])?), &xy)?;
        let one = [x];
        check(|tp, v| reduce(tp, v[0].add_scalar(0.7)), &one)?;
        check(|tp, v| reduce(tp, v[0].scale(-1.3)), &one)?;
        check(|tp, v| reduce(tp, v[0].neg()), &one)?;
        check(|tp, v| reduce(tp, v[0].exp()), &one)?;
        check(|tp, v| reduce(tp, v[0].tanh()), &one)?;
        check(|tp, v| reduce(tp, v[0].sigmoid()), &one)?;
        check(|tp, v| reduce(tp, v[0].square()), &one)?;
    }

    #[test]
    fn kinked_and_domain_ops_match_finite_differences(a in off_zero(12), p in values(12, 0.1, 3.0)) {
        check(|tp, v| reduce(tp, v[0].relu()), &[t(&[3, 4], a)])?;
        check(|tp, v| reduce(tp, v[0].log()?), &[t(&[3, 4], p)])?;
    }

    #[test]
    fn linear_algebra_ops_match_finite_differences(
        a in values(6, -1.5, 1.5),
        b in values(12, -1.5, 1.5),
        c in values(8, -1.5, 1.5),
        bias in values(4, -1.0, 1.0),
    ) {
        let (a, b, c, bias) = (t(&[2, 3], a), t(&[3, 4], b), t(&[4, 2], c), t(&[4], bias));
        check(|tp, v| reduce(tp, v[0].matmul(v[1])?), &[a.clone(), b.clone()])?;
        // a[2×3] · (b[3×4])ᵀ needs a [4×3] right operand.
        let bt = t(&[4, 3], b.data().to_vec());
        check(|tp, v| reduce(tp, v[0].matmul_transposed(v[1])?), &[a.clone(), bt])?;
        check(|tp, v| reduce(tp, v[0].add_bias(v[1])?), &[c.clone().reshape(&[2, 4]).unwrap(), bias])?;
        check(|tp, v| reduce(tp, v[0].slice_cols(1, 3)?), std::slice::from_ref(&b))?;
        check(|tp, v| reduce(tp, v[0].concat_cols(v[1])?), &[a, t(&[2, 4], c.data().to_vec())])?;
    }

    #[test]
    fn reductions_match_finite_differences(a in values(12, -2.0, 2.0)) {
        let x = [t(&[3, 4], a.clone())];
        check(|tp, v| reduce(tp, v[0].sum(Some(0))?), &x)?;
        check(|tp, v| reduce(tp, v[0].sum(Some(1))?), &x)?;
        check(|tp, v| reduce(tp, v[0].mean(Some(1))?), &x)?;
        check(|_, v| v[0].mean(None), &x)?;
        // Distinct values keep max differentiable.
        let mut d = a;
        d.iter_mut().enumerate().for_each(|(i, v)| *v += 5.0 * i as f64);
        check(|tp, v| reduce(tp, v[0].max(Some(1))?), &[t(&[3, 4], d.clone())])?;
        check(|_, v| v[0].max(None), &[t(&[3, 4], d)])?;
    }

    #[test]
    fn cross_entropy_matches_finite_differences(a in values(12, -3.0, 3.0), w in values(4, 0.5, 3.0)) {
        let x = [t(&[4, 3], a)];
        check(|_, v| v[0].softmax_cross_entropy(&[0, 2, 1, 2], None), &x)?;
        let w: Vec<f32> = w.iter().map(|&v| v as f32).collect();
        check(|_, v| v[0].softmax_cross_entropy(&[1, 1, 0, 2], Some(&w)), &x)?;
    }

    #[test]
    fn forward_values_are_bitwise_deterministic(a in values(12, -2.0, 2.0), b in values(12, -2.0, 2.0)) {
        let run = || {
            let tape = Tape::<f64>::new();
            let x = tape.constant(t(&[3, 4], a.clone()));
            let y = tape.constant(t(&[4, 3], b.clone()));
            let z = x.matmul(y).unwrap().tanh().softmax_cross_entropy(&[0, 1, 2], None).unwrap();
            z.value().item().to_bits()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn identity_matmul_is_exact(a in prop::collection::vec(-1e3f32..1e3, 15)) {
        let m = Tensor::new(&[3, 5], a).unwrap();
        prop_assert_eq!(Tensor::<f32>::eye(3).matmul(&m).unwrap(), m.clone());
        prop_assert_eq!(m.matmul(&Tensor::<f32>::eye(5)).unwrap(), m);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(a in values(12, -5.0, 5.0), c in -50.0..50.0f64) {
        let tape = Tape::<f64>::new();
        let labels = [2, 0, 1, 3];
        let base = softmax_cross_entropy(tape.constant(t(&[3, 4], a.clone())), &labels[..3]).unwrap();
        let shifted = softmax_cross_entropy(tape.constant(t(&[3, 4], a).map(|v| v + c)), &labels[..3]).unwrap();
        prop_assert!((base.value().item() - shifted.value().item()).abs() <= 1e-5);
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_at_the_prior(mu in values(8, -3.0, 3.0), lv in values(8, -3.0, 3.0)) {
        let tape = Tape::<f64>::new();
        let kl = gaussian_kl(tape.constant(t(&[2, 4], mu.clone())), tape.constant(t(&[2, 4], lv.clone())))
            .unwrap()
            .value()
            .item();
        prop_assert!(kl >= 0.0);
        let far = mu.iter().chain(&lv).any(|v| v.abs() > 1e-2);
        if far {
            prop_assert!(kl > 1e-6);
        }
        let zero = gaussian_kl(tape.constant(Tensor::zeros(&[2, 4])), tape.constant(Tensor::zeros(&[2, 4])))
            .unwrap()
            .value()
            .item();
        prop_assert!(zero.abs() <= 1e-6);
    }

    #[test]
    fn adam_with_zero_lr_is_identity(p in prop::collection::vec(-5.0f32..5.0, 6), g in prop::collection::vec(-5.0f32..5.0, 6)) {
        let mut param = Tensor::new(&[2, 3], p).unwrap();
        let before = param.clone();
        let grad = Tensor::new(&[2, 3], g).unwrap();
        let mut adam = AdamState::new(0.0);
        for _ in 0..3 {
            adam.step(vec![&mut param], std::slice::from_ref(&grad), &["w".into()]).unwrap();
        }
        prop_assert_eq!(param, before);
    }

    #[test]
    fn knn_ignores_training_order(seed in any::<u64>(), k in 1usize..9) {
        let mut rng = RngState::new(seed);
        let n = 24;
        // Coarse integer grid: many exact distance ties.
        let pts: Vec<f32> = (0..n * 2).map(|_| (rng.below(4)) as f32).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let queries = Tensor::new(&[6, 2], (0..12).map(|_| rng.below(4) as f32).collect()).unwrap();
        let a = KnnClassifier::new(Tensor::new(&[n, 2], pts.clone()).unwrap(), labels.clone(), 3, k).unwrap();
        let perm = rng.permutation(n);
        let pts_p: Vec<f32> = perm.iter().flat_map(|&i| [pts[2 * i], pts[2 * i + 1]]).collect();
        let labels_p: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = KnnClassifier::new(Tensor::new(&[n, 2], pts_p).unwrap(), labels_p, 3, k).unwrap();
        prop_assert_eq!(a.classify_batch(&queries).unwrap(), b.classify_batch(&queries).unwrap());
    }

    #[test]
    fn partition_sizes_add_up(dim_z in 2usize..128, z_p in 0.01..0.99f64) {
        if let Ok(p) = PartitionSpec::new(dim_z, z_p) {
            prop_assert_eq!(p.dim_z1() + p.dim_z2(), dim_z);
            prop_assert_eq!(p.dim_z1(), (z_p * dim_z as f64 + 0.5).floor() as usize);
        }
        let q = PartitionSpec::new(32, 0.25).unwrap();
        prop_assert_eq!((q.dim_z1(), q.dim_z2()), (8, 24));
    }

    #[test]
    fn classification_gradient_never_reaches_mu2_head(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let mut spec = ModelSpec::new([1, 2, 3], PartitionSpec::new(4, 0.5).unwrap());
        spec.encoder_hidden = vec![5];
        spec.decoder_hidden = vec![5];
        spec.classifier_hidden = vec![3];
        spec.scope = ClassifierScope::Z1;
        let m = ChromaModel::new(spec, HybridLossConfig::default(), &mut rng).unwrap();
        let x = Tensor::<f64>::new(&[3, 6], (0..18).map(|_| rng.uniform()).collect()).unwrap();
        let tape = Tape::<f64>::new();
        let vars: Vec<_> = m.params().iter().map(|p| tape.leaf(p.cast(), true)).collect();
        let bound = m.bind_vars(&vars).unwrap();
        let (mu, _) = bound.encode(tape.constant(x)).unwrap();
        let ce = bound.classify(mu).unwrap().softmax_cross_entropy(&[0, 1, 1], None).unwrap();
        let mut grads = tape.backward(ce).unwrap();
        let names = m.param_names();
        let mut saw_head = false;
        for (name, v) in names.iter().zip(&vars) {
            if name.starts_with("mu_head.") {
                saw_head = true;
                let g = grads.take_or_zeros(*v);
                let rows = g.shape()[0];
                let cols = if g.rank() == 2 { g.shape()[1] } else { 1 };
                // Rows 2.. of the mean head produce μ₂.
                for r in 2..rows {
                    for c in 0..cols {
                        prop_assert_eq!(g.data()[r * cols + c], 0.0);
                    }
                }
            }
        }
        prop_assert!(saw_head, "no mean-head parameters in {names:?}");
    }

    #[test]
    fn synthesis_is_reproducible_bounded_and_flip_is_an_involution(seed in any::<u64>(), p_c in 0.0..1.0f64) {
        let raw = raw_images(40, seed);
        let a = make_colored_mnist(&raw, "r", 0.25, p_c, seed, Distribution::Train).unwrap();
        let b = make_colored_mnist(&raw, "r", 0.25, p_c, seed, Distribution::Train).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let twin = flip_colors(&a).unwrap();
        prop_assert!(twin.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(flip_colors(&twin).unwrap(), a);

        let p = inject_patch(&raw, "r", p_c, 2, Corner::TopLeft, PatchTarget::Positive, seed, Distribution::Train).unwrap();
        prop_assert_eq!(&p, &inject_patch(&raw, "r", p_c, 2, Corner::TopLeft, PatchTarget::Positive, seed, Distribution::Train).unwrap());
        prop_assert!(p.images.data().iter().all(|v| (0.0..=1.0).contains(v)));

        let mut digits = raw_images(40, seed ^ 1);
        digits.labels = (0..40).map(|i| (i % 2) as u8).collect();
        let mut objects = raw_images(40, seed ^ 2);
        objects.labels = (0..40).map(|i| if i % 2 == 0 { 4 } else { 3 }).collect();
        let d = make_dominoes(&digits, &objects, ("d", "o"), p_c, Some(16), seed, Distribution::Train).unwrap();
        prop_assert_eq!(&d, &make_dominoes(&digits, &objects, ("d", "o"), p_c, Some(16), seed, Distribution::Train).unwrap());
        prop_assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn worst_group_never_exceeds_average(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = RngState::new(seed);
        let raw = raw_images(n, seed);
        let ds = make_colored_mnist(&raw, "r", 0.25, 0.3, seed, Distribution::InDist).unwrap();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let r = score(&ds, &preds, EvalHead::Naive).unwrap();
        prop_assert!(r.worst_group <= r.accuracy + 1e-12);
        prop_assert_eq!(r, score(&ds, &preds, EvalHead::Naive).unwrap());
    }

    #[test]
    fn latent_shift_is_symmetric(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let mut spec = ModelSpec::new([2, 2, 2], PartitionSpec::new(4, 0.25).unwrap());
        spec.encoder_hidden = vec![6];
        spec.decoder_hidden = vec![6];
        spec.classifier_hidden = vec![3];
        let m = ChromaModel::new(spec, HybridLossConfig::default(), &mut rng).unwrap();
        let mut raw = raw_images(12, seed);
        raw.height = 2;
        raw.width = 2;
        raw.pixels.truncate(12 * 4);
        let ds = make_colored_mnist(&raw, "r", 0.25, 0.1, seed, Distribution::Train).unwrap();
        let twin = flip_colors(&ds).unwrap();
        let ab = latent_shift_profile(&m, &ds, &twin).unwrap();
        let ba = latent_shift_profile(&m, &twin, &ds).unwrap();
        prop_assert_eq!(ab.values, ba.values);
    }

    #[test]
    fn rendering_is_pure_and_quantization_round_trips(cells in prop::collection::vec(0.0f32..=1.0, 2 * 12)) {
        let grid = ImageGrid::new(1, 2, [1, 3, 4], vec![cells[..12].to_vec(), cells[12..].to_vec()]).unwrap();
        prop_assert_eq!(grid.mapping(), ChannelMap::Grayscale);
        let a = grid.encode_png().unwrap();
        prop_assert_eq!(&a, &grid.encode_png().unwrap());
        for v in cells {
            prop_assert!((quantize(v) as f32 / 255.0 - v).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn learned_variance_gradcheck_at_large_logvar() {
    // The bounded logvar head saturates smoothly; its gradient stays exact.
    let mut rng = RngState::new(5);
    let mut spec = ModelSpec::new([1, 2, 2], PartitionSpec::new(2, 0.5).unwrap());
    spec.encoder_hidden = vec![3];
    spec.decoder_hidden = vec![3];
    spec.classifier_hidden = vec![2];
    spec.recon_variance = ReconVariance::Learned;
    let cfg = HybridLossConfig {
        recon_variance: ReconVariance::Learned,
        ..HybridLossConfig::default()
    };
    let m = ChromaModel::new(spec, cfg, &mut rng).unwrap();
    let x: Tensor<f64> = Tensor::new(&[2, 4], vec![0.0, 0.2, 0.9, 1.0, 0.5, 0.5, 0.1, 0.0]).unwrap();
    let noise: Tensor<f64> = Tensor::new(&[2, 2], vec![0.3, -1.2, 0.8, 0.1]).unwrap();
    let inputs: Vec<Tensor<f64>> = m.params().iter().map(|p| p.cast::<f64>().map(|v| 4.0 * v)).collect();
    let r = gradcheck(
        |tape, vars| {
            Ok(m.bind_vars(vars)?
                .hybrid_loss(tape.constant(x.clone()), Some(&[0, 1]), &noise, &cfg)?
                .total)
        },
        &inputs,
        1e-6,
        1e-3,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}
