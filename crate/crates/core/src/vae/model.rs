use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    argmax_rows, gaussian_kl, gaussian_recon_nll, softmax_cross_entropy, Activation, AffineLayer, BoundAffine,
    BoundMlp, KnnClassifier, Mlp,
};
use crate::rng::RngState;
use crate::tensor::{Element, Tape, Tensor, Var};

use super::partition::PartitionSpec;

/// Rows per forward pass during inference.
const INFER_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconVariance {
    Fixed,
    Learned,
}

/// What the stage-1 classifier reads: the `μ₁` block or all of `μ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierScope {
    Z1,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `[channels, height, width]`.
    pub image_shape: [usize; 3],
    pub partition: PartitionSpec,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    pub decoder_output: Activation,
    pub recon_variance: ReconVariance,
    pub scope: ClassifierScope,
}

impl ModelSpec {
    /// Reference architecture: 512-256 relu encoder, mirrored decoder with a
    /// sigmoid mean head, one hidden layer of 64 in the classifier.
    pub fn new(image_shape: [usize; 3], partition: PartitionSpec) -> Self {
        Self {
            image_shape,
            partition,
            encoder_hidden: vec![512, 256],
            decoder_hidden: vec![256, 512],
            classifier_hidden: vec![64],
            num_classes: 2,
            decoder_output: Activation::Sigmoid,
            recon_variance: ReconVariance::Fixed,
            scope: ClassifierScope::Z1,
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn classifier_input(&self) -> usize {
        match self.scope {
            ClassifierScope::Z1 => self.partition.dim_z1(),
            ClassifierScope::Full => self.partition.dim_z(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels() == 0 {
            return Err(Error::Config(format!(
                "image shape {:?} has no pixels",
                self.image_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let widths = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.classifier_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridLossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub recon_variance: ReconVariance,
}

impl Default for HybridLossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            beta: 1.0,
            recon_variance: ReconVariance::Fixed,
        }
    }
}

impl HybridLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda = {} must be finite and >= 0",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta = {} must be finite and > 0", self.beta)));
        }
        Ok(())
    }
}

/// Batch-mean loss terms. `ce` is `None` when no labels were supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub kl: f64,
    pub ce: Option<f64>,
    pub total: f64,
}

/// Encoder output for a batch: `mu` and `logvar` are `[B×dim_z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub partition: PartitionSpec,
}

impl LatentCode {
    pub fn len(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mu1(&self) -> Tensor {
        self.mu
            .slice_cols(0, self.partition.dim_z1())
            .expect("partition fits latent")
    }

    pub fn mu2(&self) -> Tensor {
        self.mu
            .slice_cols(self.partition.dim_z1(), self.partition.dim_z())
            .expect("partition fits latent")
    }

    /// `z = μ + exp(½ logvar) ⊙ ε` with fresh `ε ~ N(0, I)`.
    pub fn reparameterize(&self, rng: &mut RngState) -> Tensor {
        let mut z = self.mu.clone();
        for (zi, lv) in z.data_mut().iter_mut().zip(self.logvar.data()) {
            *zi += (0.5 * lv).exp() * rng.normal();
        }
        z
    }
}

/// Stage-2 classifier over frozen `μ₂`.
#[derive(Clone, Debug, PartialEq)]
pub enum Z2Head {
    Mlp(Mlp),
    Knn(KnnClassifier),
}

impl Z2Head {
    pub fn kind(&self) -> &'static str {
        match self {
            Z2Head::Mlp(_) => "mlp",
            Z2Head::Knn(_) => "knn",
        }
    }

    pub fn predict(&self, mu2: &Tensor) -> Result<Vec<usize>> {
        match self {
            Z2Head::Mlp(m) => Ok(argmax_rows(&m.predict(mu2)?)),
            Z2Head::Knn(k) => k.classify_batch(mu2),
        }
    }
}

/// Which latent block a partial reconstruction keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subspace {
    Z1,
    Z2,
}

/// Partitioned-latent VAE with a classifier on `μ₁`, plus the optional
/// stage-2 heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaModel {
    pub spec: ModelSpec,
    pub loss: HybridLossConfig,
    pub encoder: Option<Mlp>,
    pub mu_head: AffineLayer,
    pub logvar_head: AffineLayer,
    pub decoder: Option<Mlp>,
    pub decoder_mean: AffineLayer,
    pub decoder_logvar: Option<AffineLayer>,
    pub classifier: Mlp,
    pub z2_head: Option<Z2Head>,
    pub xtilde2_classifier: Option<Mlp>,
    /// Completed stage-1 epochs; zero for a freshly initialized model.
    pub stage1_epochs: usize,
}

fn widths(first: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(first).chain(hidden.iter().copied()).collect()
}

impl ChromaModel {
    pub fn new(spec: ModelSpec, loss: HybridLossConfig, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        loss.validate()?;
        let dim_z = spec.partition.dim_z();
        let pixels = spec.pixels();

        let encoder = match spec.encoder_hidden.is_empty() {
            true => None,
            false => Some(Mlp::new(
                &widths(pixels, &spec.encoder_hidden),
                Activation::Relu,
                Activation::Relu,
                rng,
            )?),
        };
        let enc_out = spec.encoder_hidden.last().copied().unwrap_or(pixels);
        let mu_head = AffineLayer::new(enc_out, dim_z, rng)?;
        let logvar_head = AffineLayer::new(enc_out, dim_z, rng)?;

        let decoder = match spec.decoder_hidden.is_empty() {
            true => None,
            false => Some(Mlp::new(
                &widths(dim_z, &spec.decoder_hidden),
                Activation::Relu,
                Activation::Relu,
                rng,
            )?),
        };
        let dec_out = spec.decoder_hidden.last().copied().unwrap_or(dim_z);
        let decoder_mean = AffineLayer::new(dec_out, pixels, rng)?;
        let decoder_logvar = match spec.recon_variance {
            ReconVariance::Fixed => None,
            ReconVariance::Learned => Some(AffineLayer::new(dec_out, pixels, rng)?),
        };

        let mut clf_widths = widths(spec.classifier_input(), &spec.classifier_hidden);
        clf_widths.push(spec.num_classes);
        let classifier = Mlp::new(&clf_widths, Activation::Relu, Activation::Identity, rng)?;

        Ok(Self {
            spec,
            loss,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            decoder_mean,
            decoder_logvar,
            classifier,
            z2_head: None,
            xtilde2_classifier: None,
            stage1_epochs: 0,
        })
    }

    pub fn partition(&self) -> PartitionSpec {
        self.spec.partition
    }

    /// Stage-1 parameters with their names, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            push_mlp(&mut out, e, "enc");
        }
        push_affine(&mut out, &self.mu_head, "mu_head");
        push_affine(&mut out, &self.logvar_head, "logvar_head");
        if let Some(d) = &self.decoder {
            push_mlp(&mut out, d, "dec");
        }
        push_affine(&mut out, &self.decoder_mean, "dec_mean");
        if let Some(l) = &self.decoder_logvar {
            push_affine(&mut out, l, "dec_logvar");
        }
        push_mlp(&mut out, &self.classifier, "clf");
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`ChromaModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.extend(e.params_mut());
        }
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        if let Some(d) = &mut self.decoder {
            out.extend(d.params_mut());
        }
        out.extend(self.decoder_mean.params_mut());
        if let Some(l) = &mut self.decoder_logvar {
            out.extend(l.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    /// Encoder trunk and both encoder heads.
    pub fn encoder_params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.encoder.iter().flat_map(Mlp::params).collect();
        out.extend(self.mu_head.params());
        out.extend(self.logvar_head.params());
        out
    }

    /// Stage-1 parameters registered on `tape`.
    pub fn bind<'t, T: Element>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundChroma<'t, T> {
        let vars: Vec<_> = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.cast(), trainable))
            .collect();
        self.bind_vars(&vars).expect("variable count matches parameter count")
    }

    /// Binds variables given in [`ChromaModel::params`] order.
    pub fn bind_vars<'t, T: Element>(&self, vars: &[Var<'t, T>]) -> Result<BoundChroma<'t, T>> {
        let expected = self.params().len();
        if vars.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} variables, got {}",
                vars.len()
            )));
        }
        let mut rest = vars;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let affine = |v: &[Var<'t, T>]| BoundAffine {
            weight: v[0],
            bias: v[1],
        };
        let encoder = match &self.encoder {
            Some(m) => Some(m.bind_vars(take(2 * m.layers.len()))?),
            None => None,
        };
        let mu = affine(take(2));
        let logvar = affine(take(2));
        let decoder = match &self.decoder {
            Some(m) => Some(m.bind_vars(take(2 * m.layers.len()))?),
            None => None,
        };
        let dec_mean = affine(take(2));
        let dec_logvar = self.decoder_logvar.as_ref().map(|_| affine(take(2)));
        let classifier = self.classifier.bind_vars(take(2 * self.classifier.layers.len()))?;
        Ok(BoundChroma {
            encoder,
            mu,
            logvar,
            decoder,
            dec_mean,
            dec_output: self.spec.decoder_output,
            dec_logvar,
            classifier,
            partition: self.spec.partition,
            scope: self.spec.scope,
            vars: vars.to_vec(),
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (b, p) = x.dims2()?;
        if p != self.spec.pixels() {
            return Err(Error::dim("encode", &[b, self.spec.pixels()], x.shape()));
        }
        Ok(b)
    }

    /// Latent means and log-variances. No sampling.
    pub fn encode(&self, x: &Tensor) -> Result<LatentCode> {
        let b = self.check_input(x)?;
        let mut mus = Vec::new();
        let mut lvs = Vec::new();
        for start in (0..b.max(1)).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(b);
            let tape = Tape::<f32>::new();
            let bound = self.bind(&tape, false);
            let (mu, lv) = bound.encode(tape.constant(x.slice_rows(start, end)?))?;
            mus.push(mu.value().as_ref().clone());
            lvs.push(lv.value().as_ref().clone());
        }
        Ok(LatentCode {
            mu: Tensor::stack_rows(&mus)?,
            logvar: Tensor::stack_rows(&lvs)?,
            partition: self.spec.partition,
        })
    }

    /// Decoder mean `D_θ(z)` for `z[B×dim_z]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (b, d) = z.dims2()?;
        if d != self.spec.partition.dim_z() {
            return Err(Error::dim("decode", &[b, self.spec.partition.dim_z()], z.shape()));
        }
        let mut outs = Vec::new();
        for start in (0..b.max(1)).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(b);
            let tape = Tape::<f32>::new();
            let bound = self.bind(&tape, false);
            let (mean, _) = bound.decode(tape.constant(z.slice_rows(start, end)?))?;
            outs.push(mean.value().as_ref().clone());
        }
        Tensor::stack_rows(&outs)
    }

    /// `C_φ` logits from the encoded means.
    pub fn classify_z1(&self, code: &LatentCode) -> Result<Tensor> {
        let input = match self.spec.scope {
            ClassifierScope::Z1 => code.mu1(),
            ClassifierScope::Full => code.mu.clone(),
        };
        self.classifier.predict(&input)
    }

    pub fn predict_stage1(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.classify_z1(&self.encode(x)?)?))
    }

    pub fn predict_z2(&self, x: &Tensor) -> Result<Vec<usize>> {
        let head = self
            .z2_head
            .as_ref()
            .ok_or_else(|| Error::contract("model has no z2 classifier; run stage 2 first"))?;
        head.predict(&self.encode(x)?.mu2())
    }

    /// Classifies one `x̃₂` sample per row of `x`.
    pub fn predict_xtilde2(&self, x: &Tensor, rng: &mut RngState) -> Result<Vec<usize>> {
        let clf = self
            .xtilde2_classifier
            .as_ref()
            .ok_or_else(|| Error::contract("model has no x̃₂ classifier"))?;
        let xt = self.partial_reconstruct_batch(x, Subspace::Z2, rng)?;
        Ok(argmax_rows(&clf.predict(&xt)?))
    }

    /// Decodes `n` samples with the `keep` block fixed to the encoded mean of
    /// the single image `x` and the other block drawn from `N(0, I)`.
    pub fn partial_reconstruct(&self, x: &[f32], keep: Subspace, rng: &mut RngState, n: usize) -> Result<Tensor> {
        let x = Tensor::new(&[1, x.len()], x.to_vec())?;
        let mu = self.encode(&x)?.mu;
        let tiled = Tensor::new(
            &[n, mu.numel()],
            mu.data().iter().copied().cycle().take(n * mu.numel()).collect(),
        )?;
        self.decode_partial(&tiled, keep, rng)
    }

    /// `x̃₁` samples: `μ₁` fixed, fresh `z₂` per sample.
    pub fn partial_reconstruct_1(&self, x: &[f32], rng: &mut RngState, n: usize) -> Result<Tensor> {
        self.partial_reconstruct(x, Subspace::Z1, rng, n)
    }

    /// `x̃₂` samples: `μ₂` fixed, fresh `z₁` per sample.
    pub fn partial_reconstruct_2(&self, x: &[f32], rng: &mut RngState, n: usize) -> Result<Tensor> {
        self.partial_reconstruct(x, Subspace::Z2, rng, n)
    }

    /// One partial reconstruction per row of `x`.
    pub fn partial_reconstruct_batch(&self, x: &Tensor, keep: Subspace, rng: &mut RngState) -> Result<Tensor> {
        let mu = self.encode(x)?.mu;
        self.decode_partial(&mu, keep, rng)
    }

    /// Decodes each row of `mu[B×dim_z]` with the `keep` block retained and
    /// the other block replaced by fresh standard-normal noise.
    pub fn decode_partial(&self, mu: &Tensor, keep: Subspace, rng: &mut RngState) -> Result<Tensor> {
        let p = self.spec.partition;
        let (n, _) = mu.dims2()?;
        if n == 0 {
            return Ok(Tensor::zeros(&[0, self.spec.pixels()]));
        }
        let (noise_width, fixed) = match keep {
            Subspace::Z1 => (p.dim_z2(), mu.slice_cols(0, p.dim_z1())?),
            Subspace::Z2 => (p.dim_z1(), mu.slice_cols(p.dim_z1(), p.dim_z())?),
        };
        let noise = Tensor::new(&[n, noise_width], rng.normal_vec(n * noise_width))?;
        let z = match keep {
            Subspace::Z1 => fixed.concat_cols(&noise)?,
            Subspace::Z2 => noise.concat_cols(&fixed)?,
        };
        self.decode(&z)
    }

    /// Full-latent reconstruction: decodes `μ` when `deterministic`, a
    /// reparameterized sample otherwise.
    pub fn reconstruct(&self, x: &Tensor, rng: &mut RngState, deterministic: bool) -> Result<Tensor> {
        let code = self.encode(x)?;
        let z = match deterministic {
            true => code.mu.clone(),
            false => code.reparameterize(rng),
        };
        self.decode(&z)
    }

    /// Evaluates the hybrid objective with fresh reparameterization noise.
    pub fn hybrid_loss(
        &self,
        x: &Tensor,
        labels: Option<&[usize]>,
        cfg: &HybridLossConfig,
        rng: &mut RngState,
    ) -> Result<LossComponents> {
        let b = self.check_input(x)?;
        let dim_z = self.spec.partition.dim_z();
        let noise = Tensor::new(&[b, dim_z], rng.normal_vec(b * dim_z))?;
        let tape = Tape::<f32>::new();
        let bound = self.bind(&tape, false);
        bound
            .hybrid_loss(tape.constant(x.clone()), labels, &noise, cfg)?
            .components()
    }

    /// Loss components, gradients for every stage-1 parameter in
    /// [`ChromaModel::params`] order, and the classifier's predictions when
    /// labels were given.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        labels: Option<&[usize]>,
        noise: &Tensor,
        cfg: &HybridLossConfig,
    ) -> Result<StepOutput> {
        self.check_input(x)?;
        let tape = Tape::<f32>::new();
        let bound = self.bind(&tape, true);
        let terms = bound.hybrid_loss(tape.constant(x.clone()), labels, noise, cfg)?;
        let components = terms.components()?;
        let predictions = terms.logits.map(|l| argmax_rows(&l.value()));
        let mut grads = tape.backward(terms.total)?;
        let grads = bound.vars.iter().map(|&v| grads.take_or_zeros(v)).collect();
        Ok(StepOutput {
            components,
            grads,
            predictions,
        })
    }

    /// Digest of the encoder trunk and heads, for freeze checks.
    pub fn encoder_checksum(&self) -> String {
        checksum(&self.encoder_params())
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, m: &'a Mlp, prefix: &str) {
    out.extend(m.param_names(prefix).into_iter().zip(m.params()));
}

fn push_affine<'a>(out: &mut Vec<(String, &'a Tensor)>, l: &'a AffineLayer, prefix: &str) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

/// Stage-1 network bound to a tape.
pub struct BoundChroma<'t, T: Element = f32> {
    encoder: Option<BoundMlp<'t, T>>,
    pub mu: BoundAffine<'t, T>,
    pub logvar: BoundAffine<'t, T>,
    decoder: Option<BoundMlp<'t, T>>,
    pub dec_mean: BoundAffine<'t, T>,
    dec_output: Activation,
    pub dec_logvar: Option<BoundAffine<'t, T>>,
    classifier: BoundMlp<'t, T>,
    partition: PartitionSpec,
    scope: ClassifierScope,
    /// All parameter variables in [`ChromaModel::params`] order.
    pub vars: Vec<Var<'t, T>>,
}

pub struct HybridTerms<'t, T: Element> {
    pub total: Var<'t, T>,
    pub recon: Var<'t, T>,
    pub kl: Var<'t, T>,
    pub ce: Option<Var<'t, T>>,
    pub logits: Option<Var<'t, T>>,
}

pub struct StepOutput {
    pub components: LossComponents,
    pub grads: Vec<Tensor>,
    pub predictions: Option<Vec<usize>>,
}

/// SHA-256 over the little-endian bytes of each tensor in order.
pub fn checksum(tensors: &[&Tensor]) -> String {
    let mut bytes = Vec::new();
    for t in tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::archive::sha256_bytes(&bytes)
}

impl<T: Element> HybridTerms<'_, T> {
    /// Scalar values, failing on the first non-finite component.
    pub fn components(&self) -> Result<LossComponents> {
        let get = |v: Var<'_, T>, name: &str| -> Result<f64> {
            let value = v.value().item().to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("hybrid loss component {name}")));
            }
            Ok(value)
        };
        let recon = get(self.recon, "recon")?;
        let kl = get(self.kl, "kl")?;
        let ce = self.ce.map(|c| get(c, "ce")).transpose()?;
        let total = get(self.total, "total")?;
        Ok(LossComponents { recon, kl, ce, total })
    }
}

/// Learned decoder log-variances are squashed into `(-B, B)` so that
/// constant background pixels cannot drive the likelihood to infinity.
pub const DEC_LOGVAR_BOUND: f64 = 6.0;

impl<'t, T: Element> BoundChroma<'t, T> {
    pub fn encode(&self, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let h = match &self.encoder {
            Some(e) => e.forward(x)?,
            None => x,
        };
        Ok((self.mu.forward(h)?, self.logvar.forward(h)?))
    }

    /// Decoder mean and, when the model has one, the per-pixel log-variance.
    pub fn decode(&self, z: Var<'t, T>) -> Result<(Var<'t, T>, Option<Var<'t, T>>)> {
        let h = match &self.decoder {
            Some(d) => d.forward(z)?,
            None => z,
        };
        let mean = self.dec_output.apply(self.dec_mean.forward(h)?);
        let logvar = self
            .dec_logvar
            .map(|l| {
                l.forward(h)
                    .map(|raw| raw.scale(1.0 / DEC_LOGVAR_BOUND).tanh().scale(DEC_LOGVAR_BOUND))
            })
            .transpose()?;
        Ok((mean, logvar))
    }

    /// Classifier logits computed from the latent mean.
    pub fn classify(&self, mu: Var<'t, T>) -> Result<Var<'t, T>> {
        let input = match self.scope {
            ClassifierScope::Z1 => mu.slice_cols(0, self.partition.dim_z1())?,
            ClassifierScope::Full => mu,
        };
        self.classifier.forward(input)
    }

    /// `recon_nll + β·KL + λ·CE` with caller-supplied noise `ε[B×dim_z]`.
    /// Without labels the CE term is absent and `λ` must be zero.
    pub fn hybrid_loss(
        &self,
        x: Var<'t, T>,
        labels: Option<&[usize]>,
        noise: &Tensor<T>,
        cfg: &HybridLossConfig,
    ) -> Result<HybridTerms<'t, T>> {
        let b = x.shape()[0];
        if b == 0 {
            return Err(Error::contract("hybrid loss needs a non-empty batch"));
        }
        if noise.shape() != [b, self.partition.dim_z()] {
            return Err(Error::dim(
                "hybrid_loss noise",
                &[b, self.partition.dim_z()],
                noise.shape(),
            ));
        }
        if labels.is_none() && cfg.lambda != 0.0 {
            return Err(Error::contract("lambda > 0 requires labels"));
        }
        let tape = x.tape();
        let (mu, logvar) = self.encode(x)?;
        let eps = tape.constant(noise.clone());
        let z = mu.add(logvar.scale(0.5).exp().mul(eps)?)?;
        let (mean, dec_logvar) = self.decode(z)?;
        let dec_logvar = match cfg.recon_variance {
            ReconVariance::Fixed => None,
            ReconVariance::Learned => Some(
                dec_logvar
                    .ok_or_else(|| Error::contract("learned variance requested but decoder has no logvar head"))?,
            ),
        };
        let recon = gaussian_recon_nll(x, mean, dec_logvar)?;
        let kl = gaussian_kl(mu, logvar)?;
        let mut total = recon.add(kl.scale(cfg.beta))?;
        let (ce, logits) = match labels {
            Some(y) => {
                if y.len() != b {
                    return Err(Error::dim("hybrid_loss labels", &[b], &[y.len()]));
                }
                let logits = self.classify(mu)?;
                let ce = softmax_cross_entropy(logits, y)?;
                if cfg.lambda != 0.0 {
                    total = total.add(ce.scale(cfg.lambda))?;
                }
                (Some(ce), Some(logits))
            }
            None => (None, None),
        };
        Ok(HybridTerms {
            total,
            recon,
            kl,
            ce,
            logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn tiny_spec(scope: ClassifierScope, variance: ReconVariance) -> ModelSpec {
        ModelSpec {
            image_shape: [1, 2, 3],
            partition: PartitionSpec::new(4, 0.5).unwrap(),
            encoder_hidden: vec![8],
            decoder_hidden: vec![8],
            classifier_hidden: vec![5],
            num_classes: 2,
            decoder_output: Activation::Sigmoid,
            recon_variance: variance,
            scope,
        }
    }

    fn batch(rng: &mut RngState, b: usize, p: usize) -> Tensor {
        Tensor::new(&[b, p], (0..b * p).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    fn reference_spec() -> ModelSpec {
        ModelSpec::new([2, 28, 28], PartitionSpec::new(32, 0.25).unwrap())
    }

    #[test]
    fn reference_shapes() {
        let mut rng = RngState::new(0);
        let m = ChromaModel::new(reference_spec(), HybridLossConfig::default(), &mut rng).unwrap();
        assert_eq!(m.classifier.in_width(), 8);
        assert_eq!(m.decoder.as_ref().unwrap().in_width(), 32);
        let code = m.encode(&batch(&mut rng, 3, 1568)).unwrap();
        assert_eq!(code.mu.shape(), &[3, 32]);
        assert_eq!(code.logvar.shape(), &[3, 32]);
        assert_eq!(code.mu1().shape(), &[3, 8]);
        assert_eq!(code.mu2().shape(), &[3, 24]);
        assert_eq!(m.classify_z1(&code).unwrap().shape(), &[3, 2]);
        assert!(m.encode(&Tensor::zeros(&[1, 784])).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_chunk_independent() {
        let mut rng = RngState::new(1);
        let spec = tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed);
        let m = ChromaModel::new(spec, HybridLossConfig::default(), &mut rng).unwrap();
        let x = batch(&mut rng, INFER_CHUNK + 3, 6);
        let a = m.encode(&x).unwrap();
        assert_eq!(a, m.encode(&x).unwrap());
        let single = m
            .encode(&x.slice_rows(INFER_CHUNK + 1, INFER_CHUNK + 2).unwrap())
            .unwrap();
        assert_eq!(single.mu.data(), a.mu.row(INFER_CHUNK + 1));
    }

    #[test]
    fn reparameterize_collapses_and_matches_mean() {
        let p = PartitionSpec::new(4, 0.5).unwrap();
        let mu = Tensor::new(&[1, 4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let code = LatentCode {
            mu: mu.clone(),
            logvar: Tensor::full(&[1, 4], -40.0),
            partition: p,
        };
        let z = code.reparameterize(&mut RngState::new(3));
        for (a, b) in z.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-6);
        }

        let n = 100_000;
        let code = LatentCode {
            mu: Tensor::new(&[n, 1], vec![0.7; n]).unwrap(),
            logvar: Tensor::full(&[n, 1], 0.0),
            partition: p,
        };
        let z = code.reparameterize(&mut RngState::new(4));
        let mean = z.sum_f64() / n as f64;
        assert!((mean - 0.7).abs() < 3.0 / (n as f64).sqrt(), "{mean}");
        assert_eq!(z, code.reparameterize(&mut RngState::new(4)));
    }

    #[test]
    fn classifier_ignores_mu2() {
        let mut rng = RngState::new(2);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mut code = m.encode(&batch(&mut rng, 4, 6)).unwrap();
        let before = m.classify_z1(&code).unwrap();
        for i in 0..4 {
            for j in 2..4 {
                code.mu.data_mut()[i * 4 + j] += 10.0 * rng.normal();
            }
        }
        let after = m.classify_z1(&code).unwrap();
        assert_eq!(
            before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn ce_gradient_never_reaches_mu2_head() {
        let mut rng = RngState::new(5);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = batch(&mut rng, 6, 6);
        let tape = Tape::<f32>::new();
        let bound = m.bind(&tape, true);
        let (mu, _) = bound.encode(tape.constant(x)).unwrap();
        let ce = softmax_cross_entropy(bound.classify(mu).unwrap(), &[0, 1, 1, 0, 1, 0]).unwrap();
        let g = tape.backward(ce).unwrap();
        let w = g.get(bound.mu.weight).unwrap();
        let b = g.get(bound.mu.bias).unwrap();
        let d1 = m.partition().dim_z1();
        let cols = w.shape()[1];
        assert!(w.data()[d1 * cols..].iter().all(|&v| v == 0.0));
        assert!(b.data()[d1..].iter().all(|&v| v == 0.0));
        assert!(w.data()[..d1 * cols].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn recon_gradient_reaches_both_heads() {
        let mut rng = RngState::new(6);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = batch(&mut rng, 6, 6);
        let noise = Tensor::new(&[6, 4], rng.normal_vec(24)).unwrap();
        let cfg = HybridLossConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let grads = m.loss_and_grads(&x, None, &noise, &cfg).unwrap().grads;
        let names = m.param_names();
        let w = &grads[names.iter().position(|n| n == "mu_head.weight").unwrap()];
        let cols = w.shape()[1];
        assert!(w.data()[..2 * cols].iter().any(|&v| v != 0.0));
        assert!(w.data()[2 * cols..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn total_is_weighted_sum_of_components() {
        let mut rng = RngState::new(7);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = batch(&mut rng, 5, 6);
        let y = [0, 1, 0, 1, 1];
        for (lambda, beta) in [(100.0, 1.0), (3.0, 0.5), (0.0, 10.0)] {
            let cfg = HybridLossConfig {
                lambda,
                beta,
                recon_variance: ReconVariance::Fixed,
            };
            let c = m.hybrid_loss(&x, Some(&y), &cfg, &mut rng.derive(1)).unwrap();
            let expected = c.recon + beta * c.kl + lambda * c.ce.unwrap();
            assert!((c.total - expected).abs() < 1e-6 * expected.abs().max(1.0), "{c:?}");
            assert!(c.kl >= 0.0);
        }
        assert!(m.hybrid_loss(&x, None, &HybridLossConfig::default(), &mut rng).is_err());
        assert!(m
            .hybrid_loss(
                &Tensor::zeros(&[0, 6]),
                None,
                &HybridLossConfig {
                    lambda: 0.0,
                    ..Default::default()
                },
                &mut rng
            )
            .is_err());
    }

    #[test]
    fn nan_component_is_named() {
        let mut rng = RngState::new(8);
        let mut m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        m.logvar_head.bias.data_mut()[0] = f32::NAN;
        let err = m
            .hybrid_loss(
                &batch(&mut rng, 2, 6),
                Some(&[0, 1]),
                &HybridLossConfig::default(),
                &mut rng,
            )
            .unwrap_err();
        assert!(err.to_string().contains("component"), "{err}");
    }

    fn linear_model(rng: &mut RngState) -> ChromaModel {
        let spec = ModelSpec {
            decoder_hidden: vec![],
            decoder_output: Activation::Identity,
            ..tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed)
        };
        let mut m = ChromaModel::new(spec, HybridLossConfig::default(), rng).unwrap();
        m.decoder_mean.bias = Tensor::zeros(&[6]);
        m
    }

    #[test]
    fn partial_reconstructions_average_to_fixed_block() {
        let mut rng = RngState::new(9);
        let m = linear_model(&mut rng);
        let x: Vec<f32> = (0..6).map(|i| i as f32 / 6.0).collect();
        let mu = m.encode(&Tensor::new(&[1, 6], x.clone()).unwrap()).unwrap().mu;
        let w = &m.decoder_mean.weight;
        let n = 20_000;
        for (keep, cols) in [(Subspace::Z1, 0..2), (Subspace::Z2, 2..4)] {
            let s = m.partial_reconstruct(&x, keep, &mut rng, n).unwrap();
            assert_eq!(s.shape(), &[n, 6]);
            for p in 0..6 {
                let expected: f32 = cols.clone().map(|j| w.data()[p * 4 + j] * mu.data()[j]).sum();
                let noise_sd: f32 = (0..4)
                    .filter(|j| !cols.contains(j))
                    .map(|j| w.data()[p * 4 + j].powi(2))
                    .sum::<f32>()
                    .sqrt();
                let mean = (0..n).map(|i| s.row(i)[p] as f64).sum::<f64>() / n as f64;
                let tol = 3.0 * noise_sd as f64 / (n as f64).sqrt() + 1e-6;
                assert!(
                    (mean - expected as f64).abs() < tol,
                    "{keep:?} pixel {p}: {mean} vs {expected}"
                );
            }
            assert_ne!(s.row(0), s.row(1));
        }
        assert_eq!(m.partial_reconstruct_1(&x, &mut rng, 0).unwrap().shape(), &[0, 6]);
    }

    #[test]
    fn deterministic_reconstruction() {
        let mut rng = RngState::new(10);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = batch(&mut rng, 3, 6);
        let a = m.reconstruct(&x, &mut RngState::new(0), true).unwrap();
        let b = m.reconstruct(&x, &mut RngState::new(1), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, m.decode(&m.encode(&x).unwrap().mu).unwrap());
    }

    #[test]
    fn missing_heads_are_contract_errors() {
        let mut rng = RngState::new(11);
        let m = ChromaModel::new(
            tiny_spec(ClassifierScope::Z1, ReconVariance::Fixed),
            HybridLossConfig::default(),
            &mut rng,
        )
        .unwrap();
        let x = batch(&mut rng, 2, 6);
        assert!(matches!(m.predict_z2(&x), Err(Error::Contract(_))));
        assert!(matches!(m.predict_xtilde2(&x, &mut rng), Err(Error::Contract(_))));
    }

    fn hybrid_gradcheck(scope: ClassifierScope, variance: ReconVariance) {
        let mut rng = RngState::new(12);
        let m = ChromaModel::new(tiny_spec(scope, variance), HybridLossConfig::default(), &mut rng).unwrap();
        let x: Tensor<f64> = batch(&mut rng, 2, 6).cast();
        let noise: Tensor<f64> = Tensor::new(&[2, 4], rng.normal_vec(8)).unwrap().cast();
        let cfg = HybridLossConfig {
            lambda: 2.0,
            beta: 0.7,
            recon_variance: variance,
        };
        let inputs: Vec<Tensor<f64>> = m.params().iter().map(|p| p.cast()).collect();
        let report = gradcheck(
            |tape, vars| {
                let bound = m.bind_vars(vars)?;
                Ok(bound
                    .hybrid_loss(tape.constant(x.clone()), Some(&[1, 0]), &noise, &cfg)?
                    .total)
            },
            &inputs,
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn hybrid_loss_gradcheck() {
        hybrid_gradcheck(ClassifierScope::Z1, ReconVariance::Fixed);
    }

    #[test]
    fn hybrid_loss_gradcheck_full_scope_learned_variance() {
        hybrid_gradcheck(ClassifierScope::Full, ReconVariance::Learned);
    }
}
