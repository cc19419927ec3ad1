use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{self, TensorBag};
use crate::error::{Error, Result};
use crate::nn::{Activation, AffineLayer, KnnClassifier, Mlp};
use crate::tensor::Tensor;

use super::model::{ChromaModel, HybridLossConfig, ModelSpec, Z2Head};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum CheckpointMeta {
    ChromaVae {
        dim_z: usize,
        z_p: f64,
        spec: ModelSpec,
        loss: HybridLossConfig,
        encoder_layers: usize,
        decoder_layers: usize,
        z2_head: Option<Z2Meta>,
        xtilde2_layers: Option<usize>,
        stage1_epochs: usize,
    },
    MlpClassifier {
        image_shape: [usize; 3],
        widths: Vec<usize>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Z2Meta {
    Mlp { layers: usize },
    Knn { k: usize, num_classes: usize },
}

fn mlp_tensors<'a>(out: &mut Vec<(String, &'a Tensor)>, m: &'a Mlp, prefix: &str) {
    out.extend(m.param_names(prefix).into_iter().zip(m.params()));
}

fn take_mlp(bag: &mut TensorBag, prefix: &str, layers: usize, hidden: Activation, output: Activation) -> Result<Mlp> {
    let layers = (0..layers)
        .map(|i| {
            AffineLayer::from_parts(
                bag.take(&format!("{prefix}.{i}.weight"))?,
                bag.take(&format!("{prefix}.{i}.bias"))?,
            )
        })
        .collect::<Result<_>>()?;
    Mlp::from_layers(layers, hidden, output)
}

fn take_affine(bag: &mut TensorBag, prefix: &str) -> Result<AffineLayer> {
    AffineLayer::from_parts(
        bag.take(&format!("{prefix}.weight"))?,
        bag.take(&format!("{prefix}.bias"))?,
    )
}

/// Writes `<stem>.json` + `<stem>.bin` into `dir`; returns the manifest path.
pub fn save_model(model: &ChromaModel, dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut tensors = model.named_params();
    let knn_labels;
    let z2_meta = match &model.z2_head {
        None => None,
        Some(Z2Head::Mlp(m)) => {
            mlp_tensors(&mut tensors, m, "z2");
            Some(Z2Meta::Mlp { layers: m.layers.len() })
        }
        Some(Z2Head::Knn(k)) => {
            knn_labels = Tensor::new(&[k.len()], k.labels().iter().map(|&y| y as f32).collect())?;
            tensors.push(("z2_knn.points".into(), k.points()));
            tensors.push(("z2_knn.labels".into(), &knn_labels));
            Some(Z2Meta::Knn {
                k: k.k(),
                num_classes: k.num_classes(),
            })
        }
    };
    if let Some(m) = &model.xtilde2_classifier {
        mlp_tensors(&mut tensors, m, "xt2");
    }
    let meta = CheckpointMeta::ChromaVae {
        dim_z: model.spec.partition.dim_z(),
        z_p: model.spec.partition.z_p(),
        spec: model.spec.clone(),
        loss: model.loss,
        encoder_layers: model.encoder.as_ref().map_or(0, |m| m.layers.len()),
        decoder_layers: model.decoder.as_ref().map_or(0, |m| m.layers.len()),
        z2_head: z2_meta,
        xtilde2_layers: model.xtilde2_classifier.as_ref().map(|m| m.layers.len()),
        stage1_epochs: model.stage1_epochs,
    };
    Ok(archive::write(dir, stem, meta, &tensors)?.0)
}

pub fn load_model(manifest: &Path) -> Result<ChromaModel> {
    let (meta, tensors): (CheckpointMeta, _) = archive::read(manifest)?;
    let CheckpointMeta::ChromaVae {
        spec,
        loss,
        encoder_layers,
        decoder_layers,
        z2_head,
        xtilde2_layers,
        stage1_epochs,
        ..
    } = meta
    else {
        return Err(Error::Format {
            path: manifest.to_path_buf(),
            detail: "not a chroma-vae checkpoint".into(),
        });
    };
    spec.validate()?;
    let mut bag = TensorBag::new(tensors);
    let relu = Activation::Relu;
    let encoder = match encoder_layers {
        0 => None,
        n => Some(take_mlp(&mut bag, "enc", n, relu, relu)?),
    };
    let mu_head = take_affine(&mut bag, "mu_head")?;
    let logvar_head = take_affine(&mut bag, "logvar_head")?;
    let decoder = match decoder_layers {
        0 => None,
        n => Some(take_mlp(&mut bag, "dec", n, relu, relu)?),
    };
    let decoder_mean = take_affine(&mut bag, "dec_mean")?;
    let decoder_logvar = match bag.has_prefix("dec_logvar.") {
        true => Some(take_affine(&mut bag, "dec_logvar")?),
        false => None,
    };
    let clf_layers = spec.classifier_hidden.len() + 1;
    let classifier = take_mlp(&mut bag, "clf", clf_layers, relu, Activation::Identity)?;
    let z2_head = match z2_head {
        None => None,
        Some(Z2Meta::Mlp { layers }) => Some(Z2Head::Mlp(take_mlp(
            &mut bag,
            "z2",
            layers,
            relu,
            Activation::Identity,
        )?)),
        Some(Z2Meta::Knn { k, num_classes }) => {
            let points = bag.take("z2_knn.points")?;
            let labels = bag.take("z2_knn.labels")?.data().iter().map(|&v| v as usize).collect();
            Some(Z2Head::Knn(KnnClassifier::new(points, labels, num_classes, k)?))
        }
    };
    let xtilde2_classifier = match xtilde2_layers {
        None => None,
        Some(n) => Some(take_mlp(&mut bag, "xt2", n, relu, Activation::Identity)?),
    };
    let model = ChromaModel {
        spec,
        loss,
        encoder,
        mu_head,
        logvar_head,
        decoder,
        decoder_mean,
        decoder_logvar,
        classifier,
        z2_head,
        xtilde2_classifier,
        stage1_epochs,
    };
    check_widths(&model, manifest)?;
    Ok(model)
}

fn check_widths(m: &ChromaModel, path: &Path) -> Result<()> {
    let p = m.spec.partition;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if m.mu_head.out_width() != p.dim_z() || m.logvar_head.out_width() != p.dim_z() {
        return Err(bad(format!("encoder heads do not emit dim_z = {}", p.dim_z())));
    }
    let dec_in = m.decoder.as_ref().map_or(m.decoder_mean.in_width(), Mlp::in_width);
    if dec_in != p.dim_z() {
        return Err(bad(format!("decoder input {dec_in} != dim_z {}", p.dim_z())));
    }
    if m.classifier.in_width() != m.spec.classifier_input() {
        return Err(bad(format!(
            "classifier input {} != {}",
            m.classifier.in_width(),
            m.spec.classifier_input()
        )));
    }
    match &m.z2_head {
        Some(Z2Head::Mlp(h)) if h.in_width() != p.dim_z2() => Err(bad("z2 head width mismatch".into())),
        Some(Z2Head::Knn(k)) if k.dim() != p.dim_z2() => Err(bad("z2 kNN width mismatch".into())),
        _ => Ok(()),
    }
}

/// Saves a plain image classifier (naive and JTT baselines).
pub fn save_classifier(mlp: &Mlp, image_shape: [usize; 3], dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut tensors = Vec::new();
    mlp_tensors(&mut tensors, mlp, "clf");
    let meta = CheckpointMeta::MlpClassifier {
        image_shape,
        widths: mlp.widths(),
    };
    Ok(archive::write(dir, stem, meta, &tensors)?.0)
}

pub fn load_classifier(manifest: &Path) -> Result<(Mlp, [usize; 3])> {
    let (meta, tensors): (CheckpointMeta, _) = archive::read(manifest)?;
    let CheckpointMeta::MlpClassifier { image_shape, widths } = meta else {
        return Err(Error::Format {
            path: manifest.to_path_buf(),
            detail: "not an mlp-classifier checkpoint".into(),
        });
    };
    let mut bag = TensorBag::new(tensors);
    let mlp = take_mlp(
        &mut bag,
        "clf",
        widths.len() - 1,
        Activation::Relu,
        Activation::Identity,
    )?;
    if mlp.widths() != widths {
        return Err(Error::Format {
            path: manifest.to_path_buf(),
            detail: format!("widths {:?} disagree with manifest {widths:?}", mlp.widths()),
        });
    }
    Ok((mlp, image_shape))
}
