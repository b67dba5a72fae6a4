//! Feature extractor, projector and expandable classifier.

mod backbone;
mod heads;
mod prompt;
mod snapshot;

pub use backbone::{Activations, Backbone, Mlp, SmallCnn};
pub use heads::{Classifier, Projector};
pub use prompt::{KeySelection, PromptPool};
pub use snapshot::{
    decode_vector, encode_vector, read_vector, sidecar_path, write_vector, ParameterSnapshot,
    SnapshotSidecar,
};

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DiscoError, Result};
use crate::rng::{self, Rng};
use crate::scenario::{ClassId, SampleShape};

/// Reference backbones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackboneSpec {
    /// Dense ReLU layers `input → hidden... → feature_dim`.
    Mlp {
        hidden: Vec<usize>,
        feature_dim: usize,
    },
    /// Two conv blocks and two dense layers; input planes must be multiples of 4.
    Cnn {
        conv1: usize,
        conv2: usize,
        hidden: usize,
        feature_dim: usize,
    },
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::Mlp {
            hidden: vec![64, 64],
            feature_dim: 64,
        }
    }
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneSpec::Mlp { feature_dim, .. } | BackboneSpec::Cnn { feature_dim, .. } => {
                *feature_dim
            }
        }
    }

    pub fn validate(&self, shape: SampleShape) -> std::result::Result<(), String> {
        match self {
            BackboneSpec::Mlp {
                hidden,
                feature_dim,
            } => {
                if hidden.contains(&0) || *feature_dim == 0 {
                    return Err("model.backbone: layer widths must be positive".into());
                }
            }
            BackboneSpec::Cnn {
                conv1,
                conv2,
                hidden,
                feature_dim,
            } => {
                if [*conv1, *conv2, *hidden, *feature_dim].contains(&0) {
                    return Err("model.backbone: layer widths must be positive".into());
                }
                if !shape.height.is_multiple_of(4) || !shape.width.is_multiple_of(4) {
                    return Err(format!(
                        "model.backbone: cnn needs height and width divisible by 4, dataset is {}x{}",
                        shape.height, shape.width
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, shape: SampleShape, rng: &mut Rng) -> Box<dyn Backbone> {
        match self {
            BackboneSpec::Mlp {
                hidden,
                feature_dim,
            } => {
                let mut dims = vec![shape.len()];
                dims.extend(hidden);
                dims.push(*feature_dim);
                Box::new(Mlp::new(&dims, rng))
            }
            BackboneSpec::Cnn {
                conv1,
                conv2,
                hidden,
                feature_dim,
            } => Box::new(SmallCnn::new(
                (shape.channels, shape.height, shape.width),
                *conv1,
                *conv2,
                *hidden,
                *feature_dim,
                rng,
            )),
        }
    }
}

/// Output of a training forward pass through backbone and projector.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Array2<f64>,
    pub projected: Array2<f64>,
    pub logits: Array2<f64>,
    pub cache: Activations,
}

/// Gradients for every parameter group of a bundle.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    pub backbone: Vec<f64>,
    pub projector: Vec<f64>,
    pub classifier: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub backbone: Box<dyn Backbone>,
    pub projector: Projector,
    pub classifier: Classifier,
}

impl ModelBundle {
    pub fn new(backbone: Box<dyn Backbone>, projection_dim: usize, rng: &mut Rng) -> Self {
        let feature_dim = backbone.output_dim();
        let projector = Projector::new(feature_dim, projection_dim, rng);
        ModelBundle {
            backbone,
            projector,
            classifier: Classifier::new(feature_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.output_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.projector.out_dim()
    }

    /// Copy of the feature-extractor parameters in canonical order.
    pub fn snapshot(&self, task_id: usize) -> ParameterSnapshot {
        ParameterSnapshot {
            task_id,
            values: self.backbone.params().to_vec(),
        }
    }

    pub fn restore(&mut self, snapshot: &ParameterSnapshot) -> Result<()> {
        let params = self.backbone.params_mut();
        if params.len() != snapshot.values.len() {
            return Err(DiscoError::DimensionMismatch {
                expected: params.len(),
                actual: snapshot.values.len(),
            });
        }
        params.copy_from_slice(&snapshot.values);
        Ok(())
    }

    pub fn expand_classifier(&mut self, new_labels: &[ClassId], rng: &mut Rng) -> Result<()> {
        self.classifier.expand(new_labels, rng)
    }

    pub fn architecture_hash(&self) -> String {
        let desc = format!(
            "{}|proj{}x{}",
            self.backbone.architecture(),
            self.projector.in_dim(),
            self.projector.out_dim()
        );
        rng::digest_hex(desc.as_bytes())[..16].to_string()
    }

    pub fn features(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.backbone.infer(input)
    }

    pub fn logits(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.classifier.forward(self.features(input).view())
    }

    pub fn project(&self, features: ArrayView2<f64>) -> Array2<f64> {
        self.projector.forward(features)
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> ForwardPass {
        let (features, cache) = self.backbone.forward(input);
        let projected = self.projector.forward(features.view());
        let logits = self.classifier.forward(features.view());
        ForwardPass {
            features,
            projected,
            logits,
            cache,
        }
    }

    pub fn zero_grads(&self) -> BundleGrads {
        BundleGrads {
            backbone: vec![0.0; self.backbone.param_count()],
            projector: vec![0.0; self.projector.weights.len()],
            classifier: vec![0.0; self.classifier.params.len()],
        }
    }

    /// Backpropagate gradients on logits and projected features of one
    /// forward pass.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_logits: Option<ArrayView2<f64>>,
        grad_projected: Option<ArrayView2<f64>>,
        grad_features_extra: Option<ArrayView2<f64>>,
        grads: &mut BundleGrads,
    ) {
        let mut grad_features = Array2::<f64>::zeros(pass.features.raw_dim());
        if let Some(g) = grad_logits {
            grad_features +=
                &self
                    .classifier
                    .backward(pass.features.view(), g, &mut grads.classifier);
        }
        if let Some(g) = grad_projected {
            grad_features +=
                &self
                    .projector
                    .backward(pass.features.view(), g, &mut grads.projector);
        }
        if let Some(g) = grad_features_extra {
            grad_features += &g;
        }
        self.backbone
            .backward(&pass.cache, grad_features.view(), &mut grads.backbone);
    }

    /// Persist the full bundle: `model.toml` describes the layout,
    /// `model.bin` holds little-endian f64 parameters (backbone, projector,
    /// classifier).
    pub fn save(&self, dir: &Path, spec: &BackboneSpec, shape: SampleShape) -> Result<()> {
        let header = BundleHeader {
            backbone: spec.clone(),
            shape,
            projection_dim: self.projector.out_dim(),
            labels: self.classifier.labels().to_vec(),
            architecture_hash: self.architecture_hash(),
        };
        let text = toml::to_string(&header).expect("bundle header serializes");
        let header_path = dir.join("model.toml");
        fs::write(&header_path, text).map_err(|e| DiscoError::io(&header_path, e))?;
        let mut bytes = Vec::new();
        for group in [
            self.backbone.params(),
            &self.projector.weights[..],
            &self.classifier.params[..],
        ] {
            for v in group {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = dir.join("model.bin");
        fs::write(&bin, bytes).map_err(|e| DiscoError::io(&bin, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join("model.toml");
        let text = fs::read_to_string(&header_path).map_err(|e| DiscoError::io(&header_path, e))?;
        let header: BundleHeader =
            toml::from_str(&text).map_err(|e| DiscoError::artifact(&header_path, e.to_string()))?;
        let mut scratch = rng::stream(0, rng::Stream::ModelInit);
        let mut backbone = header.backbone.build(header.shape, &mut scratch);
        let bin = dir.join("model.bin");
        let bytes = fs::read(&bin).map_err(|e| DiscoError::io(&bin, e))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let nb = backbone.param_count();
        let feature_dim = backbone.output_dim();
        let np = feature_dim * header.projection_dim;
        let nc = header.labels.len() * (feature_dim + 1);
        if values.len() != nb + np + nc || bytes.len() % 8 != 0 {
            return Err(DiscoError::artifact(
                &bin,
                format!(
                    "expected {} parameters, found {}",
                    nb + np + nc,
                    values.len()
                ),
            ));
        }
        backbone.params_mut().copy_from_slice(&values[..nb]);
        let projector = Projector::from_weights(
            feature_dim,
            header.projection_dim,
            values[nb..nb + np].to_vec(),
        )?;
        let classifier =
            Classifier::from_parts(feature_dim, header.labels, values[nb + np..].to_vec())?;
        let bundle = ModelBundle {
            backbone,
            projector,
            classifier,
        };
        if bundle.architecture_hash() != header.architecture_hash {
            return Err(DiscoError::artifact(
                &header_path,
                "architecture hash mismatch",
            ));
        }
        Ok(bundle)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleHeader {
    backbone: BackboneSpec,
    shape: SampleShape,
    projection_dim: usize,
    labels: Vec<ClassId>,
    architecture_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn bundle() -> ModelBundle {
        let mut r = stream(0, Stream::ModelInit);
        let spec = BackboneSpec::Mlp {
            hidden: vec![6, 5],
            feature_dim: 4,
        };
        let backbone = spec.build(SampleShape::flat(3), &mut r);
        let mut b = ModelBundle::new(backbone, 2, &mut r);
        b.expand_classifier(&[0, 1], &mut r).unwrap();
        b
    }

    #[test]
    fn snapshot_is_a_detached_copy() {
        let mut b = bundle();
        let s1 = b.snapshot(0);
        let s2 = b.snapshot(0);
        assert_eq!(s1, s2);
        b.backbone.params_mut()[0] += 1.0;
        let s3 = b.snapshot(1);
        assert_ne!(s1.values, s3.values);
        assert_eq!(s1.values, s2.values);
        b.restore(&s1).unwrap();
        assert_eq!(b.snapshot(0), s1);
    }

    #[test]
    fn canonical_ordering_depends_only_on_architecture() {
        let a = bundle();
        let mut b = bundle();
        b.backbone.params_mut().iter_mut().for_each(|v| *v *= 2.0);
        assert_eq!(a.snapshot(0).count(), b.snapshot(0).count());
        assert_eq!(a.architecture_hash(), b.architecture_hash());
    }

    #[test]
    fn bundle_save_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        let spec = BackboneSpec::Mlp {
            hidden: vec![6, 5],
            feature_dim: 4,
        };
        b.save(dir.path(), &spec, SampleShape::flat(3)).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back.backbone.params(), b.backbone.params());
        assert_eq!(back.projector, b.projector);
        assert_eq!(back.classifier, b.classifier);
    }
}
