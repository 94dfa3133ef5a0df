//! Whole-network assembly, parameter access, and checkpoints.

use crate::group::{Group, GroupKind};
use crate::layers::{
    ChannelAffine, Dense, GroupConv, LiftConv, Map4, MaxPool2, Pad, Relu,
};
use crate::transition::{OrimTransition, ThetaMaxFlatten};
use crate::{GcnnError, Result};
use ndarray::{Array1, Array2, Array4, Array5, ArrayView2};
use orim_core::basis::{Family, MomentSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

fn family_from_str(s: &str) -> Result<Family> {
    match s {
        "zm" => Ok(Family::Zernike),
        "pzm" => Ok(Family::PseudoZernike),
        "ofmm" => Ok(Family::FourierMellin),
        other => Err(GcnnError::CheckpointFormat(format!(
            "unknown moment family '{other}'"
        ))),
    }
}

pub fn family_to_str(f: Family) -> &'static str {
    match f {
        Family::Zernike => "zm",
        Family::PseudoZernike => "pzm",
        Family::FourierMellin => "ofmm",
    }
}

/// Which head sits on which trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Variant {
    /// Group-equivariant trunk with the invariant-moment head.
    GcnnOrim {
        family: String,
        p_max: u32,
        central: bool,
    },
    /// Same trunk, flatten head: the control. Flattening the trunk output
    /// gives this head far more parameters than the invariant head, which
    /// only strengthens the comparison when the invariant head wins.
    GcnnFlatten,
    /// Plain CNN trunk (no group axis), flatten head.
    CnnFlatten,
}

/// Everything needed to rebuild a model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub variant: Variant,
    pub side: usize,
    pub classes: usize,
    pub seed: u64,
}

pub enum Layer {
    Lift(LiftConv),
    GConv(GroupConv),
    Affine(ChannelAffine),
    Relu(Relu),
    Pool(MaxPool2),
    OrimHead(OrimTransition),
    FlattenHead(ThetaMaxFlatten),
    Dense(Dense),
}

pub enum Activation {
    Map(Map4),
    Flat(Array1<f64>),
}

pub enum StepCache {
    Lift(crate::layers::LiftCache),
    GConv(crate::layers::GroupConvCache),
    Affine(crate::layers::AffineCache),
    Relu(crate::layers::ReluCache),
    Pool(crate::layers::PoolCache),
    Orim(crate::transition::OrimCache),
    Flatten(crate::transition::FlattenCache),
    Dense(crate::layers::DenseCache),
}

pub enum LayerGrads {
    Lift(Array4<f64>),
    GConv(Array5<f64>),
    Affine(Array1<f64>, Array1<f64>),
    Dense(Array2<f64>, Array1<f64>),
    None,
}

pub struct Model {
    pub config: ModelConfig,
    layers: Vec<Layer>,
}

/// Fixed desk trunk: 1 -> 8 -> 16 channels with a single 2x2 pool after the
/// lift, so a 32 x 32 input reaches the head as a 16 x 16 x |theta| x 16 map.
/// The trunk is deliberately shallow and the head resolution deliberately
/// high: the trunk is exactly equivariant only at quarter turns, and every
/// conv and pool stage adds drift at intermediate angles. Reading the
/// moments from a large, lightly processed map keeps the magnitudes stable
/// under the off-grid rotations the trunk was never trained on, and a
/// 16 x 16 disk (about 200 pixels) oversamples the moment pairs by an order
/// of magnitude.
const TRUNK_WIDTHS: [usize; 2] = [8, 16];

pub fn build_model(config: ModelConfig) -> Result<Model> {
    // p4, not p4m: the heads project over theta, so a p4m trunk would make
    // the features reflection-invariant as well, and digits with near-mirror
    // pairs (2/5) become inseparable. Rotation alone is what the task needs.
    let group_kind = match config.variant {
        Variant::CnnFlatten => GroupKind::Z2,
        _ => GroupKind::P4,
    };
    let group = Group::new(group_kind);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut layers = Vec::new();
    let mut side = config.side;
    layers.push(Layer::Lift(LiftConv::new(
        group.clone(),
        3,
        1,
        TRUNK_WIDTHS[0],
        Pad::Same,
        &mut rng,
    )));
    layers.push(Layer::Affine(ChannelAffine::new(TRUNK_WIDTHS[0])));
    layers.push(Layer::Relu(Relu));
    layers.push(Layer::Pool(MaxPool2));
    side /= 2;
    for w in 1..TRUNK_WIDTHS.len() {
        layers.push(Layer::GConv(GroupConv::new(
            group.clone(),
            3,
            TRUNK_WIDTHS[w - 1],
            TRUNK_WIDTHS[w],
            Pad::Same,
            &mut rng,
        )));
        layers.push(Layer::Affine(ChannelAffine::new(TRUNK_WIDTHS[w])));
        layers.push(Layer::Relu(Relu));
        if w < TRUNK_WIDTHS.len() - 1 {
            layers.push(Layer::Pool(MaxPool2));
            side /= 2;
        }
    }
    let last = *TRUNK_WIDTHS.last().unwrap();
    let feature_len = match &config.variant {
        Variant::GcnnOrim {
            family,
            p_max,
            central,
        } => {
            // q = 0 magnitudes are kept: they are the most rotation-stable
            // features and the classifier benefits from the radial profile.
            let spec = MomentSpec::with_q_zero(family_from_str(family)?, *p_max, true)?;
            let head = OrimTransition::new(spec, side, last, *central)?;
            let n = head.feature_len();
            layers.push(Layer::OrimHead(head));
            n
        }
        Variant::GcnnFlatten | Variant::CnnFlatten => {
            layers.push(Layer::FlattenHead(ThetaMaxFlatten));
            side * side * last
        }
    };
    layers.push(Layer::Dense(Dense::new(
        feature_len,
        config.classes,
        &mut rng,
    )));
    Ok(Model { config, layers })
}

impl Model {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Forward pass for one image; caches are kept for a later backward.
    pub fn forward(&self, image: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Vec<StepCache>)> {
        let (h, w) = image.dim();
        let mut act = Activation::Map(
            image
                .to_owned()
                .into_shape_with_order((h, w, 1, 1))
                .expect("planar input"),
        );
        let mut caches = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            act = match (layer, act) {
                (Layer::Lift(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x)?;
                    caches.push(StepCache::Lift(c));
                    Activation::Map(y)
                }
                (Layer::GConv(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x)?;
                    caches.push(StepCache::GConv(c));
                    Activation::Map(y)
                }
                (Layer::Affine(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x)?;
                    caches.push(StepCache::Affine(c));
                    Activation::Map(y)
                }
                (Layer::Relu(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x);
                    caches.push(StepCache::Relu(c));
                    Activation::Map(y)
                }
                (Layer::Pool(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x)?;
                    caches.push(StepCache::Pool(c));
                    Activation::Map(y)
                }
                (Layer::OrimHead(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x)?;
                    caches.push(StepCache::Orim(c));
                    Activation::Flat(y)
                }
                (Layer::FlattenHead(l), Activation::Map(x)) => {
                    let (y, c) = l.forward(&x);
                    caches.push(StepCache::Flatten(c));
                    Activation::Flat(y)
                }
                (Layer::Dense(l), Activation::Flat(x)) => {
                    let (y, c) = l.forward(x.view())?;
                    caches.push(StepCache::Dense(c));
                    Activation::Flat(y)
                }
                _ => {
                    return Err(GcnnError::BadLayer {
                        index,
                        name: "layer".to_string(),
                        reason: "activation kind does not match layer input".to_string(),
                    })
                }
            };
        }
        match act {
            Activation::Flat(logits) => Ok((logits, caches)),
            Activation::Map(_) => Err(GcnnError::BadLayer {
                index: self.layers.len(),
                name: "output".to_string(),
                reason: "network must end in a flat activation".to_string(),
            }),
        }
    }

    /// Backward pass from a logit gradient; one gradient slot per layer.
    pub fn backward(&self, caches: &[StepCache], grad_logits: Array1<f64>) -> Vec<LayerGrads> {
        let mut grads = vec![LayerGrads::None; self.layers.len()];
        let mut flat_grad = Some(grad_logits);
        let mut map_grad: Option<Map4> = None;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Dense(l), StepCache::Dense(c)) => {
                    let g = flat_grad.take().expect("flat gradient");
                    let (gx, gw, gb) = l.backward(c, g.view());
                    grads[i] = LayerGrads::Dense(gw, gb);
                    flat_grad = Some(gx);
                }
                (Layer::OrimHead(l), StepCache::Orim(c)) => {
                    let g = flat_grad.take().expect("flat gradient");
                    map_grad = Some(l.backward(c, &g));
                }
                (Layer::FlattenHead(l), StepCache::Flatten(c)) => {
                    let g = flat_grad.take().expect("flat gradient");
                    map_grad = Some(l.backward(c, &g));
                }
                (Layer::Pool(l), StepCache::Pool(c)) => {
                    let g = map_grad.take().expect("map gradient");
                    map_grad = Some(l.backward(c, &g));
                }
                (Layer::Relu(l), StepCache::Relu(c)) => {
                    let g = map_grad.take().expect("map gradient");
                    map_grad = Some(l.backward(c, &g));
                }
                (Layer::Affine(l), StepCache::Affine(c)) => {
                    let g = map_grad.take().expect("map gradient");
                    let (gx, gs, gb) = l.backward(c, &g);
                    grads[i] = LayerGrads::Affine(gs, gb);
                    map_grad = Some(gx);
                }
                (Layer::GConv(l), StepCache::GConv(c)) => {
                    let g = map_grad.take().expect("map gradient");
                    let (gx, gf) = l.backward(c, &g);
                    grads[i] = LayerGrads::GConv(gf);
                    map_grad = Some(gx);
                }
                (Layer::Lift(l), StepCache::Lift(c)) => {
                    let g = map_grad.take().expect("map gradient");
                    let (_, gf) = l.backward(c, &g);
                    grads[i] = LayerGrads::Lift(gf);
                }
                _ => unreachable!("cache kind always matches layer kind"),
            }
        }
        grads
    }

    /// Loss and logits for one labeled image.
    pub fn loss_on(&self, image: ArrayView2<'_, f64>, label: usize) -> Result<(f64, Array1<f64>)> {
        let (logits, _) = self.forward(image)?;
        let (loss, _) = crate::layers::softmax_cross_entropy(logits.view(), label);
        Ok((loss, logits))
    }

    pub fn predict(&self, image: ArrayView2<'_, f64>) -> Result<usize> {
        let (logits, _) = self.forward(image)?;
        Ok(argmax(&logits))
    }

    /// Visit every parameter slice in declaration order.
    fn param_arrays(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Lift(l) => out.push(l.filters.as_slice().unwrap()),
                Layer::GConv(l) => out.push(l.filters.as_slice().unwrap()),
                Layer::Affine(l) => {
                    out.push(l.scale.as_slice().unwrap());
                    out.push(l.shift.as_slice().unwrap());
                }
                Layer::Dense(l) => {
                    out.push(l.weight.as_slice().unwrap());
                    out.push(l.bias.as_slice().unwrap());
                }
                _ => {}
            }
        }
        out
    }

    fn param_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Lift(l) => out.push(l.filters.as_slice_mut().unwrap()),
                Layer::GConv(l) => out.push(l.filters.as_slice_mut().unwrap()),
                Layer::Affine(l) => {
                    out.push(l.scale.as_slice_mut().unwrap());
                    out.push(l.shift.as_slice_mut().unwrap());
                }
                Layer::Dense(l) => {
                    out.push(l.weight.as_slice_mut().unwrap());
                    out.push(l.bias.as_slice_mut().unwrap());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_arrays().iter().map(|s| s.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_arrays() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(GcnnError::ShapeMismatch {
                got: vec![flat.len()],
                want: format!("{} parameters", self.param_count()),
            });
        }
        let mut offset = 0;
        for s in self.param_arrays_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Flatten per-layer gradients into the parameter order.
    pub fn grads_to_flat(&self, grads: &[LayerGrads]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (layer, g) in self.layers.iter().zip(grads) {
            match (layer, g) {
                (Layer::Lift(_), LayerGrads::Lift(a)) => {
                    out.extend_from_slice(a.as_slice().expect("lift grad contiguous"))
                }
                (Layer::GConv(_), LayerGrads::GConv(a)) => {
                    out.extend_from_slice(a.as_slice().expect("gconv grad contiguous"))
                }
                (Layer::Affine(_), LayerGrads::Affine(s, b)) => {
                    out.extend_from_slice(s.as_slice().expect("scale grad contiguous"));
                    out.extend_from_slice(b.as_slice().expect("shift grad contiguous"));
                }
                (Layer::Dense(_), LayerGrads::Dense(w, b)) => {
                    out.extend_from_slice(w.as_slice().expect("weight grad contiguous"));
                    out.extend_from_slice(b.as_slice().expect("bias grad contiguous"));
                }
                (Layer::Lift(l), LayerGrads::None) => {
                    out.extend(std::iter::repeat(0.0).take(l.filters.len()))
                }
                (Layer::GConv(l), LayerGrads::None) => {
                    out.extend(std::iter::repeat(0.0).take(l.filters.len()))
                }
                (Layer::Affine(l), LayerGrads::None) => {
                    out.extend(std::iter::repeat(0.0).take(l.scale.len() + l.shift.len()))
                }
                (Layer::Dense(l), LayerGrads::None) => {
                    out.extend(std::iter::repeat(0.0).take(l.weight.len() + l.bias.len()))
                }
                _ => {}
            }
        }
        out
    }

    /// Write `manifest.json` and `params.bin` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::json!({
            "schema": "orim/1",
            "kind": "checkpoint",
            "config": self.config,
            "params_file": "params.bin",
            "param_count": self.param_count(),
        });
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        let mut file = fs::File::create(dir.join("params.bin"))?;
        for v in self.flat_params() {
            file.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Model> {
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest["schema"] != "orim/1" || manifest["kind"] != "checkpoint" {
            return Err(GcnnError::CheckpointFormat(
                "not an orim/1 checkpoint manifest".to_string(),
            ));
        }
        let config: ModelConfig = serde_json::from_value(manifest["config"].clone())?;
        let mut model = build_model(config)?;
        let mut bytes = Vec::new();
        fs::File::open(dir.join("params.bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() != model.param_count() * 8 {
            return Err(GcnnError::CheckpointFormat(format!(
                "parameter blob holds {} bytes, expected {}",
                bytes.len(),
                model.param_count() * 8
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_flat_params(&params)?;
        Ok(model)
    }
}

impl Clone for LayerGrads {
    fn clone(&self) -> Self {
        match self {
            LayerGrads::Lift(a) => LayerGrads::Lift(a.clone()),
            LayerGrads::GConv(a) => LayerGrads::GConv(a.clone()),
            LayerGrads::Affine(s, b) => LayerGrads::Affine(s.clone(), b.clone()),
            LayerGrads::Dense(w, b) => LayerGrads::Dense(w.clone(), b.clone()),
            LayerGrads::None => LayerGrads::None,
        }
    }
}

pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
