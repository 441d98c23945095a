//! The COBRA network: a small strided convolutional backbone producing a
//! single-scale feature map, and a recurrent snake head that samples the map
//! at the current contour vertices and predicts per-vertex offsets through a
//! stack of dilated 1-D convolutions.

mod checkpoint;

pub use checkpoint::{check_shapes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{init_contour, Polyline};
use crate::losses::LossConfig;
use crate::tensor::{NdArray, Tape, Var};

/// Architecture hyperparameters and ablation toggles.
#[derive(Clone, Debug, PartialEq)]
pub struct SnakeConfig {
    /// Contour vertex count.
    pub vertices: usize,
    /// Snake refinement iterations.
    pub iterations: usize,
    /// Dilation schedule of the head's hidden layers (kernel size 3 each).
    pub dilations: Vec<usize>,
    /// Hidden channel width of the head.
    pub head_width: usize,
    /// Backbone stage widths: one entry per stride-2 stage, plus optionally a
    /// final entry for the same-resolution pair's output width.
    pub backbone_channels: Vec<usize>,
    /// Total downsampling factor of the feature map; a power of two.
    pub feature_stride: usize,
    /// Dropout probability applied after every backbone stage and every head
    /// hidden layer in train and mc modes.
    pub dropout_rate: f64,
    /// Concatenate (x,y) to each vertex's sampled features.
    pub use_coord_features: bool,
    /// Sever the gradient through vertex coordinates at each iteration start.
    pub gradient_stopping: bool,
    /// One head parameter set reused across iterations (vs one per iteration).
    pub shared_weights: bool,
    /// Sum the loss over every iteration's contour instead of the last only.
    pub deep_supervision: bool,
    pub loss: LossConfig,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        SnakeConfig {
            vertices: 64,
            iterations: 4,
            dilations: vec![1, 3, 9, 9, 3, 1],
            head_width: 64,
            backbone_channels: vec![16, 32, 64],
            feature_stride: 4,
            dropout_rate: 0.2,
            use_coord_features: true,
            gradient_stopping: true,
            shared_weights: true,
            deep_supervision: true,
            loss: LossConfig::default(),
        }
    }
}

impl SnakeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vertices < 2 {
            return Err(Error::invalid(format!("need at least 2 vertices, got {}", self.vertices)));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("need at least 1 iteration"));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d < 1) {
            return Err(Error::invalid(format!(
                "dilation schedule must be non-empty with entries >= 1, got {:?}",
                self.dilations
            )));
        }
        if self.head_width < 1 {
            return Err(Error::invalid("head width must be positive"));
        }
        if !self.feature_stride.is_power_of_two() {
            return Err(Error::invalid(format!(
                "feature stride must be a power of two, got {}",
                self.feature_stride
            )));
        }
        let n_down = self.feature_stride.trailing_zeros() as usize;
        let n_ch = self.backbone_channels.len();
        if n_ch < n_down.max(1) || n_ch > n_down + 1 {
            return Err(Error::invalid(format!(
                "backbone_channels needs {} or {} entries for stride {}, got {}",
                n_down.max(1),
                n_down + 1,
                self.feature_stride,
                n_ch
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        self.loss.validate()
    }

    /// Channel count of the backbone's output feature map.
    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().expect("validated non-empty")
    }

    /// Input channel count of the head's first layer.
    pub fn head_in_channels(&self) -> usize {
        self.feature_channels() + if self.use_coord_features { 2 } else { 0 }
    }

    fn n_down(&self) -> usize {
        self.feature_stride.trailing_zeros() as usize
    }
}

/// Execution mode: dropout is active in `Train` and `Mc`, identity in `Eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    Mc,
}

impl Mode {
    pub fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::Mc)
    }
}

/// Named parameter tensors with deterministic (lexicographic) iteration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, NdArray>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: NdArray) {
        self.tensors.insert(path.into(), value);
    }

    pub fn get(&self, path: &str) -> Option<&NdArray> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut NdArray> {
        self.tensors.get_mut(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Lexicographic by path.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &NdArray)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NdArray)> {
        self.tensors.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(NdArray::len).sum()
    }

    /// Registers every tensor as a leaf on a tape.
    pub fn to_vars(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            map: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles for every parameter tensor of one forward pass.
pub struct ParamVars {
    map: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, path: &str) -> Result<Var> {
        self.map
            .get(path)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter `{path}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }
}

/// Backbone stage descriptions: (path prefix, out channels, in channels,
/// stride).
fn backbone_stages(cfg: &SnakeConfig) -> Vec<(String, usize, usize, usize)> {
    let n_down = cfg.n_down();
    let ch = &cfg.backbone_channels;
    let mut stages = Vec::new();
    let mut prev = 1;
    for (i, &c) in ch.iter().take(n_down).enumerate() {
        stages.push((format!("backbone.down{i}"), c, prev, 2));
        prev = c;
    }
    let c_out = cfg.feature_channels();
    stages.push(("backbone.same0".to_string(), c_out, prev, 1));
    stages.push(("backbone.same1".to_string(), c_out, c_out, 1));
    stages
}

fn head_prefix(cfg: &SnakeConfig, iteration: usize) -> String {
    if cfg.shared_weights {
        "head".to_string()
    } else {
        format!("head.iter{iteration}")
    }
}

/// Every parameter path with its shape, as fixed by the config.
pub fn param_shapes(cfg: &SnakeConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    cfg.validate()?;
    let mut shapes = BTreeMap::new();
    for (prefix, c_out, c_in, _stride) in backbone_stages(cfg) {
        shapes.insert(format!("{prefix}.weight"), vec![c_out, c_in, 3, 3]);
        shapes.insert(format!("{prefix}.bias"), vec![c_out]);
    }
    let head_sets = if cfg.shared_weights { 1 } else { cfg.iterations };
    for t in 0..head_sets {
        let prefix = if cfg.shared_weights {
            "head".to_string()
        } else {
            format!("head.iter{t}")
        };
        let mut c_in = cfg.head_in_channels();
        for i in 0..cfg.dilations.len() {
            shapes.insert(
                format!("{prefix}.layer{i}.weight"),
                vec![cfg.head_width, c_in, 3],
            );
            shapes.insert(format!("{prefix}.layer{i}.bias"), vec![cfg.head_width]);
            c_in = cfg.head_width;
        }
        shapes.insert(format!("{prefix}.proj.weight"), vec![2, c_in, 1]);
        shapes.insert(format!("{prefix}.proj.bias"), vec![2]);
    }
    Ok(shapes)
}

/// He fan-in normal initialization for weights, zeros for biases, and a
/// zero-initialized final projection so the first forward leaves the initial
/// contour unchanged. The RNG is consumed in lexicographic path order.
pub fn init_params(cfg: &SnakeConfig, rng: &mut impl Rng) -> Result<ModelParams> {
    let shapes = param_shapes(cfg)?;
    let mut params = ModelParams::new();
    for (path, shape) in shapes {
        let tensor = if path.ends_with(".bias") || path.contains(".proj.") {
            NdArray::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            NdArray::from_fn(&shape, |_| normal.sample(rng))
        };
        params.insert(path, tensor);
    }
    Ok(params)
}

/// Runs the backbone on a [1,H,W] image node, producing the [C,H/s,W/s]
/// feature map.
pub fn backbone_forward(
    tape: &Tape,
    image: Var,
    params: &ParamVars,
    cfg: &SnakeConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Var> {
    let shape = tape.shape_of(image);
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::shape(format!(
            "backbone input must be [1,H,W], got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    if h % cfg.feature_stride != 0 || w % cfg.feature_stride != 0 {
        return Err(Error::invalid(format!(
            "image size {h}x{w} not divisible by feature stride {}",
            cfg.feature_stride
        )));
    }
    let mut x = image;
    for (prefix, _c_out, _c_in, stride) in backbone_stages(cfg) {
        let weight = params.get(&format!("{prefix}.weight"))?;
        let bias = params.get(&format!("{prefix}.bias"))?;
        x = tape.conv2d(x, weight, stride, 1)?;
        x = tape.add_bias(x, bias)?;
        x = tape.relu(x);
        x = tape.dropout(x, cfg.dropout_rate, mode.dropout_active(), rng)?;
    }
    Ok(x)
}

/// One snake refinement: sample features at the vertices, optionally append
/// coordinate features, run the dilated 1-D stack, and add the predicted
/// offsets to the (possibly gradient-stopped) coordinates, clamping to [0,1].
/// Returns (offsets, refined contour).
#[allow(clippy::too_many_arguments)]
pub fn snake_step(
    tape: &Tape,
    features: Var,
    contour: Var,
    params: &ParamVars,
    cfg: &SnakeConfig,
    mode: Mode,
    rng: &mut impl Rng,
    iteration: usize,
) -> Result<(Var, Var)> {
    let cshape = tape.shape_of(contour);
    if cshape != [cfg.vertices, 2] {
        return Err(Error::shape(format!(
            "contour shape {cshape:?} does not match configured {} vertices",
            cfg.vertices
        )));
    }
    let coords = if cfg.gradient_stopping {
        tape.stop_gradient(contour)
    } else {
        contour
    };
    let sampled = if cfg.gradient_stopping {
        let pts = Polyline::from_array(&tape.value(coords))?;
        tape.bilinear_sample(features, &pts)?
    } else {
        tape.bilinear_sample_diff(features, coords)?
    };
    let feats = if cfg.use_coord_features {
        tape.concat_cols(sampled, coords)?
    } else {
        sampled
    };
    let mut x = tape.transpose2(feats)?;
    let prefix = head_prefix(cfg, iteration);
    for (i, &dilation) in cfg.dilations.iter().enumerate() {
        let weight = params.get(&format!("{prefix}.layer{i}.weight"))?;
        let bias = params.get(&format!("{prefix}.layer{i}.bias"))?;
        x = tape.conv1d_dilated(x, weight, dilation)?;
        x = tape.add_bias(x, bias)?;
        x = tape.relu(x);
        x = tape.dropout(x, cfg.dropout_rate, mode.dropout_active(), rng)?;
    }
    let weight = params.get(&format!("{prefix}.proj.weight"))?;
    let bias = params.get(&format!("{prefix}.proj.bias"))?;
    x = tape.conv1d_dilated(x, weight, 1)?;
    x = tape.add_bias(x, bias)?;
    let offsets = tape.transpose2(x)?;
    let shifted = tape.add(coords, offsets)?;
    let refined = tape.clamp01(shifted);
    Ok((offsets, refined))
}

/// Full forward pass: backbone once, then `iterations` snake steps from the
/// initial contour. Returns every iteration's contour node; the last is the
/// prediction.
pub fn forward(
    tape: &Tape,
    image: &NdArray,
    params: &ParamVars,
    cfg: &SnakeConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let image_node = tape.leaf(image.clone());
    let features = backbone_forward(tape, image_node, params, cfg, mode, rng)?;
    let mut contour = tape.leaf(init_contour(cfg.vertices)?.to_array());
    let mut outputs = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let (_offsets, refined) =
            snake_step(tape, features, contour, params, cfg, mode, rng, t)?;
        outputs.push(refined);
        contour = refined;
    }
    Ok(outputs)
}

/// Convenience wrapper: runs a forward pass on a fresh tape and returns the
/// per-iteration contours as plain polylines.
pub fn predict(
    image: &NdArray,
    params: &ModelParams,
    cfg: &SnakeConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Vec<Polyline>> {
    let tape = Tape::new();
    let vars = params.to_vars(&tape);
    let contours = forward(&tape, image, &vars, cfg, mode, rng)?;
    contours
        .into_iter()
        .map(|c| Polyline::from_array(&tape.value(c)))
        .collect()
}
