//! The recurrent convolutional encoder-decoder.
//!
//! Encoding happens once per sequence; every subsequent step multiplies the
//! pose units by the transform matrix selected by that step's action and
//! decodes a frame from (identity, pose). Predictions are never fed back as
//! inputs, so the latent trajectory depends only on the input image and the
//! action string.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Rotation control input, one per time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Cw,
    Noop,
    Ccw,
}

impl Action {
    /// Wire form: [1 0 0] clockwise, [0 1 0] no-op, [0 0 1] counter-clockwise.
    pub fn one_hot(self) -> [f32; 3] {
        match self {
            Action::Cw => [1.0, 0.0, 0.0],
            Action::Noop => [0.0, 1.0, 0.0],
            Action::Ccw => [0.0, 0.0, 1.0],
        }
    }

    /// Index into the transform bank (and into the one-hot wire form).
    pub fn index(self) -> usize {
        match self {
            Action::Cw => 0,
            Action::Noop => 1,
            Action::Ccw => 2,
        }
    }

    /// View-index delta: clockwise decrements, counter-clockwise increments.
    pub fn view_delta(self) -> i64 {
        match self {
            Action::Cw => -1,
            Action::Noop => 0,
            Action::Ccw => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Action> {
        match s.to_ascii_uppercase().as_str() {
            "CW" => Ok(Action::Cw),
            "NOOP" => Ok(Action::Noop),
            "CCW" => Ok(Action::Ccw),
            other => Err(Error::arg(format!(
                "unknown action {other:?} (expected CW, NOOP or CCW)"
            ))),
        }
    }
}

/// Parses an action string like "CWx6", "CW,CCW", "CCWx2,NOOPx3".
pub fn parse_action_string(s: &str) -> Result<Vec<Action>> {
    let mut out = Vec::new();
    for token in s.split(',') {
        let token = token.trim();
        if token.is_empty() {
            return Err(Error::arg("empty action token"));
        }
        let (name, reps) = match token.split_once(['x', 'X']) {
            Some((name, n)) => {
                let reps: usize = n
                    .parse()
                    .map_err(|_| Error::arg(format!("bad repeat count in {token:?}")))?;
                (name, reps)
            }
            None => (token, 1),
        };
        if reps == 0 || reps > 10_000 {
            return Err(Error::arg(format!("repeat count out of range in {token:?}")));
        }
        let action = Action::parse(name)?;
        out.extend(std::iter::repeat(action).take(reps));
    }
    if out.is_empty() {
        return Err(Error::arg("empty action string"));
    }
    Ok(out)
}

/// The bottleneck split: identity units stay fixed along a rollout, pose
/// units move under the action transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub identity: Vec<f32>,
    pub pose: Vec<f32>,
}

impl LatentCode {
    /// Convex combination: beta * a + (1 - beta) * b. Endpoints are returned
    /// as exact copies so interpolation rows at beta 0 and 1 reproduce the
    /// originals bit for bit.
    pub fn lerp(a: &LatentCode, b: &LatentCode, beta: f32) -> LatentCode {
        if beta == 1.0 {
            return a.clone();
        }
        if beta == 0.0 {
            return b.clone();
        }
        let mix = |x: &[f32], y: &[f32]| -> Vec<f32> {
            x.iter()
                .zip(y)
                .map(|(&u, &v)| beta * u + (1.0 - beta) * v)
                .collect()
        };
        LatentCode {
            identity: mix(&a.identity, &b.identity),
            pose: mix(&a.pose, &b.pose),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    /// Output channels of each stride-2 encoder conv; the decoder mirrors it.
    pub conv_channels: Vec<usize>,
    /// Fully-connected widths between the conv stack and the latent split.
    pub fc_sizes: Vec<usize>,
    pub identity_units: usize,
    pub pose_units: usize,
    /// Decode a foreground-mask branch next to the image branch.
    pub mask_stream: bool,
}

impl ModelConfig {
    /// Arc-regime preset: two conv layers and one hidden FC.
    pub fn faces() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 64,
            conv_channels: vec![64, 128],
            fc_sizes: vec![1024],
            identity_units: 512,
            pose_units: 128,
            mask_stream: false,
        }
    }

    /// Wrap-regime preset: three conv layers, two hidden FCs, mask stream on.
    pub fn chairs() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 64,
            conv_channels: vec![64, 128, 256],
            fc_sizes: vec![1024, 1024],
            identity_units: 512,
            pose_units: 128,
            mask_stream: true,
        }
    }

    /// Grayscale wrap-regime preset (single-channel input and output).
    pub fn cars() -> Self {
        ModelConfig {
            input_channels: 1,
            ..Self::chairs()
        }
    }

    /// A slimmed-down wrap config that trains in seconds; used by tests.
    pub fn desk(input_size: usize, channels: usize) -> Self {
        ModelConfig {
            input_channels: channels,
            input_size,
            conv_channels: vec![16, 32, 48],
            fc_sizes: vec![192],
            identity_units: 96,
            pose_units: 32,
            mask_stream: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::config("model needs at least one conv layer"));
        }
        if self.fc_sizes.is_empty() {
            return Err(Error::config("model needs at least one fully-connected layer"));
        }
        if self.identity_units == 0 || self.pose_units == 0 {
            return Err(Error::config("identity and pose widths must be positive"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input channels must be positive"));
        }
        let down = 1usize << self.conv_channels.len();
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::config(format!(
                "input size {} must be divisible by 2^{} so stride-2 halving is exact",
                self.input_size,
                self.conv_channels.len()
            )));
        }
        if self.input_size / down == 0 {
            return Err(Error::config("input size too small for the conv ladder"));
        }
        Ok(())
    }

    pub fn latent_units(&self) -> usize {
        self.identity_units + self.pose_units
    }

    /// Spatial side of the deepest conv feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.conv_channels.len()
    }

    fn bottleneck_elems(&self) -> usize {
        let s = self.bottleneck_size();
        self.conv_channels.last().unwrap() * s * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All learnable tensors. The classifier head only exists on models trained
/// by the supervised baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub enc_conv: Vec<ConvLayer>,
    pub enc_fc: Vec<AffineLayer>,
    pub latent_proj: AffineLayer,
    /// Pose transforms indexed like `Action::index`: [cw, noop, ccw].
    pub action: [Tensor; 3],
    pub dec_fc: Vec<AffineLayer>,
    pub dec_conv: Vec<ConvLayer>,
    pub img_head: ConvLayer,
    pub mask_head: Option<ConvLayer>,
    pub classifier: Option<AffineLayer>,
}

/// Weight initialization scheme for conv and affine layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Gaussian with a fixed std.
    Gaussian(f64),
    /// Gaussian with std sqrt(2 / fan_in). A fixed small std starves the
    /// bottleneck of input signal and training stalls on the dataset mean;
    /// fan-in scaling keeps activations near input magnitude at any depth.
    FanIn,
}

pub struct InitOpts {
    pub weights: WeightInit,
    /// Std of the Gaussian perturbation added to the identity-initialized
    /// action transforms. Zero keeps them exactly identity.
    pub action_noise_std: f64,
}

impl Default for InitOpts {
    fn default() -> Self {
        InitOpts {
            weights: WeightInit::FanIn,
            action_noise_std: 0.01,
        }
    }
}

impl InitOpts {
    /// Fixed-std Gaussian weights (the identity-action noise keeps its default).
    pub fn gaussian(std: f64) -> Self {
        InitOpts {
            weights: WeightInit::Gaussian(std),
            ..Default::default()
        }
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, &InitOpts::default())
    }

    pub fn init_with(config: &ModelConfig, seed: u64, opts: &InitOpts) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std_for = |fan_in: usize| match opts.weights {
            WeightInit::Gaussian(std) => std,
            WeightInit::FanIn => (2.0 / fan_in as f64).sqrt(),
        };
        let conv = |cout: usize, cin: usize, rng: &mut rand_chacha::ChaCha8Rng| ConvLayer {
            kernel: Tensor::randn(&[cout, cin, 5, 5], std_for(cin * 25), rng),
            bias: Tensor::zeros(&[cout]),
        };
        let affine = |dout: usize, din: usize, rng: &mut rand_chacha::ChaCha8Rng| AffineLayer {
            weight: Tensor::randn(&[dout, din], std_for(din), rng),
            bias: Tensor::zeros(&[dout]),
        };

        let mut enc_conv = Vec::new();
        let mut cin = config.input_channels;
        for &cout in &config.conv_channels {
            enc_conv.push(conv(cout, cin, &mut rng));
            cin = cout;
        }

        let mut enc_fc = Vec::new();
        let mut width = config.bottleneck_elems();
        for &w in &config.fc_sizes {
            enc_fc.push(affine(w, width, &mut rng));
            width = w;
        }

        let latent_proj = affine(config.latent_units(), width, &mut rng);

        let action = std::array::from_fn(|_| {
            let mut m = Tensor::eye(config.pose_units);
            if opts.action_noise_std > 0.0 {
                let noise = Tensor::randn(m.shape(), opts.action_noise_std, &mut rng);
                for (v, n) in m.data_mut().iter_mut().zip(noise.data()) {
                    *v += n;
                }
            }
            m
        });

        let mut dec_fc = Vec::new();
        let mut width = config.latent_units();
        for &w in config.fc_sizes.iter().rev() {
            dec_fc.push(affine(w, width, &mut rng));
            width = w;
        }
        dec_fc.push(affine(config.bottleneck_elems(), width, &mut rng));

        let n = config.conv_channels.len();
        let mut dec_conv = Vec::new();
        for i in 0..n.saturating_sub(1) {
            let from = config.conv_channels[n - 1 - i];
            let to = config.conv_channels[n - 2 - i];
            dec_conv.push(conv(to, from, &mut rng));
        }

        let first = config.conv_channels[0];
        let img_head = conv(config.input_channels, first, &mut rng);
        let mask_head = config.mask_stream.then(|| conv(1, first, &mut rng));

        Ok(ModelParams {
            config: config.clone(),
            enc_conv,
            enc_fc,
            latent_proj,
            action,
            dec_fc,
            dec_conv,
            img_head,
            mask_head,
            classifier: None,
        })
    }

    /// Attaches an untrained classifier head (`classes`-way) over the
    /// identity units; used by the supervised baseline.
    pub fn attach_classifier(&mut self, classes: usize, seed: u64) -> Result<()> {
        use rand::SeedableRng;
        if classes < 2 {
            return Err(Error::arg("classifier needs at least two classes"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = (2.0 / self.config.identity_units as f64).sqrt();
        self.classifier = Some(AffineLayer {
            weight: Tensor::randn(&[classes, self.config.identity_units], std, &mut rng),
            bias: Tensor::zeros(&[classes]),
        });
        Ok(())
    }

    /// Canonical (name, tensor) walk. Checkpoints, the optimizer and graph
    /// binding all follow this order, which is what makes runs reproducible.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, l) in self.enc_conv.iter().enumerate() {
            out.push((format!("enc.conv{i}.kernel"), &l.kernel));
            out.push((format!("enc.conv{i}.bias"), &l.bias));
        }
        for (i, l) in self.enc_fc.iter().enumerate() {
            out.push((format!("enc.fc{i}.weight"), &l.weight));
            out.push((format!("enc.fc{i}.bias"), &l.bias));
        }
        out.push(("latent.weight".into(), &self.latent_proj.weight));
        out.push(("latent.bias".into(), &self.latent_proj.bias));
        out.push(("action.cw".into(), &self.action[0]));
        out.push(("action.noop".into(), &self.action[1]));
        out.push(("action.ccw".into(), &self.action[2]));
        for (i, l) in self.dec_fc.iter().enumerate() {
            out.push((format!("dec.fc{i}.weight"), &l.weight));
            out.push((format!("dec.fc{i}.bias"), &l.bias));
        }
        for (i, l) in self.dec_conv.iter().enumerate() {
            out.push((format!("dec.conv{i}.kernel"), &l.kernel));
            out.push((format!("dec.conv{i}.bias"), &l.bias));
        }
        out.push(("head.img.kernel".into(), &self.img_head.kernel));
        out.push(("head.img.bias".into(), &self.img_head.bias));
        if let Some(m) = &self.mask_head {
            out.push(("head.mask.kernel".into(), &m.kernel));
            out.push(("head.mask.bias".into(), &m.bias));
        }
        if let Some(c) = &self.classifier {
            out.push(("classifier.weight".into(), &c.weight));
            out.push(("classifier.bias".into(), &c.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, l) in self.enc_conv.iter_mut().enumerate() {
            out.push((format!("enc.conv{i}.kernel"), &mut l.kernel));
            out.push((format!("enc.conv{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.enc_fc.iter_mut().enumerate() {
            out.push((format!("enc.fc{i}.weight"), &mut l.weight));
            out.push((format!("enc.fc{i}.bias"), &mut l.bias));
        }
        out.push(("latent.weight".into(), &mut self.latent_proj.weight));
        out.push(("latent.bias".into(), &mut self.latent_proj.bias));
        let [cw, noop, ccw] = &mut self.action;
        out.push(("action.cw".into(), cw));
        out.push(("action.noop".into(), noop));
        out.push(("action.ccw".into(), ccw));
        for (i, l) in self.dec_fc.iter_mut().enumerate() {
            out.push((format!("dec.fc{i}.weight"), &mut l.weight));
            out.push((format!("dec.fc{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.dec_conv.iter_mut().enumerate() {
            out.push((format!("dec.conv{i}.kernel"), &mut l.kernel));
            out.push((format!("dec.conv{i}.bias"), &mut l.bias));
        }
        out.push(("head.img.kernel".into(), &mut self.img_head.kernel));
        out.push(("head.img.bias".into(), &mut self.img_head.bias));
        if let Some(m) = &mut self.mask_head {
            out.push(("head.mask.kernel".into(), &mut m.kernel));
            out.push(("head.mask.bias".into(), &mut m.bias));
        }
        if let Some(c) = &mut self.classifier {
            out.push(("classifier.weight".into(), &mut c.weight));
            out.push(("classifier.bias".into(), &mut c.bias));
        }
        out
    }

    /// Rebuilds params from checkpoint records; names and shapes must match
    /// the given config exactly (the classifier head is inferred from the
    /// record set).
    pub fn from_named(config: &ModelConfig, records: &[(String, Tensor)]) -> Result<Self> {
        let mut template = ModelParams::init_with(
            config,
            0,
            &InitOpts {
                weights: WeightInit::Gaussian(0.0),
                action_noise_std: 0.0,
            },
        )?;
        if records.iter().any(|(n, _)| n == "classifier.weight") {
            let classes = records
                .iter()
                .find(|(n, _)| n == "classifier.weight")
                .map(|(_, t)| t.shape()[0])
                .unwrap();
            template.attach_classifier(classes.max(2), 0)?;
        }

        let mut expected: std::collections::BTreeMap<String, Vec<usize>> = template
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for (name, tensor) in records {
            match expected.remove(name) {
                None => {
                    return Err(Error::arg(format!(
                        "unexpected tensor {name:?} for this model config"
                    )))
                }
                Some(shape) if shape != tensor.shape() => {
                    return Err(Error::shape(format!(
                        "tensor {name:?} has shape {:?}, config expects {:?}",
                        tensor.shape(),
                        shape
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(missing) = expected.keys().next() {
            return Err(Error::arg(format!("checkpoint is missing tensor {missing:?}")));
        }

        let lookup: std::collections::BTreeMap<&str, &Tensor> = records
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        for (name, slot) in template.named_tensors_mut() {
            *slot = lookup[name.as_str()].clone();
        }
        Ok(template)
    }
}

/// Node ids of every parameter bound into a tape, in `named_tensors` order.
pub struct GraphParams {
    pub config: ModelConfig,
    pub flat: Vec<NodeId>,
    enc_conv: Vec<(NodeId, NodeId)>,
    enc_fc: Vec<(NodeId, NodeId)>,
    latent_proj: (NodeId, NodeId),
    action: [NodeId; 3],
    dec_fc: Vec<(NodeId, NodeId)>,
    dec_conv: Vec<(NodeId, NodeId)>,
    img_head: (NodeId, NodeId),
    mask_head: Option<(NodeId, NodeId)>,
    classifier: Option<(NodeId, NodeId)>,
}

/// How a parameter tensor enters the tape.
pub enum BindMode {
    /// Constant: no gradient tracked.
    Frozen,
    /// Trainable: gradient filled by backward.
    Trainable,
}

impl ModelParams {
    pub fn bind(&self, tape: &mut Tape, mode: BindMode) -> GraphParams {
        self.bind_with(tape, |_name| match mode {
            BindMode::Frozen => None,
            BindMode::Trainable => Some(true),
        })
    }

    /// Binds every tensor, consulting `policy` per name: `Some(true)` makes a
    /// trainable param, `Some(false)`/`None` a frozen leaf.
    pub fn bind_with(&self, tape: &mut Tape, mut policy: impl FnMut(&str) -> Option<bool>) -> GraphParams {
        let mut flat = Vec::new();
        let mut ins = |tape: &mut Tape, name: &str, t: &Tensor| -> NodeId {
            let id = if policy(name).unwrap_or(false) {
                tape.param(t.clone())
            } else {
                tape.leaf(t.clone())
            };
            flat.push(id);
            id
        };

        let enc_conv = self
            .enc_conv
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    ins(tape, &format!("enc.conv{i}.kernel"), &l.kernel),
                    ins(tape, &format!("enc.conv{i}.bias"), &l.bias),
                )
            })
            .collect();
        let enc_fc = self
            .enc_fc
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    ins(tape, &format!("enc.fc{i}.weight"), &l.weight),
                    ins(tape, &format!("enc.fc{i}.bias"), &l.bias),
                )
            })
            .collect();
        let latent_proj = (
            ins(tape, "latent.weight", &self.latent_proj.weight),
            ins(tape, "latent.bias", &self.latent_proj.bias),
        );
        let action = [
            ins(tape, "action.cw", &self.action[0]),
            ins(tape, "action.noop", &self.action[1]),
            ins(tape, "action.ccw", &self.action[2]),
        ];
        let dec_fc = self
            .dec_fc
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    ins(tape, &format!("dec.fc{i}.weight"), &l.weight),
                    ins(tape, &format!("dec.fc{i}.bias"), &l.bias),
                )
            })
            .collect();
        let dec_conv = self
            .dec_conv
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    ins(tape, &format!("dec.conv{i}.kernel"), &l.kernel),
                    ins(tape, &format!("dec.conv{i}.bias"), &l.bias),
                )
            })
            .collect();
        let img_head = (
            ins(tape, "head.img.kernel", &self.img_head.kernel),
            ins(tape, "head.img.bias", &self.img_head.bias),
        );
        let mask_head = self.mask_head.as_ref().map(|m| {
            (
                ins(tape, "head.mask.kernel", &m.kernel),
                ins(tape, "head.mask.bias", &m.bias),
            )
        });
        let classifier = self.classifier.as_ref().map(|c| {
            (
                ins(tape, "classifier.weight", &c.weight),
                ins(tape, "classifier.bias", &c.bias),
            )
        });

        GraphParams {
            config: self.config.clone(),
            flat,
            enc_conv,
            enc_fc,
            latent_proj,
            action,
            dec_fc,
            dec_conv,
            img_head,
            mask_head,
            classifier,
        }
    }
}

/// Image batch node -> (identity, pose) nodes. Input must be
/// B x C x input_size x input_size.
pub fn encode_graph(tape: &mut Tape, g: &GraphParams, image: NodeId) -> Result<(NodeId, NodeId)> {
    let cfg = &g.config;
    let shape = tape.value(image).shape().to_vec();
    if shape.len() != 4
        || shape[1] != cfg.input_channels
        || shape[2] != cfg.input_size
        || shape[3] != cfg.input_size
    {
        return Err(Error::shape(format!(
            "encoder expects Bx{}x{}x{} input, got {:?}",
            cfg.input_channels, cfg.input_size, cfg.input_size, shape
        )));
    }
    let batch = shape[0];

    let mut x = image;
    for &(kernel, bias) in &g.enc_conv {
        x = tape.conv2d(x, kernel, bias, 2)?;
        x = tape.relu(x);
    }
    let mut x = tape.reshape(x, &[batch, cfg.bottleneck_elems()])?;
    for &(weight, bias) in &g.enc_fc {
        x = tape.affine(x, weight, Some(bias))?;
        x = tape.relu(x);
    }
    // the split projection is linear: no nonlinearity after it
    let latent = tape.affine(x, g.latent_proj.0, Some(g.latent_proj.1))?;
    let id = tape.narrow(latent, 0, cfg.identity_units)?;
    let pose = tape.narrow(latent, cfg.identity_units, cfg.pose_units)?;
    Ok((id, pose))
}

/// pose -> W_action * pose. Pure matrix selection: no bias, no nonlinearity.
pub fn apply_action_graph(
    tape: &mut Tape,
    g: &GraphParams,
    pose: NodeId,
    action: Action,
) -> Result<NodeId> {
    tape.affine(pose, g.action[action.index()], None)
}

/// (identity, pose) -> (image, mask) nodes, both sigmoid-squashed. The image
/// and mask branches share every decoder stage except the final conv.
pub fn decode_graph(
    tape: &mut Tape,
    g: &GraphParams,
    id: NodeId,
    pose: NodeId,
) -> Result<(NodeId, Option<NodeId>)> {
    let cfg = &g.config;
    let batch = tape.value(id).shape()[0];
    let mut x = tape.concat(id, pose)?;
    for &(weight, bias) in &g.dec_fc {
        x = tape.affine(x, weight, Some(bias))?;
        x = tape.relu(x);
    }
    let s = cfg.bottleneck_size();
    let mut x = tape.reshape(x, &[batch, *cfg.conv_channels.last().unwrap(), s, s])?;
    for &(kernel, bias) in &g.dec_conv {
        x = tape.upsample2x(x)?;
        x = tape.conv2d(x, kernel, bias, 1)?;
        x = tape.relu(x);
    }
    let shared = tape.upsample2x(x)?;
    let img = tape.conv2d(shared, g.img_head.0, g.img_head.1, 1)?;
    let img = tape.sigmoid(img);
    let mask = match g.mask_head {
        Some((kernel, bias)) => {
            let m = tape.conv2d(shared, kernel, bias, 1)?;
            Some(tape.sigmoid(m))
        }
        None => None,
    };
    Ok((img, mask))
}

/// Per-step prediction nodes of a rollout.
pub struct StepNodes {
    pub pose: NodeId,
    pub image: NodeId,
    pub mask: Option<NodeId>,
}

/// Encode once, then transform-and-decode for every action. Predictions are
/// not fed forward; step t sees only the latent state.
pub fn rollout_graph(
    tape: &mut Tape,
    g: &GraphParams,
    image: NodeId,
    actions: &[Action],
) -> Result<Vec<StepNodes>> {
    if actions.is_empty() {
        return Err(Error::arg("rollout needs at least one action"));
    }
    let (id, mut pose) = encode_graph(tape, g, image)?;
    let mut steps = Vec::with_capacity(actions.len());
    for &action in actions {
        pose = apply_action_graph(tape, g, pose, action)?;
        let (img, mask) = decode_graph(tape, g, id, pose)?;
        steps.push(StepNodes {
            pose,
            image: img,
            mask,
        });
    }
    Ok(steps)
}

/// Loss nodes produced by `sequence_loss_graph`.
pub struct LossNodes {
    pub total: NodeId,
    pub image: NodeId,
    pub mask: Option<NodeId>,
}

/// Sum over steps of ||y - y_hat||^2, plus lambda times the same for masks.
pub fn sequence_loss_graph(
    tape: &mut Tape,
    steps: &[StepNodes],
    image_targets: &[NodeId],
    mask_targets: Option<&[NodeId]>,
    lambda: f32,
) -> Result<LossNodes> {
    if steps.len() != image_targets.len() {
        return Err(Error::arg(format!(
            "sequence_loss: {} predictions vs {} targets",
            steps.len(),
            image_targets.len()
        )));
    }
    if let Some(m) = mask_targets {
        if m.len() != steps.len() {
            return Err(Error::arg(format!(
                "sequence_loss: {} predictions vs {} mask targets",
                steps.len(),
                m.len()
            )));
        }
    }
    let mut image_sum: Option<NodeId> = None;
    for (step, &target) in steps.iter().zip(image_targets) {
        let term = tape.sq_diff_sum(step.image, target)?;
        image_sum = Some(match image_sum {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let image_sum = image_sum.expect("non-empty step list");

    let mask_sum = match mask_targets {
        Some(targets) if steps[0].mask.is_some() => {
            let mut acc: Option<NodeId> = None;
            for (step, &target) in steps.iter().zip(targets) {
                let pred = step.mask.expect("mask stream present on every step");
                let term = tape.sq_diff_sum(pred, target)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            acc
        }
        _ => None,
    };

    let total = match mask_sum {
        Some(mask) => {
            let weighted = tape.scale(mask, lambda);
            tape.add(image_sum, weighted)?
        }
        None => image_sum,
    };
    Ok(LossNodes {
        total,
        image: image_sum,
        mask: mask_sum,
    })
}

/// Logits node for the supervised classifier baseline: encoder plus a linear
/// readout over the identity units.
pub fn classifier_logits_graph(tape: &mut Tape, g: &GraphParams, image: NodeId) -> Result<NodeId> {
    let (kernel, bias) = g
        .classifier
        .ok_or_else(|| Error::config("model has no classifier head"))?;
    let (id, _pose) = encode_graph(tape, g, image)?;
    tape.affine(id, kernel, Some(bias))
}

// ---- value-level API ------------------------------------------------------

/// One decoded prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// C x H x W, values in (0, 1).
    pub image: Tensor,
    /// 1 x H x W foreground probability, present when the model has a mask stream.
    pub mask: Option<Tensor>,
}

fn batch_of_one(image: &Tensor) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(Error::shape(format!(
            "expected a CxHxW image, got {:?}",
            image.shape()
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    image.clone().reshaped(&shape)
}

fn unbatch(t: &Tensor) -> Tensor {
    let shape: Vec<usize> = t.shape()[1..].to_vec();
    t.clone().reshaped(&shape).expect("dropping unit batch dim")
}

/// Encodes a single C x H x W image into its latent code.
pub fn encode(params: &ModelParams, image: &Tensor) -> Result<LatentCode> {
    let mut tape = Tape::new();
    let g = params.bind(&mut tape, BindMode::Frozen);
    let x = tape.leaf(batch_of_one(image)?);
    let (id, pose) = encode_graph(&mut tape, &g, x)?;
    Ok(LatentCode {
        identity: tape.value(id).data().to_vec(),
        pose: tape.value(pose).data().to_vec(),
    })
}

/// W_action * pose by direct matrix selection.
pub fn apply_action(params: &ModelParams, pose: &[f32], action: Action) -> Result<Vec<f32>> {
    let w = &params.action[action.index()];
    let n = params.config.pose_units;
    if pose.len() != n {
        return Err(Error::shape(format!(
            "pose width {} does not match config ({n})",
            pose.len()
        )));
    }
    let mut out = vec![0.0f32; n];
    crate::ops::affine_forward(pose, 1, n, w.data(), n, None, &mut out);
    Ok(out)
}

/// The tensor-product form: sum_k a_k * (W_k * pose) for a one-hot (or any)
/// action vector. Agrees with `apply_action` for one-hot inputs.
pub fn apply_action_tensor_product(
    params: &ModelParams,
    pose: &[f32],
    action_units: [f32; 3],
) -> Result<Vec<f32>> {
    let n = params.config.pose_units;
    if pose.len() != n {
        return Err(Error::shape(format!(
            "pose width {} does not match config ({n})",
            pose.len()
        )));
    }
    let mut out = vec![0.0f32; n];
    let mut tmp = vec![0.0f32; n];
    for (k, &a) in action_units.iter().enumerate() {
        crate::ops::affine_forward(pose, 1, n, params.action[k].data(), n, None, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += a * t;
        }
    }
    Ok(out)
}

/// Decodes a latent code into an image (and mask, when configured).
pub fn decode(params: &ModelParams, code: &LatentCode) -> Result<Frame> {
    let cfg = &params.config;
    if code.identity.len() != cfg.identity_units || code.pose.len() != cfg.pose_units {
        return Err(Error::shape(format!(
            "latent widths ({}, {}) do not match config ({}, {})",
            code.identity.len(),
            code.pose.len(),
            cfg.identity_units,
            cfg.pose_units
        )));
    }
    let mut tape = Tape::new();
    let g = params.bind(&mut tape, BindMode::Frozen);
    let id = tape.leaf(Tensor::from_vec(
        &[1, cfg.identity_units],
        code.identity.clone(),
    )?);
    let pose = tape.leaf(Tensor::from_vec(&[1, cfg.pose_units], code.pose.clone())?);
    let (img, mask) = decode_graph(&mut tape, &g, id, pose)?;
    Ok(Frame {
        image: unbatch(tape.value(img)),
        mask: mask.map(|m| unbatch(tape.value(m))),
    })
}

/// Rollout with the per-step latent codes exposed.
pub fn rollout_trace(
    params: &ModelParams,
    image: &Tensor,
    actions: &[Action],
) -> Result<(Vec<LatentCode>, Vec<Frame>)> {
    if actions.is_empty() {
        return Err(Error::arg("rollout needs at least one action"));
    }
    let mut tape = Tape::new();
    let g = params.bind(&mut tape, BindMode::Frozen);
    let x = tape.leaf(batch_of_one(image)?);
    let steps = rollout_graph(&mut tape, &g, x, actions)?;
    let id_vec = {
        // recover the shared identity code from a fresh encode of the same image
        let (id, _) = encode_graph(&mut tape, &g, x)?;
        tape.value(id).data().to_vec()
    };
    let mut codes = Vec::with_capacity(steps.len());
    let mut frames = Vec::with_capacity(steps.len());
    for step in &steps {
        codes.push(LatentCode {
            identity: id_vec.clone(),
            pose: tape.value(step.pose).data().to_vec(),
        });
        frames.push(Frame {
            image: unbatch(tape.value(step.image)),
            mask: step.mask.map(|m| unbatch(tape.value(m))),
        });
    }
    Ok((codes, frames))
}

/// Encode once, then transform and decode T times.
pub fn rollout(params: &ModelParams, image: &Tensor, actions: &[Action]) -> Result<Vec<Frame>> {
    rollout_trace(params, image, actions).map(|(_, frames)| frames)
}

/// Rolls an externally supplied latent code (interpolation path): the code is
/// stepped and decoded exactly as in `rollout`, minus the encoder.
pub fn rollout_code(
    params: &ModelParams,
    code: &LatentCode,
    actions: &[Action],
) -> Result<Vec<Frame>> {
    if actions.is_empty() {
        return Err(Error::arg("rollout needs at least one action"));
    }
    let cfg = &params.config;
    let mut tape = Tape::new();
    let g = params.bind(&mut tape, BindMode::Frozen);
    let id = tape.leaf(Tensor::from_vec(
        &[1, cfg.identity_units],
        code.identity.clone(),
    )?);
    let mut pose = tape.leaf(Tensor::from_vec(&[1, cfg.pose_units], code.pose.clone())?);
    let mut frames = Vec::with_capacity(actions.len());
    for &action in actions {
        pose = apply_action_graph(&mut tape, &g, pose, action)?;
        let (img, mask) = decode_graph(&mut tape, &g, id, pose)?;
        frames.push(Frame {
            image: unbatch(tape.value(img)),
            mask: mask.map(|m| unbatch(tape.value(m))),
        });
    }
    Ok(frames)
}

/// Scalar summary of the sequence objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqLoss {
    /// Sum over steps of squared image error.
    pub image: f32,
    /// Sum over steps of squared mask error (0 when no masks compared).
    pub mask: f32,
    /// image + lambda * mask.
    pub total: f32,
    /// total / number of compared elements.
    pub per_element: f32,
}

/// Value-level sequence objective over decoded frames.
pub fn sequence_loss(preds: &[Frame], targets: &[Frame], lambda: f32) -> Result<SeqLoss> {
    if preds.len() != targets.len() {
        return Err(Error::arg(format!(
            "sequence_loss: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::arg("sequence_loss needs at least one step"));
    }
    let mut image = 0.0f64;
    let mut mask = 0.0f64;
    let mut elems = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.image.shape() != t.image.shape() {
            return Err(Error::shape(format!(
                "frame shape mismatch: {:?} vs {:?}",
                p.image.shape(),
                t.image.shape()
            )));
        }
        image += crate::ops::sq_diff_sum(p.image.data(), t.image.data()) as f64;
        elems += p.image.numel();
        if let (Some(pm), Some(tm)) = (&p.mask, &t.mask) {
            mask += crate::ops::sq_diff_sum(pm.data(), tm.data()) as f64;
            elems += pm.numel();
        }
    }
    let total = image + lambda as f64 * mask;
    Ok(SeqLoss {
        image: image as f32,
        mask: mask as f32,
        total: total as f32,
        per_element: (total / elems as f64) as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_channels: 3,
            input_size: 16,
            conv_channels: vec![4, 6],
            fc_sizes: vec![20],
            identity_units: 10,
            pose_units: 5,
            mask_stream: true,
        }
    }

    fn random_image(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.input_channels * cfg.input_size * cfg.input_size;
        let data = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[cfg.input_channels, cfg.input_size, cfg.input_size], data).unwrap()
    }

    #[test]
    fn bind_order_matches_named_tensor_order() {
        let mut params = ModelParams::init(&tiny_config(), 1).unwrap();
        params.attach_classifier(5, 2).unwrap();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut tape = Tape::new();
        let mut bound_names = Vec::new();
        let g = params.bind_with(&mut tape, |name| {
            bound_names.push(name.to_string());
            Some(true)
        });
        assert_eq!(names, bound_names);
        assert_eq!(g.flat.len(), names.len());
        let mut_names: Vec<String> = params
            .named_tensors_mut()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn encode_produces_configured_widths() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 3).unwrap();
        let code = encode(&params, &random_image(&cfg, 0)).unwrap();
        assert_eq!(code.identity.len(), 10);
        assert_eq!(code.pose.len(), 5);
    }

    #[test]
    fn chair_preset_shapes() {
        let cfg = ModelConfig::chairs();
        cfg.validate().unwrap();
        assert_eq!(cfg.bottleneck_size(), 8);
        assert_eq!(cfg.latent_units(), 640);
        let params = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(params.latent_proj.weight.shape(), &[640, 1024]);
        assert_eq!(params.enc_conv[0].kernel.shape(), &[64, 3, 5, 5]);
        assert_eq!(params.action[0].shape(), &[128, 128]);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_code() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 4).unwrap();
        // biases are zero-initialized, so a zero image stays zero through
        // conv/relu/affine
        let zero = Tensor::zeros(&[cfg.input_channels, cfg.input_size, cfg.input_size]);
        let code = encode(&params, &zero).unwrap();
        assert!(code.identity.iter().all(|&v| v == 0.0));
        assert!(code.pose.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_bit_deterministic() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let img = random_image(&cfg, 1);
        let a = encode(&params, &img).unwrap();
        let b = encode(&params, &img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_of_all_zero_params_is_half_everywhere() {
        let cfg = tiny_config();
        let params = ModelParams::init_with(
            &cfg,
            0,
            &InitOpts {
                weights: WeightInit::Gaussian(0.0),
                action_noise_std: 0.0,
            },
        )
        .unwrap();
        // zero decoder weights make every logit 0, so sigmoid gives 0.5
        let code = LatentCode {
            identity: vec![0.3; cfg.identity_units],
            pose: vec![-0.7; cfg.pose_units],
        };
        let frame = decode(&params, &code).unwrap();
        assert!(frame.image.data().iter().all(|&v| v == 0.5));
        assert!(frame.mask.unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn decode_output_shapes_and_range() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 6).unwrap();
        let code = encode(&params, &random_image(&cfg, 2)).unwrap();
        let frame = decode(&params, &code).unwrap();
        assert_eq!(frame.image.shape(), &[3, 16, 16]);
        assert_eq!(frame.mask.as_ref().unwrap().shape(), &[1, 16, 16]);
        assert!(frame
            .image
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn noop_with_identity_transform_keeps_pose() {
        let cfg = tiny_config();
        let params = ModelParams::init_with(
            &cfg,
            7,
            &InitOpts {
                weights: WeightInit::Gaussian(0.01),
                action_noise_std: 0.0,
            },
        )
        .unwrap();
        let pose: Vec<f32> = (0..cfg.pose_units).map(|i| i as f32 * 0.1 - 0.2).collect();
        let out = apply_action(&params, &pose, Action::Noop).unwrap();
        assert_eq!(out, pose);
    }

    #[test]
    fn tensor_product_form_equals_matrix_selection() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose: Vec<f32> = (0..cfg.pose_units).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for action in [Action::Cw, Action::Noop, Action::Ccw] {
                let direct = apply_action(&params, &pose, action).unwrap();
                let product =
                    apply_action_tensor_product(&params, &pose, action.one_hot()).unwrap();
                for (d, p) in direct.iter().zip(&product) {
                    assert!((d - p).abs() < 1e-6, "{d} vs {p}");
                }
            }
        }
    }

    #[test]
    fn cw_action_matches_hand_mat_vec() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let pose: Vec<f32> = (0..cfg.pose_units).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = params.action[Action::Cw.index()].data();
        let n = cfg.pose_units;
        let expect: Vec<f32> = (0..n)
            .map(|r| (0..n).map(|c| w[r * n + c] * pose[c]).sum())
            .collect();
        let got = apply_action(&params, &pose, Action::Cw).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-6);
        }
    }

    #[test]
    fn rollout_identity_stays_bitwise_constant() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 10).unwrap();
        let img = random_image(&cfg, 3);
        let (codes, frames) = rollout_trace(
            &params,
            &img,
            &[Action::Cw, Action::Cw, Action::Ccw, Action::Noop],
        )
        .unwrap();
        assert_eq!(frames.len(), 4);
        let first = &codes[0].identity;
        for code in &codes {
            assert_eq!(&code.identity, first);
        }
        let direct = encode(&params, &img).unwrap();
        assert_eq!(&direct.identity, first);
    }

    #[test]
    fn single_noop_rollout_equals_encode_decode_composition() {
        let cfg = tiny_config();
        let params = ModelParams::init_with(
            &cfg,
            11,
            &InitOpts {
                weights: WeightInit::Gaussian(0.01),
                action_noise_std: 0.0,
            },
        )
        .unwrap();
        let img = random_image(&cfg, 4);
        let frames = rollout(&params, &img, &[Action::Noop]).unwrap();
        let composed = decode(&params, &encode(&params, &img).unwrap()).unwrap();
        assert_eq!(frames[0], composed);
    }

    #[test]
    fn empty_action_list_is_an_error() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 12).unwrap();
        let img = random_image(&cfg, 5);
        assert!(rollout(&params, &img, &[]).is_err());
    }

    #[test]
    fn sequence_loss_hand_case() {
        // two 2-pixel grayscale frames, lambda irrelevant (no masks):
        // preds [0.5, 0.5], [1, 0]; targets [0, 0.5], [1, 1] -> 0.25 + 1.0
        let frame = |a: f32, b: f32| Frame {
            image: Tensor::from_vec(&[1, 1, 2], vec![a, b]).unwrap(),
            mask: None,
        };
        let preds = vec![frame(0.5, 0.5), frame(1.0, 0.0)];
        let targets = vec![frame(0.0, 0.5), frame(1.0, 1.0)];
        let loss = sequence_loss(&preds, &targets, 0.0).unwrap();
        assert!((loss.total - 1.25).abs() < 1e-6);
        assert!((loss.image - 1.25).abs() < 1e-6);
        assert_eq!(loss.mask, 0.0);
    }

    #[test]
    fn sequence_loss_of_exact_predictions_is_zero() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 13).unwrap();
        let img = random_image(&cfg, 6);
        let frames = rollout(&params, &img, &[Action::Cw, Action::Ccw]).unwrap();
        let loss = sequence_loss(&frames, &frames, 0.1).unwrap();
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn sequence_loss_length_mismatch_is_an_error() {
        let frame = Frame {
            image: Tensor::zeros(&[1, 2, 2]),
            mask: None,
        };
        assert!(sequence_loss(&[frame.clone()], &[frame.clone(), frame], 0.1).is_err());
    }

    #[test]
    fn mask_term_is_weighted_by_lambda() {
        let with_mask = |img: f32, mask: f32| Frame {
            image: Tensor::from_vec(&[1, 1, 1], vec![img]).unwrap(),
            mask: Some(Tensor::from_vec(&[1, 1, 1], vec![mask]).unwrap()),
        };
        let preds = vec![with_mask(0.0, 0.0)];
        let targets = vec![with_mask(1.0, 1.0)];
        let loss = sequence_loss(&preds, &targets, 0.1).unwrap();
        assert!((loss.total - 1.1).abs() < 1e-6);
        assert!((loss.mask - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wrong_input_size_is_shape_error() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 14).unwrap();
        let wrong = Tensor::zeros(&[3, 8, 8]);
        assert!(matches!(
            encode(&params, &wrong),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn lerp_endpoints_are_bit_exact() {
        let a = LatentCode {
            identity: vec![0.1, -0.0, 3.0],
            pose: vec![1.0],
        };
        let b = LatentCode {
            identity: vec![9.0, 2.0, -1.0],
            pose: vec![-5.0],
        };
        assert_eq!(LatentCode::lerp(&a, &b, 1.0), a);
        assert_eq!(LatentCode::lerp(&a, &b, 0.0), b);
        let mid = LatentCode::lerp(&a, &b, 0.5);
        assert!((mid.identity[0] - 4.55).abs() < 1e-6);
    }

    #[test]
    fn parse_action_strings() {
        assert_eq!(
            parse_action_string("CWx3").unwrap(),
            vec![Action::Cw, Action::Cw, Action::Cw]
        );
        assert_eq!(
            parse_action_string("ccw,NOOPx2").unwrap(),
            vec![Action::Ccw, Action::Noop, Action::Noop]
        );
        assert!(parse_action_string("").is_err());
        assert!(parse_action_string("CWx0").is_err());
        assert!(parse_action_string("SPIN").is_err());
    }

    #[test]
    fn checkpoint_records_round_trip_through_from_named() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 15).unwrap();
        let records: Vec<(String, Tensor)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let rebuilt = ModelParams::from_named(&cfg, &records).unwrap();
        assert_eq!(params, rebuilt);

        // a missing tensor is rejected
        let short = records[..records.len() - 1].to_vec();
        assert!(ModelParams::from_named(&cfg, &short).is_err());
    }
}
