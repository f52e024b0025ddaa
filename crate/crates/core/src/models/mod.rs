//! Encoder, hypernetwork and coordinate decoder.

mod fourier;
mod layout;

pub use fourier::FourierFeatureMap;
pub use layout::{DecoderLayout, InrParams, LayerSpan};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ConvGeometry, ParamSet, Tape, Tensor, Value};
use crate::geometry::{transform_point, wrap_angle, DiscreteImage, GridSpec, Pose};

pub const HYPER_SLOPE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("image is {got_channels}x{got_side}x{got_side} but the model expects {channels}x{side}x{side}")]
    Resolution {
        channels: usize,
        side: usize,
        got_channels: usize,
        got_side: usize,
    },
    #[error("latent vector has length {got}, expected {expected}")]
    LatentLength { expected: usize, got: usize },
    #[error("decoder parameter vector has length {got}, expected {expected}")]
    EtaLength { expected: usize, got: usize },
    #[error("parameter layout mismatch at `{name}`: expected {expected:?}, found {got:?}")]
    ParamLayout {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Global average over the final feature map.
    #[default]
    Average,
    /// Keep the whole final feature map (retains coarse position).
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub blocks: Vec<ConvBlock>,
    pub kernel: usize,
    pub pooling: Pooling,
    /// Append the grid `x` and `y` coordinates as two extra input channels.
    pub coord_channels: bool,
    /// Hidden widths of the MLP head; the output width `d + 4` is implied.
    pub head_hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            blocks: [16, 32, 64, 128]
                .into_iter()
                .map(|channels| ConvBlock { channels, stride: 2 })
                .collect(),
            kernel: 3,
            pooling: Pooling::Average,
            coord_channels: false,
            head_hidden: vec![128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub channels: usize,
    pub side: usize,
    pub encoder: EncoderConfig,
    pub hyper_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub fourier_features: usize,
    pub fourier_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            channels: 1,
            side: 32,
            encoder: EncoderConfig::default(),
            hyper_hidden: vec![256, 256, 256],
            decoder_hidden: vec![256, 256, 256],
            fourier_features: 256,
            fourier_sigma: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if self.side == 0 {
            return bad("side must be positive");
        }
        if self.fourier_features == 0 {
            return bad("fourier_features must be positive");
        }
        if !self.fourier_sigma.is_finite() || self.fourier_sigma < 0.0 {
            return bad("fourier_sigma must be finite and non-negative");
        }
        let enc = &self.encoder;
        if enc.kernel == 0 || enc.kernel.is_multiple_of(2) {
            return bad("encoder kernel must be odd");
        }
        if enc.blocks.iter().any(|b| b.channels == 0 || b.stride == 0) {
            return bad("encoder blocks need positive channels and stride");
        }
        let widths = [&enc.head_hidden, &self.hyper_hidden, &self.decoder_hidden];
        if widths.iter().any(|w| w.contains(&0)) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Width of the encoder head output: `z`, the angle pair and `τ̂`.
    pub fn head_dim(&self) -> usize {
        self.latent_dim + 4
    }

    pub fn input_channels(&self) -> usize {
        self.channels + if self.encoder.coord_channels { 2 } else { 0 }
    }

    /// Decoder widths `[2f, hidden.., C]`.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![2 * self.fourier_features];
        w.extend(&self.decoder_hidden);
        w.push(self.channels);
        w
    }

    fn conv_geometries(&self, batch: usize) -> Vec<ConvGeometry> {
        let mut out = Vec::new();
        let (mut c, mut h) = (self.input_channels(), self.side);
        for b in &self.encoder.blocks {
            let g = ConvGeometry {
                batch,
                in_channels: c,
                height: h,
                width: h,
                out_channels: b.channels,
                kernel: self.encoder.kernel,
                stride: b.stride,
                padding: self.encoder.kernel / 2,
            };
            h = g.out_height();
            c = b.channels;
            out.push(g);
        }
        out
    }

    fn pooled_dim(&self) -> usize {
        let geoms = self.conv_geometries(1);
        match geoms.last() {
            None => self.input_channels() * self.side * self.side,
            Some(g) => match self.encoder.pooling {
                Pooling::Average => g.out_channels,
                Pooling::Flatten => g.out_channels * g.out_height() * g.out_width(),
            },
        }
    }
}

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub theta_hat: f64,
    pub tau_hat: [f64; 2],
}

impl LatentCode {
    /// Splits a raw head row `(z, u, v, τx, τy)`.
    pub fn from_head(row: &[f64], d: usize) -> Self {
        let (u, v) = (row[d], row[d + 1]);
        let theta_hat = if u == 0.0 && v == 0.0 { 0.0 } else { wrap_angle(v.atan2(u)) };
        Self {
            z: row[..d].to_vec(),
            theta_hat,
            tau_hat: [row[d + 2], row[d + 3]],
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.theta_hat, self.tau_hat)
    }
}

enum Init {
    Uniform(f64),
    Zeros,
    PerRow(Vec<f64>),
    Values(Vec<f64>),
}

struct Planned {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Layer list of encoder then hypernetwork, in storage order.
fn plan(config: &ModelConfig, layout: &DecoderLayout, rng: &mut ChaCha8Rng) -> (Vec<Planned>, usize) {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push(Planned { name, shape, init });
    let k = config.encoder.kernel;
    for (i, g) in config.conv_geometries(1).iter().enumerate() {
        let fan_in = g.in_channels * k * k;
        push(format!("enc.conv{i}.w"), vec![g.out_channels, fan_in], Init::Uniform((6.0 / fan_in as f64).sqrt()));
        push(format!("enc.conv{i}.b"), vec![g.out_channels], Init::Zeros);
    }
    let mut widths = vec![config.pooled_dim()];
    widths.extend(&config.encoder.head_hidden);
    widths.push(config.head_dim());
    let last = widths.len() - 2;
    for (i, pair) in widths.windows(2).enumerate() {
        let bound = if i == last { 1.0 } else { 6.0f64.sqrt() } / (pair[0] as f64).sqrt();
        push(format!("enc.head{i}.w"), vec![pair[1], pair[0]], Init::Uniform(bound));
        push(format!("enc.head{i}.b"), vec![pair[1]], Init::Zeros);
    }
    let encoder_entries = 2 * (config.encoder.blocks.len() + widths.len() - 1);

    let mut widths = vec![config.latent_dim];
    widths.extend(&config.hyper_hidden);
    widths.push(layout.len());
    let last = widths.len() - 2;
    let leaky_gain = 6.0 / (1.0 + HYPER_SLOPE * HYPER_SLOPE);
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        if i < last {
            push(format!("hyp.l{i}.w"), vec![fan_out, fan_in], Init::Uniform((leaky_gain / fan_in as f64).sqrt()));
            push(format!("hyp.l{i}.b"), vec![fan_out], Init::Zeros);
            continue;
        }
        // Output layer: the bias is a freshly initialised decoder, the
        // weights add a z-dependent perturbation of comparable scale.
        let (rows, base) = decoder_init(layout, rng);
        let rows: Vec<f64> = rows.iter().map(|s| s / (fan_in as f64).sqrt()).collect();
        push(format!("hyp.l{i}.w"), vec![fan_out, fan_in], Init::PerRow(rows));
        push(format!("hyp.l{i}.b"), vec![fan_out], Init::Values(base));
    }
    (out, encoder_entries)
}

/// Per-entry scale and a sampled base value for every decoder parameter.
fn decoder_init(layout: &DecoderLayout, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut scale = vec![0.0; layout.len()];
    let mut base = vec![0.0; layout.len()];
    let n = layout.layers().len();
    for (i, l) in layout.layers().iter().enumerate() {
        let gain = if i + 1 == n { 1.0 } else { 6.0 };
        let bound = (gain / l.fan_in as f64).sqrt();
        for j in l.weight.clone() {
            scale[j] = bound;
            base[j] = rng.gen_range(-bound..=bound);
        }
        for j in l.bias.clone() {
            scale[j] = 1.0 / (l.fan_in as f64).sqrt();
        }
    }
    (scale, base)
}

/// Encoder `φ`, hypernetwork `ψ` and the frozen Fourier matrix `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    fourier: FourierFeatureMap,
    layout: DecoderLayout,
    encoder_entries: usize,
    grid: GridSpec,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fourier = FourierFeatureMap::sample(config.fourier_features, config.fourier_sigma, &mut rng);
        let layout = DecoderLayout::new(&config.decoder_widths());
        let (planned, encoder_entries) = plan(&config, &layout, &mut rng);
        let mut params = ParamSet::new();
        for p in planned {
            match p.init {
                Init::Uniform(bound) => {
                    params.push_uniform(&p.name, &p.shape, bound, &mut rng);
                }
                Init::Zeros => {
                    params.push_values(&p.name, &p.shape, vec![0.0; p.shape.iter().product()]);
                }
                Init::PerRow(bounds) => {
                    let cols = p.shape[1];
                    let mut v = Vec::with_capacity(bounds.len() * cols);
                    for b in bounds {
                        v.extend((0..cols).map(|_| rng.gen_range(-b..=b)));
                    }
                    params.push_values(&p.name, &p.shape, v);
                }
                Init::Values(v) => {
                    params.push_values(&p.name, &p.shape, v);
                }
            }
        }
        let grid = GridSpec::new(config.side);
        Ok(Self {
            config,
            params,
            fourier,
            layout,
            encoder_entries,
            grid,
        })
    }

    /// Reassembles a model from stored parts, auditing every tensor shape
    /// against the architecture described by `config`.
    pub fn from_parts(config: ModelConfig, params: ParamSet, fourier: FourierFeatureMap) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = DecoderLayout::new(&config.decoder_widths());
        let (planned, encoder_entries) = plan(&config, &layout, &mut ChaCha8Rng::seed_from_u64(0));
        if fourier.num_frequencies() != config.fourier_features {
            return Err(ModelError::ParamLayout {
                name: "fourier.B".into(),
                expected: vec![config.fourier_features, 2],
                got: vec![fourier.num_frequencies(), 2],
            });
        }
        if planned.len() != params.entries().len() {
            return Err(ModelError::ParamLayout {
                name: "entry count".into(),
                expected: vec![planned.len()],
                got: vec![params.entries().len()],
            });
        }
        for (p, e) in planned.iter().zip(params.entries()) {
            if p.name != e.name || p.shape != e.shape {
                return Err(ModelError::ParamLayout {
                    name: p.name.clone(),
                    expected: p.shape.clone(),
                    got: e.shape.clone(),
                });
            }
        }
        let grid = GridSpec::new(config.side);
        Ok(Self {
            config,
            params,
            fourier,
            layout,
            encoder_entries,
            grid,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn fourier(&self) -> &FourierFeatureMap {
        &self.fourier
    }

    pub fn layout(&self) -> &DecoderLayout {
        &self.layout
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of scalars in the encoder (`φ`); the rest of `params` is `ψ`.
    pub fn encoder_len(&self) -> usize {
        self.params.entries()[..self.encoder_entries].iter().map(|e| e.len()).sum()
    }

    /// Width `k` of the hypernetwork output.
    pub fn eta_len(&self) -> usize {
        self.layout.len()
    }

    pub fn check_image(&self, img: &DiscreteImage) -> Result<(), ModelError> {
        if img.channels() != self.config.channels || img.side() != self.config.side {
            return Err(ModelError::Resolution {
                channels: self.config.channels,
                side: self.config.side,
                got_channels: img.channels(),
                got_side: img.side(),
            });
        }
        Ok(())
    }

    /// Stacks images into the `[n, C', s, s]` encoder input, appending
    /// coordinate channels when configured.
    pub fn encoder_input(&self, images: &[&DiscreteImage]) -> Result<Tensor, ModelError> {
        let c = self.config.input_channels();
        let p = self.grid.len();
        let mut data = Vec::with_capacity(images.len() * c * p);
        for img in images {
            self.check_image(img)?;
            data.extend_from_slice(img.pixels());
            if self.config.encoder.coord_channels {
                data.extend(self.grid.points().iter().step_by(2));
                data.extend(self.grid.points().iter().skip(1).step_by(2));
            }
        }
        let s = self.config.side;
        Ok(Tensor::new(&[images.len(), c, s, s], data)?)
    }

    /// Registers `φ` and `ψ` on the tape, trainable or frozen.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Value> {
        if trainable {
            self.params.bind(tape)
        } else {
            self.params.bind_frozen(tape)
        }
    }

    /// Encoder forward pass: `[n, C', s, s]` to head outputs `[n, d + 4]`.
    pub fn encode_on_tape(&self, tape: &mut Tape<'_>, bound: &[Value], input: Value) -> Result<Value, ModelError> {
        let n = tape.shape(input)[0];
        let mut h = input;
        let mut next = 0;
        for g in self.config.conv_geometries(n) {
            h = tape.conv2d(h, bound[next], bound[next + 1], g)?;
            h = tape.relu(h);
            next += 2;
        }
        let shape = tape.shape(h).to_vec();
        h = match self.config.encoder.pooling {
            Pooling::Average if shape.len() == 4 && !self.config.encoder.blocks.is_empty() => tape.global_avg_pool(h)?,
            _ => tape.reshape(h, &[n, shape[1..].iter().product()])?,
        };
        let layers = (self.encoder_entries - next) / 2;
        for i in 0..layers {
            h = tape.linear(h, bound[next], Some(bound[next + 1]))?;
            if i + 1 < layers {
                h = tape.relu(h);
            }
            next += 2;
        }
        Ok(h)
    }

    /// Hypernetwork forward pass: `[n, d]` to decoder parameters `[n, k]`.
    pub fn hyper_on_tape(&self, tape: &mut Tape<'_>, bound: &[Value], z: Value) -> Result<Value, ModelError> {
        let d = self.config.latent_dim;
        let shape = tape.shape(z).to_vec();
        if shape.last() != Some(&d) {
            return Err(ModelError::LatentLength {
                expected: d,
                got: shape.last().copied().unwrap_or(0),
            });
        }
        let rows = if shape.len() == 1 { 1 } else { shape[0] };
        let mut h = tape.reshape(z, &[rows, d])?;
        let mut next = self.encoder_entries;
        let layers = (bound.len() - next) / 2;
        for i in 0..layers {
            h = tape.linear(h, bound[next], Some(bound[next + 1]))?;
            if i + 1 < layers {
                h = tape.leaky_relu(h, HYPER_SLOPE);
            }
            next += 2;
        }
        Ok(h)
    }

    /// Decoder on `points` (`[P, 2]`) with the parameters stored in row
    /// `row` of `eta` (`[n, k]` or `[k]`); returns `[P, C]`.
    pub fn decode_on_tape<'a>(&'a self, tape: &mut Tape<'a>, eta: Value, row: usize, points: Value) -> Result<Value, ModelError> {
        let k = self.layout.len();
        let eta_len = tape.data(eta).len();
        if eta_len < (row + 1) * k || !eta_len.is_multiple_of(k) {
            return Err(ModelError::EtaLength {
                expected: k,
                got: eta_len,
            });
        }
        let base = row * k;
        let mut h = tape.fourier_features(points, self.fourier.matrix())?;
        let n = self.layout.layers().len();
        for (i, l) in self.layout.layers().iter().enumerate() {
            let w = tape.slice(eta, base + l.weight.start, &[l.fan_out, l.fan_in])?;
            let b = tape.slice(eta, base + l.bias.start, &[l.fan_out])?;
            h = tape.linear(h, w, Some(b))?;
            if i + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// `(cos θ̂, sin θ̂)` and `τ̂` for row `row` of the head output.
    pub fn pose_on_tape(&self, tape: &mut Tape<'_>, head: Value, row: usize) -> Result<(Value, Value), ModelError> {
        let w = self.config.head_dim();
        let d = self.config.latent_dim;
        let uv = tape.slice(head, row * w + d, &[2])?;
        let cs = tape.angle_pair(uv)?;
        let tau = tape.slice(head, row * w + d + 2, &[2])?;
        Ok((cs, tau))
    }

    pub fn encode(&self, img: &DiscreteImage) -> Result<LatentCode, ModelError> {
        Ok(self.encode_batch(&[img])?.remove(0))
    }

    /// Encodes many images, a chunk at a time to bound tape memory.
    pub fn encode_batch(&self, images: &[&DiscreteImage]) -> Result<Vec<LatentCode>, ModelError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let input = tape.variable(self.encoder_input(chunk)?);
            let head = self.encode_on_tape(&mut tape, &bound, input)?;
            let w = self.config.head_dim();
            out.extend(
                tape.data(head)
                    .chunks_exact(w)
                    .map(|r| LatentCode::from_head(r, self.config.latent_dim)),
            );
        }
        Ok(out)
    }

    pub fn hyper(&self, z: &[f64]) -> Result<InrParams, ModelError> {
        if z.len() != self.config.latent_dim {
            return Err(ModelError::LatentLength {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::vector(z.to_vec()));
        let eta = self.hyper_on_tape(&mut tape, &bound, zv)?;
        Ok(InrParams {
            eta: tape.data(eta).to_vec(),
            layout: self.layout.clone(),
        })
    }

    /// Decoder output at each row of `points` (flat `[P, 2]`), flat `[P, C]`.
    pub fn decode_points(&self, points: &[f64], eta: &InrParams) -> Result<Vec<f64>, ModelError> {
        if eta.eta.len() != self.layout.len() {
            return Err(ModelError::EtaLength {
                expected: self.layout.len(),
                got: eta.eta.len(),
            });
        }
        let mut tape = Tape::new();
        let e = tape.constant_ref(&eta.eta, &[eta.eta.len()])?;
        let pts = tape.constant_ref(points, &[points.len() / 2, 2])?;
        let out = self.decode_on_tape(&mut tape, e, 0, pts)?;
        Ok(tape.data(out).to_vec())
    }

    pub fn decode(&self, point: [f64; 2], eta: &InrParams) -> Result<Vec<f64>, ModelError> {
        self.decode_points(&point, eta)
    }

    /// Pixel `p` is the decoder evaluated at `transform_point(pose, g_p)`.
    pub fn render(&self, eta: &InrParams, pose: &Pose, grid: &GridSpec) -> Result<DiscreteImage, ModelError> {
        let mut pts = Vec::with_capacity(grid.points().len());
        for p in 0..grid.len() {
            pts.extend(transform_point(pose, grid.point(p)));
        }
        let out = self.decode_points(&pts, eta)?;
        DiscreteImage::from_pixel_major(self.config.channels, grid.side(), &out)
            .map_err(|e| ModelError::Config(format!("decoder produced an invalid image: {e}")))
    }

    /// `render` with the parameters produced from `z`.
    pub fn render_code(&self, z: &[f64], pose: &Pose) -> Result<DiscreteImage, ModelError> {
        let eta = self.hyper(z)?;
        self.render(&eta, pose, &self.grid)
    }
}
