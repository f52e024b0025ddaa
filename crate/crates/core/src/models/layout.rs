use std::ops::Range;

/// Where one decoder layer lives inside the flat parameter vector `η`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in` weight matrix.
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// Layer-major layout of the decoder MLP parameters: for every layer the
/// weight matrix (row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayout {
    widths: Vec<usize>,
    layers: Vec<LayerSpan>,
    len: usize,
}

impl DecoderLayout {
    /// `widths` lists every layer width including input and output,
    /// e.g. `[2f, 256, 256, 256, C]`.
    pub fn new(widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = offset..offset + fan_in * fan_out;
            let bias = weight.end..weight.end + fan_out;
            offset = bias.end;
            layers.push(LayerSpan {
                fan_in,
                fan_out,
                weight,
                bias,
            });
        }
        Self {
            widths: widths.to_vec(),
            layers,
            len: offset,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[LayerSpan] {
        &self.layers
    }

    /// Total parameter count `k`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn input_dim(&self) -> usize {
        self.widths.first().copied().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }
}

/// Decoder weights emitted by the hypernetwork for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct InrParams {
    pub eta: Vec<f64>,
    pub layout: DecoderLayout,
}

impl InrParams {
    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.eta[self.layout.layers[layer].weight.clone()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.eta[self.layout.layers[layer].bias.clone()]
    }
}
