//! Convolutional autoencoder used by the shape measure.
//!
//! Encoder: five 5x5 convolution stages with 2x2 max-pooling between them
//! (spatial sizes 100 -> 50 -> 25 -> 13 -> 7). Decoder: three nearest
//! up-sampling + valid 5x5 convolution stages (7 -> 10 -> 16 -> 28), a final
//! up-sampling, then fully connected stages of widths 500 and 10000 reshaped
//! back to 100x100. Valid padding in the decoder is what produces the
//! 14->10, 20->16 and 32->28 steps; each resolution is recorded in the
//! architecture descriptor notes.
//!
//! Everything here is single-threaded and seeded, so training and inference
//! are bit-reproducible for a given configuration.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

const KERNEL: usize = 5;

/// Serializable layer description; shapes are fixed at build time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_c: usize,
        out_c: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
    },
    Relu,
    Sigmoid,
    MaxPool {
        c: usize,
        in_h: usize,
        in_w: usize,
    },
    Upsample {
        c: usize,
        in_h: usize,
        in_w: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
}

/// Architecture descriptor embedded in serialized models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub image_size: usize,
    pub channel_width: usize,
    pub layers: Vec<LayerSpec>,
    /// Human-readable log of every padding resolution the layer ladder made.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv {
        /// [out_c, in_c * K * K]
        w: Array2<f32>,
        b: Array1<f32>,
        in_c: usize,
        out_c: usize,
        pad: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    Relu,
    Sigmoid,
    MaxPool {
        c: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    Upsample {
        c: usize,
        in_h: usize,
        in_w: usize,
    },
    Dense {
        /// [in_dim, out_dim]
        w: Array2<f32>,
        b: Array1<f32>,
    },
}

fn conv_out(in_len: usize, pad: usize) -> usize {
    in_len + 2 * pad + 1 - KERNEL
}

fn pool_out(in_len: usize) -> usize {
    in_len.div_ceil(2)
}

/// The autoencoder: a linear stack of layers plus its descriptor.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub descriptor: ArchDescriptor,
    pub(crate) layers: Vec<Layer>,
}

impl Autoencoder {
    /// Builds the standard ladder for `image_size` (100 in production) and
    /// `channel_width` feature maps, with Glorot-uniform seeded init.
    pub fn build(image_size: usize, channel_width: usize, seed: u64) -> Result<Self> {
        let mut notes = Vec::new();
        let mut specs = Vec::new();
        let c = channel_width;
        if c == 0 {
            return Err(Error::Config("channel width must be positive".into()));
        }

        // Encoder: same-padded convs with pooling between them.
        let mut h = image_size;
        let mut in_c = 1;
        for stage in 0..5 {
            let pad = (KERNEL - 1) / 2;
            specs.push(LayerSpec::Conv {
                in_c,
                out_c: c,
                pad,
                in_h: h,
                in_w: h,
            });
            specs.push(LayerSpec::Relu);
            in_c = c;
            if stage < 4 {
                specs.push(LayerSpec::MaxPool {
                    c,
                    in_h: h,
                    in_w: h,
                });
                h = pool_out(h);
            }
        }

        // Decoder: upsample + valid conv three times, one last upsample,
        // then the two fully connected stages.
        for _ in 0..3 {
            specs.push(LayerSpec::Upsample {
                c,
                in_h: h,
                in_w: h,
            });
            let up = h * 2;
            let out = conv_out(up, 0);
            if out == 0 || up < KERNEL {
                return Err(Error::Config(format!(
                    "image size {image_size} too small for the decoder ladder"
                )));
            }
            notes.push(format!(
                "decoder conv: valid padding resolves {up} -> {out}"
            ));
            specs.push(LayerSpec::Conv {
                in_c: c,
                out_c: c,
                pad: 0,
                in_h: up,
                in_w: up,
            });
            specs.push(LayerSpec::Relu);
            h = out;
        }
        specs.push(LayerSpec::Upsample {
            c,
            in_h: h,
            in_w: h,
        });
        h *= 2;
        let flat = c * h * h;
        specs.push(LayerSpec::Dense {
            in_dim: flat,
            out_dim: 500,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Dense {
            in_dim: 500,
            out_dim: image_size * image_size,
        });
        specs.push(LayerSpec::Sigmoid);
        notes.push(format!(
            "fully connected head flattens {c}x{h}x{h} = {flat} features"
        ));

        let descriptor = ArchDescriptor {
            image_size,
            channel_width,
            layers: specs,
            notes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = descriptor
            .layers
            .iter()
            .map(|spec| Layer::init(spec, &mut rng))
            .collect();
        Ok(Self { descriptor, layers })
    }

    /// Rebuilds a model from a descriptor plus flat weight tensors, in the
    /// order produced by [`Autoencoder::parameters`].
    pub(crate) fn from_parts(descriptor: ArchDescriptor, tensors: Vec<Vec<f32>>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layers: Vec<Layer> = descriptor
            .layers
            .iter()
            .map(|spec| Layer::init(spec, &mut rng))
            .collect();
        let mut it = tensors.into_iter();
        for layer in &mut layers {
            match layer {
                Layer::Conv { w, b, .. } | Layer::Dense { w, b } => {
                    let wv = it
                        .next()
                        .ok_or_else(|| Error::invalid("model container: missing weight tensor"))?;
                    if wv.len() != w.len() {
                        return Err(Error::invalid("model container: weight tensor size mismatch"));
                    }
                    *w = Array2::from_shape_vec(w.dim(), wv).expect("checked size");
                    let bv = it
                        .next()
                        .ok_or_else(|| Error::invalid("model container: missing bias tensor"))?;
                    if bv.len() != b.len() {
                        return Err(Error::invalid("model container: bias tensor size mismatch"));
                    }
                    *b = Array1::from_vec(bv);
                }
                _ => {}
            }
        }
        if it.next().is_some() {
            return Err(Error::invalid("model container: surplus tensors"));
        }
        Ok(Self { descriptor, layers })
    }

    /// Expected input/output length (`image_size^2`).
    pub fn io_len(&self) -> usize {
        self.descriptor.image_size * self.descriptor.image_size
    }

    /// Flat views of every parameter tensor (weights then bias per layer).
    pub(crate) fn parameters(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { w, b, .. } | Layer::Dense { w, b } => {
                    out.push(w.as_slice().expect("standard layout"));
                    out.push(b.as_slice().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    /// Forward pass for a batch of flattened images, rows = samples.
    pub fn forward(&self, batch: &Array2<f32>) -> Array2<f32> {
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward(&x).0;
        }
        x
    }

    /// Forward pass for a single flattened image.
    pub fn reconstruct_flat(&self, image: &[f32]) -> Result<Vec<f32>> {
        if image.len() != self.io_len() {
            return Err(Error::invalid(format!(
                "reconstruct: expected {} pixels, got {}",
                self.io_len(),
                image.len()
            )));
        }
        let batch = Array2::from_shape_vec((1, image.len()), image.to_vec()).expect("shape");
        Ok(self.forward(&batch).row(0).to_vec())
    }

    fn forward_cached(&self, batch: &Array2<f32>) -> (Vec<Array2<f32>>, Vec<Option<Array2<u32>>>, Array2<f32>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            inputs.push(x.clone());
            let (y, a) = layer.forward(&x);
            aux.push(a);
            x = y;
        }
        (inputs, aux, x)
    }
}

impl Layer {
    fn init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
        match *spec {
            LayerSpec::Conv {
                in_c,
                out_c,
                pad,
                in_h,
                in_w,
            } => {
                let fan_in = in_c * KERNEL * KERNEL;
                let fan_out = out_c * KERNEL * KERNEL;
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                let w = Array2::from_shape_fn((out_c, fan_in), |_| {
                    rng.gen_range(-limit..limit)
                });
                Layer::Conv {
                    w,
                    b: Array1::zeros(out_c),
                    in_c,
                    out_c,
                    pad,
                    in_h,
                    in_w,
                    out_h: conv_out(in_h, pad),
                    out_w: conv_out(in_w, pad),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::MaxPool { c, in_h, in_w } => Layer::MaxPool {
                c,
                in_h,
                in_w,
                out_h: pool_out(in_h),
                out_w: pool_out(in_w),
            },
            LayerSpec::Upsample { c, in_h, in_w } => Layer::Upsample { c, in_h, in_w },
            LayerSpec::Dense { in_dim, out_dim } => {
                let limit = (6.0 / (in_dim + out_dim) as f32).sqrt();
                let w = Array2::from_shape_fn((in_dim, out_dim), |_| {
                    rng.gen_range(-limit..limit)
                });
                Layer::Dense {
                    w,
                    b: Array1::zeros(out_dim),
                }
            }
        }
    }

    /// Returns (output, auxiliary data for backward — pool argmax indices).
    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, Option<Array2<u32>>) {
        let batch = x.nrows();
        match self {
            Layer::Conv {
                w,
                b,
                in_c,
                out_c,
                pad,
                in_h,
                in_w,
                out_h,
                out_w,
            } => {
                let hw = out_h * out_w;
                let mut out = Array2::<f32>::zeros((batch, out_c * hw));
                let mut col = Array2::<f32>::zeros((in_c * KERNEL * KERNEL, hw));
                for s in 0..batch {
                    im2col(
                        x.row(s).as_slice().expect("row layout"),
                        *in_c,
                        *in_h,
                        *in_w,
                        *pad,
                        *out_h,
                        *out_w,
                        &mut col,
                    );
                    let y = w.dot(&col); // [out_c, hw]
                    let mut dst = out.row_mut(s);
                    let dst = dst.as_slice_mut().expect("row layout");
                    for oc in 0..*out_c {
                        let bias = b[oc];
                        let src = y.row(oc);
                        let src = src.as_slice().expect("row layout");
                        let dst = &mut dst[oc * hw..(oc + 1) * hw];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s + bias;
                        }
                    }
                }
                (out, None)
            }
            Layer::Relu => (x.mapv(|v| v.max(0.0)), None),
            Layer::Sigmoid => (x.mapv(|v| 1.0 / (1.0 + (-v).exp())), None),
            Layer::MaxPool {
                c,
                in_h,
                in_w,
                out_h,
                out_w,
            } => {
                let mut out = Array2::<f32>::zeros((batch, c * out_h * out_w));
                let mut argmax = Array2::<u32>::zeros((batch, c * out_h * out_w));
                for s in 0..batch {
                    let row = x.row(s);
                    let row = row.as_slice().expect("row layout");
                    let mut orow = out.row_mut(s);
                    let orow = orow.as_slice_mut().expect("row layout");
                    let mut arow = argmax.row_mut(s);
                    let arow = arow.as_slice_mut().expect("row layout");
                    for ch in 0..*c {
                        let plane = &row[ch * in_h * in_w..(ch + 1) * in_h * in_w];
                        for oy in 0..*out_h {
                            for ox in 0..*out_w {
                                let mut best = f32::NEG_INFINITY;
                                let mut best_idx = 0usize;
                                for yy in (2 * oy)..((2 * oy + 2).min(*in_h)) {
                                    for xx in (2 * ox)..((2 * ox + 2).min(*in_w)) {
                                        let v = plane[yy * in_w + xx];
                                        if v > best {
                                            best = v;
                                            best_idx = yy * in_w + xx;
                                        }
                                    }
                                }
                                let oidx = ch * out_h * out_w + oy * out_w + ox;
                                orow[oidx] = best;
                                arow[oidx] = (ch * in_h * in_w + best_idx) as u32;
                            }
                        }
                    }
                }
                (out, Some(argmax))
            }
            Layer::Upsample { c, in_h, in_w } => {
                let (oh, ow) = (in_h * 2, in_w * 2);
                let mut out = Array2::<f32>::zeros((batch, c * oh * ow));
                for s in 0..batch {
                    let row = x.row(s);
                    let row = row.as_slice().expect("row layout");
                    let mut orow = out.row_mut(s);
                    let orow = orow.as_slice_mut().expect("row layout");
                    for ch in 0..*c {
                        let plane = &row[ch * in_h * in_w..(ch + 1) * in_h * in_w];
                        let oplane = &mut orow[ch * oh * ow..(ch + 1) * oh * ow];
                        for y in 0..oh {
                            let sy = y / 2;
                            for xx in 0..ow {
                                oplane[y * ow + xx] = plane[sy * in_w + xx / 2];
                            }
                        }
                    }
                }
                (out, None)
            }
            Layer::Dense { w, b } => {
                let mut out = x.dot(w);
                for mut row in out.rows_mut() {
                    row += b;
                }
                (out, None)
            }
        }
    }

    /// Backward pass: given the cached input, aux data and upstream
    /// gradient, returns the input gradient and parameter gradients.
    fn backward(
        &self,
        input: &Array2<f32>,
        aux: Option<&Array2<u32>>,
        d_out: &Array2<f32>,
    ) -> (Array2<f32>, Option<(Array2<f32>, Array1<f32>)>) {
        let batch = input.nrows();
        match self {
            Layer::Conv {
                w,
                in_c,
                out_c,
                pad,
                in_h,
                in_w,
                out_h,
                out_w,
                ..
            } => {
                let hw = out_h * out_w;
                let mut dw = Array2::<f32>::zeros(w.dim());
                let mut db = Array1::<f32>::zeros(*out_c);
                let mut d_in = Array2::<f32>::zeros(input.dim());
                let mut col = Array2::<f32>::zeros((in_c * KERNEL * KERNEL, hw));
                for s in 0..batch {
                    im2col(
                        input.row(s).as_slice().expect("row layout"),
                        *in_c,
                        *in_h,
                        *in_w,
                        *pad,
                        *out_h,
                        *out_w,
                        &mut col,
                    );
                    let d_row = d_out.row(s);
                    let d_mat = d_row
                        .as_slice()
                        .expect("row layout");
                    let d_mat =
                        ndarray::ArrayView2::from_shape((*out_c, hw), d_mat).expect("shape");
                    dw += &d_mat.dot(&col.t());
                    for oc in 0..*out_c {
                        db[oc] += d_mat.row(oc).sum();
                    }
                    let d_col = w.t().dot(&d_mat); // [ick2, hw]
                    col2im(
                        &d_col,
                        *in_c,
                        *in_h,
                        *in_w,
                        *pad,
                        *out_h,
                        *out_w,
                        d_in.row_mut(s).as_slice_mut().expect("row layout"),
                    );
                }
                (d_in, Some((dw, db)))
            }
            Layer::Relu => {
                let mut d_in = d_out.clone();
                d_in.zip_mut_with(input, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                (d_in, None)
            }
            Layer::Sigmoid => {
                let mut d_in = d_out.clone();
                d_in.zip_mut_with(input, |g, &v| {
                    let s = 1.0 / (1.0 + (-v).exp());
                    *g *= s * (1.0 - s);
                });
                (d_in, None)
            }
            Layer::MaxPool { .. } => {
                let argmax = aux.expect("pool backward needs argmax");
                let mut d_in = Array2::<f32>::zeros(input.dim());
                for s in 0..batch {
                    let mut drow = d_in.row_mut(s);
                    let drow = drow.as_slice_mut().expect("row layout");
                    let grow = d_out.row(s);
                    let grow = grow.as_slice().expect("row layout");
                    let arow = argmax.row(s);
                    let arow = arow.as_slice().expect("row layout");
                    for (g, &idx) in grow.iter().zip(arow) {
                        drow[idx as usize] += g;
                    }
                }
                (d_in, None)
            }
            Layer::Upsample { c, in_h, in_w } => {
                let (oh, ow) = (in_h * 2, in_w * 2);
                let mut d_in = Array2::<f32>::zeros(input.dim());
                for s in 0..batch {
                    let mut drow = d_in.row_mut(s);
                    let drow = drow.as_slice_mut().expect("row layout");
                    let grow = d_out.row(s);
                    let grow = grow.as_slice().expect("row layout");
                    for ch in 0..*c {
                        let dplane = &mut drow[ch * in_h * in_w..(ch + 1) * in_h * in_w];
                        let gplane = &grow[ch * oh * ow..(ch + 1) * oh * ow];
                        for y in 0..oh {
                            for xx in 0..ow {
                                dplane[(y / 2) * in_w + xx / 2] += gplane[y * ow + xx];
                            }
                        }
                    }
                }
                (d_in, None)
            }
            Layer::Dense { w, .. } => {
                let dw = input.t().dot(d_out);
                let db = d_out.sum_axis(ndarray::Axis(0));
                let d_in = d_out.dot(&w.t());
                (d_in, Some((dw, db)))
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f32],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    col: &mut Array2<f32>,
) {
    let hw = out_h * out_w;
    let col = col.as_slice_mut().expect("standard layout");
    for c in 0..in_c {
        let plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..out_h {
                    let sy = oy + ky;
                    let dst = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if sy < pad || sy >= in_h + pad {
                        dst.fill(0.0);
                        continue;
                    }
                    let sy = sy - pad;
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let sx = ox + kx;
                        *d = if sx < pad || sx >= in_w + pad {
                            0.0
                        } else {
                            plane[sy * in_w + (sx - pad)]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    d_col: &Array2<f32>,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    d_input: &mut [f32],
) {
    let hw = out_h * out_w;
    let d_col = d_col.as_slice().expect("standard layout");
    for c in 0..in_c {
        let plane = &mut d_input[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &d_col[row * hw..(row + 1) * hw];
                for oy in 0..out_h {
                    let sy = oy + ky;
                    if sy < pad || sy >= in_h + pad {
                        continue;
                    }
                    let sy = sy - pad;
                    let src = &src[oy * out_w..(oy + 1) * out_w];
                    for (ox, g) in src.iter().enumerate() {
                        let sx = ox + kx;
                        if sx >= pad && sx < in_w + pad {
                            plane[sy * in_w + (sx - pad)] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Hyper-parameters for one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

/// Per-epoch mean losses from a completed run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Trains the model in place on (input, target) image pairs with MSE loss
/// and Adam. Deterministic given (model state, data, options).
pub fn train(
    model: &mut Autoencoder,
    inputs: &[Vec<f32>],
    targets: &[Vec<f32>],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if inputs.is_empty() {
        return Err(Error::TrainingFailed("empty training set".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    let io = model.io_len();
    if inputs.iter().chain(targets).any(|v| v.len() != io) {
        return Err(Error::invalid(format!(
            "training images must have {io} pixels"
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }

    let n_params = model.parameters().len();
    let mut adam = AdamState {
        m: model
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect(),
        v: model
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect(),
        t: 0,
    };
    debug_assert_eq!(adam.m.len(), n_params);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for _epoch in 0..opts.epochs {
        // Fisher-Yates on the sample order, seeded.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let b = chunk.len();
            let mut batch = Array2::<f32>::zeros((b, io));
            let mut target = Array2::<f32>::zeros((b, io));
            for (r, &idx) in chunk.iter().enumerate() {
                batch
                    .row_mut(r)
                    .as_slice_mut()
                    .expect("row layout")
                    .copy_from_slice(&inputs[idx]);
                target
                    .row_mut(r)
                    .as_slice_mut()
                    .expect("row layout")
                    .copy_from_slice(&targets[idx]);
            }
            let (layer_inputs, aux, output) = model.forward_cached(&batch);
            // MSE over the batch; gradient is 2 (y - t) / numel.
            let numel = (b * io) as f32;
            let mut diff = &output - &target;
            let loss: f32 = diff.iter().map(|d| d * d).sum::<f32>() / numel;
            if !loss.is_finite() {
                return Err(Error::TrainingFailed(format!(
                    "non-finite loss {loss} at step {}",
                    adam.t
                )));
            }
            epoch_loss += loss as f64 * b as f64;
            seen += b;
            diff.mapv_inplace(|d| 2.0 * d / numel);

            // Backpropagate and collect parameter gradients in layer order.
            let mut grads: Vec<Option<(Array2<f32>, Array1<f32>)>> =
                vec![None; model.layers.len()];
            let mut d = diff;
            for (li, layer) in model.layers.iter().enumerate().rev() {
                let (d_in, grad) = layer.backward(&layer_inputs[li], aux[li].as_ref(), &d);
                grads[li] = grad;
                d = d_in;
            }

            adam.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(adam.t);
            let bc2 = 1.0 - ADAM_BETA2.powi(adam.t);
            let mut p = 0usize;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                let Some((dw, db)) = &grads[li] else {
                    continue;
                };
                match layer {
                    Layer::Conv { w, b, .. } | Layer::Dense { w, b } => {
                        adam_update(
                            w.as_slice_mut().expect("layout"),
                            dw.as_slice().expect("layout"),
                            &mut adam.m[p],
                            &mut adam.v[p],
                            opts.learning_rate,
                            bc1,
                            bc2,
                        );
                        p += 1;
                        adam_update(
                            b.as_slice_mut().expect("layout"),
                            db.as_slice().expect("layout"),
                            &mut adam.m[p],
                            &mut adam.v[p],
                            opts.learning_rate,
                            bc1,
                            bc2,
                        );
                        p += 1;
                    }
                    _ => unreachable!("only parameterized layers produce gradients"),
                }
            }
        }
        epoch_losses.push(epoch_loss / seen as f64);
    }
    Ok(TrainReport { epoch_losses })
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f32,
    bias_corr1: f32,
    bias_corr2: f32,
) {
    for i in 0..param.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let mh = m[i] / bias_corr1;
        let vh = v[i] / bias_corr2;
        param[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny hand-built stack exercising every layer kind.
    fn tiny_model(seed: u64) -> Autoencoder {
        let descriptor = ArchDescriptor {
            image_size: 8,
            channel_width: 2,
            layers: vec![
                LayerSpec::Conv {
                    in_c: 1,
                    out_c: 2,
                    pad: 2,
                    in_h: 8,
                    in_w: 8,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    c: 2,
                    in_h: 8,
                    in_w: 8,
                },
                LayerSpec::Upsample {
                    c: 2,
                    in_h: 4,
                    in_w: 4,
                },
                LayerSpec::Conv {
                    in_c: 2,
                    out_c: 1,
                    pad: 0,
                    in_h: 8,
                    in_w: 8,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_dim: 16,
                    out_dim: 64,
                },
                LayerSpec::Sigmoid,
            ],
            notes: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = descriptor
            .layers
            .iter()
            .map(|spec| Layer::init(spec, &mut rng))
            .collect();
        Autoencoder { descriptor, layers }
    }

    /// Finite-difference check of the analytic gradients: the backward pass
    /// must agree with (L(w+h) - L(w-h)) / 2h on sampled weights.
    #[test]
    fn gradients_match_finite_differences() {
        let mut model = tiny_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let batch = Array2::from_shape_vec((1, 64), input).unwrap();
        let tgt = Array2::from_shape_vec((1, 64), target).unwrap();

        let loss_of = |m: &Autoencoder| -> f64 {
            let out = m.forward(&batch);
            let numel = out.len() as f64;
            out.iter()
                .zip(tgt.iter())
                .map(|(y, t)| ((y - t) as f64).powi(2))
                .sum::<f64>()
                / numel
        };

        // Analytic gradients.
        let (inputs, aux, output) = model.forward_cached(&batch);
        let numel = output.len() as f32;
        let mut d = &output - &tgt;
        d.mapv_inplace(|v| 2.0 * v / numel);
        let mut grads: Vec<Option<(Array2<f32>, Array1<f32>)>> = vec![None; model.layers.len()];
        let mut up = d;
        for (li, layer) in model.layers.iter().enumerate().rev() {
            let (d_in, g) = layer.backward(&inputs[li], aux[li].as_ref(), &up);
            grads[li] = g;
            up = d_in;
        }

        let h = 1e-3f32;
        let mut checked = 0;
        for li in 0..model.layers.len() {
            let Some((dw, _db)) = grads[li].clone() else {
                continue;
            };
            // Probe a few scattered weights in this layer.
            let picks: Vec<(usize, usize)> = (0..4)
                .map(|_| {
                    (
                        rng.gen_range(0..dw.nrows()),
                        rng.gen_range(0..dw.ncols()),
                    )
                })
                .collect();
            for (r, c) in picks {
                let orig = match &model.layers[li] {
                    Layer::Conv { w, .. } | Layer::Dense { w, .. } => w[[r, c]],
                    _ => unreachable!(),
                };
                let set = |m: &mut Autoencoder, val: f32| match &mut m.layers[li] {
                    Layer::Conv { w, .. } | Layer::Dense { w, .. } => w[[r, c]] = val,
                    _ => unreachable!(),
                };
                set(&mut model, orig + h);
                let lp = loss_of(&model);
                set(&mut model, orig - h);
                let lm = loss_of(&model);
                set(&mut model, orig);
                let numeric = (lp - lm) / (2.0 * h as f64);
                let analytic = dw[[r, c]] as f64;
                let scale = numeric.abs().max(analytic.abs()).max(1e-4);
                assert!(
                    (numeric - analytic).abs() / scale < 2e-2,
                    "layer {li} weight ({r},{c}): numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 8, "gradient check must cover several layers");
    }

    #[test]
    fn ladder_shapes_match_the_descriptor() {
        let model = Autoencoder::build(100, 4, 1).unwrap();
        // Encoder pooling ladder 100 -> 50 -> 25 -> 13 -> 7 and decoder
        // 7 -> 10 -> 16 -> 28 before the fully connected head.
        let pools: Vec<(usize, usize)> = model
            .descriptor
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::MaxPool { in_h, .. } => Some((*in_h, pool_out(*in_h))),
                _ => None,
            })
            .collect();
        assert_eq!(pools, vec![(100, 50), (50, 25), (25, 13), (13, 7)]);
        let valid_convs: Vec<(usize, usize)> = model
            .descriptor
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv {
                    pad: 0, in_h, ..
                } => Some((*in_h, conv_out(*in_h, 0))),
                _ => None,
            })
            .collect();
        assert_eq!(valid_convs, vec![(14, 10), (20, 16), (32, 28)]);
        let dense: Vec<usize> = model
            .descriptor
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { out_dim, .. } => Some(*out_dim),
                _ => None,
            })
            .collect();
        assert_eq!(dense, vec![500, 10000]);
        assert!(!model.descriptor.notes.is_empty());
        let out = model.forward(&Array2::zeros((1, 10000)));
        assert_eq!(out.dim(), (1, 10000));
    }

    #[test]
    fn training_is_seed_reproducible() {
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Vec<f32>> = (0..8)
            .map(|_| (0..64).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let run = |seed: u64| {
            let mut m = tiny_model(seed);
            train(&mut m, &data, &data, &opts).unwrap();
            m.forward(&Array2::from_shape_vec((1, 64), data[0].clone()).unwrap())
                .row(0)
                .to_vec()
        };
        let a = run(21);
        let b = run(21);
        assert_eq!(a, b, "identical seeds must give identical scores");
    }

    #[test]
    fn divergence_reports_training_failure() {
        let mut model = tiny_model(1);
        let data = vec![vec![0.5f32; 64]; 4];
        let opts = TrainOptions {
            epochs: 50,
            batch_size: 4,
            learning_rate: f32::INFINITY,
            seed: 0,
        };
        match train(&mut model, &data, &data, &opts) {
            Err(Error::TrainingFailed(_)) => {}
            other => panic!("expected training failure, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_image_size_is_invalid() {
        let mut model = tiny_model(1);
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            seed: 0,
        };
        let err = train(&mut model, &[vec![0.0; 63]], &[vec![0.0; 63]], &opts);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
