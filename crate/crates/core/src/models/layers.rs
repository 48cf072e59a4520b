//! A small sequential network over HWC tensors, one sample at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub const fn flat(n: usize) -> Self {
        Shape { h: 1, w: 1, c: n }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_flat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { units: usize, l2: f64 },
    /// Stride 1, no padding.
    Conv2d { filters: usize, kh: usize, kw: usize, l2: f64 },
    /// "Same" padding with -inf fill.
    MaxPool { ph: usize, pw: usize, stride: usize },
    Dropout { rate: f64 },
    Relu,
    Sigmoid,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        n_in: usize,
        n_out: usize,
        l2: f64,
        /// Row-major `n_out × n_in`.
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Conv2d {
        input: Shape,
        kh: usize,
        kw: usize,
        cout: usize,
        l2: f64,
        /// `kh × kw × cin × cout`.
        w: Vec<f64>,
        b: Vec<f64>,
    },
    MaxPool {
        input: Shape,
        ph: usize,
        pw: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Sigmoid,
    Flatten,
}

fn pool_geometry(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(n);
    (out, total / 2)
}

pub fn output_shape(spec: &LayerSpec, input: Shape) -> Result<Shape, ModelError> {
    let mismatch = |m: String| Err(ModelError::ShapeMismatch(m));
    match *spec {
        LayerSpec::Dense { units, .. } => {
            if !input.is_flat() {
                return mismatch(format!("dense needs flat input, got {input:?}"));
            }
            Ok(Shape::flat(units))
        }
        LayerSpec::Conv2d { filters, kh, kw, .. } => {
            if input.h < kh || input.w < kw {
                return mismatch(format!("{kh}x{kw} kernel larger than {input:?}"));
            }
            Ok(Shape::new(input.h - kh + 1, input.w - kw + 1, filters))
        }
        LayerSpec::MaxPool { ph, pw, stride } => {
            if stride == 0 || ph == 0 || pw == 0 {
                return mismatch("pool size and stride must be positive".into());
            }
            Ok(Shape::new(
                pool_geometry(input.h, ph, stride).0,
                pool_geometry(input.w, pw, stride).0,
                input.c,
            ))
        }
        LayerSpec::Flatten => Ok(Shape::flat(input.len())),
        LayerSpec::Dropout { .. } | LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input),
    }
}

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Per-layer state recorded during a forward pass.
#[derive(Debug, Clone)]
enum Aux {
    None,
    Mask(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
    /// Pre-activation of the final sigmoid.
    pub logit: f64,
    pub output: f64,
}

impl Trace {
    /// ReLU on/off states and pooling winners, used to detect when a
    /// finite-difference step crosses a kink.
    pub fn pattern(&self, net: &Network) -> Vec<usize> {
        let mut sig = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            match (layer, &self.aux[i]) {
                (Layer::Relu, _) => sig.extend(self.inputs[i].iter().map(|&x| (x > 0.0) as usize + 2 * (x < 0.0) as usize)),
                (_, Aux::Argmax(a)) => sig.extend_from_slice(a),
                _ => {}
            }
        }
        sig
    }
}

/// Gradients in parameter declaration order (weights then biases, per layer).
pub type Grads = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases. The
    /// final layer must be a sigmoid producing one output.
    pub fn new(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let out = output_shape(spec, shape)?;
            layers.push(match *spec {
                LayerSpec::Dense { units, l2 } => Layer::Dense {
                    n_in: shape.len(),
                    n_out: units,
                    l2,
                    w: glorot(&mut rng, units * shape.len(), shape.len(), units),
                    b: vec![0.0; units],
                },
                LayerSpec::Conv2d { filters, kh, kw, l2 } => Layer::Conv2d {
                    input: shape,
                    kh,
                    kw,
                    cout: filters,
                    l2,
                    w: glorot(&mut rng, kh * kw * shape.c * filters, kh * kw * shape.c, kh * kw * filters),
                    b: vec![0.0; filters],
                },
                LayerSpec::MaxPool { ph, pw, stride } => Layer::MaxPool { input: shape, ph, pw, stride },
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(ModelError::ShapeMismatch(format!("dropout rate {rate}")));
                    }
                    Layer::Dropout { rate }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Sigmoid => Layer::Sigmoid,
                LayerSpec::Flatten => Layer::Flatten,
            });
            shape = out;
        }
        if !matches!(layers.last(), Some(Layer::Sigmoid)) || shape.len() != 1 {
            return Err(ModelError::ShapeMismatch("network must end in a single sigmoid output".into()));
        }
        Ok(Network { input, layers })
    }

    /// Shapes after each layer, starting with the input.
    pub fn shapes(&self) -> Vec<Shape> {
        let mut out = vec![self.input];
        let mut s = self.input;
        for l in &self.layers {
            s = output_shape(&l.spec(), s).expect("validated at construction");
            out.push(s);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Dense { w, b, .. } | Layer::Conv2d { w, b, .. } = l {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::Dense { w, b, .. } | Layer::Conv2d { w, b, .. } = l {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// L2 coefficient for each parameter tensor; zero for biases.
    pub fn l2_per_tensor(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Dense { l2, .. } | Layer::Conv2d { l2, .. } = l {
                out.push(*l2);
                out.push(0.0);
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// `Σ l2 · w²` over regularized weight tensors.
    pub fn l2_penalty(&self) -> f64 {
        self.params()
            .iter()
            .zip(self.l2_per_tensor())
            .map(|(p, l2)| if l2 > 0.0 { l2 * p.iter().map(|v| v * v).sum::<f64>() } else { 0.0 })
            .sum()
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<Trace, ModelError> {
        if x.len() != self.input.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} values, expected {:?}",
                x.len(),
                self.input
            )));
        }
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut logit = 0.0;
        for layer in &self.layers {
            let (next, a) = match layer {
                Layer::Dense { n_in, n_out, w, b, .. } => {
                    let y = (0..*n_out)
                        .map(|o| {
                            let row = &w[o * n_in..(o + 1) * n_in];
                            b[o] + row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .collect();
                    (y, Aux::None)
                }
                Layer::Conv2d { input, kh, kw, cout, w, b, .. } => (conv_forward(&cur, *input, *kh, *kw, *cout, w, b), Aux::None),
                Layer::MaxPool { input, ph, pw, stride } => {
                    let (y, arg) = pool_forward(&cur, *input, *ph, *pw, *stride);
                    (y, Aux::Argmax(arg))
                }
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let keep = 1.0 - rate;
                        let mask: Vec<f64> = (0..cur.len())
                            .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        (cur.iter().zip(&mask).map(|(a, m)| a * m).collect(), Aux::Mask(mask))
                    }
                    None => (cur.clone(), Aux::None),
                },
                Layer::Relu => (cur.iter().map(|&v| v.max(0.0)).collect(), Aux::None),
                Layer::Sigmoid => {
                    if cur.len() == 1 {
                        logit = cur[0];
                    }
                    (cur.iter().map(|&v| sigmoid(v)).collect(), Aux::None)
                }
                Layer::Flatten => (cur.clone(), Aux::None),
            };
            inputs.push(std::mem::replace(&mut cur, next));
            aux.push(a);
        }
        Ok(Trace {
            inputs,
            aux,
            logit,
            output: cur[0],
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }

    /// Back-propagates `d_logit` (the loss derivative with respect to the
    /// final sigmoid's input), accumulating into `grads`. Returns the
    /// gradient with respect to the network input.
    pub fn backward(&self, trace: &Trace, d_logit: f64, grads: &mut Grads) -> Vec<f64> {
        let n = self.layers.len();
        let mut g = vec![d_logit];
        let mut tensor = grads.len();
        for i in (0..n).rev() {
            let x = &trace.inputs[i];
            g = match &self.layers[i] {
                Layer::Sigmoid if i == n - 1 => g,
                Layer::Sigmoid => x
                    .iter()
                    .zip(&g)
                    .map(|(&z, &d)| {
                        let s = sigmoid(z);
                        d * s * (1.0 - s)
                    })
                    .collect(),
                Layer::Relu => x.iter().zip(&g).map(|(&z, &d)| if z > 0.0 { d } else { 0.0 }).collect(),
                Layer::Dropout { .. } => match &trace.aux[i] {
                    Aux::Mask(m) => g.iter().zip(m).map(|(d, m)| d * m).collect(),
                    _ => g,
                },
                Layer::Flatten => g,
                Layer::MaxPool { .. } => {
                    let Aux::Argmax(arg) = &trace.aux[i] else { unreachable!() };
                    let mut dx = vec![0.0; x.len()];
                    for (o, &src) in arg.iter().enumerate() {
                        dx[src] += g[o];
                    }
                    dx
                }
                Layer::Dense { n_in, n_out, w, .. } => {
                    tensor -= 2;
                    let (gw, gb) = split_pair(grads, tensor);
                    let mut dx = vec![0.0; *n_in];
                    for o in 0..*n_out {
                        let d = g[o];
                        gb[o] += d;
                        let row = &w[o * n_in..(o + 1) * n_in];
                        let grow = &mut gw[o * n_in..(o + 1) * n_in];
                        for k in 0..*n_in {
                            grow[k] += d * x[k];
                            dx[k] += d * row[k];
                        }
                    }
                    dx
                }
                Layer::Conv2d { input, kh, kw, cout, w, .. } => {
                    tensor -= 2;
                    let (gw, gb) = split_pair(grads, tensor);
                    conv_backward(x, &g, *input, *kh, *kw, *cout, w, gw, gb)
                }
            };
        }
        g
    }
}

fn split_pair(grads: &mut Grads, i: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    let (a, b) = grads.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match *self {
            Layer::Dense { n_out, l2, .. } => LayerSpec::Dense { units: n_out, l2 },
            Layer::Conv2d { kh, kw, cout, l2, .. } => LayerSpec::Conv2d { filters: cout, kh, kw, l2 },
            Layer::MaxPool { ph, pw, stride, .. } => LayerSpec::MaxPool { ph, pw, stride },
            Layer::Dropout { rate } => LayerSpec::Dropout { rate },
            Layer::Relu => LayerSpec::Relu,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn conv_forward(x: &[f64], s: Shape, kh: usize, kw: usize, cout: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (s.h - kh + 1, s.w - kw + 1);
    let mut y = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let out = &mut y[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            out.copy_from_slice(b);
            for ky in 0..kh {
                for kx in 0..kw {
                    let px = &x[((oy + ky) * s.w + ox + kx) * s.c..((oy + ky) * s.w + ox + kx + 1) * s.c];
                    for (ci, &v) in px.iter().enumerate() {
                        let wk = &w[((ky * kw + kx) * s.c + ci) * cout..((ky * kw + kx) * s.c + ci + 1) * cout];
                        for (o, &wv) in out.iter_mut().zip(wk) {
                            *o += v * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    g: &[f64],
    s: Shape,
    kh: usize,
    kw: usize,
    cout: usize,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = (s.h - kh + 1, s.w - kw + 1);
    let mut dx = vec![0.0; x.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let d = &g[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for (gbv, &dv) in gb.iter_mut().zip(d) {
                *gbv += dv;
            }
            for ky in 0..kh {
                for kx in 0..kw {
                    let base = ((oy + ky) * s.w + ox + kx) * s.c;
                    for ci in 0..s.c {
                        let widx = ((ky * kw + kx) * s.c + ci) * cout;
                        let v = x[base + ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            gw[widx + co] += v * d[co];
                            acc += w[widx + co] * d[co];
                        }
                        dx[base + ci] += acc;
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], s: Shape, ph: usize, pw: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, pad_t) = pool_geometry(s.h, ph, stride);
    let (ow, pad_l) = pool_geometry(s.w, pw, stride);
    let mut y = vec![f64::NEG_INFINITY; oh * ow * s.c];
    let mut arg = vec![0usize; oh * ow * s.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..s.c {
                let o = (oy * ow + ox) * s.c + c;
                for ky in 0..ph {
                    let iy = (oy * stride + ky) as isize - pad_t as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..pw {
                        let ix = (ox * stride + kx) as isize - pad_l as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let i = (iy as usize * s.w + ix as usize) * s.c + c;
                        if x[i] > y[o] {
                            y[o] = x[i];
                            arg[o] = i;
                        }
                    }
                }
            }
        }
    }
    (y, arg)
}
