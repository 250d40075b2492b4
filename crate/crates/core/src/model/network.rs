//! The compiled network: a flat parameter vector plus the layer plan that
//! indexes into it. Forward passes keep a trace for backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{Activation, ArchitectureConfig, CONV_KERNEL, PRELU_INIT};
use super::ops;
use crate::error::Result;
use crate::seed;

/// Pixel offset subtracted from inputs so that mid-gray maps to zero.
pub const INPUT_CENTER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    Dense,
    Output,
}

/// Public description of one layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerInfo {
    pub index: usize,
    pub kind: LayerKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv {
        in_c: usize,
        out_c: usize,
        h: usize,
        w: usize,
        w_off: usize,
        b_off: usize,
        alpha_off: Option<usize>,
    },
    Pool {
        c: usize,
        h: usize,
        w: usize,
    },
    Dense {
        inp: usize,
        out: usize,
        w_off: usize,
        b_off: usize,
        alpha_off: Option<usize>,
        dropout: f64,
        hidden: bool,
    },
}

impl Layer {
    fn output_len(&self) -> usize {
        match *self {
            Layer::Conv { out_c, h, w, .. } => out_c * h * w,
            Layer::Pool { c, h, w } => c * (h / 2) * (w / 2),
            Layer::Dense { out, .. } => out,
        }
    }
}

#[derive(Debug)]
enum Cache {
    Conv { col: Vec<f64>, z: Vec<f64> },
    Pool { arg: Vec<u32> },
    Dense { z: Vec<f64>, mask: Option<Vec<f64>> },
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug)]
pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
    caches: Vec<Cache>,
}

impl Trace {
    pub(crate) fn output(&self) -> f64 {
        self.acts.last().expect("trace has an output")[0]
    }

    pub(crate) fn activation(&self, layer: usize) -> &[f64] {
        &self.acts[layer + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    architecture: ArchitectureConfig,
    side: usize,
    params: Vec<f64>,
    plan: Vec<Layer>,
}

fn apply_act(z: f64, alpha: Option<f64>) -> f64 {
    if z > 0.0 {
        z
    } else {
        match alpha {
            Some(a) => a * z,
            None => 0.0,
        }
    }
}

impl Network {
    /// Builds a network with all parameters zero (PReLU slopes at their
    /// initial value). Use [`Network::initialize`] for random weights.
    pub fn build(architecture: &ArchitectureConfig, side: usize) -> Result<Self> {
        architecture.validate(side)?;
        let prelu = architecture.hidden_activation == Activation::ParametricRelu;
        let mut plan = Vec::new();
        let mut offset = 0;
        let mut take = |n: usize| {
            let o = offset;
            offset += n;
            o
        };
        let (mut c, mut h, mut w) = (1, side, side);
        for seg in &architecture.segments {
            for _ in 0..seg.convs {
                let w_off = take(seg.filters * c * CONV_KERNEL * CONV_KERNEL);
                let b_off = take(seg.filters);
                let alpha_off = prelu.then(|| take(seg.filters));
                plan.push(Layer::Conv {
                    in_c: c,
                    out_c: seg.filters,
                    h,
                    w,
                    w_off,
                    b_off,
                    alpha_off,
                });
                c = seg.filters;
            }
            plan.push(Layer::Pool { c, h, w });
            h /= 2;
            w /= 2;
        }
        let mut width = c * h * w;
        for _ in 0..architecture.fc_layers {
            let w_off = take(architecture.fc_width * width);
            let b_off = take(architecture.fc_width);
            let alpha_off = prelu.then(|| take(architecture.fc_width));
            plan.push(Layer::Dense {
                inp: width,
                out: architecture.fc_width,
                w_off,
                b_off,
                alpha_off,
                dropout: architecture.dropout,
                hidden: true,
            });
            width = architecture.fc_width;
        }
        let w_off = take(width);
        let b_off = take(1);
        plan.push(Layer::Dense {
            inp: width,
            out: 1,
            w_off,
            b_off,
            alpha_off: None,
            dropout: 0.0,
            hidden: false,
        });
        let mut params = vec![0.0; offset];
        for layer in &plan {
            let alpha = match *layer {
                Layer::Conv { alpha_off: Some(a), out_c, .. } => Some((a, out_c)),
                Layer::Dense { alpha_off: Some(a), out, .. } => Some((a, out)),
                _ => None,
            };
            if let Some((a, n)) = alpha {
                params[a..a + n].fill(PRELU_INIT);
            }
        }
        debug_assert_eq!(params.len(), architecture.param_count(side));
        Ok(Self {
            architecture: architecture.clone(),
            side,
            params,
            plan,
        })
    }

    /// Fan-in scaled Gaussian weights (He for hidden layers, `1/fan_in`
    /// variance for the output), zero biases.
    pub fn initialize(&mut self, seed_value: u64) {
        let mut rng = seed::rng(seed::derive(seed_value, "init"));
        for layer in &self.plan {
            let (w_off, n_w, fan_in, gain) = match *layer {
                Layer::Conv { in_c, out_c, w_off, .. } => (w_off, out_c * in_c * 9, in_c * 9, 2.0),
                Layer::Dense { inp, out, w_off, hidden, .. } => {
                    (w_off, inp * out, inp, if hidden { 2.0 } else { 1.0 })
                }
                Layer::Pool { .. } => continue,
            };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut self.params[w_off..w_off + n_w] {
                *p = normal.sample(&mut rng);
            }
        }
    }

    pub fn architecture(&self) -> &ArchitectureConfig {
        &self.architecture
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(crate::error::Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn set_output_bias(&mut self, value: f64) {
        if let Some(Layer::Dense { b_off, .. }) = self.plan.last() {
            self.params[*b_off] = value;
        }
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.plan
            .iter()
            .enumerate()
            .map(|(index, l)| match *l {
                Layer::Conv { out_c, h, w, .. } => LayerInfo {
                    index,
                    kind: LayerKind::Conv,
                    channels: out_c,
                    height: h,
                    width: w,
                },
                Layer::Pool { c, h, w } => LayerInfo {
                    index,
                    kind: LayerKind::Pool,
                    channels: c,
                    height: h / 2,
                    width: w / 2,
                },
                Layer::Dense { out, hidden, .. } => LayerInfo {
                    index,
                    kind: if hidden { LayerKind::Dense } else { LayerKind::Output },
                    channels: out,
                    height: 1,
                    width: 1,
                },
            })
            .collect()
    }

    /// Inference-mode forward pass (dropout off).
    pub fn predict(&self, pixels: &[f64]) -> f64 {
        self.forward::<rand_chacha::ChaCha8Rng>(pixels, None, self.plan.len()).output()
    }

    /// Inference-mode output of layer `index` (post-activation), laid out
    /// channel-major.
    pub fn layer_output(&self, pixels: &[f64], index: usize) -> Vec<f64> {
        assert!(index < self.plan.len(), "layer {index} out of range");
        self.forward::<rand_chacha::ChaCha8Rng>(pixels, None, index + 1)
            .activation(index)
            .to_vec()
    }

    /// Squared error `(y - target)^2` of one image and its gradient with
    /// respect to every parameter, dropout off.
    pub fn loss_and_gradient(&self, pixels: &[f64], target: f64) -> (f64, Vec<f64>) {
        let trace = self.forward::<rand_chacha::ChaCha8Rng>(pixels, None, self.plan.len());
        let err = trace.output() - target;
        let mut grad = vec![0.0; self.param_count()];
        self.backward(&trace, 2.0 * err, &mut grad);
        (err * err, grad)
    }

    /// Forward pass up to and including layer `stop - 1`. With a dropout
    /// rng the hidden dense layers sample masks (training mode).
    pub(crate) fn forward<R: Rng>(&self, pixels: &[f64], mut dropout_rng: Option<&mut R>, stop: usize) -> Trace {
        assert_eq!(pixels.len(), self.side * self.side, "input size");
        let p = &self.params;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(stop + 1);
        acts.push(pixels.iter().map(|v| v - INPUT_CENTER).collect());
        let mut caches = Vec::with_capacity(stop);
        for layer in self.plan.iter().take(stop) {
            let x = acts.last().expect("input present");
            let mut out = vec![0.0; layer.output_len()];
            let cache = match *layer {
                Layer::Conv { in_c, out_c, h, w, w_off, b_off, alpha_off } => {
                    let hw = h * w;
                    let mut col = vec![0.0; in_c * 9 * hw];
                    ops::im2col(x, in_c, h, w, &mut col);
                    for (o, row) in out.chunks_mut(hw).enumerate() {
                        row.fill(p[b_off + o]);
                    }
                    ops::gemm(out_c, in_c * 9, hw, &p[w_off..], false, &col, false, 1.0, &mut out);
                    let z = out.clone();
                    for (o, row) in out.chunks_mut(hw).enumerate() {
                        let alpha = alpha_off.map(|a| p[a + o]);
                        row.iter_mut().for_each(|v| *v = apply_act(*v, alpha));
                    }
                    Cache::Conv { col, z }
                }
                Layer::Pool { c, h, w } => {
                    let mut arg = vec![0u32; out.len()];
                    ops::maxpool_forward(x, c, h, w, &mut out, &mut arg);
                    Cache::Pool { arg }
                }
                Layer::Dense { inp, out: n, w_off, b_off, alpha_off, dropout, hidden } => {
                    out.copy_from_slice(&p[b_off..b_off + n]);
                    ops::gemm(n, inp, 1, &p[w_off..], false, x, false, 1.0, &mut out);
                    let z = out.clone();
                    let mut mask = None;
                    if hidden {
                        for (j, v) in out.iter_mut().enumerate() {
                            *v = apply_act(*v, alpha_off.map(|a| p[a + j]));
                        }
                        if dropout > 0.0 {
                            if let Some(rng) = dropout_rng.as_deref_mut() {
                                let keep = 1.0 / (1.0 - dropout);
                                let m: Vec<f64> = (0..n)
                                    .map(|_| if rng.random::<f64>() >= dropout { keep } else { 0.0 })
                                    .collect();
                                out.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                                mask = Some(m);
                            }
                        }
                    }
                    Cache::Dense { z, mask }
                }
            };
            acts.push(out);
            caches.push(cache);
        }
        Trace { acts, caches }
    }

    /// Accumulates `d_output * d(output)/d(params)` into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, d_output: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(trace.caches.len(), self.plan.len(), "backward needs a full trace");
        let p = &self.params;
        let mut g = vec![d_output];
        for (i, layer) in self.plan.iter().enumerate().rev() {
            let x = &trace.acts[i];
            match (layer, &trace.caches[i]) {
                (&Layer::Dense { inp, out, w_off, b_off, alpha_off, hidden, .. }, Cache::Dense { z, mask }) => {
                    if hidden {
                        if let Some(m) = mask {
                            g.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                        }
                        for j in 0..out {
                            if z[j] <= 0.0 {
                                match alpha_off {
                                    Some(a) => {
                                        grad[a + j] += g[j] * z[j];
                                        g[j] *= p[a + j];
                                    }
                                    None => g[j] = 0.0,
                                }
                            }
                        }
                    }
                    for j in 0..out {
                        grad[b_off + j] += g[j];
                    }
                    // dW (out x inp) += g (out x 1) * x^T (1 x inp)
                    ops::gemm(out, 1, inp, &g, false, x, false, 1.0, &mut grad[w_off..w_off + out * inp]);
                    if i > 0 {
                        let mut gin = vec![0.0; inp];
                        ops::gemm(inp, out, 1, &p[w_off..], true, &g, false, 0.0, &mut gin);
                        g = gin;
                    }
                }
                (&Layer::Pool { .. }, Cache::Pool { arg }) => {
                    let mut gin = vec![0.0; x.len()];
                    ops::maxpool_backward(&g, arg, &mut gin);
                    g = gin;
                }
                (&Layer::Conv { in_c, out_c, h, w, w_off, b_off, alpha_off }, Cache::Conv { col, z }) => {
                    let hw = h * w;
                    for o in 0..out_c {
                        let gz = &mut g[o * hw..(o + 1) * hw];
                        let zz = &z[o * hw..(o + 1) * hw];
                        match alpha_off {
                            Some(a) => {
                                let alpha = p[a + o];
                                let mut da = 0.0;
                                for (gv, &zv) in gz.iter_mut().zip(zz) {
                                    if zv <= 0.0 {
                                        da += *gv * zv;
                                        *gv *= alpha;
                                    }
                                }
                                grad[a + o] += da;
                            }
                            None => gz.iter_mut().zip(zz).for_each(|(gv, &zv)| {
                                if zv <= 0.0 {
                                    *gv = 0.0
                                }
                            }),
                        }
                        grad[b_off + o] += gz.iter().sum::<f64>();
                    }
                    let k = in_c * 9;
                    ops::gemm(out_c, hw, k, &g, false, col, true, 1.0, &mut grad[w_off..w_off + out_c * k]);
                    if i > 0 {
                        let mut dcol = vec![0.0; k * hw];
                        ops::gemm(k, out_c, hw, &p[w_off..], true, &g, false, 0.0, &mut dcol);
                        let mut gin = vec![0.0; in_c * hw];
                        ops::col2im(&dcol, in_c, h, w, &mut gin);
                        g = gin;
                    }
                }
                _ => unreachable!("cache kind follows layer kind"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::Segment;

    fn tiny(act: Activation, dropout: f64) -> ArchitectureConfig {
        ArchitectureConfig {
            segments: vec![Segment::new(2, 3)],
            fc_layers: 2,
            fc_width: 5,
            dropout,
            hidden_activation: act,
        }
    }

    fn image(side: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s);
        (0..side * side).map(|_| rng.random::<f64>()).collect()
    }

    /// Central differences on every parameter of a tiny network.
    fn check(act: Activation, dropout: f64) {
        let side = 8;
        let mut net = Network::build(&tiny(act, dropout), side).unwrap();
        net.initialize(3);
        for b in net.params.iter_mut() {
            if *b == 0.0 {
                *b = 0.01;
            }
        }
        let x = image(side, 4);
        let target = 0.3;
        let loss = |n: &Network| {
            let mut r = seed::rng(99);
            let y = n.forward(&x, Some(&mut r), n.plan.len()).output();
            (y - target).powi(2)
        };
        let mut r = seed::rng(99);
        let trace = net.forward(&x, Some(&mut r), net.plan.len());
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&trace, 2.0 * (trace.output() - target), &mut grad);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params[k] += eps;
            let mut minus = net.clone();
            minus.params[k] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let denom = grad[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[k] - numeric).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_relu() {
        check(Activation::Relu, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_prelu_with_dropout() {
        check(Activation::ParametricRelu, 0.3);
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = Network::build(&tiny(Activation::Relu, 0.5), 8).unwrap();
        assert_eq!(net.predict(&image(8, 1)), 0.0);
    }

    #[test]
    fn layer_listing() {
        let net = Network::build(&tiny(Activation::Relu, 0.0), 8).unwrap();
        let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind).collect();
        use LayerKind::*;
        assert_eq!(kinds, vec![Conv, Conv, Pool, Dense, Dense, Output]);
        assert_eq!(net.layers()[2].height, 4);
    }
}
