//! Per-scale ε-predictor: 3×3 convolutions with SiLU and a log-SNR embedding
//! injected as a learned per-channel bias, followed by a zero-initialised
//! output convolution.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Architecture of one [`EpsNet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Channels of the noisy latent, which is also the output channel count.
    pub channels: usize,
    /// Channels of the conditioning tensor (0 at the base scale).
    pub cond_channels: usize,
    /// Widths of the hidden convolutions.
    pub hidden: Vec<usize>,
    /// Length of the sinusoidal log-SNR embedding (even).
    pub embed_dim: usize,
}

impl NetConfig {
    pub fn new(channels: usize, cond_channels: usize, hidden: Vec<usize>) -> Self {
        Self { channels, cond_channels, hidden, embed_dim: 64 }
    }

    pub fn input_channels(&self) -> usize {
        self.channels + self.cond_channels
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid network config {self:?}")));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!("embedding size {} must be even", self.embed_dim)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvSlots {
    c_in: usize,
    c_out: usize,
    weight: usize,
    bias: usize,
    /// Offset of the `c_out × embed_dim` embedding projection, hidden layers only.
    embed: Option<usize>,
}

/// ε-network with all parameters in one flat vector.
///
/// The last parameter is the log-variance of the scale's Gaussian decoder,
/// which the network itself does not use.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsNet {
    config: NetConfig,
    layers: Vec<ConvSlots>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`EpsNet::backward`].
#[derive(Clone, Debug, Default)]
pub struct Activations {
    height: usize,
    width: usize,
    input: Vec<f64>,
    embed: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Activations {
    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

fn layout(config: &NetConfig) -> (Vec<ConvSlots>, usize) {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut c_in = config.input_channels();
    for &c_out in &config.hidden {
        let weight = offset;
        offset += c_out * c_in * 9;
        let bias = offset;
        offset += c_out;
        let embed = offset;
        offset += c_out * config.embed_dim;
        layers.push(ConvSlots { c_in, c_out, weight, bias, embed: Some(embed) });
        c_in = c_out;
    }
    let weight = offset;
    offset += config.channels * c_in * 9;
    let bias = offset;
    offset += config.channels;
    layers.push(ConvSlots { c_in, c_out: config.channels, weight, bias, embed: None });
    (layers, offset + 1)
}

/// Sinusoidal features of the log-SNR with frequencies from 1 down to 1/100.
pub fn embed_log_snr(gamma: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(100f64.ln()) * j as f64 / half.max(2) as f64).exp();
        out[j] = (gamma * freq).sin();
        out[half + j] = (gamma * freq).cos();
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[o] += Σ_c w[o,c] ⋆ x[c]` with zero padding.
fn conv3x3_acc(x: &[f64], w: &[f64], out: &mut [f64], c_in: usize, c_out: usize, h: usize, wd: usize) {
    let plane = h * wd;
    for o in 0..c_out {
        let out_p = &mut out[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let x_p = &x[c * plane..(c + 1) * plane];
            let k = &w[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
            for di in 0..3usize {
                let (i0, i1) = row_range(di, h);
                for dj in 0..3usize {
                    let wv = k[di * 3 + dj];
                    if wv == 0.0 {
                        continue;
                    }
                    let (j0, j1) = row_range(dj, wd);
                    for i in i0..i1 {
                        let si = i + di - 1;
                        let orow = &mut out_p[i * wd + j0..i * wd + j1];
                        let xrow = &x_p[si * wd + j0 + dj - 1..si * wd + j1 + dj - 1];
                        for (o_v, x_v) in orow.iter_mut().zip(xrow) {
                            *o_v += wv * x_v;
                        }
                    }
                }
            }
        }
    }
}

/// Output indices `[lo, hi)` along one axis for which tap offset `d − 1` stays in bounds.
fn row_range(d: usize, n: usize) -> (usize, usize) {
    match d {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Backward of [`conv3x3_acc`]: accumulates weight gradients and, when given,
/// input gradients.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    x: &[f64],
    w: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    mut d_x: Option<&mut [f64]>,
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
) {
    let plane = h * wd;
    for o in 0..c_out {
        let g_p = &d_out[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let x_p = &x[c * plane..(c + 1) * plane];
            let base = (o * c_in + c) * 9;
            for di in 0..3usize {
                let (i0, i1) = row_range(di, h);
                for dj in 0..3usize {
                    let (j0, j1) = row_range(dj, wd);
                    let mut acc = 0.0;
                    for i in i0..i1 {
                        let si = i + di - 1;
                        let grow = &g_p[i * wd + j0..i * wd + j1];
                        let xrow = &x_p[si * wd + j0 + dj - 1..si * wd + j1 + dj - 1];
                        acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_w[base + di * 3 + dj] += acc;
                    if let Some(dx) = d_x.as_deref_mut() {
                        let wv = w[base + di * 3 + dj];
                        let dx_p = &mut dx[c * plane..(c + 1) * plane];
                        for i in i0..i1 {
                            let si = i + di - 1;
                            let grow = &g_p[i * wd + j0..i * wd + j1];
                            let dxrow = &mut dx_p[si * wd + j0 + dj - 1..si * wd + j1 + dj - 1];
                            for (d, g) in dxrow.iter_mut().zip(grow) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl EpsNet {
    /// Kaiming-uniform convolutions, small embedding projections, zero output layer.
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (layers, n) = layout(&config);
        let mut params = vec![0.0; n];
        for l in &layers[..layers.len() - 1] {
            let bound = (6.0 / (l.c_in * 9) as f64).sqrt();
            for v in &mut params[l.weight..l.weight + l.c_out * l.c_in * 9] {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
            let e = l.embed.expect("hidden layers carry an embedding projection");
            let eb = 1.0 / (config.embed_dim as f64).sqrt();
            for v in &mut params[e..e + l.c_out * config.embed_dim] {
                *v = eb * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(Self { config, layers, params })
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layers, n) = layout(&config);
        if params.len() != n {
            return Err(Error::Shape(format!("network needs {n} parameters, got {}", params.len())));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Index of the decoder log-variance inside the parameter vector.
    pub fn log_var_index(&self) -> usize {
        self.params.len() - 1
    }

    pub fn decoder_log_var(&self) -> f64 {
        self.params[self.log_var_index()]
    }

    pub fn set_decoder_log_var(&mut self, v: f64) {
        let i = self.log_var_index();
        self.params[i] = v;
    }

    fn check_inputs(&self, z_t: &Tensor, cond: Option<&Tensor>) -> Result<(usize, usize)> {
        let (c, h, w) = z_t.chw()?;
        if c != self.config.channels {
            return Err(Error::Shape(format!("latent has {c} channels, network expects {}", self.config.channels)));
        }
        match (cond, self.config.cond_channels) {
            (None, 0) => {}
            (Some(t), k) if k > 0 => {
                if t.shape() != [k, h, w] {
                    return Err(Error::Shape(format!("conditioning {:?}, expected {:?}", t.shape(), [k, h, w])));
                }
            }
            (None, k) => return Err(Error::Shape(format!("missing {k}-channel conditioning"))),
            (Some(_), _) => return Err(Error::Shape("unexpected conditioning input".into())),
        }
        Ok((h, w))
    }

    pub fn forward(&self, z_t: &Tensor, gamma: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        self.forward_with(z_t, gamma, cond, &mut Activations::default())
    }

    /// Forward pass that records activations for a later [`EpsNet::backward`].
    pub fn forward_with(
        &self,
        z_t: &Tensor,
        gamma: f64,
        cond: Option<&Tensor>,
        ws: &mut Activations,
    ) -> Result<Tensor> {
        let (h, w) = self.check_inputs(z_t, cond)?;
        let plane = h * w;
        ws.height = h;
        ws.width = w;
        ws.input.clear();
        ws.input.extend_from_slice(z_t.data());
        if let Some(c) = cond {
            ws.input.extend_from_slice(c.data());
        }
        ws.embed = embed_log_snr(gamma, self.config.embed_dim);
        ws.pre.clear();
        ws.post.clear();

        let e_dim = self.config.embed_dim;
        let n_layers = self.layers.len();
        for (li, l) in self.layers.iter().enumerate() {
            let x: &[f64] = if li == 0 { &ws.input } else { &ws.post[li - 1] };
            let mut out = vec![0.0; l.c_out * plane];
            conv3x3_acc(x, &self.params[l.weight..l.weight + l.c_out * l.c_in * 9], &mut out, l.c_in, l.c_out, h, w);
            for o in 0..l.c_out {
                let mut b = self.params[l.bias + o];
                if let Some(e) = l.embed {
                    let row = &self.params[e + o * e_dim..e + (o + 1) * e_dim];
                    b += row.iter().zip(&ws.embed).map(|(a, v)| a * v).sum::<f64>();
                }
                for v in &mut out[o * plane..(o + 1) * plane] {
                    *v += b;
                }
            }
            if li + 1 == n_layers {
                return Tensor::new(vec![l.c_out, h, w], out);
            }
            let act: Vec<f64> = out.iter().map(|&v| v * sigmoid(v)).collect();
            ws.pre.push(out);
            ws.post.push(act);
        }
        unreachable!("the output layer returns")
    }

    /// Accumulates parameter gradients of `⟨upstream, output⟩` into `grads`
    /// and returns the gradient with respect to the concatenated input
    /// `[z_t ; cond]`.
    pub fn backward(&self, ws: &Activations, upstream: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        if ws.is_empty() {
            return Err(Error::State("backward called before forward".into()));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!("gradient buffer {} vs {} parameters", grads.len(), self.params.len())));
        }
        let (h, w) = (ws.height, ws.width);
        let plane = h * w;
        if upstream.shape() != [self.config.channels, h, w] {
            return Err(Error::Shape(format!("upstream {:?} does not match the last output", upstream.shape())));
        }
        let e_dim = self.config.embed_dim;
        let mut d_out = upstream.data().to_vec();
        let mut d_in_total = vec![0.0; self.config.input_channels() * plane];
        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            if li + 1 < self.layers.len() {
                // Through SiLU.
                for (g, &x) in d_out.iter_mut().zip(&ws.pre[li]) {
                    let s = sigmoid(x);
                    *g *= s * (1.0 + x * (1.0 - s));
                }
            }
            for o in 0..l.c_out {
                let gsum: f64 = d_out[o * plane..(o + 1) * plane].iter().sum();
                grads[l.bias + o] += gsum;
                if let Some(e) = l.embed {
                    for (k, v) in ws.embed.iter().enumerate() {
                        grads[e + o * e_dim + k] += gsum * v;
                    }
                }
            }
            let x: &[f64] = if li == 0 { &ws.input } else { &ws.post[li - 1] };
            let wslice = &self.params[l.weight..l.weight + l.c_out * l.c_in * 9];
            let (gw, _) = grads.split_at_mut(l.weight + l.c_out * l.c_in * 9);
            let gw = &mut gw[l.weight..];
            if li == 0 {
                conv3x3_backward(x, wslice, &d_out, gw, Some(&mut d_in_total), l.c_in, l.c_out, h, w);
            } else {
                let mut d_x = vec![0.0; l.c_in * plane];
                conv3x3_backward(x, wslice, &d_out, gw, Some(&mut d_x), l.c_in, l.c_out, h, w);
                d_out = d_x;
            }
        }
        Tensor::new(vec![self.config.input_channels(), h, w], d_in_total)
    }

    /// Independent forward passes, one per item, in input order.
    pub fn forward_batch(&self, items: &[(Tensor, f64, Option<Tensor>)]) -> Result<Vec<Tensor>> {
        use rayon::prelude::*;
        items.par_iter().map(|(z, g, c)| self.forward(z, *g, c.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cond: usize, rng: &mut Rng) -> EpsNet {
        let mut cfg = NetConfig::new(2, cond, vec![3, 4]);
        cfg.embed_dim = 8;
        EpsNet::new(cfg, rng).unwrap()
    }

    fn randomize_all(net: &mut EpsNet, rng: &mut Rng) {
        for v in net.params_mut() {
            *v = 0.5 * rng.normal();
        }
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = Rng::new(1);
        let net = small(1, &mut rng);
        let z = Tensor::randn(vec![2, 4, 4], &mut rng);
        let c = Tensor::randn(vec![1, 4, 4], &mut rng);
        let out = net.forward(&z, 0.3, Some(&c)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_batch_equivariant() {
        let mut rng = Rng::new(2);
        let mut net = small(0, &mut rng);
        randomize_all(&mut net, &mut rng);
        let items: Vec<(Tensor, f64, Option<Tensor>)> =
            (0..4).map(|i| (Tensor::randn(vec![2, 4, 4], &mut rng), i as f64 - 1.0, None)).collect();
        let a = net.forward_batch(&items).unwrap();
        assert_eq!(a[1], net.forward(&items[1].0, items[1].1, None).unwrap());
        let perm = [2, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| items[i].clone()).collect();
        let b = net.forward_batch(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b[k], a[i]);
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(3);
        let net = small(1, &mut rng);
        let z = Tensor::zeros(vec![2, 4, 4]);
        assert!(net.forward(&z, 0.0, None).is_err());
        assert!(net.forward(&Tensor::zeros(vec![1, 4, 4]), 0.0, Some(&Tensor::zeros(vec![1, 4, 4]))).is_err());
        assert!(net.forward(&z, 0.0, Some(&Tensor::zeros(vec![1, 2, 2]))).is_err());
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut rng = Rng::new(4);
        let net = small(0, &mut rng);
        let mut g = vec![0.0; net.num_params()];
        let up = Tensor::zeros(vec![2, 4, 4]);
        assert!(matches!(net.backward(&Activations::default(), &up, &mut g), Err(Error::State(_))));
    }

    fn objective(net: &EpsNet, z: &Tensor, c: &Tensor) -> f64 {
        net.forward(z, 0.7, Some(c)).unwrap().norm_sq()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(5);
        let mut net = small(1, &mut rng);
        randomize_all(&mut net, &mut rng);
        let z = Tensor::randn(vec![2, 4, 4], &mut rng);
        let c = Tensor::randn(vec![1, 4, 4], &mut rng);
        let mut ws = Activations::default();
        let out = net.forward_with(&z, 0.7, Some(&c), &mut ws).unwrap();
        let mut g = vec![0.0; net.num_params()];
        let d_in = net.backward(&ws, &out.scale(2.0), &mut g).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = objective(&p, &z, &c);
            p.params_mut()[i] -= 2.0 * h;
            let down = objective(&p, &z, &c);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst parameter relative error {worst}");
        // Input gradient for the latent and conditioning channels.
        let joint = Tensor::concat_channels(&[&z, &c]).unwrap();
        for i in 0..joint.len() {
            let bump = |delta: f64| {
                let mut d = joint.data().to_vec();
                d[i] += delta;
                let t = Tensor::new(vec![3, 4, 4], d).unwrap();
                objective(&net, &t.channels(0, 2).unwrap(), &t.channels(2, 1).unwrap())
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = d_in.data()[i];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "input {i}: {fd} vs {an}");
        }
        assert_eq!(g[net.log_var_index()], 0.0);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = Rng::new(6);
        let mut net = small(0, &mut rng);
        randomize_all(&mut net, &mut rng);
        let z = Tensor::randn(vec![2, 4, 4], &mut rng);
        let mut ws = Activations::default();
        net.forward_with(&z, -2.0, None, &mut ws).unwrap();
        let up = Tensor::randn(vec![2, 4, 4], &mut rng);
        let mut g1 = vec![0.0; net.num_params()];
        let mut g2 = vec![0.0; net.num_params()];
        net.backward(&ws, &up, &mut g1).unwrap();
        net.backward(&ws, &up.scale(2.0), &mut g2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let mut g0 = vec![0.0; net.num_params()];
        net.backward(&ws, &Tensor::zeros(vec![2, 4, 4]), &mut g0).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_on_bounded_inputs() {
        let mut rng = Rng::new(7);
        let mut net = small(0, &mut rng);
        let i = net.log_var_index();
        let out_w = net.layers.last().unwrap().weight;
        for v in &mut net.params_mut()[out_w..i] {
            *v = 0.1;
        }
        for _ in 0..20 {
            let z = Tensor::new(vec![2, 4, 4], (0..32).map(|_| 20.0 * rng.uniform() - 10.0).collect()).unwrap();
            assert!(net.forward(&z, 5.0, None).is_ok());
        }
    }

    #[test]
    fn from_params_checks_length() {
        let mut rng = Rng::new(8);
        let net = small(0, &mut rng);
        let cfg = net.config().clone();
        assert!(EpsNet::from_params(cfg.clone(), net.params().to_vec()).is_ok());
        assert!(EpsNet::from_params(cfg, vec![0.0; 3]).is_err());
    }
}
