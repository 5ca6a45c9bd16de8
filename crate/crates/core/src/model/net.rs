use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SlicePair;
use crate::di_noise::DiNoise;
use crate::error::{Error, Result};
use crate::fusion::{forward_state, Ablation};
use crate::grid::Grid;
use crate::rng::Prng;
use crate::schedule::NoiseSchedule;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Channel widths of the encoder, bottleneck and decoder stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub enc: usize,
    pub mid: usize,
    pub dec: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            enc: 8,
            mid: 16,
            dec: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc == 0 || self.mid == 0 || self.dec == 0 {
            return Err(Error::Config(format!(
                "channel widths must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    stride: usize,
    weight: usize,
    bias: usize,
}

impl ConvSpec {
    fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    fn fan_in(&self) -> usize {
        self.cin * 9
    }
}

/// Offsets of every tensor in the flat parameter vector, in declaration order.
#[derive(Debug, Clone, Copy)]
struct Layout {
    enc: ConvSpec,
    down: ConvSpec,
    cond: usize,
    mid: ConvSpec,
    dec: ConvSpec,
    out: ConvSpec,
    total: usize,
}

fn alloc_conv(cursor: &mut usize, cin: usize, cout: usize, stride: usize) -> ConvSpec {
    let weight = *cursor;
    *cursor += cout * cin * 9;
    let bias = *cursor;
    *cursor += cout;
    ConvSpec {
        cin,
        cout,
        stride,
        weight,
        bias,
    }
}

impl Layout {
    fn new(arch: ArchConfig) -> Self {
        let mut cursor = 0;
        let enc = alloc_conv(&mut cursor, 2, arch.enc, 1);
        let down = alloc_conv(&mut cursor, arch.enc, arch.mid, 2);
        let cond = cursor;
        cursor += arch.mid;
        let mid = alloc_conv(&mut cursor, arch.mid, arch.mid, 1);
        let dec = alloc_conv(&mut cursor, arch.mid + arch.enc, arch.dec, 1);
        let out = alloc_conv(&mut cursor, arch.dec, 1, 1);
        Self {
            enc,
            down,
            cond,
            mid,
            dec,
            out,
            total: cursor,
        }
    }

    fn convs(&self) -> [ConvSpec; 5] {
        [self.enc, self.down, self.mid, self.dec, self.out]
    }
}

/// Flat parameter vector plus the architecture it belongs to.
///
/// Values are kept exactly representable as `f32` so checkpoints are lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn num_params(arch: ArchConfig) -> usize {
        Layout::new(arch).total
    }

    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            values: vec![0.0; Self::num_params(arch)],
        })
    }

    /// Uniform in `[-k, k]` with `k = 1 / sqrt(fan_in)` for every convolution
    /// tensor; the conditioning projection uses `k = 1`.
    pub fn init(arch: ArchConfig, rng: &mut Prng) -> Result<Self> {
        use rand::Rng;
        let mut p = Self::zeros(arch)?;
        let layout = Layout::new(arch);
        for conv in layout.convs() {
            let k = 1.0 / (conv.fan_in() as f64).sqrt();
            for v in &mut p.values[conv.weight..conv.bias + conv.cout] {
                *v = rng.random_range(-k..k) as f32 as f64;
            }
        }
        for v in &mut p.values[layout.cond..layout.cond + arch.mid] {
            *v = rng.random_range(-1.0..1.0) as f32 as f64;
        }
        Ok(p)
    }

    pub fn from_values(arch: ArchConfig, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = Self::num_params(arch);
        if values.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} parameters for {arch:?}, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Names of the parameter tensors with their `[start, end)` ranges.
    pub fn tensor_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let l = Layout::new(self.arch);
        let conv = |name_w, name_b, c: ConvSpec| {
            [
                (name_w, c.weight..c.weight + c.weight_len()),
                (name_b, c.bias..c.bias + c.cout),
            ]
        };
        let mut out = Vec::new();
        out.extend(conv("enc.weight", "enc.bias", l.enc));
        out.extend(conv("down.weight", "down.bias", l.down));
        out.push(("cond.proj", l.cond..l.cond + self.arch.mid));
        out.extend(conv("mid.weight", "mid.bias", l.mid));
        out.extend(conv("dec.weight", "dec.bias", l.dec));
        out.extend(conv("out.weight", "out.bias", l.out));
        out
    }
}


/// Value of the constant conditioning channel for a given `abar_t`.
pub fn conditioning_value(alpha_bar: f64) -> f64 {
    2.0 * alpha_bar - 1.0
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Channel-major feature map.
#[derive(Debug, Clone)]
struct Feature {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Feature {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    fn check_finite(&self, layer: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("layer {layer}")))
        }
    }
}

/// Valid output index range for kernel offset `k` (0..3) with padding 1.
fn out_range(k: usize, stride: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
    // input index = o * stride + k - 1 must lie in [0, n_in)
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi = (n_in + 1 - k).div_ceil(stride);
    lo..hi.min(n_out)
}

fn conv_forward(params: &[f64], spec: ConvSpec, input: &Feature) -> Feature {
    let (h, w) = (input.h, input.w);
    let (ho, wo) = (h / spec.stride, w / spec.stride);
    let mut out = Feature::zeros(spec.cout, ho, wo);
    let weights = &params[spec.weight..spec.weight + spec.weight_len()];
    for co in 0..spec.cout {
        let plane = &mut out.data[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(params[spec.bias + co]);
        for ci in 0..spec.cin {
            let src = input.plane(ci);
            for ky in 0..3 {
                let rows = out_range(ky, spec.stride, h, ho);
                for kx in 0..3 {
                    let wv = weights[((co * spec.cin + ci) * 3 + ky) * 3 + kx];
                    let cols = out_range(kx, spec.stride, w, wo);
                    for oy in rows.clone() {
                        let iy = oy * spec.stride + ky - 1;
                        let src_row = &src[iy * w..(iy + 1) * w];
                        let dst_row = &mut plane[oy * wo..(oy + 1) * wo];
                        if spec.stride == 1 {
                            let off = kx as isize - 1;
                            for ox in cols.clone() {
                                dst_row[ox] += wv * src_row[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in cols.clone() {
                                dst_row[ox] += wv * src_row[ox * spec.stride + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `grad` and returns the input gradient
/// when `need_input` is set.
fn conv_backward(
    params: &[f64],
    grad: &mut [f64],
    spec: ConvSpec,
    input: &Feature,
    dout: &Feature,
    need_input: bool,
) -> Option<Feature> {
    let (h, w) = (input.h, input.w);
    let (ho, wo) = (dout.h, dout.w);
    let mut din = need_input.then(|| Feature::zeros(spec.cin, h, w));
    for co in 0..spec.cout {
        let dplane = dout.plane(co);
        grad[spec.bias + co] += dplane.iter().sum::<f64>();
        for ci in 0..spec.cin {
            let src = input.plane(ci);
            for ky in 0..3 {
                let rows = out_range(ky, spec.stride, h, ho);
                for kx in 0..3 {
                    let widx = spec.weight + ((co * spec.cin + ci) * 3 + ky) * 3 + kx;
                    let wv = params[widx];
                    let cols = out_range(kx, spec.stride, w, wo);
                    let mut gw = 0.0;
                    for oy in rows.clone() {
                        let iy = oy * spec.stride + ky - 1;
                        let drow = &dplane[oy * wo..(oy + 1) * wo];
                        for ox in cols.clone() {
                            let ix = ox * spec.stride + kx - 1;
                            gw += drow[ox] * src[iy * w + ix];
                        }
                        if let Some(din) = din.as_mut() {
                            let dst = &mut din.data[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                            for ox in cols.clone() {
                                dst[ox * spec.stride + kx - 1] += wv * drow[ox];
                            }
                        }
                    }
                    grad[widx] += gw;
                }
            }
        }
    }
    din
}

fn upsample2(f: &Feature) -> Feature {
    let (h, w) = (f.h * 2, f.w * 2);
    let mut out = Feature::zeros(f.c, h, w);
    for c in 0..f.c {
        for y in 0..h {
            for x in 0..w {
                out.data[(c * h + y) * w + x] = f.data[(c * f.h + y / 2) * f.w + x / 2];
            }
        }
    }
    out
}

fn upsample2_backward(d: &Feature) -> Feature {
    let (h, w) = (d.h / 2, d.w / 2);
    let mut out = Feature::zeros(d.c, h, w);
    for c in 0..d.c {
        for y in 0..d.h {
            for x in 0..d.w {
                out.data[(c * h + y / 2) * w + x / 2] += d.data[(c * d.h + y) * d.w + x];
            }
        }
    }
    out
}

fn concat(a: &Feature, b: &Feature) -> Feature {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Feature {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

struct Activations {
    input: Feature,
    z1: Feature,
    a1: Feature,
    z2: Feature,
    a2: Feature,
    z3: Feature,
    cat: Feature,
    z4: Feature,
    a4: Feature,
    out: Feature,
}

fn check_input(x: &Grid) -> Result<()> {
    let (h, w) = x.shape();
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "predictor needs even spatial dimensions >= 2, got {h}x{w}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("predictor input".into()));
    }
    Ok(())
}

fn run_forward(params: &ModelParams, x_t: &Grid, alpha_bar: f64) -> Result<Activations> {
    check_input(x_t)?;
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::Config(format!(
            "alpha_bar must lie in (0, 1], got {alpha_bar}"
        )));
    }
    let l = Layout::new(params.arch);
    let p = params.values();
    let (h, w) = x_t.shape();
    let cval = conditioning_value(alpha_bar);

    let mut input = Feature::zeros(2, h, w);
    input.data[..h * w].copy_from_slice(x_t.as_slice());
    input.data[h * w..].fill(cval);

    let z1 = conv_forward(p, l.enc, &input);
    z1.check_finite("enc")?;
    let a1 = Feature {
        data: z1.data.iter().map(|&v| leaky(v)).collect(),
        ..z1.clone()
    };

    let mut z2 = conv_forward(p, l.down, &a1);
    let n2 = z2.h * z2.w;
    for c in 0..z2.c {
        let shift = p[l.cond + c] * cval;
        z2.data[c * n2..(c + 1) * n2].iter_mut().for_each(|v| *v += shift);
    }
    z2.check_finite("down")?;
    let a2 = Feature {
        data: z2.data.iter().map(|&v| leaky(v)).collect(),
        ..z2.clone()
    };

    let z3 = conv_forward(p, l.mid, &a2);
    z3.check_finite("mid")?;
    let a3 = Feature {
        data: z3.data.iter().map(|&v| leaky(v)).collect(),
        ..z3.clone()
    };

    let cat = concat(&upsample2(&a3), &a1);
    let z4 = conv_forward(p, l.dec, &cat);
    z4.check_finite("dec")?;
    let a4 = Feature {
        data: z4.data.iter().map(|&v| leaky(v)).collect(),
        ..z4.clone()
    };

    let out = conv_forward(p, l.out, &a4);
    out.check_finite("out")?;

    Ok(Activations {
        input,
        z1,
        a1,
        z2,
        a2,
        z3,
        cat,
        z4,
        a4,
        out,
    })
}

/// Predicts the clean target from `x_t`, conditioned on `abar_t`.
pub fn forward(params: &ModelParams, x_t: &Grid, alpha_bar: f64) -> Result<Grid> {
    let acts = run_forward(params, x_t, alpha_bar)?;
    Grid::from_vec(x_t.height(), x_t.width(), acts.out.data)
}

fn apply_leaky_grad(d: &mut Feature, z: &Feature) {
    for (g, &v) in d.data.iter_mut().zip(&z.data) {
        *g *= leaky_grad(v);
    }
}

fn check_grad(f: &Feature, layer: &str) -> Result<()> {
    if f.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("gradient of layer {layer}")))
    }
}

/// Mean squared error against `target` and its gradient w.r.t. every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    input: &Grid,
    alpha_bar: f64,
    target: &Grid,
) -> Result<(f64, Vec<f64>)> {
    input.ensure_same_shape(target)?;
    let acts = run_forward(params, input, alpha_bar)?;
    let l = Layout::new(params.arch);
    let p = params.values();
    let n = target.len() as f64;
    let mut grad = vec![0.0; p.len()];

    let mut loss = 0.0;
    let mut dout = Feature::zeros(1, acts.out.h, acts.out.w);
    for ((d, &o), &t) in dout.data.iter_mut().zip(&acts.out.data).zip(target.as_slice()) {
        let e = o - t;
        loss += e * e;
        *d = 2.0 * e / n;
    }
    loss /= n;

    let mut d4 = conv_backward(p, &mut grad, l.out, &acts.a4, &dout, true).unwrap();
    apply_leaky_grad(&mut d4, &acts.z4);
    check_grad(&d4, "dec")?;

    let dcat = conv_backward(p, &mut grad, l.dec, &acts.cat, &d4, true).unwrap();
    let split = l.mid.cout * acts.cat.h * acts.cat.w;
    let dup = Feature {
        c: l.mid.cout,
        h: acts.cat.h,
        w: acts.cat.w,
        data: dcat.data[..split].to_vec(),
    };
    let mut d3 = upsample2_backward(&dup);
    apply_leaky_grad(&mut d3, &acts.z3);
    check_grad(&d3, "mid")?;

    let mut d2 = conv_backward(p, &mut grad, l.mid, &acts.a2, &d3, true).unwrap();
    apply_leaky_grad(&mut d2, &acts.z2);
    check_grad(&d2, "down")?;
    let cval = acts.input.data[acts.input.h * acts.input.w];
    let n2 = d2.h * d2.w;
    for c in 0..d2.c {
        grad[l.cond + c] += cval * d2.data[c * n2..(c + 1) * n2].iter().sum::<f64>();
    }

    let mut d1 = conv_backward(p, &mut grad, l.down, &acts.a1, &d2, true).unwrap();
    for (g, &s) in d1.data.iter_mut().zip(&dcat.data[split..]) {
        *g += s;
    }
    apply_leaky_grad(&mut d1, &acts.z1);
    check_grad(&d1, "enc")?;
    conv_backward(p, &mut grad, l.enc, &acts.input, &d1, false);

    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok((loss, grad))
}

/// Central finite-difference estimate of the loss gradient, using only
/// [`forward`].
pub fn finite_difference_gradient(
    params: &ModelParams,
    input: &Grid,
    alpha_bar: f64,
    target: &Grid,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + step;
        let up = forward(&probe, input, alpha_bar)?.mse(target)?;
        probe.values_mut()[k] = orig - step;
        let down = forward(&probe, input, alpha_bar)?.mse(target)?;
        probe.values_mut()[k] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Sign of every pre-activation, in layer order.
pub fn activation_pattern(params: &ModelParams, x_t: &Grid, alpha_bar: f64) -> Result<Vec<bool>> {
    let acts = run_forward(params, x_t, alpha_bar)?;
    Ok([&acts.z1, &acts.z2, &acts.z3, &acts.z4]
        .iter()
        .flat_map(|z| z.data.iter().map(|&v| v > 0.0))
        .collect())
}

/// Marks the parameters whose `+-step` perturbations land on different
/// activation patterns, where a central difference straddles a kink.
pub fn kink_crossings(
    params: &ModelParams,
    input: &Grid,
    alpha_bar: f64,
    step: f64,
) -> Result<Vec<bool>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + step;
        let up = activation_pattern(&probe, input, alpha_bar)?;
        probe.values_mut()[k] = orig - step;
        let down = activation_pattern(&probe, input, alpha_bar)?;
        probe.values_mut()[k] = orig;
        out.push(up != down);
    }
    Ok(out)
}

/// One training input/target pair.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub input: Grid,
    pub alpha_bar: f64,
    pub target: Grid,
}

/// Mean loss over the batch and its exact gradient.
///
/// Per-example gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the thread count.
pub fn gradients(params: &ModelParams, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|ex| loss_and_grad(params, &ex.input, ex.alpha_bar, &ex.target))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Training objective for one pair at step `t`: draws the residual noise
/// from `rng`, builds the perturbed fused input and returns the MSE of the
/// prediction against `x`.
pub fn loss(
    params: &ModelParams,
    pair: &SlicePair,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<f64> {
    let noise = DiNoise::from_pair(pair, rng)?;
    let state = forward_state(pair, &noise, t, sched, Ablation::default())?;
    let out = forward(params, &state.x_t, sched.alpha_bar(t))?;
    out.mse(&pair.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_grid(h: usize, w: usize, rng: &mut Prng) -> Grid {
        Grid::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn parameter_count_matches_layout() {
        let arch = ArchConfig::default();
        // enc 2->8, down 8->16, cond 16, mid 16->16, dec 24->8, out 8->1
        let expected = (8 * 2 * 9 + 8) + (16 * 8 * 9 + 16) + 16 + (16 * 16 * 9 + 16) + (8 * 24 * 9 + 8) + (8 * 9 + 1);
        assert_eq!(ModelParams::num_params(arch), expected);
        let p = ModelParams::zeros(arch).unwrap();
        let ranges = p.tensor_ranges();
        assert_eq!(ranges.first().unwrap().1.start, 0);
        assert_eq!(ranges.last().unwrap().1.end, expected);
        assert!(ranges.windows(2).all(|w| w[0].1.end == w[1].1.start));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = ModelParams::zeros(ArchConfig::default()).unwrap();
        let x = random_grid(8, 8, &mut Prng::new(1));
        assert_eq!(forward(&p, &x, 0.5).unwrap(), Grid::zeros(8, 8));
    }

    #[test]
    fn forward_is_deterministic_and_conditioned() {
        let arch = ArchConfig::default();
        let p = ModelParams::init(arch, &mut Prng::new(2)).unwrap();
        let x = random_grid(16, 16, &mut Prng::new(3));
        let a = forward(&p, &x, 0.9).unwrap();
        assert_eq!(a, forward(&p, &x, 0.9).unwrap());
        let b = forward(&p, &x, 0.6).unwrap();
        assert!(a.mse(&b).unwrap() > 1e-8);
    }

    #[test]
    fn init_values_are_f32_exact_and_bounded() {
        let arch = ArchConfig::default();
        let p = ModelParams::init(arch, &mut Prng::new(4)).unwrap();
        assert!(p.values().iter().all(|&v| v as f32 as f64 == v));
        for (name, range) in p.tensor_ranges() {
            let bound = if name == "cond.proj" {
                1.0
            } else {
                let cin = match name.split('.').next().unwrap() {
                    "enc" => 2,
                    "down" => arch.enc,
                    "mid" => arch.mid,
                    "dec" => arch.mid + arch.enc,
                    _ => arch.dec,
                };
                1.0 / ((cin * 9) as f64).sqrt()
            };
            assert!(p.values()[range].iter().all(|v| v.abs() <= bound), "{name}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::zeros(ArchConfig::default()).unwrap();
        assert!(forward(&p, &Grid::zeros(7, 8), 0.5).is_err());
        assert!(forward(&p, &Grid::zeros(8, 8), 0.0).is_err());
        assert!(forward(&p, &Grid::zeros(8, 8), 1.5).is_err());
        assert!(forward(&p, &Grid::filled(8, 8, f64::NAN), 0.5).is_err());
        assert!(ModelParams::zeros(ArchConfig { enc: 0, mid: 1, dec: 1 }).is_err());
    }

    #[test]
    fn exact_prediction_has_zero_loss_and_gradient() {
        let p = ModelParams::init(ArchConfig::default(), &mut Prng::new(5)).unwrap();
        let x = random_grid(8, 8, &mut Prng::new(6));
        let target = forward(&p, &x, 0.7).unwrap();
        let (l, g) = loss_and_grad(&p, &x, 0.7, &target).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_on_zero_target() {
        let p = ModelParams::zeros(ArchConfig::default()).unwrap();
        let x = random_grid(8, 8, &mut Prng::new(7));
        let (l, _) = loss_and_grad(&p, &x, 0.7, &Grid::zeros(8, 8)).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn doubling_the_loss_doubles_the_gradient() {
        let p = ModelParams::init(ArchConfig::default(), &mut Prng::new(8)).unwrap();
        let mut rng = Prng::new(9);
        let ex = TrainingExample {
            input: random_grid(8, 8, &mut rng),
            alpha_bar: 0.8,
            target: random_grid(8, 8, &mut rng),
        };
        let (l1, g1) = gradients(&p, std::slice::from_ref(&ex)).unwrap();
        // duplicating the example leaves the mean unchanged; summing two
        // copies of the loss doubles it
        let (l2, g2) = gradients(&p, &[ex.clone(), ex.clone()]).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        // moving the target so the residual doubles quadruples the loss and
        // doubles every gradient component
        let out = forward(&p, &ex.input, ex.alpha_bar).unwrap();
        let far = ex.target.axpby(2.0, &out, -1.0).unwrap();
        let (la, ga) = loss_and_grad(&p, &ex.input, ex.alpha_bar, &ex.target).unwrap();
        let (lb, gb) = loss_and_grad(&p, &ex.input, ex.alpha_bar, &far).unwrap();
        assert!((lb - 4.0 * la).abs() <= 1e-12 * lb);
        let scale = gb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in ga.iter().zip(&gb) {
            assert!((2.0 * a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn loss_matches_composed_pipeline() {
        use crate::fusion::{fuse, perturb};
        use crate::schedule::ScheduleConfig;
        let sched = NoiseSchedule::build(&ScheduleConfig::default()).unwrap();
        let p = ModelParams::init(ArchConfig::default(), &mut Prng::new(10)).unwrap();
        let mut rng = Prng::new(11);
        let pair = SlicePair::new(random_grid(8, 8, &mut rng), random_grid(8, 8, &mut rng), 0, 1).unwrap();
        let got = loss(&p, &pair, 77, &sched, &mut Prng::new(12)).unwrap();

        let noise = DiNoise::from_pair(&pair, &mut Prng::new(12)).unwrap();
        let x_star = fuse(&pair, 77, &sched).unwrap();
        let x_t = perturb(&x_star, &noise, 77, &sched).unwrap();
        let out = forward(&p, &x_t, sched.alpha_bar(77)).unwrap();
        let oracle = out
            .as_slice()
            .iter()
            .zip(pair.x.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 64.0;
        assert_eq!(got, oracle);
        assert!(got > 0.0);
    }

    #[test]
    fn kink_detection_flags_straddled_parameters() {
        let arch = ArchConfig { enc: 2, mid: 2, dec: 2 };
        let p = ModelParams::init(arch, &mut Prng::new(3)).unwrap();
        let x = random_grid(4, 4, &mut Prng::new(4));
        assert!(kink_crossings(&p, &x, 0.5, 0.0).unwrap().iter().all(|&k| !k));
        assert!(kink_crossings(&p, &x, 0.5, 10.0).unwrap().iter().any(|&k| k));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = ArchConfig { enc: 2, mid: 2, dec: 2 };
        let p = ModelParams::init(arch, &mut Prng::new(21)).unwrap();
        let mut rng = Prng::new(22);
        let x = random_grid(4, 4, &mut rng);
        let target = random_grid(4, 4, &mut rng);
        let (_, g) = loss_and_grad(&p, &x, 0.7, &target).unwrap();
        let fd = finite_difference_gradient(&p, &x, 0.7, &target, 1e-4).unwrap();
        let kinks = kink_crossings(&p, &x, 0.7, 1e-4).unwrap();
        for (name, range) in p.tensor_ranges() {
            for k in range.filter(|&k| !kinks[k]) {
                let rel = (g[k] - fd[k]).abs() / g[k].abs().max(fd[k].abs()).max(1e-8);
                assert!(rel <= 1e-3, "{name}[{k}]: analytic {} vs numeric {}", g[k], fd[k]);
            }
        }
    }
}
