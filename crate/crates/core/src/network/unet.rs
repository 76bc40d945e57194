//! Attention U-Net forward pass with cached activations and its exact
//! reverse-mode gradient.

use super::ops::{
    concat_channels, conv_backward, conv_forward, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace,
    split_channels, upsample2, upsample2_backward, ConvGeom, Tensor,
};
use super::scalar::Real;
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::heatmap::ProbabilityMap;
use crate::trainer::BceLoss;

/// Borrowed parameters of one attention gate. The skip projection geometry
/// is free (the network uses a 2x2 stride-2 kernel so that its output lands
/// on the gating grid); signal and psi projections are 1x1.
#[derive(Debug, Clone, Copy)]
pub struct GateWeights<'a, T> {
    pub skip_geom: ConvGeom,
    pub skip_w: &'a [T],
    pub skip_b: &'a [T],
    pub signal_w: &'a [T],
    pub signal_b: &'a [T],
    pub psi_w: &'a [T],
    pub psi_b: &'a [T],
}

impl<T: Real> GateWeights<'_, T> {
    fn signal_geom(&self, gating_channels: usize) -> ConvGeom {
        ConvGeom {
            cin: gating_channels,
            cout: self.skip_b.len(),
            k: 1,
            stride: 1,
            pad: 0,
        }
    }

    fn psi_geom(&self) -> ConvGeom {
        ConvGeom {
            cin: self.skip_b.len(),
            cout: 1,
            k: 1,
            stride: 1,
            pad: 0,
        }
    }
}

struct GateCache<T> {
    /// ReLU of the summed projections, on the gating grid.
    q: Tensor<T>,
    /// Attention coefficients on the gating grid.
    alpha: Tensor<T>,
    /// Coefficients upsampled to the skip grid.
    alpha_up: Tensor<T>,
}

fn gate_forward<T: Real>(
    skip: &Tensor<T>,
    gating: &Tensor<T>,
    p: &GateWeights<'_, T>,
    col: &mut Vec<T>,
) -> Result<(Tensor<T>, GateCache<T>)> {
    if skip.c != p.skip_geom.cin
        || skip.h != 2 * gating.h
        || skip.w != 2 * gating.w
        || p.skip_w.len() != p.skip_geom.weight_len()
        || p.skip_b.len() != p.skip_geom.cout
    {
        return Err(Error::dims(
            format!(
                "skip {}x{}x{} over gating at half resolution",
                p.skip_geom.cin,
                2 * gating.h,
                2 * gating.w
            ),
            format!(
                "skip {}x{}x{}, gating {}x{}x{}",
                skip.c, skip.h, skip.w, gating.c, gating.h, gating.w
            ),
        ));
    }
    let sg = p.signal_geom(gating.c);
    if p.signal_w.len() != sg.weight_len()
        || p.signal_b.len() != sg.cout
        || p.psi_w.len() != sg.cout
        || p.psi_b.len() != 1
    {
        return Err(Error::dims(
            format!("signal {}x{} and psi 1x{}", sg.cout, sg.cin, sg.cout),
            format!("signal {} values, psi {} values", p.signal_w.len(), p.psi_w.len()),
        ));
    }
    let theta = conv_forward(skip, &p.skip_geom, p.skip_w, p.skip_b, col);
    if (theta.h, theta.w) != (gating.h, gating.w) {
        return Err(Error::dims(
            format!("skip projection on {}x{}", gating.h, gating.w),
            format!("{}x{}", theta.h, theta.w),
        ));
    }
    let phi = conv_forward(gating, &sg, p.signal_w, p.signal_b, col);
    let mut q = theta;
    for (a, b) in q.data.iter_mut().zip(&phi.data) {
        *a += *b;
    }
    relu_inplace(&mut q);
    let mut alpha = conv_forward(&q, &p.psi_geom(), p.psi_w, p.psi_b, col);
    alpha.data.iter_mut().for_each(|v| *v = v.sigmoid());
    let alpha_up = upsample2(&alpha);
    let plane = skip.plane();
    let mut gated = skip.clone();
    for c in 0..skip.c {
        for (v, a) in gated.data[c * plane..(c + 1) * plane].iter_mut().zip(&alpha_up.data) {
            *v *= *a;
        }
    }
    Ok((gated, GateCache { q, alpha, alpha_up }))
}

/// Additive attention gate: projects skip features and the coarser gating
/// signal to a shared channel count, sums, rectifies, reduces to one channel,
/// squashes with a sigmoid, upsamples the coefficients to the skip grid and
/// multiplies them into every skip channel.
pub fn attention_gate<T: Real>(
    skip: &Tensor<T>,
    gating: &Tensor<T>,
    weights: &GateWeights<'_, T>,
) -> Result<Tensor<T>> {
    let mut col = Vec::new();
    gate_forward(skip, gating, weights, &mut col).map(|(g, _)| g)
}

/// Attention coefficients on the gating grid, for inspection.
pub fn attention_coefficients<T: Real>(
    skip: &Tensor<T>,
    gating: &Tensor<T>,
    weights: &GateWeights<'_, T>,
) -> Result<Tensor<T>> {
    let mut col = Vec::new();
    gate_forward(skip, gating, weights, &mut col).map(|(_, c)| c.alpha)
}

struct GateGrads<T> {
    skip: Tensor<T>,
    gating: Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
fn gate_backward<T: Real>(
    skip: &Tensor<T>,
    gating: &Tensor<T>,
    p: &GateWeights<'_, T>,
    cache: &GateCache<T>,
    d_gated: &Tensor<T>,
    grads: [&mut [T]; 6],
    col: &mut Vec<T>,
) -> GateGrads<T> {
    let [g_skip_w, g_skip_b, g_signal_w, g_signal_b, g_psi_w, g_psi_b] = grads;
    let plane = skip.plane();
    let mut d_skip = d_gated.clone();
    let mut d_alpha_up = Tensor::zeros(1, skip.h, skip.w);
    for c in 0..skip.c {
        let range = c * plane..(c + 1) * plane;
        for (((ds, &s), &a), da) in d_skip.data[range.clone()]
            .iter_mut()
            .zip(&skip.data[range])
            .zip(&cache.alpha_up.data)
            .zip(d_alpha_up.data.iter_mut())
        {
            *da += *ds * s;
            *ds *= a;
        }
    }
    let mut d_psi = upsample2_backward(&d_alpha_up);
    for (d, &a) in d_psi.data.iter_mut().zip(&cache.alpha.data) {
        *d *= a * (T::ONE - a);
    }
    let mut dq = conv_backward(&cache.q, &p.psi_geom(), p.psi_w, &d_psi, g_psi_w, g_psi_b, true, col)
        .expect("input gradient requested");
    relu_backward_inplace(&mut dq, &cache.q);
    let d_gating = conv_backward(
        gating,
        &p.signal_geom(gating.c),
        p.signal_w,
        &dq,
        g_signal_w,
        g_signal_b,
        true,
        col,
    )
    .expect("input gradient requested");
    let d_proj = conv_backward(skip, &p.skip_geom, p.skip_w, &dq, g_skip_w, g_skip_b, true, col)
        .expect("input gradient requested");
    for (a, b) in d_skip.data.iter_mut().zip(&d_proj.data) {
        *a += *b;
    }
    GateGrads {
        skip: d_skip,
        gating: d_gating,
    }
}

/// Position of each convolution in [`NetworkConfig::layers`].
#[derive(Debug, Clone, Copy)]
struct LayerIndex {
    depth: usize,
}

impl LayerIndex {
    fn enc(&self, level: usize, j: usize) -> usize {
        2 * level + j
    }

    fn bottom(&self, j: usize) -> usize {
        2 * self.depth + j
    }

    /// `j`: 0 up, 1 gate.skip, 2 gate.signal, 3 gate.psi, 4 conv1, 5 conv2.
    fn dec(&self, level: usize, j: usize) -> usize {
        2 * self.depth + 2 + 6 * (self.depth - 1 - level) + j
    }

    fn head(&self) -> usize {
        8 * self.depth + 2
    }
}

struct Net<'a, T> {
    weights: &'a ModelWeights<T>,
    geoms: Vec<ConvGeom>,
    index: LayerIndex,
}

impl<'a, T: Real> Net<'a, T> {
    fn new(weights: &'a ModelWeights<T>) -> Self {
        let config = weights.config();
        Self {
            weights,
            geoms: config.layers().into_iter().map(|l| l.geom).collect(),
            index: LayerIndex { depth: config.depth },
        }
    }

    fn params(&self, layer: usize) -> (&'a [T], &'a [T]) {
        let t = self.weights.tensors();
        (&t[2 * layer].data, &t[2 * layer + 1].data)
    }

    fn conv(&self, layer: usize, input: &Tensor<T>, col: &mut Vec<T>) -> Tensor<T> {
        let (w, b) = self.params(layer);
        conv_forward(input, &self.geoms[layer], w, b, col)
    }

    fn conv_relu(&self, layer: usize, input: &Tensor<T>, col: &mut Vec<T>) -> Tensor<T> {
        let mut out = self.conv(layer, input, col);
        relu_inplace(&mut out);
        out
    }

    fn gate(&self, level: usize) -> GateWeights<'a, T> {
        let (skip_w, skip_b) = self.params(self.index.dec(level, 1));
        let (signal_w, signal_b) = self.params(self.index.dec(level, 2));
        let (psi_w, psi_b) = self.params(self.index.dec(level, 3));
        GateWeights {
            skip_geom: self.geoms[self.index.dec(level, 1)],
            skip_w,
            skip_b,
            signal_w,
            signal_b,
            psi_w,
            psi_b,
        }
    }
}

struct EncCache<T> {
    input: Tensor<T>,
    a1: Tensor<T>,
    /// Second activation; the skip connection of this level.
    a2: Tensor<T>,
    pool_idx: Vec<u32>,
}

struct DecCache<T> {
    gating: Tensor<T>,
    up_in: Tensor<T>,
    up: Tensor<T>,
    gate: GateCache<T>,
    cat: Tensor<T>,
    c1: Tensor<T>,
    c2: Tensor<T>,
}

struct ForwardCache<T> {
    enc: Vec<EncCache<T>>,
    bottom_in: Tensor<T>,
    b1: Tensor<T>,
    b2: Tensor<T>,
    /// Indexed by level; filled from the deepest level upwards.
    dec: Vec<Option<DecCache<T>>>,
    logits: Tensor<T>,
}

fn check_input<T: Real>(weights: &ModelWeights<T>, input: &Tensor<T>) -> Result<()> {
    let cfg = weights.config();
    if input.c != 1 || input.w != cfg.input_w || input.h != cfg.input_h {
        return Err(Error::dims(
            format!("1x{}x{} input", cfg.input_h, cfg.input_w),
            format!("{}x{}x{}", input.c, input.h, input.w),
        ));
    }
    if let Some(path) = weights.first_non_finite() {
        return Err(Error::NonFinite(format!("weights tensor `{path}`")));
    }
    Ok(())
}

fn forward_cached<T: Real>(net: &Net<'_, T>, input: &Tensor<T>, col: &mut Vec<T>) -> ForwardCache<T> {
    let depth = net.index.depth;
    let mut enc = Vec::with_capacity(depth);
    let mut x = input.clone();
    for l in 0..depth {
        let a1 = net.conv_relu(net.index.enc(l, 0), &x, col);
        let a2 = net.conv_relu(net.index.enc(l, 1), &a1, col);
        let (pooled, pool_idx) = maxpool2(&a2);
        enc.push(EncCache {
            input: std::mem::replace(&mut x, pooled),
            a1,
            a2,
            pool_idx,
        });
    }
    let b1 = net.conv_relu(net.index.bottom(0), &x, col);
    let b2 = net.conv_relu(net.index.bottom(1), &b1, col);
    let mut dec: Vec<Option<DecCache<T>>> = (0..depth).map(|_| None).collect();
    let mut g = b2.clone();
    for l in (0..depth).rev() {
        let up_in = upsample2(&g);
        let up = net.conv_relu(net.index.dec(l, 0), &up_in, col);
        let (gated, gate) = gate_forward(&enc[l].a2, &g, &net.gate(l), col).expect("shapes fixed by config");
        let cat = concat_channels(&up, &gated);
        let c1 = net.conv_relu(net.index.dec(l, 4), &cat, col);
        let c2 = net.conv_relu(net.index.dec(l, 5), &c1, col);
        let next = c2.clone();
        dec[l] = Some(DecCache {
            gating: std::mem::replace(&mut g, next),
            up_in,
            up,
            gate,
            cat,
            c1,
            c2,
        });
    }
    let logits = net.conv(net.index.head(), &g, col);
    ForwardCache {
        enc,
        bottom_in: x,
        b1,
        b2,
        dec,
        logits,
    }
}

/// Pre-sigmoid network output.
pub fn forward_logits<T: Real>(weights: &ModelWeights<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(weights, input)?;
    let mut col = Vec::new();
    Ok(forward_cached(&Net::new(weights), input, &mut col).logits)
}

/// Network probabilities in the working precision, without clamping.
pub fn forward_tensor<T: Real>(weights: &ModelWeights<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = forward_logits(weights, input)?;
    out.data.iter_mut().for_each(|v| *v = v.sigmoid());
    Ok(out)
}

pub fn frame_tensor<T: Real>(frame: &Frame) -> Tensor<T> {
    Tensor::from_vec(
        1,
        frame.height(),
        frame.width(),
        frame.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
}

/// Largest `f32` below one; keeps saturated outputs strictly inside (0, 1).
const UPPER: f32 = 1.0 - f32::EPSILON / 2.0;

/// Probability map for a normalized frame. Outputs are kept strictly inside
/// (0, 1) even where the sigmoid saturates in single precision.
pub fn forward(weights: &ModelWeights<f32>, frame: &Frame) -> Result<ProbabilityMap> {
    let out = forward_tensor(weights, &frame_tensor(frame))?;
    let values = out
        .data
        .into_iter()
        .map(|v| {
            if !v.is_finite() {
                Err(Error::NonFinite("network output".into()))
            } else {
                Ok(v.clamp(f32::MIN_POSITIVE, UPPER))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ProbabilityMap::new(frame.width(), frame.height(), values)
}

fn split_grads<T: Real>(grads: &mut ModelWeights<T>, layer: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.tensors_mut().split_at_mut(2 * layer + 1);
    (&mut a[2 * layer].data, &mut b[0].data)
}

fn conv_back<T: Real>(
    net: &Net<'_, T>,
    layer: usize,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    grads: &mut ModelWeights<T>,
    need_input: bool,
    col: &mut Vec<T>,
) -> Option<Tensor<T>> {
    let (w, _) = net.params(layer);
    let (gw, gb) = split_grads(grads, layer);
    conv_backward(input, &net.geoms[layer], w, grad_out, gw, gb, need_input, col)
}

fn add_into<T: Real>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += *b;
    }
}

/// Runs forward and backward for one sample, adds the parameter gradient of
/// the per-sample loss into `grads` (scaled by `scale`) and returns the loss.
pub fn accumulate_gradients<T: Real>(
    weights: &ModelWeights<T>,
    input: &Tensor<T>,
    target: &[T],
    loss: &BceLoss,
    scale: T,
    grads: &mut ModelWeights<T>,
) -> Result<f64> {
    check_input(weights, input)?;
    if target.len() != input.plane() {
        return Err(Error::dims(format!("{} target values", input.plane()), target.len()));
    }
    if !weights.same_structure(grads) {
        return Err(Error::InvalidInput("gradient buffer does not match weights".into()));
    }
    let net = Net::new(weights);
    let mut col = Vec::new();
    let mut cache = forward_cached(&net, input, &mut col);
    let depth = net.index.depth;

    let mut probs = std::mem::replace(&mut cache.logits, Tensor::zeros(0, 0, 0));
    probs.data.iter_mut().for_each(|v| *v = v.sigmoid());
    let mut d_logits = Tensor::zeros(1, input.h, input.w);
    let value = loss.evaluate(&probs.data, target, Some(&mut d_logits.data));
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    d_logits.data.iter_mut().for_each(|v| *v *= scale);

    let top = &cache.dec[0].as_ref().expect("decoder level 0").c2;
    let mut dg = conv_back(&net, net.index.head(), top, &d_logits, grads, true, &mut col).unwrap();

    let mut d_skips: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
    #[allow(clippy::needless_range_loop)] // `l` names the level in several tables
    for l in 0..depth {
        let dc = cache.dec[l].take().expect("decoder cache");
        relu_backward_inplace(&mut dg, &dc.c2);
        let mut d_c1 = conv_back(&net, net.index.dec(l, 5), &dc.c1, &dg, grads, true, &mut col).unwrap();
        relu_backward_inplace(&mut d_c1, &dc.c1);
        let d_cat = conv_back(&net, net.index.dec(l, 4), &dc.cat, &d_c1, grads, true, &mut col).unwrap();
        let (mut d_up, d_gated) = split_channels(d_cat, dc.up.c);

        let gate = net.gate(l);
        let gate_grads = {
            let t = grads.tensors_mut();
            let base = 2 * net.index.dec(l, 1);
            let (head, rest) = t[base..base + 6].split_at_mut(2);
            let (mid, tail) = rest.split_at_mut(2);
            let [a, b] = head else { unreachable!() };
            let [c, d] = mid else { unreachable!() };
            let [e, f] = tail else { unreachable!() };
            [
                &mut a.data[..],
                &mut b.data[..],
                &mut c.data[..],
                &mut d.data[..],
                &mut e.data[..],
                &mut f.data[..],
            ]
        };
        let gg = gate_backward(
            &cache.enc[l].a2,
            &dc.gating,
            &gate,
            &dc.gate,
            &d_gated,
            gate_grads,
            &mut col,
        );
        d_skips[l] = Some(gg.skip);

        relu_backward_inplace(&mut d_up, &dc.up);
        let d_up_in = conv_back(&net, net.index.dec(l, 0), &dc.up_in, &d_up, grads, true, &mut col).unwrap();
        let mut d_next = upsample2_backward(&d_up_in);
        add_into(&mut d_next, &gg.gating);
        dg = d_next;
    }

    relu_backward_inplace(&mut dg, &cache.b2);
    let mut d_b1 = conv_back(&net, net.index.bottom(1), &cache.b1, &dg, grads, true, &mut col).unwrap();
    relu_backward_inplace(&mut d_b1, &cache.b1);
    let mut d_pooled = conv_back(
        &net,
        net.index.bottom(0),
        &cache.bottom_in,
        &d_b1,
        grads,
        true,
        &mut col,
    )
    .unwrap();

    for l in (0..depth).rev() {
        let ec = &cache.enc[l];
        let mut d_a2 = d_skips[l].take().expect("skip gradient");
        maxpool2_backward(&d_pooled, &ec.pool_idx, &mut d_a2);
        relu_backward_inplace(&mut d_a2, &ec.a2);
        let mut d_a1 = conv_back(&net, net.index.enc(l, 1), &ec.a1, &d_a2, grads, true, &mut col).unwrap();
        relu_backward_inplace(&mut d_a1, &ec.a1);
        let d_in = conv_back(&net, net.index.enc(l, 0), &ec.input, &d_a1, grads, l > 0, &mut col);
        if let Some(d) = d_in {
            d_pooled = d;
        }
    }
    Ok(value)
}

/// Loss of one sample in the working precision; used by gradient checks.
pub fn sample_loss<T: Real>(weights: &ModelWeights<T>, input: &Tensor<T>, target: &[T], loss: &BceLoss) -> Result<f64> {
    let probs = forward_tensor(weights, input)?;
    if target.len() != probs.data.len() {
        return Err(Error::dims(format!("{} target values", probs.data.len()), target.len()));
    }
    Ok(loss.evaluate(&probs.data, target, None))
}

/// Loss and its gradient with respect to every parameter for one frame.
pub fn backward(
    weights: &ModelWeights<f32>,
    frame: &Frame,
    target: &ProbabilityMap,
    loss: &BceLoss,
) -> Result<(f64, ModelWeights<f32>)> {
    if target.dims() != frame.dims() {
        return Err(Error::dims(
            format!("{}x{} target", frame.width(), frame.height()),
            format!("{}x{}", target.width(), target.height()),
        ));
    }
    let mut grads = weights.zeros_like();
    let value = accumulate_gradients(weights, &frame_tensor(frame), target.values(), loss, 1.0, &mut grads)?;
    Ok((value, grads))
}

/// Same as [`backward`] in any precision on raw tensors.
pub fn backward_tensor<T: Real>(
    weights: &ModelWeights<T>,
    input: &Tensor<T>,
    target: &[T],
    loss: &BceLoss,
) -> Result<(f64, ModelWeights<T>)> {
    let mut grads = weights.zeros_like();
    let value = accumulate_gradients(weights, input, target, loss, T::ONE, &mut grads)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, NetworkConfig};

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            depth: 2,
            base_filters: 4,
            input_w: 16,
            input_h: 8,
            kernel_size: 3,
            rng_seed: 1,
        }
    }

    #[test]
    fn layer_index_matches_config_order() {
        let c = NetworkConfig { depth: 3, ..cfg() };
        let names: Vec<String> = c.layers().into_iter().map(|l| l.name).collect();
        let idx = LayerIndex { depth: 3 };
        assert_eq!(names[idx.enc(2, 1)], "enc2.conv2");
        assert_eq!(names[idx.bottom(0)], "bottom.conv1");
        assert_eq!(names[idx.dec(2, 0)], "dec2.up");
        assert_eq!(names[idx.dec(0, 3)], "dec0.gate.psi");
        assert_eq!(names[idx.dec(1, 5)], "dec1.conv2");
        assert_eq!(names[idx.head()], "head");
        assert_eq!(idx.head() + 1, names.len());
    }

    #[test]
    fn zero_head_gives_half() {
        let mut w = init_weights(&cfg()).unwrap();
        w.tensor_mut("head.weight").unwrap().data.fill(0.0);
        let frame = Frame::from_fn(16, 8, |x, y| (x as f32 - y as f32) * 0.1);
        let out = forward(&w, &frame).unwrap();
        assert_eq!(out.dims(), (16, 8));
        assert!(out.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_wrong_dims_and_nan() {
        let mut w = init_weights(&cfg()).unwrap();
        assert!(matches!(
            forward(&w, &Frame::filled(8, 8, 0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
        w.tensor_mut("dec1.conv1.weight").unwrap().data[3] = f32::NAN;
        let err = forward(&w, &Frame::filled(16, 8, 0.0)).unwrap_err();
        assert!(err.to_string().contains("dec1.conv1.weight"), "{err}");
    }
}
