//! Auxiliary location encoder, convolutional mask encoder and decision head.

use super::layers::{
    avg_pool_backward, avg_pool_forward, conv_out_size, dropout, relu, relu_backward, BatchNorm, BnCache, Conv2d, Linear,
    Mode, Param, KERNEL,
};
use super::tensor::{concat_features, split_features, Act, Real};
use super::PredictorError;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Network shape. Widths and strides are configurable; see
/// [`ArchConfig::full_beam`] for the full-size layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Average-pooling factor applied to the masks before the encoder.
    pub input_pool: usize,
    pub aux_widths: [usize; 2],
    /// (filters, stride) per conv block before pooling.
    pub stem: Vec<(usize, usize)>,
    pub pool: bool,
    /// (filters, stride of the first conv) per residual block.
    pub residual: Vec<(usize, usize)>,
    pub hidden: usize,
    pub dropout: f64,
}

impl ArchConfig {
    /// Full-size beam network at an 80x160 input.
    pub fn full_beam() -> Self {
        Self {
            input_pool: 1,
            aux_widths: [256, 16],
            stem: vec![(32, 2), (16, 1)],
            pool: true,
            residual: vec![(8, 4), (8, 1)],
            hidden: 512,
            dropout: 0.1,
        }
    }

    pub fn full_blockage() -> Self {
        Self {
            input_pool: 1,
            aux_widths: [256, 16],
            stem: vec![(16, 2)],
            pool: true,
            residual: vec![(8, 4)],
            hidden: 64,
            dropout: 0.1,
        }
    }

    /// Reduced beam network used by default: masks pooled by 4, narrower stem.
    pub fn desk_beam() -> Self {
        Self { input_pool: 4, stem: vec![(16, 2), (8, 1)], residual: vec![(8, 2), (8, 1)], hidden: 256, ..Self::full_beam() }
    }

    pub fn desk_blockage() -> Self {
        Self { input_pool: 4, stem: vec![(8, 2)], residual: vec![(8, 2)], ..Self::full_blockage() }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if self.input_pool == 0 {
            return bad("input_pool must be at least 1");
        }
        if self.aux_widths.contains(&0) || self.hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.stem.is_empty() {
            return bad("encoder needs at least one conv block");
        }
        if self.stem.iter().chain(&self.residual).any(|&(c, s)| c == 0 || s == 0) {
            return bad("conv filters and strides must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Encoder output (channels, height, width) for a pooled input size.
    pub fn encoder_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let (mut h, mut w, mut c) = (h, w, 0);
        for &(f, s) in &self.stem {
            h = conv_out_size(h, s);
            w = conv_out_size(w, s);
            c = f;
        }
        if self.pool {
            h = conv_out_size(h, 2);
            w = conv_out_size(w, 2);
        }
        for &(f, s) in &self.residual {
            h = conv_out_size(h, s);
            w = conv_out_size(w, s);
            c = f;
        }
        (c, h, w)
    }
}

/// Conv, batch norm, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

struct ConvBlockCache<T> {
    x: Act<T>,
    bn: BnCache<T>,
    y: Act<T>,
}

impl<T: Real> ConvBlock<T> {
    fn forward(&mut self, x: Act<T>, mode: Mode) -> (Act<T>, ConvBlockCache<T>) {
        let z = self.conv.forward(&x);
        let (mut y, bn) = self.bn.forward(&z, mode);
        relu(&mut y);
        (y.clone(), ConvBlockCache { x, bn, y })
    }

    fn backward(&mut self, cache: &ConvBlockCache<T>, mut g: Act<T>, mode: Mode, need_input: bool) -> Option<Act<T>> {
        relu_backward(&cache.y, &mut g);
        let gz = self.bn.backward(&cache.bn, &g, mode);
        self.conv.backward(&cache.x, &gz, need_input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

/// Two conv layers with a skip from the first block's output to the second
/// conv's normalized output, followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub first: ConvBlock<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
}

struct ResCache<T> {
    first: ConvBlockCache<T>,
    ya: Act<T>,
    bn2: BnCache<T>,
    out: Act<T>,
}

impl<T: Real> ResBlock<T> {
    fn forward(&mut self, x: Act<T>, mode: Mode) -> (Act<T>, ResCache<T>) {
        let (ya, first) = self.first.forward(x, mode);
        let z = self.conv2.forward(&ya);
        let (mut out, bn2) = self.bn2.forward(&z, mode);
        out.data.iter_mut().zip(&ya.data).for_each(|(o, a)| *o += *a);
        relu(&mut out);
        (out.clone(), ResCache { first, ya, bn2, out })
    }

    fn backward(&mut self, cache: &ResCache<T>, mut g: Act<T>, mode: Mode, need_input: bool) -> Option<Act<T>> {
        relu_backward(&cache.out, &mut g);
        let gz = self.bn2.backward(&cache.bn2, &g, mode);
        let mut gya = self.conv2.backward(&cache.ya, &gz, true).expect("input grad");
        gya.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += *b);
        self.first.backward(&cache.first, gya, mode, need_input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.first.params();
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.first.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub stem: Vec<ConvBlock<T>>,
    pub pool: bool,
    pub residual: Vec<ResBlock<T>>,
}

struct EncoderCache<T> {
    stem: Vec<ConvBlockCache<T>>,
    pool_in: Option<(usize, usize, usize, usize)>,
    residual: Vec<ResCache<T>>,
    out_shape: (usize, usize, usize),
}

impl<T: Real> Encoder<T> {
    fn forward(&mut self, x: Act<T>, mode: Mode) -> (Act<T>, EncoderCache<T>) {
        let mut cur = x;
        let mut stem = Vec::new();
        for b in &mut self.stem {
            let (y, c) = b.forward(cur, mode);
            stem.push(c);
            cur = y;
        }
        let mut pool_in = None;
        if self.pool {
            pool_in = Some((cur.n, cur.c, cur.h, cur.w));
            cur = avg_pool_forward(&cur);
        }
        let mut residual = Vec::new();
        for b in &mut self.residual {
            let (y, c) = b.forward(cur, mode);
            residual.push(c);
            cur = y;
        }
        let out_shape = (cur.c, cur.h, cur.w);
        (cur.flattened(), EncoderCache { stem, pool_in, residual, out_shape })
    }

    fn backward(&mut self, cache: &EncoderCache<T>, g: Act<T>, mode: Mode) {
        let (c, h, w) = cache.out_shape;
        let mut g = g.reshaped(c, h, w);
        for (b, bc) in self.residual.iter_mut().zip(&cache.residual).rev() {
            g = b.backward(bc, g, mode, true).expect("input grad");
        }
        if let Some(shape) = cache.pool_in {
            g = avg_pool_backward(shape, &g);
        }
        // the first block's input is data, so its input gradient is skipped
        for (i, (b, bc)) in self.stem.iter_mut().zip(&cache.stem).enumerate().rev() {
            if let Some(next) = b.backward(bc, g.clone(), mode, i > 0) {
                g = next;
            }
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.stem.iter().flat_map(|b| b.params()).collect();
        v.extend(self.residual.iter().flat_map(|b| b.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.stem.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.residual.iter_mut().flat_map(|b| b.params_mut()));
        v
    }
}

/// Which decision head a network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Logits over the codebook.
    Beam { classes: usize },
    /// A single logit; the blockage probability is its sigmoid.
    Blockage,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Beam { classes } => classes,
            HeadKind::Blockage => 1,
        }
    }
}

/// Mask-input layout: one block of channels per selected concept, each
/// holding one channel per camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub concepts: Vec<String>,
    pub cameras: usize,
    /// Pooled mask size fed to the encoder.
    pub height: usize,
    pub width: usize,
}

impl InputLayout {
    pub fn channels(&self) -> usize {
        self.concepts.len() * self.cameras
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: ArchConfig,
    pub head_kind: HeadKind,
    pub layout: InputLayout,
    pub aux_bn0: BatchNorm<T>,
    pub aux_fc1: Linear<T>,
    pub aux_bn1: BatchNorm<T>,
    pub aux_fc2: Linear<T>,
    pub aux_bn2: BatchNorm<T>,
    pub encoder: Option<Encoder<T>>,
    pub head_fc: Linear<T>,
    pub head_bn: BatchNorm<T>,
    pub out_fc: Linear<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    bn0: BnCache<T>,
    a0: Act<T>,
    bn1: BnCache<T>,
    a1: Act<T>,
    bn2: BnCache<T>,
    aux_out: Act<T>,
    enc: Option<EncoderCache<T>>,
    fused: Act<T>,
    head_bn: BnCache<T>,
    hidden_relu: Act<T>,
    drop_mask: Option<Vec<T>>,
    hidden: Act<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Which ReLU outputs are positive, over every ReLU of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut acts: Vec<&Act<T>> = vec![&self.a1, &self.aux_out];
        if let Some(e) = &self.enc {
            acts.extend(e.stem.iter().map(|c| &c.y));
            for r in &e.residual {
                acts.push(&r.first.y);
                acts.push(&r.out);
            }
        }
        acts.push(&self.hidden_relu);
        acts.iter().flat_map(|a| a.data.iter().map(|v| *v > T::zero())).collect()
    }
}

impl<T: Real> Network<T> {
    /// Fresh parameters. Every tensor is drawn from its own named stream of
    /// `seed`, and first-conv weights per concept block, so networks over
    /// different concept sets share the weights they have in common.
    pub fn new(arch: &ArchConfig, head_kind: HeadKind, layout: InputLayout, seed: u64) -> Result<Self, PredictorError> {
        arch.validate()?;
        if layout.cameras == 0 {
            return Err(PredictorError::Config("camera count must be positive".into()));
        }
        let [a1, a2] = arch.aux_widths;
        let encoder = if layout.concepts.is_empty() {
            None
        } else {
            let groups: Vec<(String, usize)> = layout.concepts.iter().map(|c| (c.clone(), layout.cameras)).collect();
            let nominal_fan_in = layout.cameras * KERNEL * KERNEL;
            let mut stem = Vec::new();
            let mut cin = layout.channels();
            for (i, &(f, s)) in arch.stem.iter().enumerate() {
                let name = format!("enc.stem{i}");
                let conv = if i == 0 {
                    Conv2d::new(&format!("{name}.conv"), &groups, f, s, nominal_fan_in, seed)
                } else {
                    Conv2d::simple(&format!("{name}.conv"), cin, f, s, seed)
                };
                stem.push(ConvBlock { conv, bn: BatchNorm::new(&format!("{name}.bn"), f) });
                cin = f;
            }
            let mut residual = Vec::new();
            for (i, &(f, s)) in arch.residual.iter().enumerate() {
                let name = format!("enc.res{i}");
                residual.push(ResBlock {
                    first: ConvBlock {
                        conv: Conv2d::simple(&format!("{name}.conv1"), cin, f, s, seed),
                        bn: BatchNorm::new(&format!("{name}.bn1"), f),
                    },
                    conv2: Conv2d::simple(&format!("{name}.conv2"), f, f, 1, seed),
                    bn2: BatchNorm::new(&format!("{name}.bn2"), f),
                });
                cin = f;
            }
            Some(Encoder { stem, pool: arch.pool, residual })
        };
        let enc_features = if encoder.is_some() {
            let (c, h, w) = arch.encoder_shape(layout.height, layout.width);
            if h == 0 || w == 0 {
                return Err(PredictorError::Config("input too small for the encoder".into()));
            }
            c * h * w
        } else {
            0
        };
        let out = head_kind.outputs();
        Ok(Self {
            arch: arch.clone(),
            head_kind,
            layout,
            aux_bn0: BatchNorm::new("aux.bn0", 3),
            aux_fc1: Linear::new("aux.fc1", 3, a1, seed),
            aux_bn1: BatchNorm::new("aux.bn1", a1),
            aux_fc2: Linear::new("aux.fc2", a1, a2, seed),
            aux_bn2: BatchNorm::new("aux.bn2", a2),
            encoder,
            head_fc: Linear::new("head.fc", a2 + enc_features, arch.hidden, seed),
            head_bn: BatchNorm::new("head.bn", arch.hidden),
            out_fc: Linear::new("head.out", arch.hidden, out, seed),
        })
    }

    /// Raw outputs (logits) of shape (n, outputs).
    pub fn forward(
        &mut self,
        loc: &Act<T>,
        masks: &Act<T>,
        mode: Mode,
        rng: Option<&mut Stream>,
    ) -> Result<(Act<T>, ForwardCache<T>), PredictorError> {
        if loc.per_sample() != 3 {
            return Err(PredictorError::Shape(format!("location width {} != 3", loc.per_sample())));
        }
        let l = &self.layout;
        if masks.n != loc.n || masks.c != l.channels() || (l.channels() > 0 && (masks.h != l.height || masks.w != l.width)) {
            return Err(PredictorError::Shape(format!(
                "mask tensor ({}, {}, {}, {}) does not match layout ({}, {}, {}, {})",
                masks.n,
                masks.c,
                masks.h,
                masks.w,
                loc.n,
                l.channels(),
                l.height,
                l.width
            )));
        }
        let (a0, bn0) = self.aux_bn0.forward(loc, mode);
        let z1 = self.aux_fc1.forward(&a0);
        let (mut a1, bn1) = self.aux_bn1.forward(&z1, mode);
        relu(&mut a1);
        let z2 = self.aux_fc2.forward(&a1);
        let (mut aux_out, bn2) = self.aux_bn2.forward(&z2, mode);
        relu(&mut aux_out);
        let (fused, enc) = match self.encoder.as_mut() {
            Some(e) => {
                let (feat, cache) = e.forward(masks.clone(), mode);
                (concat_features(&aux_out, &feat), Some(cache))
            }
            None => (aux_out.clone(), None),
        };
        let zh = self.head_fc.forward(&fused);
        let (mut hidden_relu, head_bn) = self.head_bn.forward(&zh, mode);
        relu(&mut hidden_relu);
        let mut hidden = hidden_relu.clone();
        let drop_mask = match (mode, rng) {
            (Mode::Train, Some(r)) if self.arch.dropout > 0.0 => Some(dropout(&mut hidden, self.arch.dropout, r)),
            _ => None,
        };
        let out = self.out_fc.forward(&hidden);
        let cache = ForwardCache {
            mode,
            bn0,
            a0,
            bn1,
            a1,
            bn2,
            aux_out,
            enc,
            fused,
            head_bn,
            hidden_relu,
            drop_mask,
            hidden,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for the output gradient `g`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, g: &Act<T>) {
        let mode = cache.mode;
        let mut gh = self.out_fc.backward(&cache.hidden, g);
        if let Some(mask) = &cache.drop_mask {
            gh.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
        }
        relu_backward(&cache.hidden_relu, &mut gh);
        let gz = self.head_bn.backward(&cache.head_bn, &gh, mode);
        let gfused = self.head_fc.backward(&cache.fused, &gz);
        let aux_w = cache.aux_out.per_sample();
        let mut gaux = match (self.encoder.as_mut(), &cache.enc) {
            (Some(e), Some(ec)) => {
                let (ga, ge) = split_features(&gfused, aux_w);
                e.backward(ec, ge, mode);
                ga
            }
            _ => gfused,
        };
        relu_backward(&cache.aux_out, &mut gaux);
        let gz2 = self.aux_bn2.backward(&cache.bn2, &gaux, mode);
        let mut ga1 = self.aux_fc2.backward(&cache.a1, &gz2);
        relu_backward(&cache.a1, &mut ga1);
        let gz1 = self.aux_bn1.backward(&cache.bn1, &ga1, mode);
        let ga0 = self.aux_fc1.backward(&cache.a0, &gz1);
        self.aux_bn0.backward(&cache.bn0, &ga0, mode);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.aux_bn0.params();
        v.extend(self.aux_fc1.params());
        v.extend(self.aux_bn1.params());
        v.extend(self.aux_fc2.params());
        v.extend(self.aux_bn2.params());
        if let Some(e) = &self.encoder {
            v.extend(e.params());
        }
        v.extend(self.head_fc.params());
        v.extend(self.head_bn.params());
        v.extend(self.out_fc.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.aux_bn0.params_mut();
        v.extend(self.aux_fc1.params_mut());
        v.extend(self.aux_bn1.params_mut());
        v.extend(self.aux_fc2.params_mut());
        v.extend(self.aux_bn2.params_mut());
        if let Some(e) = self.encoder.as_mut() {
            v.extend(e.params_mut());
        }
        v.extend(self.head_fc.params_mut());
        v.extend(self.head_bn.params_mut());
        v.extend(self.out_fc.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Copy with every tensor converted to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut out = Network::<U>::new(&self.arch, self.head_kind, self.layout.clone(), 0).expect("valid architecture");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }
}
