//! Layers with explicit forward and backward passes.

use super::tensor::{r, Act, Real};
use crate::rng;
use rand::Rng;

/// Forward-pass behaviour of dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout on.
    Train,
    /// Batch statistics without running-stat updates or dropout.
    TrainFrozen,
    /// Running statistics, dropout off.
    Eval,
}

impl Mode {
    fn batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Running statistics are stored as non-trainable parameters.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> Self {
        assert_eq!(value.len(), shape.iter().product::<usize>());
        let grad = vec![T::zero(); value.len()];
        Self { name, shape, value, grad, trainable }
    }

    pub fn filled(name: String, shape: Vec<usize>, v: f64, trainable: bool) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![r(v); n], trainable)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| r(v.to_f64().unwrap())).collect(),
            grad: self.grad.iter().map(|v| r(v.to_f64().unwrap())).collect(),
            trainable: self.trainable,
        }
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from the named stream.
pub fn uniform_values<T: Real>(seed: u64, stream_name: &str, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut s = rng::stream(seed, stream_name);
    (0..len).map(|_| r(s.random_range(-bound..bound))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, seed: u64) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            vec![outputs, inputs],
            uniform_values(seed, &format!("init/{name}.weight"), inputs * outputs, inputs),
            true,
        );
        let bias = Param::filled(format!("{name}.bias"), vec![outputs], 0.0, true);
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.per_sample(), self.inputs, "linear input width");
        let mut out = Vec::with_capacity(x.n * self.outputs);
        for i in 0..x.n {
            let xi = x.sample(i);
            for o in 0..self.outputs {
                let row = &self.weight.value[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.bias.value[o];
                for (w, v) in row.iter().zip(xi) {
                    acc += *w * *v;
                }
                out.push(acc);
            }
        }
        Act::matrix(x.n, self.outputs, out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Act<T>, gy: &Act<T>) -> Act<T> {
        let mut gx = vec![T::zero(); x.n * self.inputs];
        for i in 0..x.n {
            let xi = x.sample(i);
            let gi = gy.sample(i);
            let gxi = &mut gx[i * self.inputs..(i + 1) * self.inputs];
            for o in 0..self.outputs {
                let g = gi[o];
                if g == T::zero() {
                    continue;
                }
                self.bias.grad[o] += g;
                let row = &self.weight.value[o * self.inputs..(o + 1) * self.inputs];
                let grow = &mut self.weight.grad[o * self.inputs..(o + 1) * self.inputs];
                for j in 0..self.inputs {
                    grow[j] += g * xi[j];
                    gxi[j] += g * row[j];
                }
            }
        }
        Act::matrix(x.n, self.inputs, gx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel normalization over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], 1.0, true),
            beta: Param::filled(format!("{name}.beta"), vec![channels], 0.0, true),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], 0.0, false),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], 1.0, false),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Act<T>, mode: Mode) -> (Act<T>, BnCache<T>) {
        let ch = self.channels();
        assert_eq!(x.c, ch, "batch norm channel count");
        let hw = x.h * x.w;
        let m = x.n * hw;
        let mut mean = vec![T::zero(); ch];
        let mut var = vec![T::zero(); ch];
        if mode.batch_stats() {
            let inv_m: T = r(1.0 / m as f64);
            for i in 0..x.n {
                let s = x.sample(i);
                for c in 0..ch {
                    mean[c] += s[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v *= inv_m);
            for i in 0..x.n {
                let s = x.sample(i);
                for c in 0..ch {
                    let mu = mean[c];
                    var[c] += s[c * hw..(c + 1) * hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_m);
            if mode == Mode::Train {
                let mom: T = r(self.momentum);
                let unbias: T = if m > 1 { r(m as f64 / (m - 1) as f64) } else { T::one() };
                for c in 0..ch {
                    let rm = &mut self.running_mean.value[c];
                    *rm = (T::one() - mom) * *rm + mom * mean[c];
                    let rv = &mut self.running_var.value[c];
                    *rv = (T::one() - mom) * *rv + mom * var[c] * unbias;
                }
            }
        } else {
            mean.copy_from_slice(&self.running_mean.value);
            var.copy_from_slice(&self.running_var.value);
        }
        let eps: T = r(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut y = Act::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let base = i * ch * hw;
            for c in 0..ch {
                let (mu, is, g, b) = (mean[c], inv_std[c], self.gamma.value[c], self.beta.value[c]);
                for p in 0..hw {
                    let k = base + c * hw + p;
                    let xh = (x.data[k] - mu) * is;
                    xhat[k] = xh;
                    y.data[k] = g * xh + b;
                }
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &BnCache<T>, gy: &Act<T>, mode: Mode) -> Act<T> {
        let ch = self.channels();
        let hw = gy.h * gy.w;
        let m = gy.n * hw;
        let mut sum_g = vec![T::zero(); ch];
        let mut sum_gx = vec![T::zero(); ch];
        for i in 0..gy.n {
            let base = i * ch * hw;
            for c in 0..ch {
                for p in 0..hw {
                    let k = base + c * hw + p;
                    sum_g[c] += gy.data[k];
                    sum_gx[c] += gy.data[k] * cache.xhat[k];
                }
            }
        }
        for c in 0..ch {
            self.beta.grad[c] += sum_g[c];
            self.gamma.grad[c] += sum_gx[c];
        }
        let mut gx = Act::zeros(gy.n, gy.c, gy.h, gy.w);
        let mf: T = r(m as f64);
        for i in 0..gy.n {
            let base = i * ch * hw;
            for c in 0..ch {
                let scale = self.gamma.value[c] * cache.inv_std[c];
                for p in 0..hw {
                    let k = base + c * hw + p;
                    gx.data[k] = if mode.batch_stats() {
                        scale / mf * (mf * gy.data[k] - sum_g[c] - cache.xhat[k] * sum_gx[c])
                    } else {
                        scale * gy.data[k]
                    };
                }
            }
        }
        gx
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

/// 3x3 convolution with padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

pub const KERNEL: usize = 3;

pub fn conv_out_size(n: usize, stride: usize) -> usize {
    (n + 2 - KERNEL) / stride + 1
}

/// Output index range `o` for which `o*stride + k - 1` lies in `0..n`.
fn valid_range(n: usize, out: usize, stride: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    // largest o with o*stride + k - 1 <= n - 1
    let hi = ((n + 1 - k) as isize - 1).div_euclid(stride as isize) + 1;
    (lo, (hi.max(0) as usize).min(out))
}

impl<T: Real> Conv2d<T> {
    /// `input_groups` lists, per block of input channels, the stream tag and
    /// channel count used for initialization; weights for a block only depend
    /// on its tag, so adding or removing other blocks leaves them unchanged.
    pub fn new(name: &str, input_groups: &[(String, usize)], cout: usize, stride: usize, fan_in: usize, seed: u64) -> Self {
        let cin: usize = input_groups.iter().map(|g| g.1).sum();
        let kk = KERNEL * KERNEL;
        let mut w = vec![T::zero(); cout * cin * kk];
        let mut offset = 0;
        for (tag, count) in input_groups {
            let vals: Vec<T> = uniform_values(seed, &format!("init/{name}.weight/{tag}"), cout * count * kk, fan_in);
            for co in 0..cout {
                for ci in 0..*count {
                    for k in 0..kk {
                        w[(co * cin + offset + ci) * kk + k] = vals[(co * count + ci) * kk + k];
                    }
                }
            }
            offset += count;
        }
        Self {
            weight: Param::new(format!("{name}.weight"), vec![cout, cin, KERNEL, KERNEL], w, true),
            bias: Param::filled(format!("{name}.bias"), vec![cout], 0.0, true),
            cin,
            cout,
            stride,
        }
    }

    pub fn simple(name: &str, cin: usize, cout: usize, stride: usize, seed: u64) -> Self {
        Self::new(name, &[("all".to_string(), cin)], cout, stride, cin * KERNEL * KERNEL, seed)
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let s = self.stride;
        let (oh, ow) = (conv_out_size(x.h, s), conv_out_size(x.w, s));
        let mut y = Act::zeros(x.n, self.cout, oh, ow);
        let (ih, iw) = (x.h, x.w);
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = y.sample_mut(i);
            for co in 0..self.cout {
                let out = &mut ys[co * oh * ow..(co + 1) * oh * ow];
                out.iter_mut().for_each(|v| *v = self.bias.value[co]);
                for ci in 0..self.cin {
                    let plane = &xs[ci * ih * iw..(ci + 1) * ih * iw];
                    for ky in 0..KERNEL {
                        let (y0, y1) = valid_range(ih, oh, s, ky);
                        for kx in 0..KERNEL {
                            let wv = self.weight.value[((co * self.cin + ci) * KERNEL + ky) * KERNEL + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            let (x0, x1) = valid_range(iw, ow, s, kx);
                            for oy in y0..y1 {
                                let row = &plane[(oy * s + ky - 1) * iw..];
                                let orow = &mut out[oy * ow..(oy + 1) * ow];
                                for ox in x0..x1 {
                                    orow[ox] += wv * row[ox * s + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Act<T>, gy: &Act<T>, need_input_grad: bool) -> Option<Act<T>> {
        let s = self.stride;
        let (oh, ow) = (gy.h, gy.w);
        let (ih, iw) = (x.h, x.w);
        let mut gx = need_input_grad.then(|| Act::zeros(x.n, x.c, x.h, x.w));
        for i in 0..x.n {
            let xs = x.sample(i);
            let gs = gy.sample(i);
            for co in 0..self.cout {
                let g = &gs[co * oh * ow..(co + 1) * oh * ow];
                self.bias.grad[co] += g.iter().copied().sum::<T>();
                for ci in 0..self.cin {
                    let plane = &xs[ci * ih * iw..(ci + 1) * ih * iw];
                    for ky in 0..KERNEL {
                        let (y0, y1) = valid_range(ih, oh, s, ky);
                        for kx in 0..KERNEL {
                            let widx = ((co * self.cin + ci) * KERNEL + ky) * KERNEL + kx;
                            let (x0, x1) = valid_range(iw, ow, s, kx);
                            let mut acc = T::zero();
                            for oy in y0..y1 {
                                let row = &plane[(oy * s + ky - 1) * iw..];
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                for ox in x0..x1 {
                                    acc += grow[ox] * row[ox * s + kx - 1];
                                }
                            }
                            self.weight.grad[widx] += acc;
                            if let Some(gx) = gx.as_mut() {
                                let wv = self.weight.value[widx];
                                let gplane = &mut gx.sample_mut(i)[ci * ih * iw..(ci + 1) * ih * iw];
                                for oy in y0..y1 {
                                    let base = (oy * s + ky - 1) * iw;
                                    let grow = &g[oy * ow..(oy + 1) * ow];
                                    for ox in x0..x1 {
                                        gplane[base + ox * s + kx - 1] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// 3x3 average pooling, stride 2, padding 1; padded cells count as zeros.
pub fn avg_pool_forward<T: Real>(x: &Act<T>) -> Act<T> {
    let (oh, ow) = (conv_out_size(x.h, 2), conv_out_size(x.w, 2));
    let mut y = Act::zeros(x.n, x.c, oh, ow);
    let ninth: T = r(1.0 / 9.0);
    for i in 0..x.n {
        for c in 0..x.c {
            let plane = &x.sample(i)[c * x.h * x.w..(c + 1) * x.h * x.w];
            let out = &mut y.sample_mut(i)[c * oh * ow..(c + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..KERNEL {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < x.w as isize {
                                acc += plane[iy as usize * x.w + ix as usize];
                            }
                        }
                    }
                    out[oy * ow + ox] = acc * ninth;
                }
            }
        }
    }
    y
}

pub fn avg_pool_backward<T: Real>(x_shape: (usize, usize, usize, usize), gy: &Act<T>) -> Act<T> {
    let (n, c, h, w) = x_shape;
    let mut gx = Act::zeros(n, c, h, w);
    let ninth: T = r(1.0 / 9.0);
    let (oh, ow) = (gy.h, gy.w);
    for i in 0..n {
        for ch in 0..c {
            let g = &gy.sample(i)[ch * oh * ow..(ch + 1) * oh * ow];
            let plane = &mut gx.sample_mut(i)[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[oy * ow + ox] * ninth;
                    for ky in 0..KERNEL {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn relu<T: Real>(x: &mut Act<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Zeroes the gradient where the activation output was not positive.
pub fn relu_backward<T: Real>(y: &Act<T>, g: &mut Act<T>) {
    for (gv, yv) in g.data.iter_mut().zip(&y.data) {
        if *yv <= T::zero() {
            *gv = T::zero();
        }
    }
}

/// Inverted dropout; returns the per-element scale applied (0 or 1/(1-p)).
pub fn dropout<T: Real, R: Rng>(x: &mut Act<T>, p: f64, rng: &mut R) -> Vec<T> {
    let keep: T = r(1.0 / (1.0 - p));
    let mask: Vec<T> = x.data.iter().map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
    x.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
    mask
}
