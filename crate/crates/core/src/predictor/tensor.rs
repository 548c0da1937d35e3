//! Minimal batch-major activations (N, C, H, W) over f32 or f64.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn r<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    /// A (n, features) matrix stored as (n, features, 1, 1).
    pub fn matrix(n: usize, features: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * features);
        Self { n, c: features, h: 1, w: 1, data }
    }

    pub fn per_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.per_sample();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.per_sample();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Same data viewed as (n, c*h*w).
    pub fn flattened(self) -> Self {
        let f = self.per_sample();
        Self { n: self.n, c: f, h: 1, w: 1, data: self.data }
    }

    pub fn reshaped(self, c: usize, h: usize, w: usize) -> Self {
        assert_eq!(c * h * w, self.per_sample());
        Self { n: self.n, c, h, w, data: self.data }
    }

    pub fn cast<U: Real>(&self) -> Act<U> {
        Act {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| r::<U>(v.to_f64().unwrap_or(0.0))).collect(),
        }
    }
}

/// Row-wise concatenation of two matrices.
pub fn concat_features<T: Real>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    assert_eq!(a.n, b.n);
    let (fa, fb) = (a.per_sample(), b.per_sample());
    let mut data = Vec::with_capacity(a.n * (fa + fb));
    for i in 0..a.n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Act::matrix(a.n, fa + fb, data)
}

/// Inverse of [`concat_features`] for gradients.
pub fn split_features<T: Real>(g: &Act<T>, fa: usize) -> (Act<T>, Act<T>) {
    let f = g.per_sample();
    let fb = f - fa;
    let mut a = Vec::with_capacity(g.n * fa);
    let mut b = Vec::with_capacity(g.n * fb);
    for i in 0..g.n {
        let s = g.sample(i);
        a.extend_from_slice(&s[..fa]);
        b.extend_from_slice(&s[fa..]);
    }
    (Act::matrix(g.n, fa, a), Act::matrix(g.n, fb, b))
}
