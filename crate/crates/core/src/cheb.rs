//! Chebyshev–Lobatto collocation on an interval `[0, width]`.
//!
//! Nodes are ordered increasingly, `x_j = width * (1 - cos(pi j / (N-1))) / 2`.
//! Differentiation goes through the Chebyshev coefficients, which are obtained
//! with a length `2(N-1)` real-even FFT.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Chebyshev {
    n: usize,
    width: f64,
    fft: Arc<dyn Fft<f64>>,
    nodes: Vec<f64>,
    angles: Vec<f64>,
    weights: Vec<f64>,
}

impl fmt::Debug for Chebyshev {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chebyshev")
            .field("n", &self.n)
            .field("width", &self.width)
            .finish()
    }
}

impl Chebyshev {
    /// `n >= 3` nodes on `[0, width]`.
    pub fn new(n: usize, width: f64) -> Self {
        assert!(n >= 3, "need at least three Chebyshev nodes");
        let m = n - 1;
        let angles: Vec<f64> = (0..n).map(|j| PI * j as f64 / m as f64).collect();
        let nodes = angles
            .iter()
            .enumerate()
            .map(|(j, th)| {
                // exact endpoints, symmetric rounding in between
                if j == 0 {
                    0.0
                } else if j == m {
                    width
                } else {
                    width * (0.5 - 0.5 * th.cos())
                }
            })
            .collect();
        let weights = clenshaw_curtis(n)
            .into_iter()
            .map(|w| w * width / 2.0)
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * m);
        Chebyshev {
            n,
            width,
            fft,
            nodes,
            angles,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Angles `pi j / (N-1)`; node `j` sits at `width (1 - cos angle_j) / 2`.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Clenshaw–Curtis weights for `[0, width]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coefficients `a_k` with `f(x) = sum_k a_k T_k(2x/width - 1)`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        let m = self.n - 1;
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * m];
        // sample k of the even extension is the value at cos(pi k / m) = node m - k
        for k in 0..=m {
            buf[k].re = f[m - k];
        }
        for k in 1..m {
            buf[2 * m - k].re = f[m - k];
        }
        self.fft.process(&mut buf);
        let mut a: Vec<f64> = buf[..=m].iter().map(|z| z.re / m as f64).collect();
        a[0] *= 0.5;
        a[m] *= 0.5;
        a
    }

    /// Node values of a Chebyshev series with `N` coefficients.
    pub fn values(&self, a: &[f64]) -> Vec<f64> {
        assert_eq!(a.len(), self.n);
        let m = self.n - 1;
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * m];
        buf[0].re = a[0];
        buf[m].re = a[m];
        for k in 1..m {
            buf[k].re = 0.5 * a[k];
            buf[2 * m - k].re = 0.5 * a[k];
        }
        self.fft.process(&mut buf);
        (0..=m).map(|j| buf[m - j].re).collect()
    }

    /// Coefficients of the x-derivative.
    pub fn derivative_coefficients(&self, a: &[f64]) -> Vec<f64> {
        let m = a.len() - 1;
        let mut b = vec![0.0; m + 2];
        for k in (1..=m).rev() {
            b[k - 1] = b[k + 1] + 2.0 * k as f64 * a[k];
        }
        b[0] *= 0.5;
        b.truncate(m + 1);
        let scale = 2.0 / self.width;
        b.iter_mut().for_each(|v| *v *= scale);
        b
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let a = self.coefficients(&self.deflate(f));
        self.values(&self.derivative_coefficients(&a))
    }

    /// First and second x-derivatives at the nodes.
    pub fn derivatives(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.coefficients(&self.deflate(f));
        let b = self.derivative_coefficients(&a);
        let c = self.derivative_coefficients(&b);
        (self.values(&b), self.values(&c))
    }

    /// Removes the first value so that rounding noise scales with the
    /// variation of `f` rather than its size.
    fn deflate(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        f.iter().map(|v| v - f[0]).collect()
    }

    /// Evaluates a series at an arbitrary `x` in `[0, width]` (Clenshaw).
    pub fn evaluate(&self, a: &[f64], x: f64) -> f64 {
        clenshaw(a, 2.0 * x / self.width - 1.0)
    }
}

pub(crate) fn clenshaw(a: &[f64], xi: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ak in a.iter().skip(1).rev() {
        let b0 = ak + 2.0 * xi * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    a[0] + xi * b1 - b2
}

/// Clenshaw–Curtis weights on `[-1, 1]` for the Lobatto nodes.
fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let m = n - 1;
    let mf = m as f64;
    let mut w = vec![0.0; n];
    let mut v = vec![1.0; n];
    let th = |j: usize| PI * j as f64 / mf;
    if m % 2 == 0 {
        w[0] = 1.0 / (mf * mf - 1.0);
        for (j, vj) in v.iter_mut().enumerate().take(m).skip(1) {
            for k in 1..m / 2 {
                let kf = k as f64;
                *vj -= 2.0 * (2.0 * kf * th(j)).cos() / (4.0 * kf * kf - 1.0);
            }
            *vj -= (mf * th(j)).cos() / (mf * mf - 1.0);
        }
    } else {
        w[0] = 1.0 / (mf * mf);
        for (j, vj) in v.iter_mut().enumerate().take(m).skip(1) {
            for k in 1..=(m - 1) / 2 {
                let kf = k as f64;
                *vj -= 2.0 * (2.0 * kf * th(j)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    w[m] = w[0];
    for j in 1..m {
        w[j] = 2.0 * v[j] / mf;
    }
    w
}
