//! Sinusoidal positional encoding.
//!
//! Each input component `x` expands to `(x, sin(2^j pi x), cos(2^j pi x))`
//! for `j = 0..L-1`, component-major. The tangent and backward passes reuse
//! the sin/cos values already present in the encoded output.

use crate::num::{rl, Real};
use ndarray::{Array2, Axis};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PositionalEncoding {
    pub n_freqs: usize,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub fn new(n_freqs: usize, include_input: bool) -> Self {
        PositionalEncoding {
            n_freqs,
            include_input,
        }
    }

    /// Size of one per-component block.
    pub fn block_len(&self) -> usize {
        2 * self.n_freqs + usize::from(self.include_input)
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        in_dim * self.block_len()
    }

    /// Encodes a batch of rows (N x in_dim) -> (N x out_dim).
    pub fn encode<S: Real>(&self, x: &Array2<S>) -> Array2<S> {
        let (n, in_dim) = x.dim();
        let block = self.block_len();
        let mut out = Array2::<S>::zeros((n, in_dim * block));
        for row in 0..n {
            for c in 0..in_dim {
                let v = x[(row, c)];
                let base = c * block;
                let mut k = base;
                if self.include_input {
                    out[(row, k)] = v;
                    k += 1;
                }
                let mut freq: S = rl(std::f64::consts::PI);
                for _ in 0..self.n_freqs {
                    let arg = freq * v;
                    out[(row, k)] = arg.sin();
                    out[(row, k + 1)] = arg.cos();
                    k += 2;
                    freq = freq + freq;
                }
            }
        }
        out
    }

    /// Pushes input tangents through the encoding:
    /// `enc_dot = d(enc)/dx * xdot`, reading sin/cos from `enc`.
    pub fn tangent<S: Real>(&self, enc: &Array2<S>, xdot: &Array2<S>) -> Array2<S> {
        let (n, in_dim) = xdot.dim();
        let block = self.block_len();
        debug_assert_eq!(enc.dim(), (n, in_dim * block));
        let mut out = Array2::<S>::zeros((n, in_dim * block));
        for row in 0..n {
            for c in 0..in_dim {
                let dv = xdot[(row, c)];
                let base = c * block;
                let mut k = base;
                if self.include_input {
                    out[(row, k)] = dv;
                    k += 1;
                }
                let mut freq: S = rl(std::f64::consts::PI);
                for _ in 0..self.n_freqs {
                    let s = enc[(row, k)];
                    let co = enc[(row, k + 1)];
                    out[(row, k)] = freq * co * dv;
                    out[(row, k + 1)] = -(freq * s * dv);
                    k += 2;
                    freq = freq + freq;
                }
            }
        }
        out
    }

    /// Pulls encoded-space adjoints back to the input:
    /// `xbar = (d(enc)/dx)^T enc_bar`.
    pub fn backward<S: Real>(&self, enc: &Array2<S>, enc_bar: &Array2<S>) -> Array2<S> {
        let (n, out_dim) = enc.dim();
        let block = self.block_len();
        let in_dim = out_dim / block;
        debug_assert_eq!(enc_bar.dim(), (n, out_dim));
        let mut xbar = Array2::<S>::zeros((n, in_dim));
        for row in 0..n {
            for c in 0..in_dim {
                let base = c * block;
                let mut k = base;
                let mut acc = S::zero();
                if self.include_input {
                    acc += enc_bar[(row, k)];
                    k += 1;
                }
                let mut freq: S = rl(std::f64::consts::PI);
                for _ in 0..self.n_freqs {
                    let s = enc[(row, k)];
                    let co = enc[(row, k + 1)];
                    acc += freq * (co * enc_bar[(row, k)] - s * enc_bar[(row, k + 1)]);
                    k += 2;
                    freq = freq + freq;
                }
                xbar[(row, c)] = acc;
            }
        }
        xbar
    }

    /// Encodes a single row and replicates it `n` times.
    pub fn encode_broadcast<S: Real>(&self, v: &[S], n: usize) -> Array2<S> {
        let row = Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let enc = self.encode(&row);
        let mut out = Array2::<S>::zeros((n, enc.dim().1));
        for mut r in out.axis_iter_mut(Axis(0)) {
            r.assign(&enc.row(0));
        }
        out
    }
}
