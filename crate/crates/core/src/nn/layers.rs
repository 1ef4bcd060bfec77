//! Convolution, activation and resampling layers with their backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamLayout, Real, Tensor};

/// Square `k×k` convolution, stride 1, zero padding `k/2` (same-size output).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// Offset of the `[cout][cin][k][k]` weight array.
    pub weight: usize,
    /// Offset of the `[cout]` bias array.
    pub bias: usize,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "odd kernel size");
        let weight = layout.push(format!("{name}.weight"), &[cout, cin, k, k]);
        let bias = layout.push(format!("{name}.bias"), &[cout]);
        Self { cin, cout, k, weight, bias }
    }

    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// He (fan-in) normal initialization of the weights, zero bias.
    pub fn init<T: Real>(&self, params: &mut [T], rng: &mut impl Rng) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut params[self.weight..self.weight + self.cout * self.fan_in()] {
            *w = T::of(normal.sample(rng));
        }
        params[self.bias..self.bias + self.cout].iter_mut().for_each(|b| *b = T::zero());
    }

    fn weights<'a, T: Real>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.weight..self.weight + self.cout * self.fan_in()]
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let cols_owned;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols_owned = im2col(x, self.k);
            &cols_owned
        };
        let len = x.channel_len();
        let mut y = Tensor::zeros(self.cout, x.n, x.h, x.w);
        for (o, chunk) in y.data.chunks_mut(len).enumerate() {
            let b = params[self.bias + o];
            chunk.iter_mut().for_each(|v| *v = b);
        }
        let kk = self.fan_in();
        T::gemm(self.cout, kk, len, self.weights(params), kk, 1, cols, len, 1, T::one(), &mut y.data);
        y
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dx` when requested.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(dy.c, self.cout, "conv output-gradient channels");
        let len = x.channel_len();
        let kk = self.fan_in();
        let cols_owned;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols_owned = im2col(x, self.k);
            &cols_owned
        };
        for (o, chunk) in dy.data.chunks(len).enumerate() {
            grads[self.bias + o] += chunk.iter().copied().sum::<T>();
        }
        let gw = &mut grads[self.weight..self.weight + self.cout * kk];
        // dW[o][i] += Σ_p dy[o][p] · cols[i][p]
        T::gemm(self.cout, len, kk, &dy.data, len, 1, cols, 1, len, T::one(), gw);
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * len];
        // dcols[i][p] = Σ_o W[o][i] · dy[o][p]
        T::gemm(kk, self.cout, len, self.weights(params), 1, kk, &dy.data, len, 1, T::zero(), &mut dcols);
        if self.k == 1 {
            return Some(Tensor::from_vec(x.c, x.n, x.h, x.w, dcols));
        }
        Some(col2im(&dcols, x, self.k))
    }
}

/// `[cin·k·k][n·h·w]` patch matrix for a same-padded convolution.
fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (h, w, n) = (x.h, x.w, x.n);
    let pad = (k / 2) as isize;
    let len = x.channel_len();
    let mut cols = vec![T::zero(); x.c * k * k * len];
    for ci in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for s in 0..n {
                    let src_plane = x.plane(ci, s);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut cols[row * len + s * h * w + y * w..][..w];
                        let src = &src_plane[sy as usize * w..][..w];
                        for xx in x_lo..x_hi {
                            dst[xx] = src[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], like: &Tensor<T>, k: usize) -> Tensor<T> {
    let (h, w, n) = (like.h, like.w, like.n);
    let pad = (k / 2) as isize;
    let len = like.channel_len();
    let mut out = Tensor::zeros(like.c, n, h, w);
    for ci in 0..like.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for s in 0..n {
                    let dst_plane = out.plane_mut(ci, s);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &cols[row * len + s * h * w + y * w..][..w];
                        let dst = &mut dst_plane[sy as usize * w..][..w];
                        for xx in x_lo..x_hi {
                            dst[(xx as isize + dx) as usize] += src[xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// ELU with α = 1.
pub fn elu<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v <= T::zero() {
            *v = v.exp_m1();
        }
    }
}

/// Backward of [`elu`] given its output `y`; modifies `dy` in place.
pub fn elu_backward<T: Real>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g *= v + T::one();
        }
    }
}

/// 2×2 average pooling (dims must be even).
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    assert!(x.h.is_multiple_of(2) && x.w.is_multiple_of(2), "pooling needs even dims");
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, x.n, h2, w2);
    let q = T::of(0.25);
    for c in 0..x.c {
        for s in 0..x.n {
            let src = x.plane(c, s);
            let dst = out.plane_mut(c, s);
            for y in 0..h2 {
                for xx in 0..w2 {
                    let a = 2 * y * x.w + 2 * xx;
                    dst[y * w2 + xx] = (src[a] + src[a + 1] + src[a + x.w] + src[a + x.w + 1]) * q;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let mut out = Tensor::zeros(dy.c, dy.n, h, w);
    let q = T::of(0.25);
    for c in 0..dy.c {
        for s in 0..dy.n {
            let src = dy.plane(c, s);
            let dst = out.plane_mut(c, s);
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / 2) * dy.w + xx / 2] * q;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, x.n, h, w);
    for c in 0..x.c {
        for s in 0..x.n {
            let src = x.plane(c, s);
            let dst = out.plane_mut(c, s);
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (dy.h / 2, dy.w / 2);
    let mut out = Tensor::zeros(dy.c, dy.n, h2, w2);
    for c in 0..dy.c {
        for s in 0..dy.n {
            let src = dy.plane(c, s);
            let dst = out.plane_mut(c, s);
            for y in 0..h2 {
                for xx in 0..w2 {
                    let a = 2 * y * dy.w + 2 * xx;
                    dst[y * w2 + xx] = src[a] + src[a + 1] + src[a + dy.w] + src[a + dy.w + 1];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, n, h, w, (0..c * n * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Direct (loop) convolution used as an oracle for the im2col path.
    fn conv_direct(conv: &Conv2d, p: &[f64], x: &Tensor<f64>) -> Tensor<f64> {
        let pad = (conv.k / 2) as isize;
        let mut y = Tensor::zeros(conv.cout, x.n, x.h, x.w);
        for o in 0..conv.cout {
            for s in 0..x.n {
                for i in 0..x.h {
                    for j in 0..x.w {
                        let mut acc = p[conv.bias + o];
                        for c in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let (yy, xx) = (i as isize + ky as isize - pad, j as isize + kx as isize - pad);
                                    if yy < 0 || xx < 0 || yy >= x.h as isize || xx >= x.w as isize {
                                        continue;
                                    }
                                    let wi = ((o * conv.cin + c) * conv.k + ky) * conv.k + kx;
                                    acc += p[conv.weight + wi] * x.plane(c, s)[yy as usize * x.w + xx as usize];
                                }
                            }
                        }
                        y.plane_mut(o, s)[i * x.w + j] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        for k in [1, 3] {
            let mut layout = ParamLayout::new();
            let conv = Conv2d::new(&mut layout, "c", 3, 4, k);
            let mut p = vec![0.0; layout.total()];
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let x = random_tensor(3, 2, 5, 6, 9);
            let a = conv.forward(&p, &x);
            let b = conv_direct(&conv, &p, &x);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = random_tensor(2, 2, 4, 5, 1);
        let cols = im2col(&x, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im(&c, &x, 3);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_are_adjoint_pairs() {
        let x = random_tensor(2, 3, 4, 6, 3);
        let d = random_tensor(2, 3, 2, 3, 4);
        let lhs: f64 = avg_pool2(&x).data.iter().zip(&d.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&avg_pool2_backward(&d).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&d).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = d.data.iter().zip(&upsample2_backward(&x).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn elu_values_and_slope() {
        let mut t = Tensor::from_vec(1, 1, 1, 3, vec![-1.0f64, 0.0, 2.0]);
        elu(&mut t);
        assert!((t.data[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(&t.data[1..], &[0.0, 2.0]);
        let mut g = Tensor::from_vec(1, 1, 1, 3, vec![1.0; 3]);
        elu_backward(&t, &mut g);
        assert!((g.data[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(&g.data[1..], &[1.0, 1.0]);
    }
}
