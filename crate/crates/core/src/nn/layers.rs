//! Primitive layers with explicit forward caches and hand-written backward
//! passes. Every backward here is covered by a finite-difference test.

use alloc::vec::Vec;

use crate::mat::Mat;
use crate::nn::params::{Grads, ParamId, Params};
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// activations

pub fn gelu(x: f64) -> f64 {
    const A: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanh(A * (x + 0.044715 * x * x * x)))
}

pub fn gelu_prime(x: f64) -> f64 {
    const A: f64 = 0.7978845608028654;
    let u = A * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    let du = A * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

// ---------------------------------------------------------------------------
// linear

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init(ps: &mut Params, rng: &mut Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let std = 1.0 / libm::sqrt(d_in as f64);
        let w = ps.add(
            alloc::format!("{name}.w"),
            rng.normal_mat_scaled(d_in, d_out, std),
        );
        let b = ps.add(alloc::format!("{name}.b"), Mat::zeros(1, d_out));
        Linear { w, b }
    }

    /// Zero-initialized variant for output heads and modulation layers.
    pub fn init_zero(ps: &mut Params, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.add(alloc::format!("{name}.w"), Mat::zeros(d_in, d_out));
        let b = ps.add(alloc::format!("{name}.b"), Mat::zeros(1, d_out));
        Linear { w, b }
    }

    pub fn d_out(&self, ps: &Params) -> usize {
        ps.get(self.w).cols()
    }

    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        let mut y = x.matmul(ps.get(self.w));
        y.add_row_broadcast(ps.get(self.b).row(0));
        y
    }

    /// Returns `dx`; accumulates weight/bias gradients.
    pub fn backward(&self, ps: &Params, x: &Mat, dy: &Mat, gs: &mut Grads) -> Mat {
        x.matmul_tn_acc(dy, gs.get_mut(self.w));
        gs.get_mut(self.b).add_assign(&dy.sum_rows());
        dy.matmul_nt(ps.get(self.w))
    }
}

// ---------------------------------------------------------------------------
// embedding

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn init(
        ps: &mut Params,
        rng: &mut Rng,
        name: &str,
        vocab: usize,
        dim: usize,
        std: f64,
    ) -> Self {
        Embedding {
            table: ps.add(alloc::format!("{name}.table"), rng.normal_mat_scaled(vocab, dim, std)),
        }
    }

    pub fn vocab(&self, ps: &Params) -> usize {
        ps.get(self.table).rows()
    }

    pub fn dim(&self, ps: &Params) -> usize {
        ps.get(self.table).cols()
    }

    pub fn forward(&self, ps: &Params, ids: &[u32]) -> Mat {
        let table = ps.get(self.table);
        let mut out = Mat::zeros(ids.len(), table.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.set_row(i, table.row(id as usize));
        }
        out
    }

    pub fn backward(&self, ids: &[u32], dy: &Mat, gs: &mut Grads) {
        let g = gs.get_mut(self.table);
        for (i, &id) in ids.iter().enumerate() {
            g.add_row_assign(id as usize, dy.row(i));
        }
    }
}

// ---------------------------------------------------------------------------
// layer norm

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub struct LayerNormCache {
    x_hat: Mat,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn init(ps: &mut Params, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: ps.add(alloc::format!("{name}.gamma"), Mat::filled(1, dim, 1.0)),
            beta: ps.add(alloc::format!("{name}.beta"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols() as f64;
        let gamma = ps.get(self.gamma).row(0);
        let beta = ps.get(self.beta).row(0);
        let mut y = Mat::zeros(x.rows(), x.cols());
        let mut x_hat = Mat::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / libm::sqrt(var + LN_EPS);
            inv_std.push(is);
            let xh = x_hat.row_mut(i);
            let yr = y.row_mut(i);
            for j in 0..row.len() {
                let h = (row[j] - mean) * is;
                xh[j] = h;
                yr[j] = gamma[j] * h + beta[j];
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        self.forward_t(ps, x).0
    }

    pub fn backward(&self, ps: &Params, cache: &LayerNormCache, dy: &Mat, gs: &mut Grads) -> Mat {
        let d = dy.cols() as f64;
        let gamma = ps.get(self.gamma).row(0).to_vec();
        let mut dx = Mat::zeros(dy.rows(), dy.cols());
        {
            let dgamma = gs.get_mut(self.gamma);
            for i in 0..dy.rows() {
                let dyr = dy.row(i);
                let xh = cache.x_hat.row(i);
                for j in 0..dyr.len() {
                    dgamma.data_mut()[j] += dyr[j] * xh[j];
                }
            }
        }
        gs.get_mut(self.beta).add_assign(&dy.sum_rows());
        for i in 0..dy.rows() {
            let dyr = dy.row(i);
            let xh = cache.x_hat.row(i);
            let is = cache.inv_std[i];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for j in 0..dyr.len() {
                let dxh = dyr[j] * gamma[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            let dxr = dx.row_mut(i);
            for j in 0..dyr.len() {
                let dxh = dyr[j] * gamma[j];
                dxr[j] = is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution over frames (same padding, via im2col)

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId, // (kernel * c_in, c_out)
    pub b: ParamId,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn init(
        ps: &mut Params,
        rng: &mut Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd for same padding");
        let std = 1.0 / libm::sqrt((kernel * c_in) as f64);
        Conv1d {
            w: ps.add(
                alloc::format!("{name}.w"),
                rng.normal_mat_scaled(kernel * c_in, c_out, std),
            ),
            b: ps.add(alloc::format!("{name}.b"), Mat::zeros(1, c_out)),
            kernel,
            c_in,
            c_out,
        }
    }

    fn im2col(&self, x: &Mat) -> Mat {
        let t_len = x.rows();
        let r = self.kernel / 2;
        let mut col = Mat::zeros(t_len, self.kernel * self.c_in);
        for t in 0..t_len {
            for j in 0..self.kernel {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let dst = col.row_mut(t);
                dst[j * self.c_in..(j + 1) * self.c_in].copy_from_slice(x.row(src as usize));
            }
        }
        col
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat) -> (Mat, Mat) {
        debug_assert_eq!(x.cols(), self.c_in);
        let col = self.im2col(x);
        let mut y = col.matmul(ps.get(self.w));
        y.add_row_broadcast(ps.get(self.b).row(0));
        (y, col)
    }

    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        self.forward_t(ps, x).0
    }

    pub fn backward(&self, ps: &Params, col: &Mat, dy: &Mat, gs: &mut Grads) -> Mat {
        col.matmul_tn_acc(dy, gs.get_mut(self.w));
        gs.get_mut(self.b).add_assign(&dy.sum_rows());
        let dcol = dy.matmul_nt(ps.get(self.w));
        // col2im: scatter the column gradient back onto frames
        let t_len = dy.rows();
        let r = self.kernel / 2;
        let mut dx = Mat::zeros(t_len, self.c_in);
        for t in 0..t_len {
            let dcol_row = dcol.row(t);
            for j in 0..self.kernel {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                dx.add_row_assign(src as usize, &dcol_row[j * self.c_in..(j + 1) * self.c_in]);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// depthwise 1-D convolution (same padding)

#[derive(Clone, Copy, Debug)]
pub struct DwConv1d {
    pub w: ParamId, // (kernel, channels)
    pub b: ParamId,
    pub kernel: usize,
}

impl DwConv1d {
    pub fn init(ps: &mut Params, rng: &mut Rng, name: &str, channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "depthwise kernel must be odd");
        let std = 1.0 / libm::sqrt(kernel as f64);
        DwConv1d {
            w: ps.add(
                alloc::format!("{name}.w"),
                rng.normal_mat_scaled(kernel, channels, std),
            ),
            b: ps.add(alloc::format!("{name}.b"), Mat::zeros(1, channels)),
            kernel,
        }
    }

    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        let w = ps.get(self.w);
        let b = ps.get(self.b);
        let t_len = x.rows();
        let c = x.cols();
        let r = self.kernel / 2;
        let mut y = Mat::zeros(t_len, c);
        for t in 0..t_len {
            let yr = y.row_mut(t);
            yr.copy_from_slice(b.row(0));
            for j in 0..self.kernel {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xr = x.row(src as usize);
                let wr = w.row(j);
                for k in 0..c {
                    yr[k] += wr[k] * xr[k];
                }
            }
        }
        y
    }

    pub fn backward(&self, ps: &Params, x: &Mat, dy: &Mat, gs: &mut Grads) -> Mat {
        let w = ps.get(self.w);
        let t_len = x.rows();
        let c = x.cols();
        let r = self.kernel / 2;
        let mut dx = Mat::zeros(t_len, c);
        gs.get_mut(self.b).add_assign(&dy.sum_rows());
        for t in 0..t_len {
            let dyr = dy.row(t);
            for j in 0..self.kernel {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let src = src as usize;
                {
                    let dw = gs.get_mut(self.w);
                    let dwr = dw.row_mut(j);
                    let xr = x.row(src);
                    for k in 0..c {
                        dwr[k] += dyr[k] * xr[k];
                    }
                }
                let wr = w.row(j);
                let dxr = dx.row_mut(src);
                for k in 0..c {
                    dxr[k] += wr[k] * dyr[k];
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// softmax

/// Row-wise softmax (numerically shifted by the row max).
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for i in 0..y.rows() {
        let row = y.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Backward of row-wise softmax given the forward output `y`.
pub fn softmax_rows_backward(y: &Mat, dy: &Mat) -> Mat {
    let mut dx = Mat::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        let dxr = dx.row_mut(i);
        for j in 0..yr.len() {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// multi-head self-attention

#[derive(Clone, Copy, Debug)]
pub struct Mhsa {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

pub struct MhsaCache {
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>,
    ctx: Mat,
}

impl Mhsa {
    pub fn init(ps: &mut Params, rng: &mut Rng, name: &str, d_model: usize, n_heads: usize) -> Self {
        assert_eq!(d_model % n_heads, 0, "d_model must divide n_heads");
        Mhsa {
            wq: Linear::init(ps, rng, &alloc::format!("{name}.wq"), d_model, d_model),
            wk: Linear::init(ps, rng, &alloc::format!("{name}.wk"), d_model, d_model),
            wv: Linear::init(ps, rng, &alloc::format!("{name}.wv"), d_model, d_model),
            wo: Linear::init(ps, rng, &alloc::format!("{name}.wo"), d_model, d_model),
            n_heads,
            d_model,
        }
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Inference path: per-head score matrices are dropped as soon as the
    /// head's context is computed, keeping peak memory at one T x T block.
    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        let q = self.wq.forward(ps, x);
        let k = self.wk.forward(ps, x);
        let v = self.wv.forward(ps, x);
        let dh = self.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut ctx = Mat::zeros(x.rows(), self.d_model);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut scores = qh.matmul_nt(&kh);
            scores.scale_inplace(scale);
            let attn = softmax_rows(&scores);
            drop(scores);
            let ctx_h = attn.matmul(&vh);
            for i in 0..ctx.rows() {
                ctx.row_mut(i)[lo..hi].copy_from_slice(ctx_h.row(i));
            }
        }
        self.wo.forward(ps, &ctx)
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat) -> (Mat, MhsaCache) {
        let q = self.wq.forward(ps, x);
        let k = self.wk.forward(ps, x);
        let v = self.wv.forward(ps, x);
        let dh = self.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut ctx = Mat::zeros(x.rows(), self.d_model);
        let mut attn_heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut scores = qh.matmul_nt(&kh);
            scores.scale_inplace(scale);
            let attn = softmax_rows(&scores);
            let ctx_h = attn.matmul(&vh);
            for i in 0..ctx.rows() {
                ctx.row_mut(i)[lo..hi].copy_from_slice(ctx_h.row(i));
            }
            attn_heads.push(attn);
        }
        let y = self.wo.forward(ps, &ctx);
        (
            y,
            MhsaCache {
                q,
                k,
                v,
                attn: attn_heads,
                ctx,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &Params,
        x: &Mat,
        cache: &MhsaCache,
        dy: &Mat,
        gs: &mut Grads,
    ) -> Mat {
        let dh = self.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let dctx = self.wo.backward(ps, &cache.ctx, dy, gs);
        let t_len = dy.rows();
        let mut dq = Mat::zeros(t_len, self.d_model);
        let mut dk = Mat::zeros(t_len, self.d_model);
        let mut dv = Mat::zeros(t_len, self.d_model);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let attn = &cache.attn[h];
            let dctx_h = dctx.slice_cols(lo, hi);
            let vh = cache.v.slice_cols(lo, hi);
            let qh = cache.q.slice_cols(lo, hi);
            let kh = cache.k.slice_cols(lo, hi);

            let mut dvh = Mat::zeros(t_len, dh);
            attn.matmul_tn_acc(&dctx_h, &mut dvh);
            let dattn = dctx_h.matmul_nt(&vh);
            let mut dscores = softmax_rows_backward(attn, &dattn);
            dscores.scale_inplace(scale);
            let dqh = dscores.matmul(&kh);
            let mut dkh = Mat::zeros(t_len, dh);
            dscores.matmul_tn_acc(&qh, &mut dkh);

            for i in 0..t_len {
                dq.row_mut(i)[lo..hi].copy_from_slice(dqh.row(i));
                dk.row_mut(i)[lo..hi].copy_from_slice(dkh.row(i));
                dv.row_mut(i)[lo..hi].copy_from_slice(dvh.row(i));
            }
        }
        let mut dx = self.wq.backward(ps, x, &dq, gs);
        dx.add_assign(&self.wk.backward(ps, x, &dk, gs));
        dx.add_assign(&self.wv.backward(ps, x, &dv, gs));
        dx
    }
}

// ---------------------------------------------------------------------------
// cross entropy over per-frame logits

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, plus the logits gradient (scaled by `grad_scale`).
pub fn cross_entropy_with_grad(logits: &Mat, targets: &[u32], grad_scale: f64) -> (f64, Mat) {
    debug_assert_eq!(logits.rows(), targets.len());
    let n = targets.len() as f64;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        let p = grad.at(i, t as usize);
        loss -= libm::log(p.max(1e-300));
        let row = grad.row_mut(i);
        row[t as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= grad_scale / n;
        }
    }
    (loss / n, grad)
}

/// Mean negative log-likelihood only (no gradient).
pub fn cross_entropy(logits: &Mat, targets: &[u32]) -> f64 {
    debug_assert_eq!(logits.rows(), targets.len());
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= libm::log(probs.at(i, t as usize).max(1e-300));
    }
    loss / targets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_err_inputs, max_rel_err_params};

    fn weighted_sum(y: &Mat, c: &Mat) -> f64 {
        y.hadamard(c).sum()
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(1);
        let mut ps = Params::new();
        let lin = Linear::init(&mut ps, &mut rng, "lin", 4, 3);
        let x = rng.normal_mat(5, 4);
        let c = rng.normal_mat(5, 3);

        let mut gs = Grads::zeros_like(&ps);
        let y = lin.forward(&ps, &x);
        let dy = c.clone();
        let dx = lin.backward(&ps, &x, &dy, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&lin.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-6);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-6);
        assert_eq!(y.shape(), (5, 3));
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(2);
        let mut ps = Params::new();
        let emb = Embedding::init(&mut ps, &mut rng, "emb", 6, 3, 0.5);
        let ids = vec![0u32, 5, 2, 5];
        let c = rng.normal_mat(4, 3);

        let mut gs = Grads::zeros_like(&ps);
        let y = emb.forward(&ps, &ids);
        emb.backward(&ids, &c, &mut gs);

        let dummy = Mat::zeros(1, 1);
        let f = |ps: &Params, _x: &Mat| weighted_sum(&emb.forward(ps, &ids), &c);
        assert!(max_rel_err_params(&mut ps, &dummy, f, &gs) < 1e-6);
        assert_eq!(y.shape(), (4, 3));
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(3);
        let mut ps = Params::new();
        let ln = LayerNorm::init(&mut ps, "ln", 5);
        // give gamma/beta non-trivial values
        *ps.get_mut(ln.gamma) = rng.normal_mat(1, 5).map(|v| 1.0 + 0.2 * v);
        *ps.get_mut(ln.beta) = rng.normal_mat_scaled(1, 5, 0.3);
        let x = rng.normal_mat(4, 5);
        let c = rng.normal_mat(4, 5);

        let mut gs = Grads::zeros_like(&ps);
        let (_, cache) = ln.forward_t(&ps, &x);
        let dx = ln.backward(&ps, &cache, &c, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&ln.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(4);
        let mut ps = Params::new();
        let conv = Conv1d::init(&mut ps, &mut rng, "conv", 3, 4, 3);
        let x = rng.normal_mat(6, 3);
        let c = rng.normal_mat(6, 4);

        let mut gs = Grads::zeros_like(&ps);
        let (_, col) = conv.forward_t(&ps, &x);
        let dx = conv.backward(&ps, &col, &c, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&conv.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-6);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-6);
    }

    #[test]
    fn dwconv_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(5);
        let mut ps = Params::new();
        let dw = DwConv1d::init(&mut ps, &mut rng, "dw", 4, 5);
        let x = rng.normal_mat(7, 4);
        let c = rng.normal_mat(7, 4);

        let mut gs = Grads::zeros_like(&ps);
        let dx = dw.backward(&ps, &x, &c, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&dw.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-6);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-6);
    }

    #[test]
    fn mhsa_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(6);
        let mut ps = Params::new();
        let attn = Mhsa::init(&mut ps, &mut rng, "attn", 6, 2);
        let x = rng.normal_mat(5, 6);
        let c = rng.normal_mat(5, 6);

        let mut gs = Grads::zeros_like(&ps);
        let (y, cache) = attn.forward_t(&ps, &x);
        let dx = attn.backward(&ps, &x, &cache, &c, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&attn.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);
        // inference and training paths agree
        let y2 = attn.forward(&ps, &x);
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::seed_from(7);
        let x = rng.normal_mat(3, 5);
        let y = softmax_rows(&x);
        for i in 0..3 {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_brute_force() {
        let mut rng = Rng::seed_from(8);
        let logits = rng.normal_mat(6, 4);
        let targets: Vec<u32> = (0..6).map(|_| rng.below(4) as u32).collect();
        let (loss, _) = cross_entropy_with_grad(&logits, &targets, 1.0);
        // brute-force log-softmax NLL
        let mut reference = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|&v| libm::exp(v)).sum();
            reference -= libm::log(libm::exp(row[t as usize]) / z);
        }
        reference /= targets.len() as f64;
        assert!((loss - reference).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Mat::zeros(5, 2);
        let targets = vec![0u32, 1, 0, 1, 1];
        let (loss, _) = cross_entropy_with_grad(&logits, &targets, 1.0);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from(9);
        let logits = rng.normal_mat(4, 3);
        let targets = vec![2u32, 0, 1, 2];
        let (_, grad) = cross_entropy_with_grad(&logits, &targets, 1.0);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus.set(i, j, logits.at(i, j) + h);
                let mut minus = logits.clone();
                minus.set(i, j, logits.at(i, j) - h);
                let fd = (cross_entropy(&plus, &targets) - cross_entropy(&minus, &targets))
                    / (2.0 * h);
                assert!((fd - grad.at(i, j)).abs() < 1e-6);
            }
        }
    }
}
