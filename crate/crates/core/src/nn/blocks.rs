//! Composite blocks: feed-forward-transformer blocks, ConvNeXt-style mixer
//! blocks with optional adaptive modulation, and the sinusoidal time
//! embedding MLP.

use alloc::format;

use crate::mat::Mat;
use crate::nn::layers::{
    gelu, gelu_prime, silu, silu_prime, Conv1d, DwConv1d, LayerNorm, LayerNormCache, Linear, Mhsa,
    MhsaCache,
};
use crate::nn::params::{Grads, Params};
use crate::rng::Rng;

fn gelu_mat(x: &Mat) -> Mat {
    x.map(gelu)
}

fn gelu_backward(pre: &Mat, dy: &Mat) -> Mat {
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
        *d *= gelu_prime(p);
    }
    dx
}

// ---------------------------------------------------------------------------
// feed-forward transformer block (pre-norm attention + convolutional FFN)

#[derive(Clone, Copy, Debug)]
pub struct FftBlock {
    pub ln1: LayerNorm,
    pub attn: Mhsa,
    pub ln2: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

pub struct FftBlockCache {
    ln1: LayerNormCache,
    h1: Mat,
    attn: MhsaCache,
    ln2: LayerNormCache,
    col1: Mat,
    p1: Mat,
    col2: Mat,
}

impl FftBlock {
    pub fn init(
        ps: &mut Params,
        rng: &mut Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ffn_mult: usize,
        kernel: usize,
    ) -> Self {
        let d_ff = d_model * ffn_mult;
        FftBlock {
            ln1: LayerNorm::init(ps, &format!("{name}.ln1"), d_model),
            attn: Mhsa::init(ps, rng, &format!("{name}.attn"), d_model, n_heads),
            ln2: LayerNorm::init(ps, &format!("{name}.ln2"), d_model),
            conv1: Conv1d::init(ps, rng, &format!("{name}.conv1"), d_model, d_ff, kernel),
            conv2: Conv1d::init(ps, rng, &format!("{name}.conv2"), d_ff, d_model, 1),
        }
    }

    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        let h1 = self.ln1.forward(ps, x);
        let mut x2 = x.clone();
        x2.add_assign(&self.attn.forward(ps, &h1));
        let h2 = self.ln2.forward(ps, &x2);
        let p1 = self.conv1.forward(ps, &h2);
        let g = gelu_mat(&p1);
        let p2 = self.conv2.forward(ps, &g);
        x2.add_assign(&p2);
        x2
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat) -> (Mat, FftBlockCache) {
        let (h1, ln1) = self.ln1.forward_t(ps, x);
        let (a, attn) = self.attn.forward_t(ps, &h1);
        let mut x2 = x.clone();
        x2.add_assign(&a);
        let (h2, ln2) = self.ln2.forward_t(ps, &x2);
        let (p1, col1) = self.conv1.forward_t(ps, &h2);
        let g = gelu_mat(&p1);
        let (p2, col2) = self.conv2.forward_t(ps, &g);
        let mut y = x2.clone();
        y.add_assign(&p2);
        (
            y,
            FftBlockCache {
                ln1,
                h1,
                attn,
                ln2,
                col1,
                p1,
                col2,
            },
        )
    }

    pub fn backward(&self, ps: &Params, cache: &FftBlockCache, dy: &Mat, gs: &mut Grads) -> Mat {
        // FFN branch
        let dg = self.conv2.backward(ps, &cache.col2, dy, gs);
        let dp1 = gelu_backward(&cache.p1, &dg);
        let dh2 = self.conv1.backward(ps, &cache.col1, &dp1, gs);
        let mut dx2 = dy.clone();
        dx2.add_assign(&self.ln2.backward(ps, &cache.ln2, &dh2, gs));
        // attention branch
        let da = dx2.clone();
        let dh1 = self.attn.backward(ps, &cache.h1, &cache.attn, &da, gs);
        let mut dx = dx2;
        dx.add_assign(&self.ln1.backward(ps, &cache.ln1, &dh1, gs));
        dx
    }
}

// ---------------------------------------------------------------------------
// mixer block: ConvNeXt-style with a swappable sequence mixer

/// Sequence mixer: depthwise convolution (attention-free) or multi-head
/// self-attention (the complexity baseline).
#[derive(Clone, Copy, Debug)]
pub enum Mixer {
    Conv(DwConv1d),
    Attention(Mhsa),
}

pub enum MixerCache {
    Conv,
    Attention(MhsaCache),
}

impl Mixer {
    pub fn forward(&self, ps: &Params, x: &Mat) -> Mat {
        match self {
            Mixer::Conv(dw) => dw.forward(ps, x),
            Mixer::Attention(at) => at.forward(ps, x),
        }
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat) -> (Mat, MixerCache) {
        match self {
            Mixer::Conv(dw) => (dw.forward(ps, x), MixerCache::Conv),
            Mixer::Attention(at) => {
                let (y, c) = at.forward_t(ps, x);
                (y, MixerCache::Attention(c))
            }
        }
    }

    pub fn backward(
        &self,
        ps: &Params,
        x: &Mat,
        cache: &MixerCache,
        dy: &Mat,
        gs: &mut Grads,
    ) -> Mat {
        match (self, cache) {
            (Mixer::Conv(dw), MixerCache::Conv) => dw.backward(ps, x, dy, gs),
            (Mixer::Attention(at), MixerCache::Attention(c)) => at.backward(ps, x, c, dy, gs),
            _ => unreachable!("mixer cache variant mismatch"),
        }
    }
}

/// Per-block adaptive modulation vectors (each `1 x d`).
pub struct ModVec {
    pub shift: Mat,
    pub scale: Mat,
    pub gate: Mat,
}

/// Gradients flowing back into the modulation vectors.
pub struct ModVecGrad {
    pub shift: Mat,
    pub scale: Mat,
    pub gate: Mat,
}

/// `mixer -> layer norm -> [modulate] -> expand -> gelu -> project`,
/// with a residual connection ([optionally] gated).
#[derive(Clone, Copy, Debug)]
pub struct MixerBlock {
    pub mixer: Mixer,
    pub ln: LayerNorm,
    pub pw1: Linear,
    pub pw2: Linear,
}

pub struct MixerBlockCache {
    x: Mat,
    mixer: MixerCache,
    ln: LayerNormCache,
    n: Mat,
    m: Mat,
    p1: Mat,
    g: Mat,
    p2: Mat,
}

impl MixerBlock {
    pub fn init_conv(
        ps: &mut Params,
        rng: &mut Rng,
        name: &str,
        d: usize,
        kernel: usize,
        expansion: usize,
    ) -> Self {
        MixerBlock {
            mixer: Mixer::Conv(DwConv1d::init(ps, rng, &format!("{name}.dw"), d, kernel)),
            ln: LayerNorm::init(ps, &format!("{name}.ln"), d),
            pw1: Linear::init(ps, rng, &format!("{name}.pw1"), d, d * expansion),
            pw2: Linear::init(ps, rng, &format!("{name}.pw2"), d * expansion, d),
        }
    }

    pub fn init_attention(
        ps: &mut Params,
        rng: &mut Rng,
        name: &str,
        d: usize,
        n_heads: usize,
        expansion: usize,
    ) -> Self {
        MixerBlock {
            mixer: Mixer::Attention(Mhsa::init(ps, rng, &format!("{name}.attn"), d, n_heads)),
            ln: LayerNorm::init(ps, &format!("{name}.ln"), d),
            pw1: Linear::init(ps, rng, &format!("{name}.pw1"), d, d * expansion),
            pw2: Linear::init(ps, rng, &format!("{name}.pw2"), d * expansion, d),
        }
    }

    fn modulate(n: &Mat, mv: &ModVec) -> Mat {
        let mut m = n.clone();
        let scale = mv.scale.row(0);
        let shift = mv.shift.row(0);
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            for j in 0..row.len() {
                row[j] = row[j] * (1.0 + scale[j]) + shift[j];
            }
        }
        m
    }

    pub fn forward(&self, ps: &Params, x: &Mat, mv: Option<&ModVec>) -> Mat {
        let h = self.mixer.forward(ps, x);
        let n = self.ln.forward(ps, &h);
        let m = match mv {
            Some(mv) => Self::modulate(&n, mv),
            None => n,
        };
        let p1 = self.pw1.forward(ps, &m);
        let g = gelu_mat(&p1);
        let p2 = self.pw2.forward(ps, &g);
        let mut y = x.clone();
        match mv {
            Some(mv) => {
                let gate = mv.gate.row(0);
                for i in 0..y.rows() {
                    let yr = y.row_mut(i);
                    let pr = p2.row(i);
                    for j in 0..yr.len() {
                        yr[j] += gate[j] * pr[j];
                    }
                }
            }
            None => y.add_assign(&p2),
        }
        y
    }

    pub fn forward_t(&self, ps: &Params, x: &Mat, mv: Option<&ModVec>) -> (Mat, MixerBlockCache) {
        let (h, mixer) = self.mixer.forward_t(ps, x);
        let (n, ln) = self.ln.forward_t(ps, &h);
        let m = match mv {
            Some(mv) => Self::modulate(&n, mv),
            None => n.clone(),
        };
        let p1 = self.pw1.forward(ps, &m);
        let g = gelu_mat(&p1);
        let p2 = self.pw2.forward(ps, &g);
        let mut y = x.clone();
        match mv {
            Some(mv) => {
                let gate = mv.gate.row(0);
                for i in 0..y.rows() {
                    let yr = y.row_mut(i);
                    let pr = p2.row(i);
                    for j in 0..yr.len() {
                        yr[j] += gate[j] * pr[j];
                    }
                }
            }
            None => y.add_assign(&p2),
        }
        (
            y,
            MixerBlockCache {
                x: x.clone(),
                mixer,
                ln,
                n,
                m,
                p1,
                g,
                p2,
            },
        )
    }

    /// Returns `dx` and, when the block is modulated, the gradients of the
    /// modulation vectors.
    pub fn backward(
        &self,
        ps: &Params,
        cache: &MixerBlockCache,
        dy: &Mat,
        mv: Option<&ModVec>,
        gs: &mut Grads,
    ) -> (Mat, Option<ModVecGrad>) {
        let d = dy.cols();
        let (dp2, dgate) = match mv {
            Some(mv) => {
                let gate = mv.gate.row(0);
                let mut dp2 = dy.clone();
                let mut dgate = Mat::zeros(1, d);
                for i in 0..dy.rows() {
                    let dyr = dy.row(i);
                    let pr = cache.p2.row(i);
                    let dp = dp2.row_mut(i);
                    for j in 0..d {
                        dgate.data_mut()[j] += dyr[j] * pr[j];
                        dp[j] = dyr[j] * gate[j];
                    }
                }
                (dp2, Some(dgate))
            }
            None => (dy.clone(), None),
        };
        let dg = self.pw2.backward(ps, &cache.g, &dp2, gs);
        let dp1 = gelu_backward(&cache.p1, &dg);
        let dm = self.pw1.backward(ps, &cache.m, &dp1, gs);
        let (dn, dmod) = match mv {
            Some(mv) => {
                let scale = mv.scale.row(0);
                let mut dn = dm.clone();
                let mut dscale = Mat::zeros(1, d);
                let mut dshift = Mat::zeros(1, d);
                for i in 0..dm.rows() {
                    let dmr = dm.row(i);
                    let nr = cache.n.row(i);
                    let dnr = dn.row_mut(i);
                    for j in 0..d {
                        dscale.data_mut()[j] += dmr[j] * nr[j];
                        dshift.data_mut()[j] += dmr[j];
                        dnr[j] = dmr[j] * (1.0 + scale[j]);
                    }
                }
                (
                    dn,
                    Some(ModVecGrad {
                        shift: dshift,
                        scale: dscale,
                        gate: dgate.unwrap(),
                    }),
                )
            }
            None => (dm, None),
        };
        let dh = self.ln.backward(ps, &cache.ln, &dn, gs);
        let mut dx = self.mixer.backward(ps, &cache.x, &cache.mixer, &dh, gs);
        dx.add_assign(dy);
        (dx, dmod)
    }
}

// ---------------------------------------------------------------------------
// sinusoidal time embedding + MLP

/// Fixed sinusoidal features of a scalar time in [0, 1].
pub fn sincos_time(t: f64, dim: usize) -> Mat {
    let half = dim / 2;
    let mut out = Mat::zeros(1, dim);
    let scaled = t * 1000.0;
    for i in 0..half {
        let freq = libm::exp(-libm::log(10000.0) * i as f64 / half as f64);
        out.data_mut()[i] = libm::sin(scaled * freq);
        out.data_mut()[half + i] = libm::cos(scaled * freq);
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct TimeEmbed {
    pub l1: Linear,
    pub l2: Linear,
    pub feat_dim: usize,
}

pub struct TimeEmbedCache {
    feat: Mat,
    pre: Mat,
    act: Mat,
}

impl TimeEmbed {
    pub fn init(ps: &mut Params, rng: &mut Rng, name: &str, feat_dim: usize, d_out: usize) -> Self {
        TimeEmbed {
            l1: Linear::init(ps, rng, &format!("{name}.l1"), feat_dim, d_out),
            l2: Linear::init(ps, rng, &format!("{name}.l2"), d_out, d_out),
            feat_dim,
        }
    }

    pub fn forward(&self, ps: &Params, t: f64) -> Mat {
        let feat = sincos_time(t, self.feat_dim);
        let pre = self.l1.forward(ps, &feat);
        let act = pre.map(silu);
        self.l2.forward(ps, &act)
    }

    pub fn forward_t(&self, ps: &Params, t: f64) -> (Mat, TimeEmbedCache) {
        let feat = sincos_time(t, self.feat_dim);
        let pre = self.l1.forward(ps, &feat);
        let act = pre.map(silu);
        let y = self.l2.forward(ps, &act);
        (y, TimeEmbedCache { feat, pre, act })
    }

    pub fn backward(&self, ps: &Params, cache: &TimeEmbedCache, dy: &Mat, gs: &mut Grads) {
        let dact = self.l2.backward(ps, &cache.act, dy, gs);
        let mut dpre = dact;
        for (d, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            *d *= silu_prime(p);
        }
        // the sinusoidal features are constants; no input gradient needed
        let _ = self.l1.backward(ps, &cache.feat, &dpre, gs);
    }
}

/// Sum of per-row broadcastable grads for a `1 x d` conditioning vector that
/// was broadcast-added to an `L x d` activation.
pub fn broadcast_grad(dy: &Mat) -> Mat {
    dy.sum_rows()
}

/// Collect modulation gradients back through the per-block modulation
/// linears into the shared conditioning activation gradient.
pub fn concat_mod_grad(g: &ModVecGrad) -> Mat {
    Mat::concat_cols(&[&g.shift, &g.scale, &g.gate])
}

/// Split a `1 x 3d` modulation output into shift/scale/gate vectors.
pub fn split_mod(out: &Mat) -> ModVec {
    let d = out.cols() / 3;
    ModVec {
        shift: out.slice_cols(0, d),
        scale: out.slice_cols(d, 2 * d),
        gate: out.slice_cols(2 * d, 3 * d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_err_inputs, max_rel_err_params};

    fn weighted_sum(y: &Mat, c: &Mat) -> f64 {
        y.hadamard(c).sum()
    }

    #[test]
    fn fft_block_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(21);
        let mut ps = Params::new();
        let block = FftBlock::init(&mut ps, &mut rng, "b", 6, 2, 2, 3);
        let x = rng.normal_mat(5, 6);
        let c = rng.normal_mat(5, 6);

        let mut gs = Grads::zeros_like(&ps);
        let (y, cache) = block.forward_t(&ps, &x);
        let dx = block.backward(&ps, &cache, &c, &mut gs);

        let f = |ps: &Params, x: &Mat| weighted_sum(&block.forward(ps, x), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn conv_mixer_block_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(22);
        let mut ps = Params::new();
        let block = MixerBlock::init_conv(&mut ps, &mut rng, "b", 4, 3, 2);
        let x = rng.normal_mat(6, 4);
        let c = rng.normal_mat(6, 4);

        let mut gs = Grads::zeros_like(&ps);
        let (_, cache) = block.forward_t(&ps, &x, None);
        let (dx, dmod) = block.backward(&ps, &cache, &c, None, &mut gs);
        assert!(dmod.is_none());

        let f = |ps: &Params, x: &Mat| weighted_sum(&block.forward(ps, x, None), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);
    }

    #[test]
    fn modulated_block_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(23);
        let mut ps = Params::new();
        let block = MixerBlock::init_conv(&mut ps, &mut rng, "b", 4, 3, 2);
        let x = rng.normal_mat(5, 4);
        let c = rng.normal_mat(5, 4);
        let mv = ModVec {
            shift: rng.normal_mat_scaled(1, 4, 0.3),
            scale: rng.normal_mat_scaled(1, 4, 0.3),
            gate: rng.normal_mat_scaled(1, 4, 0.5),
        };

        let mut gs = Grads::zeros_like(&ps);
        let (_, cache) = block.forward_t(&ps, &x, Some(&mv));
        let (dx, dmod) = block.backward(&ps, &cache, &c, Some(&mv), &mut gs);
        let dmod = dmod.unwrap();

        let f = |ps: &Params, x: &Mat| weighted_sum(&block.forward(ps, x, Some(&mv)), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);

        // finite differences for the modulation vectors themselves
        let h = 1e-6;
        for (vec, grad) in [
            (&mv.shift, &dmod.shift),
            (&mv.scale, &dmod.scale),
            (&mv.gate, &dmod.gate),
        ] {
            for j in 0..4 {
                let mut plus = ModVec {
                    shift: mv.shift.clone(),
                    scale: mv.scale.clone(),
                    gate: mv.gate.clone(),
                };
                let mut minus = ModVec {
                    shift: mv.shift.clone(),
                    scale: mv.scale.clone(),
                    gate: mv.gate.clone(),
                };
                let which = if core::ptr::eq(vec, &mv.shift) {
                    0
                } else if core::ptr::eq(vec, &mv.scale) {
                    1
                } else {
                    2
                };
                let target_plus = match which {
                    0 => &mut plus.shift,
                    1 => &mut plus.scale,
                    _ => &mut plus.gate,
                };
                target_plus.data_mut()[j] += h;
                let target_minus = match which {
                    0 => &mut minus.shift,
                    1 => &mut minus.scale,
                    _ => &mut minus.gate,
                };
                target_minus.data_mut()[j] -= h;
                let fd = (weighted_sum(&block.forward(&ps, &x, Some(&plus)), &c)
                    - weighted_sum(&block.forward(&ps, &x, Some(&minus)), &c))
                    / (2.0 * h);
                assert!(
                    (fd - grad.at(0, j)).abs() < 1e-5,
                    "modulation grad mismatch: {fd} vs {}",
                    grad.at(0, j)
                );
            }
        }
    }

    #[test]
    fn attention_mixer_block_matches_conv_contract() {
        let mut rng = Rng::seed_from(24);
        let mut ps = Params::new();
        let block = MixerBlock::init_attention(&mut ps, &mut rng, "b", 6, 2, 2);
        let x = rng.normal_mat(5, 6);
        let c = rng.normal_mat(5, 6);

        let mut gs = Grads::zeros_like(&ps);
        let (y, cache) = block.forward_t(&ps, &x, None);
        let (dx, _) = block.backward(&ps, &cache, &c, None, &mut gs);
        assert_eq!(y.shape(), x.shape());

        let f = |ps: &Params, x: &Mat| weighted_sum(&block.forward(ps, x, None), &c);
        assert!(max_rel_err_params(&mut ps, &x, f, &gs) < 1e-5);
        assert!(max_rel_err_inputs(&ps, &mut x.clone(), f, &dx) < 1e-5);
    }

    #[test]
    fn time_embed_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(25);
        let mut ps = Params::new();
        let te = TimeEmbed::init(&mut ps, &mut rng, "t", 8, 6);
        let c = rng.normal_mat(1, 6);
        let t = 0.37;

        let mut gs = Grads::zeros_like(&ps);
        let (_, cache) = te.forward_t(&ps, t);
        te.backward(&ps, &cache, &c, &mut gs);

        let dummy = Mat::zeros(1, 1);
        let f = |ps: &Params, _x: &Mat| weighted_sum(&te.forward(ps, t), &c);
        assert!(max_rel_err_params(&mut ps, &dummy, f, &gs) < 1e-5);
    }

    #[test]
    fn sincos_features_are_bounded_and_distinct() {
        let a = sincos_time(0.2, 16);
        let b = sincos_time(0.8, 16);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
