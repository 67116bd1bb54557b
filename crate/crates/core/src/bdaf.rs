//! Bidirectional domain attention fusion, forward and reverse mode.
//!
//! Two token sequences of equal shape, spatial `S` and Doppler `D`, exchange
//! information through two single-head cross-attention stages:
//!
//! ```text
//! D'  = Attn(Q = S Wsq, K = D Wdk, V = D Wdv)
//! D~  = D + softplus([D, D'] Wfd1) Wfd2          residual fusion
//! D'' = D~ + softplus(D~ Wp1) Wp2                 bottleneck C -> C/2 -> C
//! S'  = Attn(Q = D'' Wdq, K = S Wsk, V = S Wsv)
//! F   = S + softplus([S, S'] Wfs1) Wfs2
//! ```
//!
//! The pass returns `(F, D~)`. Softplus keeps every stage smooth so the
//! analytic gradients can be checked against central differences.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

pub type Matrix = DMatrix<f64>;

/// Dense `H x W x C` feature map, stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// `L` tokens of equal width, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(pub Matrix);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.0.ncols()
    }
}

/// Fixed sinusoidal encoding: even columns `sin(pos / 10000^(i/C))`, odd
/// columns the matching cosine.
pub fn positional_encoding(len: usize, channels: usize) -> Matrix {
    Matrix::from_fn(len, channels, |pos, i| {
        let pair = (i - i % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(pair / channels as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Splits the map into non-overlapping `p x p` patches in row-major patch
/// order. Each token holds its patch channel-major: `c * p^2 + py * p + px`,
/// so the token width is `C * p^2`.
pub fn patchify(f: &FeatureMap, p: usize, positional: bool) -> Result<TokenSequence> {
    if p == 0 || !f.height.is_multiple_of(p) || !f.width.is_multiple_of(p) {
        return Err(Error::Config(format!("patch size {p} does not divide {}x{}", f.height, f.width)));
    }
    let (ph, pw) = (f.height / p, f.width / p);
    let width = f.channels * p * p;
    let mut tokens = Matrix::from_fn(ph * pw, width, |t, k| {
        let (by, bx) = (t / pw, t % pw);
        let c = k / (p * p);
        let (py, px) = ((k % (p * p)) / p, k % p);
        f.at(by * p + py, bx * p + px, c)
    });
    if positional {
        tokens += positional_encoding(ph * pw, width);
    }
    Ok(TokenSequence(tokens))
}

/// Inverse of [`patchify`] for the same geometry.
pub fn unpatchify(
    tokens: &TokenSequence,
    height: usize,
    width: usize,
    p: usize,
    positional: bool,
) -> Result<FeatureMap> {
    if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
        return Err(Error::Config(format!("patch size {p} does not divide {height}x{width}")));
    }
    let pw = width / p;
    let l = (height / p) * pw;
    if tokens.len() != l || !tokens.channels().is_multiple_of(p * p) {
        return Err(Error::Shape(format!(
            "{} tokens of width {} do not tile a {height}x{width} map with patch {p}",
            tokens.len(),
            tokens.channels()
        )));
    }
    let mut m = tokens.0.clone();
    if positional {
        m -= positional_encoding(l, tokens.channels());
    }
    let channels = tokens.channels() / (p * p);
    let mut data = vec![0.0; height * width * channels];
    for t in 0..l {
        let (by, bx) = (t / pw, t % pw);
        for k in 0..tokens.channels() {
            let c = k / (p * p);
            let (py, px) = ((k % (p * p)) / p, k % p);
            data[((by * p + py) * width + bx * p + px) * channels + c] = m[(t, k)];
        }
    }
    FeatureMap::new(height, width, channels, data)
}

/// Every learnable matrix of the block, in serialisation order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// Stage one: spatial queries, Doppler keys and values (`C x d`).
    pub ws_q: Matrix,
    pub wd_k: Matrix,
    pub wd_v: Matrix,
    /// Stage two: Doppler-projected queries, spatial keys and values.
    pub wd_q: Matrix,
    pub ws_k: Matrix,
    pub ws_v: Matrix,
    /// Doppler residual fusion `(C + d) x C` then `C x C`.
    pub fuse_d_in: Matrix,
    pub fuse_d_out: Matrix,
    /// Domain projection bottleneck `C x C/2` then `C/2 x C`.
    pub proj_down: Matrix,
    pub proj_up: Matrix,
    /// Spatial residual fusion.
    pub fuse_s_in: Matrix,
    pub fuse_s_out: Matrix,
}

impl AttentionWeights {
    /// Shapes for `channels` token width and key dimension `key_dim`.
    pub fn shapes(channels: usize, key_dim: usize) -> [(usize, usize); 12] {
        let c = channels;
        let d = key_dim;
        let h = (c / 2).max(1);
        [(c, d), (c, d), (c, d), (c, d), (c, d), (c, d), (c + d, c), (c, c), (c, h), (h, c), (c + d, c), (c, c)]
    }

    fn from_fn(channels: usize, key_dim: usize, mut f: impl FnMut() -> f64) -> Self {
        let mut mats = Self::shapes(channels, key_dim).into_iter().map(|(r, c)| Matrix::from_fn(r, c, |_, _| f()));
        let mut next = || mats.next().expect("twelve shapes");
        Self {
            ws_q: next(),
            wd_k: next(),
            wd_v: next(),
            wd_q: next(),
            ws_k: next(),
            ws_v: next(),
            fuse_d_in: next(),
            fuse_d_out: next(),
            proj_down: next(),
            proj_up: next(),
            fuse_s_in: next(),
            fuse_s_out: next(),
        }
    }

    pub fn zeros(channels: usize, key_dim: usize) -> Self {
        Self::from_fn(channels, key_dim, || 0.0)
    }

    /// Seeded uniform initialisation on `[-scale, scale]`.
    pub fn random(channels: usize, key_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(channels, key_dim, || rng.random_range(-scale..=scale))
    }

    pub fn from_matrices(mats: Vec<Matrix>) -> Result<Self> {
        if mats.len() != 12 {
            return Err(Error::Shape(format!("expected 12 weight matrices, got {}", mats.len())));
        }
        let c = mats[0].nrows();
        let d = mats[0].ncols();
        for (m, (r, k)) in mats.iter().zip(Self::shapes(c, d)) {
            if m.shape() != (r, k) {
                return Err(Error::Shape(format!("weight of shape {:?}, expected {:?}", m.shape(), (r, k))));
            }
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            ws_q: next(),
            wd_k: next(),
            wd_v: next(),
            wd_q: next(),
            ws_k: next(),
            ws_v: next(),
            fuse_d_in: next(),
            fuse_d_out: next(),
            proj_down: next(),
            proj_up: next(),
            fuse_s_in: next(),
            fuse_s_out: next(),
        })
    }

    pub fn channels(&self) -> usize {
        self.ws_q.nrows()
    }

    pub fn key_dim(&self) -> usize {
        self.ws_q.ncols()
    }

    pub fn matrices(&self) -> [&Matrix; 12] {
        [
            &self.ws_q,
            &self.wd_k,
            &self.wd_v,
            &self.wd_q,
            &self.ws_k,
            &self.ws_v,
            &self.fuse_d_in,
            &self.fuse_d_out,
            &self.proj_down,
            &self.proj_up,
            &self.fuse_s_in,
            &self.fuse_s_out,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ws_q,
            &mut self.wd_k,
            &mut self.wd_v,
            &mut self.wd_q,
            &mut self.ws_k,
            &mut self.ws_v,
            &mut self.fuse_d_in,
            &mut self.fuse_d_out,
            &mut self.proj_down,
            &mut self.proj_up,
            &mut self.fuse_s_in,
            &mut self.fuse_s_out,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    /// Flat parameter vector, matrices in order, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.matrices() {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
        out
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for m in self.matrices_mut() {
            if idx < m.len() {
                let cols = m.ncols();
                return &mut m[(idx / cols, idx % cols)];
            }
            idx -= m.len();
        }
        panic!("parameter index out of range");
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

#[derive(Debug, Clone)]
pub struct CrossAttention {
    /// Row-stochastic `L_q x L_kv` attention matrix.
    pub attention: Matrix,
    pub output: TokenSequence,
}

struct AttnCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    a: Matrix,
}

fn attention_forward(q_src: &Matrix, kv_src: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> (Matrix, AttnCache) {
    let q = q_src * wq;
    let k = kv_src * wk;
    let v = kv_src * wv;
    let scale = 1.0 / (wk.ncols() as f64).sqrt();
    let a = softmax_rows(&((&q * k.transpose()) * scale));
    let out = &a * &v;
    (out, AttnCache { q, k, v, a })
}

struct AttnGrads {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    q_src: Matrix,
}

fn attention_backward(
    cache: &AttnCache,
    q_src: &Matrix,
    kv_src: &Matrix,
    w: (&Matrix, &Matrix, &Matrix),
    d_out: &Matrix,
) -> AttnGrads {
    let (wq, wk, _) = w;
    let scale = 1.0 / (wk.ncols() as f64).sqrt();
    let d_v = cache.a.transpose() * d_out;
    let d_a = d_out * cache.v.transpose();
    // Softmax Jacobian row by row: dz = a * (da - <da, a>).
    let mut d_logits = d_a.component_mul(&cache.a);
    for (i, mut row) in d_logits.row_iter_mut().enumerate() {
        let dot = d_a.row(i).dot(&cache.a.row(i));
        for (j, v) in row.iter_mut().enumerate() {
            *v -= cache.a[(i, j)] * dot;
        }
    }
    d_logits *= scale;
    let d_q = &d_logits * &cache.k;
    let d_k = d_logits.transpose() * &cache.q;
    AttnGrads {
        wq: q_src.transpose() * &d_q,
        wk: kv_src.transpose() * &d_k,
        wv: kv_src.transpose() * &d_v,
        q_src: d_q * wq.transpose(),
    }
}

/// Single-head scaled dot-product cross-attention.
pub fn cross_attention(
    q_src: &TokenSequence,
    kv_src: &TokenSequence,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
) -> Result<CrossAttention> {
    let c = q_src.channels();
    if kv_src.channels() != c || wq.nrows() != c || wk.nrows() != c || wv.nrows() != c || wq.ncols() != wk.ncols() {
        return Err(Error::Shape("cross-attention operands disagree".into()));
    }
    let (out, cache) = attention_forward(&q_src.0, &kv_src.0, wq, wk, wv);
    Ok(CrossAttention { attention: cache.a, output: TokenSequence(out) })
}

struct ResidualCache {
    input: Matrix,
    hidden: Matrix,
    activated: Matrix,
}

/// `x + softplus([x, extra] W_in) W_out`.
fn residual_forward(x: &Matrix, extra: Option<&Matrix>, w_in: &Matrix, w_out: &Matrix) -> (Matrix, ResidualCache) {
    let input = match extra {
        Some(e) => {
            let mut m = Matrix::zeros(x.nrows(), x.ncols() + e.ncols());
            m.columns_mut(0, x.ncols()).copy_from(x);
            m.columns_mut(x.ncols(), e.ncols()).copy_from(e);
            m
        }
        None => x.clone(),
    };
    let hidden = &input * w_in;
    let activated = hidden.map(softplus);
    let y = x + &activated * w_out;
    (y, ResidualCache { input, hidden, activated })
}

struct ResidualGrads {
    w_in: Matrix,
    w_out: Matrix,
    x: Matrix,
    extra: Option<Matrix>,
}

fn residual_backward(
    cache: &ResidualCache,
    x_cols: usize,
    w_in: &Matrix,
    w_out: &Matrix,
    d_y: &Matrix,
) -> ResidualGrads {
    let d_w_out = cache.activated.transpose() * d_y;
    let d_act = d_y * w_out.transpose();
    let d_hidden = d_act.component_mul(&cache.hidden.map(sigmoid));
    let d_w_in = cache.input.transpose() * &d_hidden;
    let d_input = d_hidden * w_in.transpose();
    let d_x = d_y + d_input.columns(0, x_cols);
    let extra_cols = d_input.ncols() - x_cols;
    let extra = (extra_cols > 0).then(|| d_input.columns(x_cols, extra_cols).into_owned());
    ResidualGrads { w_in: d_w_in, w_out: d_w_out, x: d_x, extra }
}

/// Lightweight residual bottleneck mapping Doppler tokens into the spatial
/// domain ahead of the second attention stage.
pub fn domain_projection(d_tilde: &TokenSequence, w: &AttentionWeights) -> Result<TokenSequence> {
    if d_tilde.channels() != w.channels() {
        return Err(Error::Shape("domain projection width mismatch".into()));
    }
    Ok(TokenSequence(residual_forward(&d_tilde.0, None, &w.proj_down, &w.proj_up).0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdafOutput {
    /// Enhanced spatial tokens.
    pub spatial: TokenSequence,
    /// Fused Doppler tokens.
    pub doppler: TokenSequence,
}

struct ForwardCache {
    att1: AttnCache,
    fuse_d: ResidualCache,
    d_tilde: Matrix,
    proj: ResidualCache,
    d_proj: Matrix,
    att2: AttnCache,
    fuse_s: ResidualCache,
}

fn check_shapes(s: &TokenSequence, d: &TokenSequence, w: &AttentionWeights) -> Result<()> {
    if s.0.shape() != d.0.shape() {
        return Err(Error::Shape(format!("spatial {:?} and Doppler {:?} sequences differ", s.0.shape(), d.0.shape())));
    }
    if s.channels() != w.channels() {
        return Err(Error::Shape(format!("tokens have {} channels, weights expect {}", s.channels(), w.channels())));
    }
    Ok(())
}

fn forward_cached(s: &Matrix, d: &Matrix, w: &AttentionWeights) -> (BdafOutput, ForwardCache) {
    let (d_att, att1) = attention_forward(s, d, &w.ws_q, &w.wd_k, &w.wd_v);
    let (d_tilde, fuse_d) = residual_forward(d, Some(&d_att), &w.fuse_d_in, &w.fuse_d_out);
    let (d_proj, proj) = residual_forward(&d_tilde, None, &w.proj_down, &w.proj_up);
    let (s_att, att2) = attention_forward(&d_proj, s, &w.wd_q, &w.ws_k, &w.ws_v);
    let (f_s, fuse_s) = residual_forward(s, Some(&s_att), &w.fuse_s_in, &w.fuse_s_out);
    let out = BdafOutput { spatial: TokenSequence(f_s), doppler: TokenSequence(d_tilde.clone()) };
    (out, ForwardCache { att1, fuse_d, d_tilde, proj, d_proj, att2, fuse_s })
}

pub fn bdaf_forward(s: &TokenSequence, d: &TokenSequence, w: &AttentionWeights) -> Result<BdafOutput> {
    check_shapes(s, d, w)?;
    Ok(forward_cached(&s.0, &d.0, w).0)
}

/// Both attention matrices of a forward pass, for inspection.
pub fn bdaf_attention_maps(s: &TokenSequence, d: &TokenSequence, w: &AttentionWeights) -> Result<(Matrix, Matrix)> {
    check_shapes(s, d, w)?;
    let (_, cache) = forward_cached(&s.0, &d.0, w);
    Ok((cache.att1.a, cache.att2.a))
}

/// Reverse-mode gradient of `<G_s, F> + <G_d, D~>` with respect to every
/// weight, returned in the shape of the weights.
pub fn bdaf_backward(
    s: &TokenSequence,
    d: &TokenSequence,
    w: &AttentionWeights,
    grad_spatial: &Matrix,
    grad_doppler: &Matrix,
) -> Result<AttentionWeights> {
    check_shapes(s, d, w)?;
    if grad_spatial.shape() != s.0.shape() || grad_doppler.shape() != d.0.shape() {
        return Err(Error::Shape("upstream gradients must match the outputs".into()));
    }
    let (_, cache) = forward_cached(&s.0, &d.0, w);
    let c = w.channels();

    let g_fs = residual_backward(&cache.fuse_s, c, &w.fuse_s_in, &w.fuse_s_out, grad_spatial);
    let d_s_att = g_fs.extra.expect("spatial fusion has an attention branch");
    let g_att2 = attention_backward(&cache.att2, &cache.d_proj, &s.0, (&w.wd_q, &w.ws_k, &w.ws_v), &d_s_att);
    let g_proj = residual_backward(&cache.proj, c, &w.proj_down, &w.proj_up, &g_att2.q_src);
    let d_tilde_total = grad_doppler + g_proj.x;
    let g_fd = residual_backward(&cache.fuse_d, c, &w.fuse_d_in, &w.fuse_d_out, &d_tilde_total);
    let d_d_att = g_fd.extra.expect("Doppler fusion has an attention branch");
    let g_att1 = attention_backward(&cache.att1, &s.0, &d.0, (&w.ws_q, &w.wd_k, &w.wd_v), &d_d_att);
    debug_assert_eq!(cache.d_tilde.shape(), d.0.shape());

    Ok(AttentionWeights {
        ws_q: g_att1.wq,
        wd_k: g_att1.wk,
        wd_v: g_att1.wv,
        wd_q: g_att2.wq,
        ws_k: g_att2.wk,
        ws_v: g_att2.wv,
        fuse_d_in: g_fd.w_in,
        fuse_d_out: g_fd.w_out,
        proj_down: g_proj.w_in,
        proj_up: g_proj.w_out,
        fuse_s_in: g_fs.w_in,
        fuse_s_out: g_fs.w_out,
    })
}

/// Magnitude below which gradient entries are compared absolutely rather
/// than relatively.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares the analytic Jacobian of every output entry with respect to every
/// weight against central differences of the forward pass with step `h`.
pub fn gradient_check(s: &TokenSequence, d: &TokenSequence, w: &AttentionWeights, h: f64) -> Result<GradientCheck> {
    check_shapes(s, d, w)?;
    let (l, c) = s.0.shape();
    let n_out = 2 * l * c;
    let n_param = w.param_count();

    // Column j: derivative of all outputs w.r.t. parameter j.
    let numeric: Vec<Vec<f64>> = par::map_range(n_param, |j| {
        let mut plus = w.clone();
        *plus.param_mut(j) += h;
        let mut minus = w.clone();
        *minus.param_mut(j) -= h;
        let fp = forward_cached(&s.0, &d.0, &plus).0;
        let fm = forward_cached(&s.0, &d.0, &minus).0;
        flatten_outputs(&fp).iter().zip(flatten_outputs(&fm)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    });

    // Row o: gradient of output entry o w.r.t. all parameters.
    let analytic: Vec<Result<Vec<f64>>> = par::map_range(n_out, |o| {
        let mut gs = Matrix::zeros(l, c);
        let mut gd = Matrix::zeros(l, c);
        let (which, idx) = (o / (l * c), o % (l * c));
        let target = if which == 0 { &mut gs } else { &mut gd };
        target[(idx / c, idx % c)] = 1.0;
        Ok(bdaf_backward(s, d, w, &gs, &gd)?.to_flat())
    });

    let mut max_err = 0.0f64;
    for (o, row) in analytic.into_iter().enumerate() {
        let row = row?;
        for (j, a) in row.iter().enumerate() {
            max_err = max_err.max(relative_error(*a, numeric[j][o]));
        }
    }
    Ok(GradientCheck { max_relative_error: max_err, entries_checked: n_out * n_param })
}

fn flatten_outputs(o: &BdafOutput) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * o.spatial.0.len());
    for m in [&o.spatial.0, &o.doppler.0] {
        for i in 0..m.nrows() {
            v.extend(m.row(i).iter());
        }
    }
    v
}
