//! Key-frame and temporal attention over hidden video features `(f, d, c)`.
//!
//! Key-frame attention lets every frame query the keys and values of one
//! designated frame `k`; temporal attention transposes to `(d, f, c)` and
//! attends across frames independently at every spatial location. Both are
//! single-head, scaled by `1/√c`, with an optional output projection.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{add_assign, matmul, matmul_nt, matmul_tn, Tensor};

/// Query, key, value (and optional output) projections, each `c × c`
/// row-major and applied on the right: `Q = X · Wq`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Option<Vec<f64>>,
}

impl AttentionWeights {
    pub fn new(
        dim: usize,
        wq: Vec<f64>,
        wk: Vec<f64>,
        wv: Vec<f64>,
        wo: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = dim * dim;
        let all = [Some(&wq), Some(&wk), Some(&wv), wo.as_ref()];
        for m in all.into_iter().flatten() {
            if m.len() != n {
                return Err(Error::Shape(format!(
                    "projection of size {} is not {dim}×{dim}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite attention weight".into()));
            }
        }
        Ok(Self {
            dim,
            wq,
            wk,
            wv,
            wo,
        })
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn random(dim: usize, scale: f64, with_output: bool, rng: &mut impl Rng) -> Self {
        let mut draw = || -> Vec<f64> {
            (0..dim * dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let wq = draw();
        let wk = draw();
        let wv = draw();
        let wo = with_output.then(draw);
        Self {
            dim,
            wq,
            wk,
            wv,
            wo,
        }
    }

    /// All-zero weights of the same shape, used as gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let n = self.dim * self.dim;
        Self {
            dim: self.dim,
            wq: vec![0.0; n],
            wk: vec![0.0; n],
            wv: vec![0.0; n],
            wo: self.wo.as_ref().map(|_| vec![0.0; n]),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Projection matrices in a fixed order: q, k, v, then o if present.
    pub fn matrices(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.wq, &self.wk, &self.wv];
        v.extend(self.wo.as_ref());
        v
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![&mut self.wq, &mut self.wk, &mut self.wv];
        v.extend(self.wo.as_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Every frame attends to frame `key` (1-based).
    KeyFrame {
        key: usize,
    },
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub x: Tensor,
    pub weights: AttentionWeights,
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a rank-2 tensor, stabilised by subtracting each
/// row's maximum.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::Shape(format!(
            "softmax_rows expects a matrix, got shape {:?}",
            m.shape()
        )));
    }
    let cols = m.shape()[1];
    let mut out = m.clone();
    if cols > 0 {
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
    }
    Ok(out)
}

/// Intermediate values of one attention block, kept for the backward pass.
struct Block {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
    y: Vec<f64>,
}

fn block_forward(xq: &[f64], nq: usize, xkv: &[f64], nk: usize, w: &AttentionWeights) -> Block {
    let c = w.dim;
    let scale = 1.0 / (c as f64).sqrt();
    let q = matmul(xq, &w.wq, nq, c, c);
    let k = matmul(xkv, &w.wk, nk, c, c);
    let v = matmul(xkv, &w.wv, nk, c, c);
    let mut p = matmul_nt(&q, &k, nq, c, nk);
    for row in p.chunks_mut(nk) {
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    let o = matmul(&p, &v, nq, nk, c);
    let y = match &w.wo {
        Some(wo) => matmul(&o, wo, nq, c, c),
        None => o.clone(),
    };
    Block { q, k, v, p, o, y }
}

/// Returns `(dxq, dxkv)` and accumulates weight gradients into `gw`.
#[allow(clippy::too_many_arguments)]
fn block_backward(
    xq: &[f64],
    nq: usize,
    xkv: &[f64],
    nk: usize,
    w: &AttentionWeights,
    b: &Block,
    dy: &[f64],
    gw: &mut AttentionWeights,
) -> (Vec<f64>, Vec<f64>) {
    let c = w.dim;
    let scale = 1.0 / (c as f64).sqrt();
    let d_o = match (&w.wo, gw.wo.as_mut()) {
        (Some(wo), Some(gwo)) => {
            add_assign(gwo, &matmul_tn(&b.o, dy, nq, c, c));
            matmul_nt(dy, wo, nq, c, c)
        }
        _ => dy.to_vec(),
    };
    let dp = matmul_nt(&d_o, &b.v, nq, c, nk);
    let dv = matmul_tn(&b.p, &d_o, nq, nk, c);
    let mut ds = vec![0.0; nq * nk];
    for i in 0..nq {
        let pr = &b.p[i * nk..(i + 1) * nk];
        let dpr = &dp[i * nk..(i + 1) * nk];
        let dot: f64 = pr.iter().zip(dpr).map(|(a, g)| a * g).sum();
        for j in 0..nk {
            ds[i * nk + j] = pr[j] * (dpr[j] - dot) * scale;
        }
    }
    let dq = matmul(&ds, &b.k, nq, nk, c);
    let dk = matmul_tn(&ds, &b.q, nq, nk, c);

    add_assign(&mut gw.wq, &matmul_tn(xq, &dq, nq, c, c));
    add_assign(&mut gw.wk, &matmul_tn(xkv, &dk, nk, c, c));
    add_assign(&mut gw.wv, &matmul_tn(xkv, &dv, nk, c, c));

    let dxq = matmul_nt(&dq, &w.wq, nq, c, c);
    let mut dxkv = matmul_nt(&dk, &w.wk, nk, c, c);
    add_assign(&mut dxkv, &matmul_nt(&dv, &w.wv, nk, c, c));
    (dxq, dxkv)
}

fn video_dims(x: &Tensor, w: &AttentionWeights) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "attention input must be (f, d, c), got {:?}",
            x.shape()
        )));
    }
    let (f, d, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c != w.dim {
        return Err(Error::Shape(format!(
            "hidden size {c} does not match projection size {}",
            w.dim
        )));
    }
    if f == 0 || d == 0 {
        return Err(Error::Shape("attention input has an empty axis".into()));
    }
    Ok((f, d, c))
}

fn check_key(key: usize, f: usize) -> Result<usize> {
    if key == 0 || key > f {
        return Err(Error::OutOfRange(format!("key frame {key} not in 1..={f}")));
    }
    Ok(key - 1)
}

/// Gathers the `f × c` slice at spatial location `j`.
fn gather_location(x: &[f64], f: usize, d: usize, c: usize, j: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(f * c);
    for i in 0..f {
        let base = (i * d + j) * c;
        out.extend_from_slice(&x[base..base + c]);
    }
    out
}

fn scatter_location(dst: &mut [f64], src: &[f64], f: usize, d: usize, c: usize, j: usize) {
    for i in 0..f {
        let base = (i * d + j) * c;
        dst[base..base + c].copy_from_slice(&src[i * c..(i + 1) * c]);
    }
}

/// `softmax(Q_i K_kᵀ / √c) V_k` for every frame `i`.
pub fn key_frame_attention(x: &Tensor, key: usize, w: &AttentionWeights) -> Result<Tensor> {
    let (f, d, c) = video_dims(x, w)?;
    let kf = check_key(key, f)?;
    let fl = d * c;
    let xk = &x.data()[kf * fl..(kf + 1) * fl];
    let mut out = Vec::with_capacity(f * fl);
    for i in 0..f {
        let xi = &x.data()[i * fl..(i + 1) * fl];
        out.extend(block_forward(xi, d, xk, d, w).y);
    }
    Tensor::new(vec![f, d, c], out)
}

/// `softmax(Q_j K_jᵀ / √c) V_j` across frames at every spatial location `j`.
pub fn temporal_attention(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (f, d, c) = video_dims(x, w)?;
    let mut out = vec![0.0; f * d * c];
    for j in 0..d {
        let xj = gather_location(x.data(), f, d, c, j);
        let b = block_forward(&xj, f, &xj, f, w);
        scatter_location(&mut out, &b.y, f, d, c, j);
    }
    Tensor::new(vec![f, d, c], out)
}

/// Attention probability matrices: one `d × d` per frame for key-frame
/// attention, one `f × f` per location for temporal attention.
pub fn attention_probabilities(
    kind: AttentionKind,
    x: &Tensor,
    w: &AttentionWeights,
) -> Result<Vec<Tensor>> {
    let (f, d, c) = video_dims(x, w)?;
    match kind {
        AttentionKind::KeyFrame { key } => {
            let kf = check_key(key, f)?;
            let fl = d * c;
            let xk = &x.data()[kf * fl..(kf + 1) * fl];
            (0..f)
                .map(|i| {
                    let b = block_forward(&x.data()[i * fl..(i + 1) * fl], d, xk, d, w);
                    Tensor::new(vec![d, d], b.p)
                })
                .collect()
        }
        AttentionKind::Temporal => (0..d)
            .map(|j| {
                let xj = gather_location(x.data(), f, d, c, j);
                Tensor::new(vec![f, f], block_forward(&xj, f, &xj, f, w).p)
            })
            .collect(),
    }
}

pub fn attention_forward(kind: AttentionKind, x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    match kind {
        AttentionKind::KeyFrame { key } => key_frame_attention(x, key, w),
        AttentionKind::Temporal => temporal_attention(x, w),
    }
}

/// Exact gradients of `⟨upstream, attention(x)⟩` with respect to the input
/// and every projection.
pub fn attention_backward(
    kind: AttentionKind,
    x: &Tensor,
    w: &AttentionWeights,
    upstream: &Tensor,
) -> Result<AttentionGrads> {
    let (f, d, c) = video_dims(x, w)?;
    upstream.ensure_shape(x.shape(), "upstream gradient")?;
    let mut gw = w.zeros_like();
    let mut gx = vec![0.0; f * d * c];
    match kind {
        AttentionKind::KeyFrame { key } => {
            let kf = check_key(key, f)?;
            let fl = d * c;
            let xk = &x.data()[kf * fl..(kf + 1) * fl];
            let mut gk = vec![0.0; fl];
            for i in 0..f {
                let xi = &x.data()[i * fl..(i + 1) * fl];
                let b = block_forward(xi, d, xk, d, w);
                let dy = &upstream.data()[i * fl..(i + 1) * fl];
                let (dxq, dxkv) = block_backward(xi, d, xk, d, w, &b, dy, &mut gw);
                add_assign(&mut gx[i * fl..(i + 1) * fl], &dxq);
                add_assign(&mut gk, &dxkv);
            }
            add_assign(&mut gx[kf * fl..(kf + 1) * fl], &gk);
        }
        AttentionKind::Temporal => {
            for j in 0..d {
                let xj = gather_location(x.data(), f, d, c, j);
                let dy = gather_location(upstream.data(), f, d, c, j);
                let b = block_forward(&xj, f, &xj, f, w);
                let (mut dxq, dxkv) = block_backward(&xj, f, &xj, f, w, &b, &dy, &mut gw);
                add_assign(&mut dxq, &dxkv);
                scatter_location(&mut gx, &dxq, f, d, c, j);
            }
        }
    }
    Ok(AttentionGrads {
        x: Tensor::new(vec![f, d, c], gx)?,
        weights: gw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn softmax_examples() {
        let one = softmax_rows(&Tensor::new(vec![1, 1], vec![3.7]).unwrap()).unwrap();
        assert_eq!(one.data(), &[1.0]);
        let half = softmax_rows(&Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(half.data(), &[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_tensor(&[3, 4], &mut rng);
        let s = softmax_rows(&m).unwrap();
        for row in s.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let big = Tensor::new(vec![1, 2], vec![1000.0, 1000.0]).unwrap();
        assert_eq!(softmax_rows(&big).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn identical_frames_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = random_tensor(&[1, 5, 4], &mut rng);
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(frame.data());
        }
        let x = Tensor::new(vec![3, 5, 4], data).unwrap();
        let w = AttentionWeights::random(4, 0.5, false, &mut rng);
        let y = key_frame_attention(&x, 2, &w).unwrap();
        let n = 20;
        for i in 1..3 {
            for t in 0..n {
                assert!((y.data()[i * n + t] - y.data()[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_temporal_attention_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 6, 3], &mut rng);
        let w = AttentionWeights::random(3, 0.7, false, &mut rng);
        let y = temporal_attention(&x, &w).unwrap();
        let xv = matmul(x.data(), &w.wv, 6, 3, 3);
        assert_eq!(y.data(), &xv[..]);
    }

    #[test]
    fn key_range_and_dims_are_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let w = AttentionWeights::random(4, 0.5, false, &mut rng);
        assert!(matches!(
            key_frame_attention(&x, 0, &w),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            key_frame_attention(&x, 3, &w),
            Err(Error::OutOfRange(_))
        ));
        let w3 = AttentionWeights::random(3, 0.5, false, &mut rng);
        assert!(matches!(temporal_attention(&x, &w3), Err(Error::Shape(_))));
        let up = Tensor::zeros(&[2, 3, 3]);
        assert!(attention_backward(AttentionKind::Temporal, &x, &w, &up).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[3, 4, 4], &mut rng);
        let w = AttentionWeights::random(4, 0.5, true, &mut rng);
        for kind in [AttentionKind::KeyFrame { key: 2 }, AttentionKind::Temporal] {
            let g = attention_backward(kind, &x, &w, &Tensor::zeros(&[3, 4, 4])).unwrap();
            assert!(g.x.data().iter().all(|&v| v == 0.0));
            assert!(g
                .weights
                .matrices()
                .iter()
                .all(|m| m.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn value_gradient_single_frame_closed_form() {
        // f = 1: y = P (x Wv), so d(sum y)/dWv[a][b] = sum_i (P x)[i][a].
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, c) = (4, 3);
        let x = random_tensor(&[1, d, c], &mut rng);
        let w = AttentionWeights::random(c, 0.6, false, &mut rng);
        let p = &attention_probabilities(AttentionKind::KeyFrame { key: 1 }, &x, &w).unwrap()[0];
        let px = matmul(p.data(), x.data(), d, d, c);
        let g = attention_backward(
            AttentionKind::KeyFrame { key: 1 },
            &x,
            &w,
            &Tensor::from_fn(&[1, d, c], |_| 1.0),
        )
        .unwrap();
        for a in 0..c {
            let col_sum: f64 = (0..d).map(|i| px[i * c + a]).sum();
            for b in 0..c {
                assert!((g.weights.wv[a * c + b] - col_sum).abs() < 1e-12);
            }
        }
    }
}
