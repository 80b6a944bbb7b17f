//! Forward and backward passes of the encoder block.
//!
//! Only the rows that are pooled need queries, so the block is evaluated for
//! a chosen subset of query rows against all non-padding keys. Padding keys
//! receive an additive [`PAD_SCORE`] before the softmax; their weight
//! underflows to exactly zero, so dropping them from the key set gives the
//! same result.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::params::EncoderParams;

/// Additive score for padding keys.
pub const PAD_SCORE: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Row `i` is `E[ids[i]] + P[i]`.
pub fn embed(params: &EncoderParams, ids: &[u32]) -> Array2<f64> {
    let mut x = params.embedding.select(
        Axis(0),
        &ids.iter().map(|&i| i as usize).collect::<Vec<_>>(),
    );
    x += &params.position.slice(s![..ids.len(), ..]);
    x
}

struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(
    x: &Array2<f64>,
    scale: &Array1<f64>,
    shift: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * scale + shift;
    (y, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    scale: &Array1<f64>,
    dscale: &mut Array1<f64>,
    dshift: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    *dscale += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dshift += &dy.sum_axis(Axis(0));
    let mut dx = dy * scale;
    for ((mut row, xhat), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(&cache.inv_std)
    {
        let mean = row.sum() / d;
        let mean_x = row.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xhat, |g, &h| *g = s * (*g - mean - h * mean_x));
    }
    dx
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Intermediate values of one block evaluation.
struct BlockCache {
    rows: Vec<usize>,
    keys: Vec<usize>,
    xq: Array2<f64>,
    xk: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    z: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    g: Array2<f64>,
    gact: Array2<f64>,
    ln2: LayerNormCache,
    h2: Array2<f64>,
}

fn key_set(padding: &[bool]) -> Vec<usize> {
    let keys: Vec<usize> = (0..padding.len()).filter(|&i| !padding[i]).collect();
    if keys.is_empty() {
        (0..padding.len()).collect()
    } else {
        keys
    }
}

fn block_forward(
    p: &EncoderParams,
    x: &Array2<f64>,
    padding: &[bool],
    rows: Vec<usize>,
) -> BlockCache {
    let d = p.model_dim();
    let dk = d / p.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let keys = key_set(padding);
    let xq = x.select(Axis(0), &rows);
    let xk = x.select(Axis(0), &keys);
    let q = xq.dot(&p.query);
    let k = xk.dot(&p.key);
    let v = xk.dot(&p.value);
    let mut z = Array2::zeros((rows.len(), d));
    let mut attn = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = q.slice(cols).dot(&k.slice(cols).t());
        a *= scale;
        for (j, &key) in keys.iter().enumerate() {
            if padding[key] {
                a.column_mut(j).mapv_inplace(|s| s + PAD_SCORE);
            }
        }
        softmax_rows(&mut a);
        general_mat_mul(1.0, &a, &v.slice(cols), 0.0, &mut z.slice_mut(cols));
        attn.push(a);
    }
    let m1 = &xq + &z.dot(&p.output);
    let (h1, ln1) = layer_norm(&m1, &p.norm1_scale, &p.norm1_shift);
    let g = h1.dot(&p.ff_in) + &p.ff_in_bias;
    let gact = g.mapv(gelu);
    let m2 = &h1 + &(gact.dot(&p.ff_out) + &p.ff_out_bias);
    let (h2, ln2) = layer_norm(&m2, &p.norm2_scale, &p.norm2_shift);
    BlockCache {
        rows,
        keys,
        xq,
        xk,
        q,
        k,
        v,
        attn,
        z,
        ln1,
        h1,
        g,
        gact,
        ln2,
        h2,
    }
}

/// Accumulates parameter gradients into `grads` and returns
/// `(d xq, d xk)`.
fn block_backward(
    p: &EncoderParams,
    c: &BlockCache,
    dh2: &Array2<f64>,
    grads: &mut EncoderParams,
) -> (Array2<f64>, Array2<f64>) {
    let d = p.model_dim();
    let dk = d / p.heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let dm2 = layer_norm_backward(
        dh2,
        &c.ln2,
        &p.norm2_scale,
        &mut grads.norm2_scale,
        &mut grads.norm2_shift,
    );
    general_mat_mul(1.0, &c.gact.t(), &dm2, 1.0, &mut grads.ff_out);
    grads.ff_out_bias += &dm2.sum_axis(Axis(0));
    let mut dg = dm2.dot(&p.ff_out.t());
    dg.zip_mut_with(&c.g, |a, &x| *a *= gelu_grad(x));
    general_mat_mul(1.0, &c.h1.t(), &dg, 1.0, &mut grads.ff_in);
    grads.ff_in_bias += &dg.sum_axis(Axis(0));
    let mut dh1 = dm2;
    general_mat_mul(1.0, &dg, &p.ff_in.t(), 1.0, &mut dh1);

    let dm1 = layer_norm_backward(
        &dh1,
        &c.ln1,
        &p.norm1_scale,
        &mut grads.norm1_scale,
        &mut grads.norm1_shift,
    );
    general_mat_mul(1.0, &c.z.t(), &dm1, 1.0, &mut grads.output);
    let dz = dm1.dot(&p.output.t());

    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dkey = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (h, a) in c.attn.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let dzh = dz.slice(cols);
        let mut ds = dzh.dot(&c.v.slice(cols).t());
        general_mat_mul(1.0, &a.t(), &dzh, 0.0, &mut dv.slice_mut(cols));
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let dot: f64 = drow.iter().zip(arow).map(|(x, y)| x * y).sum();
            drow.zip_mut_with(&arow, |g, &w| *g = w * (*g - dot));
        }
        general_mat_mul(scale, &ds, &c.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(
            scale,
            &ds.t(),
            &c.q.slice(cols),
            0.0,
            &mut dkey.slice_mut(cols),
        );
    }
    general_mat_mul(1.0, &c.xq.t(), &dq, 1.0, &mut grads.query);
    general_mat_mul(1.0, &c.xk.t(), &dkey, 1.0, &mut grads.key);
    general_mat_mul(1.0, &c.xk.t(), &dv, 1.0, &mut grads.value);

    let mut dxq = dm1;
    general_mat_mul(1.0, &dq, &p.query.t(), 1.0, &mut dxq);
    let mut dxk = dkey.dot(&p.key.t());
    general_mat_mul(1.0, &dv, &p.value.t(), 1.0, &mut dxk);
    (dxq, dxk)
}

/// The encoder block on an already-embedded `W × D` input: multi-head
/// attention, residual and layer norm, then the feed-forward sublayer with
/// its own residual and layer norm. `padding[i]` marks padding keys.
pub fn multi_head_self_attention(
    params: &EncoderParams,
    x: &Array2<f64>,
    padding: &[bool],
) -> Array2<f64> {
    block_forward(params, x, padding, (0..x.nrows()).collect()).h2
}

/// Per-head `W × W` attention weights for the block input `x`.
/// Columns of padding keys are exactly zero.
pub fn attention_weights(
    params: &EncoderParams,
    x: &Array2<f64>,
    padding: &[bool],
) -> Vec<Array2<f64>> {
    let c = block_forward(params, x, padding, (0..x.nrows()).collect());
    c.attn
        .into_iter()
        .map(|a| {
            let mut full = Array2::zeros((x.nrows(), x.nrows()));
            for (j, &key) in c.keys.iter().enumerate() {
                full.column_mut(key).assign(&a.column(j));
            }
            full
        })
        .collect()
}

/// Result of a full forward pass for one window.
pub struct Forward {
    pub logits: Vec<f64>,
    pub pooled: Array1<f64>,
    ids: Vec<u32>,
    block: BlockCache,
}

/// Pooled rows are those set in `nsw_mask`; an empty mask pools every
/// non-padding row.
pub fn forward(
    params: &EncoderParams,
    ids: &[u32],
    padding: &[bool],
    nsw_mask: &[bool],
) -> Forward {
    let x = embed(params, ids);
    let mut rows: Vec<usize> = (0..ids.len()).filter(|&i| nsw_mask[i]).collect();
    if rows.is_empty() {
        rows = key_set(padding);
    }
    let block = block_forward(params, &x, padding, rows);
    let pooled = block
        .h2
        .mean_axis(Axis(0))
        .expect("at least one pooled row");
    let logits = (pooled.dot(&params.classifier) + &params.classifier_bias).to_vec();
    Forward {
        logits,
        pooled,
        ids: ids.to_vec(),
        block,
    }
}

/// Backpropagates `dlogits` and adds the gradients to `grads`.
pub fn backward(params: &EncoderParams, fwd: &Forward, dlogits: &[f64], grads: &mut EncoderParams) {
    let dz = ArrayView1::from(dlogits);
    let d = params.model_dim();
    for (i, &pi) in fwd.pooled.iter().enumerate() {
        grads.classifier.row_mut(i).scaled_add(pi, &dz);
    }
    grads.classifier_bias += &dz;
    let dpooled = params.classifier.dot(&dz);
    let r = fwd.block.rows.len();
    let dh2 = Array2::from_shape_fn((r, d), |(_, j)| dpooled[j] / r as f64);
    let (dxq, dxk) = block_backward(params, &fwd.block, &dh2, grads);
    for (grad_rows, index) in [(&dxq, &fwd.block.rows), (&dxk, &fwd.block.keys)] {
        for (g, &w) in grad_rows.rows().into_iter().zip(index.iter()) {
            grads
                .embedding
                .row_mut(fwd.ids[w] as usize)
                .scaled_add(1.0, &g);
            grads.position.row_mut(w).scaled_add(1.0, &g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ClassifierConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(d: usize, h: usize, w: usize) -> EncoderParams {
        let cfg = ClassifierConfig {
            model_dim: d,
            heads: h,
            ff_dim: 2 * d,
            window: w,
            labels: 3,
            ..Default::default()
        };
        EncoderParams::init(&cfg, 7, 3)
    }

    fn random_x(rows: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.0..1.0))
    }

    /// Loop-based reference for the block.
    fn naive_block(p: &EncoderParams, x: &Array2<f64>, padding: &[bool]) -> Array2<f64> {
        let (w, d) = x.dim();
        let dk = d / p.heads;
        let mm = |a: &Array2<f64>, b: &Array2<f64>| {
            let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
            for i in 0..a.nrows() {
                for j in 0..b.ncols() {
                    for k in 0..a.ncols() {
                        out[[i, j]] += a[[i, k]] * b[[k, j]];
                    }
                }
            }
            out
        };
        let q = mm(x, &p.query);
        let k = mm(x, &p.key);
        let v = mm(x, &p.value);
        let mut z = Array2::<f64>::zeros((w, d));
        for h in 0..p.heads {
            for i in 0..w {
                let mut scores = vec![0.0; w];
                for (j, s) in scores.iter_mut().enumerate() {
                    for c in h * dk..(h + 1) * dk {
                        *s += q[[i, c]] * k[[j, c]];
                    }
                    *s /= (dk as f64).sqrt();
                    if padding[j] {
                        *s += PAD_SCORE;
                    }
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let sum: f64 = e.iter().sum();
                for c in h * dk..(h + 1) * dk {
                    z[[i, c]] = (0..w).map(|j| e[j] / sum * v[[j, c]]).sum();
                }
            }
        }
        let ln = |m: Array2<f64>, g: &Array1<f64>, b: &Array1<f64>| {
            let mut out = m.clone();
            for i in 0..m.nrows() {
                let mean = m.row(i).sum() / d as f64;
                let var = m.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                for j in 0..d {
                    out[[i, j]] = (m[[i, j]] - mean) / (var + LAYER_NORM_EPS).sqrt() * g[j] + b[j];
                }
            }
            out
        };
        let h1 = ln(x + &mm(&z, &p.output), &p.norm1_scale, &p.norm1_shift);
        let mut g = mm(&h1, &p.ff_in);
        for mut row in g.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gelu(*v + p.ff_in_bias[j]);
            }
        }
        let mut f = mm(&g, &p.ff_out);
        for mut row in f.rows_mut() {
            row += &p.ff_out_bias;
        }
        ln(&h1 + &f, &p.norm2_scale, &p.norm2_shift)
    }

    #[test]
    fn block_matches_naive_reference() {
        let mut p = small(8, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        p.norm1_shift.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        p.ff_in_bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x = random_x(6, 8, 1);
        let padding = [false, false, true, false, true, false];
        let fast = multi_head_self_attention(&p, &x, &padding);
        let slow = naive_block(&p, &x, &padding);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        // D=4, H=2, W=3: swapping two non-pad rows swaps the output rows.
        let p = small(4, 2, 3);
        let x = random_x(3, 4, 5);
        let padding = [false, false, false];
        let out = multi_head_self_attention(&p, &x, &padding);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let mut xs = x.clone();
            for c in 0..4 {
                xs.swap([i, c], [j, c]);
            }
            let outs = multi_head_self_attention(&p, &xs, &padding);
            for c in 0..4 {
                assert!((out[[i, c]] - outs[[j, c]]).abs() < 1e-12);
                assert!((out[[j, c]] - outs[[i, c]]).abs() < 1e-12);
            }
            let k = 3 - i - j;
            for c in 0..4 {
                assert!((out[[k, c]] - outs[[k, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let p = small(8, 2, 5);
        let x = random_x(5, 8, 2);
        let padding = [true, false, false, true, false];
        for a in attention_weights(&p, &x, &padding) {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert_eq!(row[0], 0.0);
                assert_eq!(row[3], 0.0);
            }
        }
        assert_eq!(multi_head_self_attention(&p, &x, &padding).dim(), (5, 8));
    }

    #[test]
    fn embedding_rows_and_locality() {
        let p = small(4, 2, 4);
        let pad = [1u32; 4];
        let e = embed(&p, &pad);
        for i in 0..4 {
            let want = &p.embedding.row(1) + &p.position.row(i);
            assert_eq!(e.row(i), want);
        }
        let a = embed(&p, &[2, 3, 4, 5]);
        let b = embed(&p, &[2, 3, 6, 5]);
        for i in 0..4 {
            assert_eq!(a.row(i) == b.row(i), i != 2);
        }
    }

    #[test]
    fn gelu_derivative() {
        for i in -40..40 {
            let x = i as f64 / 10.0;
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
