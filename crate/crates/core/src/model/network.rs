//! Forward and backward passes.
//!
//! Activations are row-major `32 × width` buffers. The backward pass is
//! hand-derived and checked against central finite differences in tests.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{timing_features, timing_signal, EncoderLayer, Grid, LayerNorm, Linear, ModelConfig, Weights, INPUT_FEATURES, TIMING_FEATURES, ZERO_GRID};
use crate::math::{self, axpy, dot};
use crate::pattern::{MaskedPattern, INSTRUMENTS, STEPS};

const LN_EPS: f64 = 1e-5;

/// Logits and sigmoid activations, both `[instrument][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Grid,
    pub probs: Grid,
}

struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    b: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

/// Intermediate activations kept for [`backward`].
pub struct ForwardCache {
    features: Vec<f64>,
    fully_masked: [bool; STEPS],
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    z: Vec<f64>,
}

/// Per-step input features: nine values (masked cells read 0) then nine mask flags.
pub fn input_features(mp: &MaskedPattern) -> Vec<f64> {
    let mut out = vec![0.0; STEPS * INPUT_FEATURES];
    for t in 0..STEPS {
        let row = &mut out[t * INPUT_FEATURES..(t + 1) * INPUT_FEATURES];
        for i in 0..INSTRUMENTS {
            if mp.is_masked(i, t) {
                row[INSTRUMENTS + i] = 1.0;
            } else if mp.hit_rows()[i] >> t & 1 == 1 {
                row[i] = 1.0;
            }
        }
    }
    out
}

/// Step embeddings before the timing signal: the learned mask vector for
/// fully-masked steps, the input projection otherwise.
pub fn token_embeddings(cfg: &ModelConfig, w: &Weights, mp: &MaskedPattern) -> Vec<f64> {
    let d = cfg.d_model;
    let features = input_features(mp);
    let mut out = linear_forward(&features, STEPS, &w.input);
    for t in 0..STEPS {
        if mp.step_fully_masked(t) {
            out[t * d..(t + 1) * d].copy_from_slice(&w.mask_embedding);
        }
    }
    out
}

/// Full input embedding: token embedding plus timing signal, `32 × d_model`.
pub fn embed(cfg: &ModelConfig, w: &Weights, mp: &MaskedPattern) -> Vec<f64> {
    let mut h = token_embeddings(cfg, w, mp);
    let timing = timing_signal(w, cfg.d_model);
    axpy(1.0, &timing, &mut h);
    h
}

fn linear_forward(x: &[f64], rows: usize, l: &Linear) -> Vec<f64> {
    let mut y = vec![0.0; rows * l.fan_out];
    for r in 0..rows {
        let yr = &mut y[r * l.fan_out..(r + 1) * l.fan_out];
        yr.copy_from_slice(&l.b);
        let xr = &x[r * l.fan_in..(r + 1) * l.fan_in];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &l.w[i * l.fan_out..(i + 1) * l.fan_out], yr);
            }
        }
    }
    y
}

/// Accumulate weight/bias gradients; return the input gradient when asked.
fn linear_backward(x: &[f64], rows: usize, l: &Linear, dy: &[f64], grad: &mut Linear, want_dx: bool) -> Vec<f64> {
    let (fi, fo) = (l.fan_in, l.fan_out);
    for r in 0..rows {
        let dyr = &dy[r * fo..(r + 1) * fo];
        axpy(1.0, dyr, &mut grad.b);
        let xr = &x[r * fi..(r + 1) * fi];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, dyr, &mut grad.w[i * fo..(i + 1) * fo]);
            }
        }
    }
    if !want_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; rows * fi];
    for r in 0..rows {
        let dyr = &dy[r * fo..(r + 1) * fo];
        for i in 0..fi {
            dx[r * fi + i] = dot(dyr, &l.w[i * fo..(i + 1) * fo]);
        }
    }
    dx
}

fn layer_norm_forward(x: &[f64], rows: usize, ln: &LayerNorm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = ln.gamma.len();
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    let mut y = vec![0.0; rows * d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / math::sqrt(var + LN_EPS);
        rstd[r] = rs;
        for j in 0..d {
            let xh = (xr[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * ln.gamma[j] + ln.beta[j];
        }
    }
    (xhat, rstd, y)
}

fn layer_norm_backward(xhat: &[f64], rstd: &[f64], ln: &LayerNorm, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
    let d = ln.gamma.len();
    let rows = rstd.len();
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let (mut sum, mut sum_x) = (0.0, 0.0);
        for j in 0..d {
            grad.gamma[j] += dyr[j] * xr[j];
            grad.beta[j] += dyr[j];
            dxhat[j] = dyr[j] * ln.gamma[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xr[j];
        }
        let (mean, mean_x) = (sum / d as f64, sum_x / d as f64);
        for j in 0..d {
            dx[r * d + j] = rstd[r] * (dxhat[j] - mean - xr[j] * mean_x);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = math::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

fn attention_forward(cfg: &ModelConfig, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (d, nh, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / math::sqrt(dh as f64);
    let mut attn = vec![0.0; nh * STEPS * STEPS];
    let mut ctx = vec![0.0; STEPS * d];
    for h in 0..nh {
        let off = h * dh;
        for t in 0..STEPS {
            let qt = &q[t * d + off..t * d + off + dh];
            let row = &mut attn[(h * STEPS + t) * STEPS..(h * STEPS + t + 1) * STEPS];
            let mut max = f64::NEG_INFINITY;
            for (u, s) in row.iter_mut().enumerate() {
                *s = dot(qt, &k[u * d + off..u * d + off + dh]) * scale;
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = math::exp(*s - max);
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
            let ct = &mut ctx[t * d + off..t * d + off + dh];
            for (u, p) in row.iter().enumerate() {
                axpy(*p, &v[u * d + off..u * d + off + dh], ct);
            }
        }
    }
    (attn, ctx)
}

fn attention_backward(
    cfg: &ModelConfig,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    attn: &[f64],
    dctx: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, nh, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / math::sqrt(dh as f64);
    let mut dq = vec![0.0; STEPS * d];
    let mut dk = vec![0.0; STEPS * d];
    let mut dv = vec![0.0; STEPS * d];
    let mut dp = [0.0; STEPS];
    for h in 0..nh {
        let off = h * dh;
        for t in 0..STEPS {
            let row = &attn[(h * STEPS + t) * STEPS..(h * STEPS + t + 1) * STEPS];
            let dct = &dctx[t * d + off..t * d + off + dh];
            let mut weighted = 0.0;
            for u in 0..STEPS {
                dp[u] = dot(dct, &v[u * d + off..u * d + off + dh]);
                weighted += row[u] * dp[u];
                axpy(row[u], dct, &mut dv[u * d + off..u * d + off + dh]);
            }
            let qt = &q[t * d + off..t * d + off + dh];
            for u in 0..STEPS {
                let ds = row[u] * (dp[u] - weighted) * scale;
                if ds != 0.0 {
                    axpy(ds, &k[u * d + off..u * d + off + dh], &mut dq[t * d + off..t * d + off + dh]);
                    axpy(ds, qt, &mut dk[u * d + off..u * d + off + dh]);
                }
            }
        }
    }
    (dq, dk, dv)
}

fn layer_forward<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    layer: &EncoderLayer,
    h: &mut [f64],
    mut rng: Option<&mut R>,
) -> LayerCache {
    let (xhat1, rstd1, a) = layer_norm_forward(h, STEPS, &layer.ln1);
    let q = linear_forward(&a, STEPS, &layer.query);
    let k = linear_forward(&a, STEPS, &layer.key);
    let v = linear_forward(&a, STEPS, &layer.value);
    let (attn, ctx) = attention_forward(cfg, &q, &k, &v);
    let mut o = linear_forward(&ctx, STEPS, &layer.out);
    let drop1 = match rng.as_deref_mut() {
        Some(r) if cfg.dropout > 0.0 => Some(dropout_mask(o.len(), cfg.dropout, r)),
        _ => None,
    };
    if let Some(m) = &drop1 {
        for (x, s) in o.iter_mut().zip(m) {
            *x *= s;
        }
    }
    axpy(1.0, &o, h);

    let (xhat2, rstd2, b) = layer_norm_forward(h, STEPS, &layer.ln2);
    let f1 = linear_forward(&b, STEPS, &layer.ff1);
    let g: Vec<f64> = f1.iter().map(|&x| gelu(x)).collect();
    let mut f2 = linear_forward(&g, STEPS, &layer.ff2);
    let drop2 = match rng {
        Some(r) if cfg.dropout > 0.0 => Some(dropout_mask(f2.len(), cfg.dropout, r)),
        _ => None,
    };
    if let Some(m) = &drop2 {
        for (x, s) in f2.iter_mut().zip(m) {
            *x *= s;
        }
    }
    axpy(1.0, &f2, h);
    LayerCache { xhat1, rstd1, a, q, k, v, attn, ctx, drop1, xhat2, rstd2, b, f1, g, drop2 }
}

/// Forward pass keeping activations. Dropout is active iff `rng` is given.
pub fn forward_with_cache<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    w: &Weights,
    mp: &MaskedPattern,
    mut rng: Option<&mut R>,
) -> (Prediction, ForwardCache) {
    let d = cfg.d_model;
    let features = input_features(mp);
    let mut fully_masked = [false; STEPS];
    for (t, f) in fully_masked.iter_mut().enumerate() {
        *f = mp.step_fully_masked(t);
    }
    let mut h = linear_forward(&features, STEPS, &w.input);
    for t in 0..STEPS {
        if fully_masked[t] {
            h[t * d..(t + 1) * d].copy_from_slice(&w.mask_embedding);
        }
    }
    axpy(1.0, &timing_signal(w, d), &mut h);

    let layers = w.layers.iter().map(|layer| layer_forward(cfg, layer, &mut h, rng.as_deref_mut())).collect();

    let (xhatf, rstdf, z) = layer_norm_forward(&h, STEPS, &w.final_ln);
    let out = linear_forward(&z, STEPS, &w.head);
    let mut logits = ZERO_GRID;
    let mut probs = ZERO_GRID;
    for t in 0..STEPS {
        for i in 0..INSTRUMENTS {
            let l = out[t * INSTRUMENTS + i];
            logits[i][t] = l;
            probs[i][t] = math::sigmoid(l);
        }
    }
    (Prediction { logits, probs }, ForwardCache { features, fully_masked, layers, xhatf, rstdf, z })
}

/// Evaluation-mode forward pass (no dropout).
pub fn forward(cfg: &ModelConfig, w: &Weights, mp: &MaskedPattern) -> Prediction {
    forward_with_cache::<crate::rng::ChaCha8Rng>(cfg, w, mp, None).0
}

/// Evaluation-mode forward pass over a batch; item `k` depends only on input `k`.
pub fn forward_batch(cfg: &ModelConfig, w: &Weights, batch: &[MaskedPattern]) -> Vec<Prediction> {
    batch.iter().map(|mp| forward(cfg, w, mp)).collect()
}

/// Backpropagate `dlogits` (`[instrument][step]`) and accumulate into `grad`.
pub fn backward(cfg: &ModelConfig, w: &Weights, cache: &ForwardCache, dlogits: &Grid, grad: &mut Weights) {
    let d = cfg.d_model;
    let mut dout = vec![0.0; STEPS * INSTRUMENTS];
    for t in 0..STEPS {
        for i in 0..INSTRUMENTS {
            dout[t * INSTRUMENTS + i] = dlogits[i][t];
        }
    }
    let dz = linear_backward(&cache.z, STEPS, &w.head, &dout, &mut grad.head, true);
    let mut dh = layer_norm_backward(&cache.xhatf, &cache.rstdf, &w.final_ln, &dz, &mut grad.final_ln);

    for ((layer, lc), lg) in w.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
        // feed-forward block
        let mut df2 = dh.clone();
        if let Some(m) = &lc.drop2 {
            for (x, s) in df2.iter_mut().zip(m) {
                *x *= s;
            }
        }
        let mut dg = linear_backward(&lc.g, STEPS, &layer.ff2, &df2, &mut lg.ff2, true);
        for (x, f) in dg.iter_mut().zip(&lc.f1) {
            *x *= gelu_grad(*f);
        }
        let db = linear_backward(&lc.b, STEPS, &layer.ff1, &dg, &mut lg.ff1, true);
        let dres = layer_norm_backward(&lc.xhat2, &lc.rstd2, &layer.ln2, &db, &mut lg.ln2);
        axpy(1.0, &dres, &mut dh);

        // attention block
        let mut do_ = dh.clone();
        if let Some(m) = &lc.drop1 {
            for (x, s) in do_.iter_mut().zip(m) {
                *x *= s;
            }
        }
        let dctx = linear_backward(&lc.ctx, STEPS, &layer.out, &do_, &mut lg.out, true);
        let (dq, dk, dv) = attention_backward(cfg, &lc.q, &lc.k, &lc.v, &lc.attn, &dctx);
        let mut da = linear_backward(&lc.a, STEPS, &layer.query, &dq, &mut lg.query, true);
        axpy(1.0, &linear_backward(&lc.a, STEPS, &layer.key, &dk, &mut lg.key, true), &mut da);
        axpy(1.0, &linear_backward(&lc.a, STEPS, &layer.value, &dv, &mut lg.value, true), &mut da);
        let dres = layer_norm_backward(&lc.xhat1, &lc.rstd1, &layer.ln1, &da, &mut lg.ln1);
        axpy(1.0, &dres, &mut dh);
    }

    // embeddings
    for t in 0..STEPS {
        let dht = &dh[t * d..(t + 1) * d];
        let f = timing_features(t);
        for (k, fk) in f.iter().enumerate() {
            if *fk != 0.0 {
                axpy(*fk, dht, &mut grad.timing[k * d..(k + 1) * d]);
            }
        }
        if cache.fully_masked[t] {
            axpy(1.0, dht, &mut grad.mask_embedding);
        } else {
            axpy(1.0, dht, &mut grad.input.b);
            let ft = &cache.features[t * INPUT_FEATURES..(t + 1) * INPUT_FEATURES];
            for (i, &x) in ft.iter().enumerate() {
                if x != 0.0 {
                    axpy(x, dht, &mut grad.input.w[i * d..(i + 1) * d]);
                }
            }
        }
    }
    debug_assert_eq!(TIMING_FEATURES, 10);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{Cell, DrumPattern};
    use crate::rng;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 8, n_layers: 2, n_heads: 2, ffn_mult: 2, dropout: 0.0, ..Default::default() }
    }

    fn random_masked(seed: u64) -> MaskedPattern {
        let mut r = rng::seeded(seed);
        let p = DrumPattern::from_fn(|_, _| r.gen::<f64>() < 0.3);
        let mut mp = MaskedPattern::from_pattern(&p);
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                if r.gen::<f64>() < 0.4 {
                    mp.set_cell(i, t, Cell::Masked).unwrap();
                }
            }
        }
        for i in 0..INSTRUMENTS {
            mp.set_cell(i, 5, Cell::Masked).unwrap();
        }
        mp
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = ModelConfig::default();
        let w = Weights::init(&cfg, 7).unwrap();
        let pred = forward(&cfg, &w, &random_masked(1));
        for row in &pred.probs {
            for &p in row {
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn fully_masked_steps_share_embedding() {
        let cfg = small();
        let w = Weights::init(&cfg, 3).unwrap();
        let mp = MaskedPattern::fully_masked();
        let e = token_embeddings(&cfg, &w, &mp);
        let d = cfg.d_model;
        assert_eq!(&e[0..d], &e[d..2 * d]);
        assert_eq!(&e[0..d], &w.mask_embedding[..]);
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let cfg = small();
        let w = Weights::init(&cfg, 3).unwrap();
        let mp = MaskedPattern::from_pattern(&DrumPattern::empty());
        let e = token_embeddings(&cfg, &w, &mp);
        assert_eq!(&e[0..cfg.d_model], &w.input.b[..]);
    }

    #[test]
    fn mask_flags_change_embedding() {
        let cfg = small();
        let w = Weights::init(&cfg, 4).unwrap();
        let a = MaskedPattern::from_pattern(&DrumPattern::empty());
        let mut b = a;
        b.set_cell(3, 0, Cell::Masked).unwrap();
        let (ea, eb) = (token_embeddings(&cfg, &w, &a), token_embeddings(&cfg, &w, &b));
        assert_ne!(&ea[0..cfg.d_model], &eb[0..cfg.d_model]);
    }

    #[test]
    fn constant_path_gives_sigmoid_of_head_bias() {
        let cfg = small();
        let mut w = Weights::init(&cfg, 5).unwrap();
        for l in &mut w.layers {
            for lin in [&mut l.query, &mut l.key, &mut l.value, &mut l.out, &mut l.ff1, &mut l.ff2] {
                lin.w.fill(0.0);
                lin.b.fill(0.0);
            }
        }
        w.head.w.fill(0.0);
        for (k, b) in w.head.b.iter_mut().enumerate() {
            *b = k as f64 * 0.3 - 1.0;
        }
        let pred = forward(&cfg, &w, &random_masked(9));
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                assert_eq!(pred.probs[i][t], math::sigmoid(w.head.b[i]));
            }
        }
    }

    #[test]
    fn attention_is_bidirectional() {
        let cfg = small();
        let w = Weights::init(&cfg, 11).unwrap();
        let mut a = MaskedPattern::from_pattern(&DrumPattern::empty());
        let before = forward(&cfg, &w, &a);
        a.set_cell(0, 31, Cell::Hit).unwrap();
        let after = forward(&cfg, &w, &a);
        assert_ne!(before.logits[0][0], after.logits[0][0]);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let cfg = small();
        let w = Weights::init(&cfg, 2).unwrap();
        let batch = [random_masked(1), random_masked(2), random_masked(3)];
        let out = forward_batch(&cfg, &w, &batch);
        let swapped = forward_batch(&cfg, &w, &[batch[2], batch[0], batch[1]]);
        assert_eq!(out[2], swapped[0]);
        assert_eq!(out[0], swapped[1]);
        assert_eq!(out[1], swapped[2]);
    }

    /// Central-difference check of d(sum c * logits)/d(weights) on sampled coordinates.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = small();
        let mut r = rng::seeded(42);
        let mut w = Weights::init(&cfg, 13).unwrap();
        // larger weights so every path carries signal
        w.scale(20.0);
        for ln in w.layers.iter_mut().flat_map(|l| [&mut l.ln1, &mut l.ln2]) {
            for g in &mut ln.gamma {
                *g = 1.0 + 0.1 * rng::normal(&mut r);
            }
        }
        let mp = random_masked(17);
        let mut coef = ZERO_GRID;
        for row in coef.iter_mut() {
            for c in row.iter_mut() {
                *c = rng::normal(&mut r);
            }
        }
        let objective = |w: &Weights| -> f64 {
            let p = forward(&cfg, w, &mp);
            (0..INSTRUMENTS).flat_map(|i| (0..STEPS).map(move |t| (i, t))).map(|(i, t)| coef[i][t] * p.logits[i][t]).sum()
        };
        let (_, cache) = forward_with_cache::<rng::ChaCha8Rng>(&cfg, &w, &mp, None);
        let mut grad = Weights::zeros(&cfg);
        backward(&cfg, &w, &cache, &coef, &mut grad);

        let layout = Weights::layout(&cfg);
        let h = 1e-5;
        for (ti, (name, _)) in layout.iter().enumerate() {
            let len = w.tensors()[ti].len();
            for _ in 0..3 {
                let j = r.gen_range(0..len);
                let mut wp = w.clone();
                wp.tensors_mut()[ti][j] += h;
                let mut wm = w.clone();
                wm.tensors_mut()[ti][j] -= h;
                let numeric = (objective(&wp) - objective(&wm)) / (2.0 * h);
                let analytic = grad.tensors()[ti][j];
                let err = (numeric - analytic).abs();
                assert!(
                    err <= 1e-4 * numeric.abs().max(analytic.abs()) || err < 1e-7,
                    "{name}[{j}]: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }
}
