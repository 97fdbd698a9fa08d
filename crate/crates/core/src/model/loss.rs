//! Focal, instrument-dependency and groove losses over sigmoid outputs.
//!
//! Every loss has a value function and a `*_grad` variant that returns the
//! value and accumulates `scale * dL/dy` into a gradient grid.

use super::{Grid, ZERO_GRID};
use crate::math;
use crate::pattern::{DrumPattern, Instrument, INSTRUMENTS, STEPS};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before logs.
pub const EPS: f64 = 1e-7;

const KICK: usize = Instrument::Kick as usize;
const SNARE: usize = Instrument::Snare as usize;
const CHH: usize = Instrument::ClosedHiHat as usize;
const OHH: usize = Instrument::OpenHiHat as usize;
const TOMS: [usize; 3] = [Instrument::LowTom as usize, Instrument::MidTom as usize, Instrument::HighTom as usize];

/// Kick positions (beats 1 and 3 of each bar); the paired snare sits 4 steps later.
pub const KICK_STEPS: [usize; 4] = [0, 8, 16, 24];

/// Weights of the three loss families in the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMix {
    pub focal: f64,
    pub dependency: f64,
    pub groove: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda_ks: f64,
    pub lambda_hh: f64,
    pub lambda_tom: f64,
    /// Include the simultaneous-tom penalty in the dependency loss.
    pub tom_term: bool,
    pub beta: f64,
    /// Transition weight per step.
    pub step_weights: [f64; STEPS],
    pub gamma: f64,
    /// Focal class weight for hits; silent cells use `1 - alpha_pos`.
    pub alpha_pos: f64,
    pub mix: LossMix,
}

/// 4 on beats 1/3, 2 on beats 2/4, 1 on every sixteenth offset.
pub fn default_step_weights() -> [f64; STEPS] {
    let mut w = [1.0; STEPS];
    for (t, x) in w.iter_mut().enumerate() {
        *x = match t % 8 {
            0 => 4.0,
            4 => 2.0,
            _ => 1.0,
        };
    }
    w
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ks: 0.15,
            lambda_hh: 0.3,
            lambda_tom: 0.1,
            tom_term: true,
            beta: 0.3,
            step_weights: default_step_weights(),
            gamma: 2.0,
            alpha_pos: 0.75,
            mix: LossMix { focal: 1.0, dependency: 0.005, groove: 0.0005 },
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let nonneg = [self.lambda_ks, self.lambda_hh, self.lambda_tom, self.beta, self.gamma, self.mix.focal, self.mix.dependency, self.mix.groove];
        if nonneg.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || self.step_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(crate::Error::Config(alloc::string::String::from("loss weights must be finite and non-negative")));
        }
        if !(self.alpha_pos > 0.0 && self.alpha_pos < 1.0) {
            return Err(crate::Error::Config(alloc::format!("alpha_pos {} outside (0, 1)", self.alpha_pos)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub focal: f64,
    pub dependency: f64,
    pub groove: f64,
    pub total: f64,
}

#[inline]
fn focal_cell(y: f64, hit: bool, cfg: &LossConfig) -> (f64, f64) {
    let (p, sign, alpha) = if hit { (y, 1.0, cfg.alpha_pos) } else { (1.0 - y, -1.0, 1.0 - cfg.alpha_pos) };
    let clamped = !(EPS..=1.0 - EPS).contains(&p);
    let p = p.clamp(EPS, 1.0 - EPS);
    let q = 1.0 - p;
    let lnp = math::ln(p);
    let mod_ = if cfg.gamma == 0.0 { 1.0 } else { math::powf(q, cfg.gamma) };
    let value = -alpha * mod_ * lnp;
    if clamped {
        return (value, 0.0);
    }
    // d/dp [-a q^g ln p] = -a [ -g q^(g-1) ln p + q^g / p ]
    let dmod = if cfg.gamma == 0.0 { 0.0 } else { cfg.gamma * math::powf(q, cfg.gamma - 1.0) };
    let dp = -alpha * (-dmod * lnp + mod_ / p);
    (value, sign * dp)
}

/// Mean focal loss over the cells selected by `mask` (bit set = included).
pub fn focal_loss(y: &Grid, target: &DrumPattern, mask: &[u32; INSTRUMENTS], cfg: &LossConfig) -> f64 {
    let mut g = ZERO_GRID;
    focal_loss_grad(y, target, mask, cfg, 0.0, &mut g)
}

pub fn focal_loss_grad(
    y: &Grid,
    target: &DrumPattern,
    mask: &[u32; INSTRUMENTS],
    cfg: &LossConfig,
    scale: f64,
    grad: &mut Grid,
) -> f64 {
    let n: u32 = mask.iter().map(|m| m.count_ones()).sum();
    if n == 0 {
        return 0.0;
    }
    let inv = 1.0 / f64::from(n);
    let mut total = 0.0;
    for i in 0..INSTRUMENTS {
        for t in 0..STEPS {
            if mask[i] >> t & 1 == 1 {
                let (v, d) = focal_cell(y[i][t], target.get(i, t), cfg);
                total += v;
                grad[i][t] += scale * inv * d;
            }
        }
    }
    total * inv
}

/// Focal loss of a single cell given the probability of the true label.
pub fn focal_term(p_true: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p_true.clamp(EPS, 1.0 - EPS);
    -alpha * math::powf(1.0 - p, gamma) * math::ln(p)
}

/// Kick/snare placement, hi-hat exclusivity and (optionally) tom exclusivity.
pub fn dependency_loss(y: &Grid, cfg: &LossConfig) -> f64 {
    let mut g = ZERO_GRID;
    dependency_loss_grad(y, cfg, 0.0, &mut g)
}

pub fn dependency_loss_grad(y: &Grid, cfg: &LossConfig, scale: f64, grad: &mut Grid) -> f64 {
    let mut ks = 0.0;
    for &i in &KICK_STEPS {
        ks += (1.0 - y[KICK][i]) + (1.0 - y[SNARE][i + 4]);
        grad[KICK][i] -= scale * cfg.lambda_ks;
        grad[SNARE][i + 4] -= scale * cfg.lambda_ks;
    }
    let mut hh = 0.0;
    for t in 0..STEPS {
        hh += y[CHH][t] * y[OHH][t];
        grad[CHH][t] += scale * cfg.lambda_hh * y[OHH][t];
        grad[OHH][t] += scale * cfg.lambda_hh * y[CHH][t];
    }
    let mut tom = 0.0;
    if cfg.tom_term {
        for t in 0..STEPS {
            for a in 0..TOMS.len() {
                for b in a + 1..TOMS.len() {
                    let (p, q) = (TOMS[a], TOMS[b]);
                    tom += y[p][t] * y[q][t];
                    grad[p][t] += scale * cfg.lambda_tom * y[q][t];
                    grad[q][t] += scale * cfg.lambda_tom * y[p][t];
                }
            }
        }
    }
    cfg.lambda_ks * ks + cfg.lambda_hh * hh + cfg.lambda_tom * tom
}

/// The two groove components: weighted step-to-step transitions and the
/// bar-to-bar squared Frobenius distance (before `beta`).
pub fn groove_terms(y: &Grid, cfg: &LossConfig) -> (f64, f64) {
    let mut within = 0.0;
    for t in 1..STEPS {
        let mut sub = 0.0;
        for row in y {
            let diff = row[t] - row[t - 1];
            sub += diff * diff;
        }
        within += cfg.step_weights[t] * sub;
    }
    let mut between = 0.0;
    for row in y {
        for s in 0..STEPS / 2 {
            let diff = row[s] - row[s + STEPS / 2];
            between += diff * diff;
        }
    }
    (within, between)
}

pub fn groove_loss(y: &Grid, cfg: &LossConfig) -> f64 {
    let (within, between) = groove_terms(y, cfg);
    within + cfg.beta * between
}

pub fn groove_loss_grad(y: &Grid, cfg: &LossConfig, scale: f64, grad: &mut Grid) -> f64 {
    for i in 0..INSTRUMENTS {
        for t in 1..STEPS {
            let d = 2.0 * cfg.step_weights[t] * (y[i][t] - y[i][t - 1]) * scale;
            grad[i][t] += d;
            grad[i][t - 1] -= d;
        }
        for s in 0..STEPS / 2 {
            let d = 2.0 * cfg.beta * (y[i][s] - y[i][s + STEPS / 2]) * scale;
            grad[i][s] += d;
            grad[i][s + STEPS / 2] -= d;
        }
    }
    groove_loss(y, cfg)
}

/// Mixed objective: focal over `mask`, dependency and groove over the whole grid.
pub fn total_loss(y: &Grid, target: &DrumPattern, mask: &[u32; INSTRUMENTS], cfg: &LossConfig) -> LossBreakdown {
    let mut g = ZERO_GRID;
    total_loss_grad(y, target, mask, cfg, &mut g)
}

/// Like [`total_loss`], accumulating `dL/dy` into `grad`. Terms with zero
/// mix weight are still reported but contribute no gradient.
pub fn total_loss_grad(
    y: &Grid,
    target: &DrumPattern,
    mask: &[u32; INSTRUMENTS],
    cfg: &LossConfig,
    grad: &mut Grid,
) -> LossBreakdown {
    let m = cfg.mix;
    let focal = focal_loss_grad(y, target, mask, cfg, m.focal, grad);
    let dependency = dependency_loss_grad(y, cfg, m.dependency, grad);
    let groove = groove_loss_grad(y, cfg, m.groove, grad);
    LossBreakdown { focal, dependency, groove, total: m.focal * focal + m.dependency * dependency + m.groove * groove }
}

/// Chain `dL/dy` through the sigmoid: `dL/dlogit = dL/dy * y (1 - y)`.
pub fn grad_to_logits(dy: &Grid, y: &Grid) -> Grid {
    let mut out = ZERO_GRID;
    for i in 0..INSTRUMENTS {
        for t in 0..STEPS {
            out[i][t] = dy[i][t] * y[i][t] * (1.0 - y[i][t]);
        }
    }
    out
}
