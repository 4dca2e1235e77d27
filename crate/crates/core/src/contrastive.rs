//! The contrastive objective over cosine similarities:
//!
//! ```text
//! L = -log( exp(s+/T) / (exp(s+/T) + Σ exp(s-/T)) )
//! ```
//!
//! evaluated as `logsumexp(s/T) - s+/T` so that T = 0.01 stays finite, with
//! closed-form gradients through the cosine normalization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub include_in_batch_negatives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            include_in_batch_negatives: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("dimension mismatch: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, LossError> {
    if u.len() != v.len() {
        return Err(LossError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(LossError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_t(cfg: &LossConfig) -> Result<(), LossError> {
    if cfg.temperature > 0.0 && cfg.temperature.is_finite() {
        Ok(())
    } else {
        Err(LossError::BadTemperature(cfg.temperature))
    }
}

/// Loss from precomputed similarities.
pub fn loss_from_similarities(s_pos: f64, s_negs: &[f64], temperature: f64) -> f64 {
    if s_negs.is_empty() {
        return 0.0;
    }
    // ln(1 + Σ exp(d_i)) with d_i = (s_neg - s_pos) / T, kept exact when
    // the loss is tiny and free of overflow when it is large
    let d: Vec<f64> = s_negs.iter().map(|s| (s - s_pos) / temperature).collect();
    let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m <= 0.0 {
        d.iter().map(|x| x.exp()).sum::<f64>().ln_1p()
    } else {
        m + ((-m).exp() + d.iter().map(|x| (x - m).exp()).sum::<f64>()).ln()
    }
}

pub fn contrastive_loss<V: AsRef<[f64]>>(
    q: &[f64],
    pos: &[f64],
    negs: &[V],
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    check_t(cfg)?;
    let s_pos = cosine(q, pos)?;
    let s_negs = negs
        .iter()
        .map(|n| cosine(q, n.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(loss_from_similarities(s_pos, &s_negs, cfg.temperature))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub q: Vec<f64>,
    pub pos: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
}

/// ∂cos(a, b)/∂a.
fn cos_grad(a: &[f64], b: &[f64], cos: f64) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    a.iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - cos * ai / (na * na))
        .collect()
}

pub fn loss_gradient<V: AsRef<[f64]>>(
    q: &[f64],
    pos: &[f64],
    negs: &[V],
    cfg: &LossConfig,
) -> Result<Gradients, LossError> {
    check_t(cfg)?;
    let t = cfg.temperature;
    let mut docs: Vec<&[f64]> = vec![pos];
    docs.extend(negs.iter().map(|n| n.as_ref()));
    let sims = docs.iter().map(|d| cosine(q, d)).collect::<Result<Vec<_>, _>>()?;
    let z: Vec<f64> = sims.iter().map(|s| s / t).collect();
    let lse = log_sum_exp(&z);
    // ∂L/∂s_i = (softmax_i - [i = positive]) / T; for the positive,
    // softmax_0 - 1 is summed from the negatives to avoid cancellation
    let mut w: Vec<f64> = z.iter().map(|zi| (zi - lse).exp() / t).collect();
    w[0] = -w[1..].iter().sum::<f64>();
    let mut gq = vec![0.0; q.len()];
    let mut gd = Vec::with_capacity(docs.len());
    for ((d, s), wi) in docs.iter().zip(&sims).zip(&w) {
        for (g, x) in gq.iter_mut().zip(cos_grad(q, d, *s)) {
            *g += wi * x;
        }
        gd.push(cos_grad(d, q, *s).into_iter().map(|x| wi * x).collect::<Vec<_>>());
    }
    let pos_grad = gd.remove(0);
    Ok(Gradients {
        q: gq,
        pos: pos_grad,
        negs: gd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub q: Vec<f64>,
    pub pos: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
}

/// Negatives seen by item `i`: its own, plus every other item's positive
/// when in-batch negatives are on.
pub fn negative_set(batch: &[BatchItem], i: usize, cfg: &LossConfig) -> Vec<Vec<f64>> {
    let mut negs = batch[i].negs.clone();
    if cfg.include_in_batch_negatives {
        negs.extend(
            batch
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| b.pos.clone()),
        );
    }
    negs
}

/// Mean loss over a batch.
pub fn batch_loss(batch: &[BatchItem], cfg: &LossConfig) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, item) in batch.iter().enumerate() {
        total += contrastive_loss(&item.q, &item.pos, &negative_set(batch, i, cfg), cfg)?;
    }
    Ok(total / batch.len() as f64)
}

/// One line of the loss parity file shared with external trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub q: Vec<f64>,
    pub pos: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: f64,
    pub expected_loss: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random rows with seven negatives each; temperatures cycle through
/// 0.01, 0.05, 0.1 and 1.0.
pub fn generate_parity(rows: usize, dim: usize, seed: u64) -> Vec<ParityRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temps = [0.01, 0.05, 0.1, 1.0];
    (0..rows)
        .map(|i| {
            let q = gaussian(&mut rng, dim);
            let pos = gaussian(&mut rng, dim);
            let negs: Vec<Vec<f64>> = (0..7).map(|_| gaussian(&mut rng, dim)).collect();
            let t = temps[i % temps.len()];
            let cfg = LossConfig {
                temperature: t,
                include_in_batch_negatives: false,
            };
            let expected_loss = contrastive_loss(&q, &pos, &negs, &cfg).expect("gaussian vectors are nonzero");
            ParityRow {
                q,
                pos,
                negs,
                t,
                expected_loss,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityCheck {
    pub rows: usize,
    pub max_abs_diff: f64,
}

/// Recomputes each row's loss and reports the worst deviation.
pub fn check_parity(rows: &[ParityRow]) -> Result<ParityCheck, LossError> {
    let mut worst: f64 = 0.0;
    for r in rows {
        let cfg = LossConfig {
            temperature: r.t,
            include_in_batch_negatives: false,
        };
        worst = worst.max((contrastive_loss(&r.q, &r.pos, &r.negs, &cfg)? - r.expected_loss).abs());
    }
    Ok(ParityCheck {
        rows: rows.len(),
        max_abs_diff: worst,
    })
}

pub fn read_parity(path: &Path) -> Result<Vec<ParityRow>, crate::io::IoError> {
    crate::io::read_jsonl(path)
}

pub fn write_parity(path: &Path, rows: &[ParityRow]) -> Result<(), crate::io::IoError> {
    crate::io::write_jsonl(path, rows, None).map(|_| ())
}
