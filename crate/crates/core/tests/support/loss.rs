use std::time::{Duration, Instant};

use deepretrieve::contrastive::{contrastive_loss, loss_from_similarities, loss_gradient, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

const NO_NEGS: &[Vec<f64>] = &[];

fn cfg(t: f64) -> LossConfig {
    LossConfig {
        temperature: t,
        ..LossConfig::default()
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Direct softmax cross-entropy over cosine similarities, written out
/// without the log-sum-exp shift.
fn naive_loss(q: &[f64], pos: &[f64], negs: &[Vec<f64>], t: f64) -> f64 {
    let p = (cos(q, pos) / t).exp();
    let n: f64 = negs.iter().map(|d| (cos(q, d) / t).exp()).sum();
    -(p / (p + n)).ln()
}

/// The same loss as ln(1 + sum exp((s_neg - s_pos) / T)), which keeps full
/// relative precision when the loss is tiny. Finite differences use this form.
fn log1p_loss(v: &[Vec<f64>], t: f64) -> f64 {
    let s_pos = cos(&v[0], &v[1]);
    v[2..]
        .iter()
        .map(|d| ((cos(&v[0], d) - s_pos) / t).exp())
        .sum::<f64>()
        .ln_1p()
}

pub fn no_negatives() -> Check {
    let l = contrastive_loss(&[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0], NO_NEGS, &cfg(0.01)).map_err(|e| e.to_string())?;
    ensure!(l == 0.0, "loss with no negatives is {l}, expected 0");
    Ok(())
}

pub fn symmetric_case() -> Check {
    let q = [1.0, 0.0];
    let l = contrastive_loss(&q, &[0.0, 1.0], &[vec![0.0, -1.0]], &cfg(0.01)).map_err(|e| e.to_string())?;
    let want = 2f64.ln();
    ensure!((l - want).abs() <= 1e-9, "symmetric loss {l}, expected ln 2 = {want}");
    Ok(())
}

pub fn hand_case() -> Check {
    // cos(q, pos) = 1, cos(q, neg) = 0, T = 1: -ln(e / (e + 1)) = ln(1 + 1/e)
    let l = contrastive_loss(&[1.0, 0.0], &[2.0, 0.0], &[vec![0.0, 3.0]], &cfg(1.0)).map_err(|e| e.to_string())?;
    ensure!((l - 0.31326169).abs() <= 1e-8, "loss {l}, expected 0.31326169");
    ensure!(
        (l - (1.0 + (-1f64).exp()).ln()).abs() <= 1e-12,
        "loss {l} differs from ln(1 + e^-1)"
    );
    Ok(())
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 0.05 {
            return v;
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of the loss with respect to every coordinate of `slot`.
fn numeric_grad(q: &[f64], pos: &[f64], negs: &[Vec<f64>], t: f64, slot: usize, h: f64) -> Vec<f64> {
    let mut vecs: Vec<Vec<f64>> = vec![q.to_vec(), pos.to_vec()];
    vecs.extend(negs.iter().cloned());
    let f = |v: &[Vec<f64>]| log1p_loss(v, t);
    (0..vecs[slot].len())
        .map(|i| {
            let mut up = vecs.clone();
            up[slot][i] += h;
            let mut down = vecs.clone();
            down[slot][i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn gradients_match_finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let temps = [0.01, 0.05, 0.1, 1.0];
    for case in 0..100 {
        let t = temps[case % temps.len()];
        let q = random_vec(&mut rng, 8);
        let pos = random_vec(&mut rng, 8);
        let negs: Vec<Vec<f64>> = (0..rng.gen_range(1..8)).map(|_| random_vec(&mut rng, 8)).collect();
        let l = contrastive_loss(&q, &pos, &negs, &cfg(t)).map_err(|e| e.to_string())?;
        let naive = naive_loss(&q, &pos, &negs, t);
        if naive.is_finite() {
            ensure!(
                (l - naive).abs() <= 1e-9 * naive.abs().max(1.0),
                "case {case}: loss {l} vs direct {naive}"
            );
        }
        let mut all = vec![q.clone(), pos.clone()];
        all.extend(negs.iter().cloned());
        let precise = log1p_loss(&all, t);
        ensure!(
            (l - precise).abs() <= 1e-9 * precise,
            "case {case}: loss {l} vs log1p form {precise}"
        );
        let g = loss_gradient(&q, &pos, &negs, &cfg(t)).map_err(|e| e.to_string())?;
        let mut analytic = vec![g.q, g.pos];
        analytic.extend(g.negs);
        // relative error of the whole gradient, all inputs concatenated
        let numeric: Vec<f64> = (0..analytic.len())
            .flat_map(|slot| numeric_grad(&q, &pos, &negs, t, slot, 1e-5))
            .collect();
        let analytic: Vec<f64> = analytic.into_iter().flatten().collect();
        let e = rel_err(&analytic, &numeric);
        ensure!(e < 1e-4, "case {case} (T={t}): relative error {e:.3e}");
    }
    Ok(())
}

pub fn extremes_are_finite() -> Check {
    for (s_pos, s_neg) in [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (0.0, 1.0)] {
        for n in [1, 7, 64] {
            let l = loss_from_similarities(s_pos, &vec![s_neg; n], 0.01);
            ensure!(l.is_finite() && l >= 0.0, "loss {l} for s+={s_pos}, s-={s_neg} x{n}");
        }
    }
    let q = [0.6, 0.8];
    let anti = vec![-0.6, -0.8];
    for (pos, negs) in [(q.to_vec(), vec![anti.clone(); 7]), (anti.clone(), vec![q.to_vec(); 7])] {
        let l = contrastive_loss(&q, &pos, &negs, &cfg(0.01)).map_err(|e| e.to_string())?;
        let g = loss_gradient(&q, &pos, &negs, &cfg(0.01)).map_err(|e| e.to_string())?;
        ensure!(l.is_finite(), "non-finite loss {l}");
        let all = g.q.iter().chain(&g.pos).chain(g.negs.iter().flatten());
        for x in all {
            ensure!(x.is_finite(), "non-finite gradient component {x}");
        }
    }
    Ok(())
}

pub fn all() -> Check {
    let start = Instant::now();
    no_negatives()?;
    symmetric_case()?;
    hand_case()?;
    gradients_match_finite_differences()?;
    extremes_are_finite()?;
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(5), "took {took:?}");
    Ok(())
}
