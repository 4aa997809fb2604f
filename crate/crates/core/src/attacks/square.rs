use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::pgd::project;
use super::{AdvExample, LogitsExecutor};

/// Adversarial loss `max_{j≠y} z_j − z_y`; positive means misclassified.
pub fn margin_loss(logits: &[f64], y: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
    other - logits[y]
}

/// Fraction of the image area covered by one proposal after `used` of `budget` queries.
fn patch_fraction(used: usize, budget: usize) -> f64 {
    let f = used as f64 / budget.max(1) as f64;
    let halvings = [0.05, 0.2, 0.5].iter().filter(|&&t| f >= t).count();
    0.1 / f64::powi(2.0, halvings as i32)
}

struct State {
    x0: Vec<f64>,
    best: Vec<f64>,
    loss: f64,
    queries: usize,
    rng: ChaCha8Rng,
    done: bool,
}

/// l∞ Square Attack on `[n, c, h, w]` images using only logits.
///
/// Images already misclassified cost no queries. Initialization places
/// random-sign vertical stripes (one query); every later query moves one
/// random square to `±ε` per channel and is kept only if the loss strictly
/// increases. Each image stops at misclassification or after `max_queries`.
/// Image `i` draws from ChaCha stream `i` of `seed`, so results do not depend
/// on batching.
pub fn square_attack<E: LogitsExecutor + ?Sized>(
    exec: &E,
    x: &Tensor<f64>,
    y: &[usize],
    epsilon: f64,
    max_queries: usize,
    seed: u64,
) -> Result<Vec<AdvExample>> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(format!("square attack needs [n, c, h, w] images, got {:?}", x.shape())));
    };
    if y.len() != n {
        return Err(Error::shape(format!("{} labels for {n} images", y.len())));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let clean = exec.logits(x)?;
    let mut states: Vec<State> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let loss = margin_loss(clean.sample(i), y[i]);
            State {
                x0: x.sample(i).to_vec(),
                best: x.sample(i).to_vec(),
                loss,
                queries: 0,
                rng,
                done: loss > 0.0 || max_queries == 0 || epsilon == 0.0,
            }
        })
        .collect();

    // stripes
    let active: Vec<usize> = (0..n).filter(|&i| !states[i].done).collect();
    let proposals: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| {
            let s = &mut states[i];
            let mut p = s.x0.clone();
            for ch in 0..c {
                for col in 0..w {
                    let sign = if s.rng.random_bool(0.5) { epsilon } else { -epsilon };
                    for row in 0..h {
                        let idx = (ch * h + row) * w + col;
                        p[idx] = project(s.x0[idx] + sign, s.x0[idx], epsilon);
                    }
                }
            }
            p
        })
        .collect();
    let shape = [c, h, w];
    evaluate(exec, &mut states, &active, proposals, y, &shape, true)?;

    loop {
        let active: Vec<usize> = (0..n)
            .filter(|&i| !states[i].done && states[i].queries < max_queries)
            .collect();
        if active.is_empty() {
            break;
        }
        let proposals: Vec<Vec<f64>> = active
            .iter()
            .map(|&i| {
                let s = &mut states[i];
                let p = patch_fraction(s.queries, max_queries);
                let side = ((p * (h * w) as f64).sqrt().ceil() as usize).clamp(1, h.min(w));
                let r0 = s.rng.random_range(0..=h - side);
                let c0 = s.rng.random_range(0..=w - side);
                let mut prop = s.best.clone();
                for ch in 0..c {
                    let sign = if s.rng.random_bool(0.5) { epsilon } else { -epsilon };
                    for row in r0..r0 + side {
                        for col in c0..c0 + side {
                            let idx = (ch * h + row) * w + col;
                            prop[idx] = project(s.x0[idx] + sign, s.x0[idx], epsilon);
                        }
                    }
                }
                prop
            })
            .collect();
        evaluate(exec, &mut states, &active, proposals, y, &shape, false)?;
    }

    Ok(states
        .into_iter()
        .zip(y)
        .map(|(s, &label)| AdvExample {
            x_star: s.best,
            label,
            queries: s.queries,
            success: s.loss > 0.0,
        })
        .collect())
}

fn evaluate<E: LogitsExecutor + ?Sized>(
    exec: &E,
    states: &mut [State],
    active: &[usize],
    proposals: Vec<Vec<f64>>,
    y: &[usize],
    shape: &[usize],
    always_accept: bool,
) -> Result<()> {
    if active.is_empty() {
        return Ok(());
    }
    let refs: Vec<&[f64]> = proposals.iter().map(Vec::as_slice).collect();
    let logits = exec.logits(&Tensor::stack(&refs, shape)?)?;
    for ((&i, prop), b) in active.iter().zip(proposals).zip(0..) {
        let s = &mut states[i];
        s.queries += 1;
        let loss = margin_loss(logits.sample(b), y[i]);
        if always_accept || loss > s.loss {
            s.loss = loss;
            s.best = prop;
        }
        if s.loss > 0.0 {
            s.done = true;
        }
    }
    Ok(())
}
