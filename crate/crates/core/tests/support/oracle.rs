//! Exhaustive-enumeration oracle: exact law of `Z_n` by repeated
//! convolution, averaged over every environment state sequence.

#![allow(dead_code)]

use bprelab_core::OffspringLaw;

/// Distribution of a sum of `z` i.i.d. draws from `law`.
pub fn sum_distribution(law: &OffspringLaw, z: usize) -> Vec<f64> {
    let probs = law.probs();
    let mut dist = vec![1.0];
    for _ in 0..z {
        let mut next = vec![0.0; dist.len() + probs.len() - 1];
        for (a, &pa) in dist.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in probs.iter().enumerate() {
                next[a + b] += pa * pb;
            }
        }
        dist = next;
    }
    dist
}

/// Law of `Z_n` along a fixed sequence of laws, `Z_0 = 1`.
pub fn population_distribution(laws: &[&OffspringLaw]) -> Vec<f64> {
    let mut dist = vec![0.0, 1.0];
    for law in laws {
        let width = (dist.len() - 1) * (law.probs().len() - 1) + 1;
        let mut next = vec![0.0; width];
        for (z, &pz) in dist.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            for (y, py) in sum_distribution(law, z).into_iter().enumerate() {
                next[y] += pz * py;
            }
        }
        dist = next;
    }
    dist
}

fn raw_moments(dist: &[f64], r_max: usize) -> Vec<f64> {
    (0..=r_max)
        .map(|j| dist.iter().enumerate().map(|(z, p)| p * (z as f64).powi(j as i32)).sum())
        .collect()
}

/// `E_xi Z_n^j` for `n <= n_max`, `j <= r_max`.
pub fn quenched_table(path: &[OffspringLaw], r_max: usize, n_max: usize) -> Vec<Vec<f64>> {
    (0..=n_max)
        .map(|n| {
            let laws: Vec<&OffspringLaw> = path[..n].iter().collect();
            raw_moments(&population_distribution(&laws), r_max)
        })
        .collect()
}

/// `E[P_n^{-s} Z_n^j]` under an i.i.d. mixture, enumerating all
/// `states.len()^n` environment sequences.
pub fn annealed_table(
    states: &[OffspringLaw],
    weights: &[f64],
    s: f64,
    r_max: usize,
    n_max: usize,
) -> Vec<Vec<f64>> {
    let k = states.len();
    (0..=n_max)
        .map(|n| {
            let mut acc = vec![0.0; r_max + 1];
            for code in 0..k.pow(n as u32) {
                let mut c = code;
                let mut weight = 1.0;
                let mut p_n = 1.0;
                let mut laws = Vec::with_capacity(n);
                for _ in 0..n {
                    let idx = c % k;
                    c /= k;
                    weight *= weights[idx];
                    p_n *= states[idx].mean();
                    laws.push(&states[idx]);
                }
                if weight == 0.0 {
                    continue;
                }
                let factor = weight * p_n.powf(-s);
                for (a, m) in acc.iter_mut().zip(raw_moments(&population_distribution(&laws), r_max)) {
                    *a += factor * m;
                }
            }
            acc
        })
        .collect()
}

/// `E |W_N - W_n|^2` along a fixed path by enumerating the joint law of
/// `(Z_n, Z_N)`.
pub fn quenched_increment_second_moment(path: &[OffspringLaw], n: usize, big_n: usize) -> f64 {
    let p = |k: usize| path[..k].iter().map(OffspringLaw::mean).product::<f64>();
    let (pn, pbig) = (p(n), p(big_n));
    let head: Vec<&OffspringLaw> = path[..n].iter().collect();
    let tail: Vec<&OffspringLaw> = path[n..big_n].iter().collect();
    let mut total = 0.0;
    for (z, &pz) in population_distribution(&head).iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let mut dist = vec![0.0; z + 1];
        dist[z] = 1.0;
        let mut conditional = dist;
        for law in &tail {
            let width = (conditional.len() - 1) * (law.probs().len() - 1) + 1;
            let mut next = vec![0.0; width];
            for (y, &py) in conditional.iter().enumerate() {
                if py == 0.0 {
                    continue;
                }
                for (x, px) in sum_distribution(law, y).into_iter().enumerate() {
                    next[x] += py * px;
                }
            }
            conditional = next;
        }
        let wn = z as f64 / pn;
        for (y, &py) in conditional.iter().enumerate() {
            let d = y as f64 / pbig - wn;
            total += pz * py * d * d;
        }
    }
    total
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
