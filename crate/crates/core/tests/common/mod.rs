//! Shared test oracles, independent of the library's implementation paths.

#![allow(dead_code)]

use slu_core::rnnt::Lattice;

/// Brute-force transducer likelihood by explicit enumeration of every
/// monotonic alignment path. Works in probability space; only viable for
/// tiny (T, U).
///
/// Returns (nll, d nll / d log_probs) in the lattice's layout.
pub fn enumerate_rnnt_loss(lattice: &Lattice, targets: &[u32], blank: u32) -> (f64, Vec<f64>) {
    let mut total = 0.0f64;
    let mut step_mass = vec![0.0f64; lattice.log_probs.len()];
    let mut steps: Vec<usize> = Vec::new();

    fn recurse(
        lat: &Lattice,
        targets: &[u32],
        blank: usize,
        t: usize,
        u: usize,
        logp: f64,
        steps: &mut Vec<usize>,
        total: &mut f64,
        step_mass: &mut [f64],
    ) {
        if t == lat.t_len - 1 && u == targets.len() {
            let p = (logp + lat.lp(t, u, blank)).exp();
            *total += p;
            for &s in steps.iter() {
                step_mass[s] += p;
            }
            step_mass[lat.idx(t, u, blank)] += p;
            return;
        }
        if t + 1 < lat.t_len {
            steps.push(lat.idx(t, u, blank));
            recurse(
                lat,
                targets,
                blank,
                t + 1,
                u,
                logp + lat.lp(t, u, blank),
                steps,
                total,
                step_mass,
            );
            steps.pop();
        }
        if u < targets.len() {
            let y = targets[u] as usize;
            steps.push(lat.idx(t, u, y));
            recurse(
                lat,
                targets,
                blank,
                t,
                u + 1,
                logp + lat.lp(t, u, y),
                steps,
                total,
                step_mass,
            );
            steps.pop();
        }
    }

    recurse(
        lattice,
        targets,
        blank as usize,
        0,
        0,
        0.0,
        &mut steps,
        &mut total,
        &mut step_mass,
    );

    let nll = -total.ln();
    let grad: Vec<f64> = step_mass.iter().map(|&m| -m / total).collect();
    (nll, grad)
}

/// Naive reimplementation of the attention time-position estimate:
/// mean over spoken positions of the earliest-argmax over frames.
pub fn naive_attention_align(
    alpha: &[Vec<f64>], // alpha[t][n]
    spoken_positions: &[Vec<usize>],
) -> Vec<f64> {
    let t_len = alpha.len();
    spoken_positions
        .iter()
        .map(|positions| {
            let mut sum = 0.0f64;
            for &n in positions {
                let mut best_t = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (t, row) in alpha.iter().enumerate().take(t_len) {
                    if row[n] > best_v {
                        best_v = row[n];
                        best_t = t;
                    }
                }
                sum += best_t as f64;
            }
            sum / positions.len() as f64
        })
        .collect()
}

/// Brute-force Levenshtein distance by full recursion (exponential; tiny
/// sequences only).
pub fn naive_edit_distance(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = naive_edit_distance(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let del = naive_edit_distance(&a[1..], b) + 1;
    let ins = naive_edit_distance(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}
