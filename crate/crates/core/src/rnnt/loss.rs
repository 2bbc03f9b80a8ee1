//! Exact transducer loss: log-space forward-backward over the T x (U+1)
//! alignment lattice, with the analytic gradient w.r.t. the lattice
//! log-probabilities.
//!
//! Node (t, u) means: u target symbols emitted, about to consume frame t.
//! From (t, u) the path either emits BLANK and advances to (t+1, u) or emits
//! target[u] and advances to (t, u+1); every path ends with BLANK at (T-1, U).

use crate::error::{Result, SluError};
use crate::nn::lse2;

/// Dynamic-programming lattice: per (t, u) a log-distribution over the vocab
/// (BLANK included), plus the forward/backward log-sums once computed.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub t_len: usize,
    pub u_len: usize,
    pub vocab: usize,
    /// Row-major [t][u][v].
    pub log_probs: Vec<f64>,
}

impl Lattice {
    pub fn new(t_len: usize, u_len: usize, vocab: usize, log_probs: Vec<f64>) -> Result<Self> {
        if log_probs.len() != t_len * u_len * vocab {
            return Err(SluError::validation(
                "log_probs",
                format!(
                    "expected {} entries, got {}",
                    t_len * u_len * vocab,
                    log_probs.len()
                ),
            ));
        }
        Ok(Lattice {
            t_len,
            u_len,
            vocab,
            log_probs,
        })
    }

    #[inline]
    pub fn lp(&self, t: usize, u: usize, v: usize) -> f64 {
        self.log_probs[(t * self.u_len + u) * self.vocab + v]
    }

    #[inline]
    pub fn idx(&self, t: usize, u: usize, v: usize) -> usize {
        (t * self.u_len + u) * self.vocab + v
    }

    /// Each (t, u) log-distribution must normalize to 1 within tolerance.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for t in 0..self.t_len {
            for u in 0..self.u_len {
                let row = &self.log_probs
                    [(t * self.u_len + u) * self.vocab..(t * self.u_len + u + 1) * self.vocab];
                let lse = crate::nn::log_sum_exp(row);
                if lse.abs() > tol {
                    return Err(SluError::Numerical(format!(
                        "lattice distribution at ({t},{u}) has logsumexp {lse}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RnntLossResult {
    /// Negative log-likelihood of the target given the lattice.
    pub nll: f64,
    /// d nll / d log_probs, same layout as the lattice.
    pub grad: Vec<f64>,
    /// Forward log-sums alpha[t][u].
    pub alpha: Vec<f64>,
    /// Backward log-sums beta[t][u].
    pub beta: Vec<f64>,
    /// Total log-likelihood from the forward pass.
    pub log_lik_alpha: f64,
    /// Total log-likelihood from the backward pass; agrees with alpha within
    /// numerical tolerance.
    pub log_lik_beta: f64,
}

/// Forward-backward loss and exact gradient.
pub fn rnnt_loss(lattice: &Lattice, targets: &[u32], blank: u32) -> Result<RnntLossResult> {
    let (t_len, u_len, vocab) = (lattice.t_len, lattice.u_len, lattice.vocab);
    if t_len == 0 {
        return Err(SluError::validation("frames", "T must be at least 1"));
    }
    if targets.len() + 1 != u_len {
        return Err(SluError::validation(
            "targets",
            format!(
                "target length {} does not match lattice U+1 = {}",
                targets.len(),
                u_len
            ),
        ));
    }
    if targets.iter().any(|&y| y == blank) {
        return Err(SluError::validation(
            "targets",
            "targets must not contain BLANK",
        ));
    }
    if targets.iter().any(|&y| y as usize >= vocab) {
        return Err(SluError::validation("targets", "target id outside vocab"));
    }
    let blank = blank as usize;
    let u_max = u_len - 1;
    let at = |t: usize, u: usize| t * u_len + u;

    let mut alpha = vec![f64::NEG_INFINITY; t_len * u_len];
    alpha[at(0, 0)] = 0.0;
    for t in 0..t_len {
        for u in 0..u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[at(t - 1, u)] + lattice.lp(t - 1, u, blank)
            } else {
                f64::NEG_INFINITY
            };
            let from_emit = if u > 0 {
                alpha[at(t, u - 1)] + lattice.lp(t, u - 1, targets[u - 1] as usize)
            } else {
                f64::NEG_INFINITY
            };
            alpha[at(t, u)] = lse2(from_blank, from_emit);
        }
    }
    let log_lik_alpha = alpha[at(t_len - 1, u_max)] + lattice.lp(t_len - 1, u_max, blank);

    let mut beta = vec![f64::NEG_INFINITY; t_len * u_len];
    beta[at(t_len - 1, u_max)] = lattice.lp(t_len - 1, u_max, blank);
    for t in (0..t_len).rev() {
        for u in (0..u_len).rev() {
            if t == t_len - 1 && u == u_max {
                continue;
            }
            let via_blank = if t + 1 < t_len {
                lattice.lp(t, u, blank) + beta[at(t + 1, u)]
            } else {
                f64::NEG_INFINITY
            };
            let via_emit = if u < u_max {
                lattice.lp(t, u, targets[u] as usize) + beta[at(t, u + 1)]
            } else {
                f64::NEG_INFINITY
            };
            beta[at(t, u)] = lse2(via_blank, via_emit);
        }
    }
    let log_lik_beta = beta[at(0, 0)];

    if !log_lik_alpha.is_finite() {
        return Err(SluError::Numerical(format!(
            "transducer log-likelihood is {log_lik_alpha}"
        )));
    }

    // Occupancy gradient: d nll / d lp(t,u,k) = -P(path uses step (t,u,k) | target).
    let mut grad = vec![0.0; lattice.log_probs.len()];
    for t in 0..t_len {
        for u in 0..u_len {
            let a = alpha[at(t, u)];
            if a == f64::NEG_INFINITY {
                continue;
            }
            // BLANK step to (t+1, u); at the top-right corner it exits the lattice.
            let beta_next = if t + 1 < t_len {
                beta[at(t + 1, u)]
            } else if u == u_max {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            if beta_next != f64::NEG_INFINITY {
                let occ = (a + lattice.lp(t, u, blank) + beta_next - log_lik_alpha).exp();
                grad[lattice.idx(t, u, blank)] = -occ;
            }
            // Emission step to (t, u+1).
            if u < u_max {
                let y = targets[u] as usize;
                let occ = (a + lattice.lp(t, u, y) + beta[at(t, u + 1)] - log_lik_alpha).exp();
                grad[lattice.idx(t, u, y)] = -occ;
            }
        }
    }

    Ok(RnntLossResult {
        nll: -log_lik_alpha,
        grad,
        alpha,
        beta,
        log_lik_alpha,
        log_lik_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    pub fn random_lattice(t_len: usize, u_len: usize, vocab: usize, seed: u64) -> Lattice {
        let mut rng = stream(seed, &[40]);
        let mut log_probs = Vec::with_capacity(t_len * u_len * vocab);
        for _ in 0..t_len * u_len {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = crate::nn::log_sum_exp(&logits);
            log_probs.extend(logits.iter().map(|l| l - lse));
        }
        Lattice::new(t_len, u_len, vocab, log_probs).unwrap()
    }

    #[test]
    fn single_frame_empty_target_is_one_blank() {
        let lat = random_lattice(1, 1, 4, 3);
        let res = rnnt_loss(&lat, &[], 0).unwrap();
        assert!((res.nll - (-lat.lp(0, 0, 0))).abs() < 1e-12);
        assert!((res.log_lik_alpha - res.log_lik_beta).abs() < 1e-9);
        // Only the final blank carries gradient.
        assert!((res.grad[lat.idx(0, 0, 0)] + 1.0).abs() < 1e-12);
        assert!(res.grad.iter().skip(1).all(|&g| g == 0.0));
    }

    #[test]
    fn two_frames_one_symbol_uniform_closed_form() {
        // Uniform distributions: every path of T+U = 3 steps has probability
        // (1/(V+1))^3 and there are exactly 2 monotonic paths.
        let vocab = 5usize; // 4 symbols + blank
        let uniform = -((vocab as f64).ln());
        let log_probs = vec![uniform; 2 * 2 * vocab];
        let lat = Lattice::new(2, 2, vocab, log_probs).unwrap();
        let res = rnnt_loss(&lat, &[2], 0).unwrap();
        let expected = -((2.0f64).ln() + 3.0 * (1.0 / vocab as f64).ln());
        assert!((res.nll - expected).abs() < 1e-12, "nll {}", res.nll);
    }

    #[test]
    fn alpha_and_beta_totals_agree_on_random_lattices() {
        for seed in 0..30 {
            let t_len = 1 + (seed as usize % 4);
            let u = seed as usize % 3;
            let lat = random_lattice(t_len, u + 1, 6, seed);
            let targets: Vec<u32> = (0..u).map(|i| 1 + (i as u32 % 5)).collect();
            let res = rnnt_loss(&lat, &targets, 0).unwrap();
            assert!(
                (res.log_lik_alpha - res.log_lik_beta).abs() < 1e-6,
                "alpha {} beta {}",
                res.log_lik_alpha,
                res.log_lik_beta
            );
        }
    }

    #[test]
    fn rejects_blank_in_targets_and_empty_input() {
        let lat = random_lattice(2, 2, 4, 1);
        assert!(rnnt_loss(&lat, &[0], 0).is_err());
        let empty = Lattice::new(0, 1, 4, vec![]).unwrap();
        assert!(rnnt_loss(&empty, &[], 0).is_err());
        // U mismatch
        assert!(rnnt_loss(&lat, &[1, 2], 0).is_err());
    }

    #[test]
    fn normalization_check_flags_bad_lattice() {
        let mut lat = random_lattice(2, 2, 4, 9);
        assert!(lat.check_normalized(1e-6).is_ok());
        lat.log_probs[0] += 0.5;
        assert!(lat.check_normalized(1e-6).is_err());
    }
}
