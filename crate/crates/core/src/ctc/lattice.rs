use ndarray::Array2;

use super::{log_add, log_sum_exp};
use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Log-space forward/backward tables over the blank-extended label sequence
/// `l' = [blank, l1, blank, l2, ..., blank]`.
///
/// Both `alpha[t][s]` and `beta[t][s]` include the emission at frame `t`.
#[derive(Debug, Clone)]
pub struct CtcLattice {
    pub extended: Vec<usize>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub log_likelihood: f64,
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extend(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

pub fn ctc_lattice(log_probs: &Array2<f64>, labels: &[usize], blank: usize) -> Result<CtcLattice> {
    let (t_len, m) = log_probs.dim();
    if blank >= m {
        return Err(Error::ShapeMismatch(format!("blank {blank} outside {m} symbols")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == blank || l >= m) {
        return Err(Error::InvalidConfig(format!("label {bad} is blank or out of range")));
    }
    let required = min_frames(labels);
    if t_len == 0 || t_len < required {
        return Err(Error::InfeasibleAlignment {
            frames: t_len,
            required: required.max(1),
        });
    }
    let ext = extend(labels, blank);
    let s_len = ext.len();

    let mut alpha = Array2::from_elem((t_len, s_len), NEG_INF);
    alpha[[0, 0]] = log_probs[[0, blank]];
    if s_len > 1 {
        alpha[[0, 1]] = log_probs[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(&ext, s, blank) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = if acc == NEG_INF { NEG_INF } else { acc + log_probs[[t, ext[s]]] };
        }
    }

    let mut beta = Array2::from_elem((t_len, s_len), NEG_INF);
    let last = t_len - 1;
    beta[[last, s_len - 1]] = log_probs[[last, blank]];
    if s_len > 1 {
        beta[[last, s_len - 2]] = log_probs[[last, ext[s_len - 2]]];
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && can_skip(&ext, s + 2, blank) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            beta[[t, s]] = if acc == NEG_INF { NEG_INF } else { acc + log_probs[[t, ext[s]]] };
        }
    }

    let log_likelihood = if s_len > 1 {
        log_add(alpha[[last, s_len - 1]], alpha[[last, s_len - 2]])
    } else {
        alpha[[last, 0]]
    };
    Ok(CtcLattice {
        extended: ext,
        alpha,
        beta,
        log_likelihood,
    })
}

impl CtcLattice {
    /// `ln sum_s exp(alpha[t][s] + beta[t][s] - ln y_t(l'_s))`; equals the
    /// sequence log-likelihood at every `t`.
    pub fn total_at(&self, log_probs: &Array2<f64>, t: usize) -> f64 {
        log_sum_exp(
            self.extended
                .iter()
                .enumerate()
                .map(|(s, &k)| self.occupancy(log_probs, t, s, k)),
        )
    }

    fn occupancy(&self, log_probs: &Array2<f64>, t: usize, s: usize, k: usize) -> f64 {
        let (a, b) = (self.alpha[[t, s]], self.beta[[t, s]]);
        if a == NEG_INF || b == NEG_INF {
            NEG_INF
        } else {
            a + b - log_probs[[t, k]]
        }
    }

    /// Posterior symbol occupancy `gamma[t][k]`; each row sums to one.
    pub fn posteriors(&self, log_probs: &Array2<f64>) -> Array2<f64> {
        let (t_len, m) = log_probs.dim();
        let mut acc = Array2::from_elem((t_len, m), NEG_INF);
        for t in 0..t_len {
            for (s, &k) in self.extended.iter().enumerate() {
                acc[[t, k]] = log_add(acc[[t, k]], self.occupancy(log_probs, t, s, k));
            }
        }
        acc.mapv(|v| (v - self.log_likelihood).exp())
    }
}

/// Negative log-likelihood of `labels` and its gradient with respect to each
/// entry of `log_probs` (treated as free inputs): `-gamma[t][k]`.
pub fn ctc_loss(log_probs: &Array2<f64>, labels: &[usize], blank: usize) -> Result<(f64, Array2<f64>)> {
    let lattice = ctc_lattice(log_probs, labels, blank)?;
    if !lattice.log_likelihood.is_finite() {
        // feasible length but zero probability mass: report as numeric failure
        return Ok((f64::INFINITY, Array2::zeros(log_probs.raw_dim())));
    }
    let grad = -lattice.posteriors(log_probs);
    Ok((-lattice.log_likelihood, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, log_softmax_rows};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log_probs(t: usize, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        log_softmax_rows(&Array2::from_shape_simple_fn((t, m), || rng.random_range(-2.0..2.0)))
    }

    /// Sum over all `m^T` frame paths that collapse to `labels`.
    fn brute_force_nll(lp: &Array2<f64>, labels: &[usize], blank: usize) -> f64 {
        let (t_len, m) = lp.dim();
        let mut total = f64::NEG_INFINITY;
        let mut path = vec![0usize; t_len];
        loop {
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &p in &path {
                if Some(p) != prev && p != blank {
                    collapsed.push(p);
                }
                prev = Some(p);
            }
            if collapsed == labels {
                let score: f64 = path.iter().enumerate().map(|(t, &k)| lp[[t, k]]).sum();
                total = log_add(total, score);
            }
            let mut i = 0;
            loop {
                if i == t_len {
                    return -total;
                }
                path[i] += 1;
                if path[i] < m {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    fn all_labels(max_len: usize, symbols: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for p in &frontier {
                for &s in symbols {
                    let mut q: Vec<usize> = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn single_frame_single_label() {
        let lp = random_log_probs(1, 30, &mut ChaCha8Rng::seed_from_u64(0));
        let (loss, _) = ctc_loss(&lp, &[0], 29).unwrap();
        assert!((loss + lp[[0, 0]]).abs() < 1e-14);
    }

    #[test]
    fn matches_path_enumeration_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blank = 3;
        let mut checked = 0;
        for labels in all_labels(3, &[0, 1, 2]) {
            for t in min_frames(&labels).max(1)..=6 {
                let lp = random_log_probs(t, 4, &mut rng);
                let (loss, _) = ctc_loss(&lp, &labels, blank).unwrap();
                let oracle = brute_force_nll(&lp, &labels, blank);
                assert!((loss - oracle).abs() < 1e-8, "{labels:?} T={t}: {loss} vs {oracle}");
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (t, labels) in [(5, vec![0, 1]), (6, vec![2, 2, 1]), (4, vec![1]), (7, vec![0, 1, 0])] {
            let lp = random_log_probs(t, 4, &mut rng);
            let (_, grad) = ctc_loss(&lp, &labels, 3).unwrap();
            let r = grad_check(lp.as_slice().unwrap(), grad.as_slice().unwrap(), 1e-5, |p| {
                let x = Array2::from_shape_vec((t, 4), p.to_vec()).unwrap();
                ctc_loss(&x, &labels, 3).unwrap().0
            });
            assert!(r.max_rel_error < 1e-4, "{labels:?}: {r:?}");
        }
    }

    #[test]
    fn total_probability_is_constant_over_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = random_log_probs(40, 30, &mut rng);
        let labels = [7, 4, 11, 11, 14];
        let lat = ctc_lattice(&lp, &labels, 29).unwrap();
        for t in 0..40 {
            assert!((lat.total_at(&lp, t) - lat.log_likelihood).abs() < 1e-8);
        }
        assert!(lat.alpha.iter().chain(lat.beta.iter()).all(|&v| v <= 0.0));
    }

    #[test]
    fn softmax_pushback_gradient_sums_to_zero_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lp = random_log_probs(12, 6, &mut rng);
        let (_, g) = ctc_loss(&lp, &[1, 2, 1], 5).unwrap();
        // through log-softmax: dlogit = g - softmax * sum(g) = y_hat - gamma
        for (row, lrow) in g.rows().into_iter().zip(lp.rows()) {
            let s: f64 = row.sum();
            assert!((s + 1.0).abs() < 1e-10);
            let dlogit: f64 = row.iter().zip(lrow.iter()).map(|(gi, li)| gi - li.exp() * s).sum();
            assert!(dlogit.abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_is_an_error_not_infinity() {
        let lp = random_log_probs(2, 4, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(matches!(
            ctc_loss(&lp, &[1, 1], 3),
            Err(Error::InfeasibleAlignment { frames: 2, required: 3 })
        ));
        assert!(ctc_loss(&lp, &[1, 2], 3).is_ok());
        assert!(matches!(ctc_loss(&lp, &[3], 3), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let lp = random_log_probs(2000, 30, &mut ChaCha8Rng::seed_from_u64(6));
        let labels: Vec<usize> = (0..50).map(|i| i % 28).collect();
        let (loss, g) = ctc_loss(&lp, &labels, 29).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
