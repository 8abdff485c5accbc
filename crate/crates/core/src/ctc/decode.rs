use std::cmp::Ordering;
use std::collections::HashMap;

use ndarray::Array2;

use super::{log_add, Alphabet, CharNGramLm};
use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Per-frame argmax (lowest index on ties), repeats collapsed, blanks removed.
pub fn greedy_indices(log_probs: &Array2<f64>, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.rows() {
        let best = row
            .iter()
            .enumerate()
            .fold((0, NEG_INF), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

pub fn greedy_decode(log_probs: &Array2<f64>, alphabet: &Alphabet) -> String {
    alphabet.decode(&greedy_indices(log_probs, alphabet.blank()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamOptions {
    pub beam_width: usize,
    /// Weight on the LM log-probability.
    pub lm_weight: f64,
    /// Bonus per emitted symbol.
    pub insertion_bonus: f64,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self {
            beam_width: 16,
            lm_weight: 0.0,
            insertion_bonus: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<usize>,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// Accumulated LM log-probability of `prefix` (unweighted).
    pub lm_log_prob: f64,
    pub score: f64,
}

impl BeamHypothesis {
    pub fn log_p_ctc(&self) -> f64 {
        log_add(self.log_p_blank, self.log_p_nonblank)
    }
}

#[derive(Clone, Copy)]
struct Entry {
    pb: f64,
    pnb: f64,
    lm: f64,
}

/// Higher score first, then lexicographically smaller prefix.
fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.prefix.cmp(&b.prefix))
}

/// CTC prefix beam search with optional character-LM shallow fusion:
/// `score = ln p_ctc + lm_weight * ln p_lm + insertion_bonus * |prefix|`.
/// Returns the final beam, best first.
pub fn beam_search(
    log_probs: &Array2<f64>,
    blank: usize,
    opts: &BeamOptions,
    lm: Option<&CharNGramLm>,
) -> Result<Vec<BeamHypothesis>> {
    if opts.beam_width == 0 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    if opts.lm_weight < 0.0 || opts.insertion_bonus < 0.0 {
        return Err(Error::InvalidConfig("LM weight and insertion bonus must be non-negative".into()));
    }
    let m = log_probs.ncols();
    let use_lm = lm.is_some() && opts.lm_weight != 0.0;
    let mut beam = vec![BeamHypothesis {
        prefix: Vec::new(),
        log_p_blank: 0.0,
        log_p_nonblank: NEG_INF,
        lm_log_prob: 0.0,
        score: 0.0,
    }];
    for row in log_probs.rows() {
        let mut next: HashMap<Vec<usize>, Entry> = HashMap::new();
        for hyp in &beam {
            let total = hyp.log_p_ctc();
            let last = hyp.prefix.last().copied();
            let e = next.entry(hyp.prefix.clone()).or_insert(Entry {
                pb: NEG_INF,
                pnb: NEG_INF,
                lm: hyp.lm_log_prob,
            });
            e.pb = log_add(e.pb, total + row[blank]);
            if let Some(c) = last {
                e.pnb = log_add(e.pnb, hyp.log_p_nonblank + row[c]);
            }
            for c in (0..m).filter(|&c| c != blank) {
                let lp = row[c];
                if lp == NEG_INF {
                    continue;
                }
                let mass = if Some(c) == last { hyp.log_p_blank + lp } else { total + lp };
                if mass == NEG_INF {
                    continue;
                }
                let mut prefix = hyp.prefix.clone();
                prefix.push(c);
                let e = match next.get_mut(&prefix) {
                    Some(e) => e,
                    None => {
                        let lm_lp = match lm {
                            Some(lm) if use_lm => hyp.lm_log_prob + lm.log_prob_next(&hyp.prefix, c),
                            _ => 0.0,
                        };
                        next.entry(prefix).or_insert(Entry {
                            pb: NEG_INF,
                            pnb: NEG_INF,
                            lm: lm_lp,
                        })
                    }
                };
                e.pnb = log_add(e.pnb, mass);
            }
        }
        let mut hyps: Vec<BeamHypothesis> = next
            .into_iter()
            .map(|(prefix, e)| {
                let ctc = log_add(e.pb, e.pnb);
                let score = ctc + opts.lm_weight * e.lm + opts.insertion_bonus * prefix.len() as f64;
                BeamHypothesis {
                    prefix,
                    log_p_blank: e.pb,
                    log_p_nonblank: e.pnb,
                    lm_log_prob: e.lm,
                    score,
                }
            })
            .collect();
        hyps.sort_by(rank);
        hyps.truncate(opts.beam_width);
        beam = hyps;
    }
    Ok(beam)
}

pub fn beam_decode(
    log_probs: &Array2<f64>,
    alphabet: &Alphabet,
    opts: &BeamOptions,
    lm: Option<&CharNGramLm>,
) -> Result<String> {
    let beam = beam_search(log_probs, alphabet.blank(), opts, lm)?;
    Ok(beam
        .first()
        .map(|h| alphabet.decode(&h.prefix))
        .unwrap_or_default())
}
