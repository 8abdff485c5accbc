//! Edit distance, WER, CER, and word accuracy.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl EditStats {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn error_rate(&self) -> f64 {
        self.distance() as f64 / self.reference_len as f64
    }

    pub fn merge(&mut self, other: &EditStats) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.reference_len += other.reference_len;
    }
}

/// Unit-cost edit distance between token sequences with one optimal
/// alignment's breakdown. Backtrace prefers substitution/match, then
/// deletion, then insertion.
pub fn levenshtein<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<EditStats> {
    if reference.is_empty() {
        return Err(Error::UndefinedErrorRate);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut stats = EditStats {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let differs = reference[i - 1] != hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(differs) {
                stats.substitutions += usize::from(differs);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    Ok(stats)
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn word_edit_stats(reference: &str, hypothesis: &str) -> Result<EditStats> {
    levenshtein(&words(reference), &words(hypothesis))
}

/// Character edit stats over the casefolded, whitespace-normalized text.
pub fn char_edit_stats(reference: &str, hypothesis: &str) -> Result<EditStats> {
    let norm = |t: &str| -> Vec<char> { words(t).join(" ").chars().collect() };
    levenshtein(&norm(reference), &norm(hypothesis))
}

/// `(S + I + D) / reference words`; may exceed 1.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(word_edit_stats(reference, hypothesis)?.error_rate())
}

pub fn word_accuracy(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(1.0 - wer(reference, hypothesis)?)
}

pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(char_edit_stats(reference, hypothesis)?.error_rate())
}

/// Corpus-level rates: total edits over total reference length.
pub fn corpus_rates<'a, I>(pairs: I) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut w = EditStats::default();
    let mut c = EditStats::default();
    for (r, h) in pairs {
        w.merge(&word_edit_stats(r, h)?);
        c.merge(&char_edit_stats(r, h)?);
    }
    if w.reference_len == 0 {
        return Err(Error::UndefinedErrorRate);
    }
    Ok((w.error_rate(), c.error_rate()))
}
