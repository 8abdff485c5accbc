use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::alphabet::UNK;
use super::Alphabet;
use crate::error::{Error, Result};

/// Add-k smoothed character n-gram model over the alphabet's non-blank
/// symbols plus an end-of-text outcome.
///
/// Every context seen in training stores a full distribution. Unseen
/// contexts back off by dropping their oldest symbol; the empty context is
/// always present.
#[derive(Debug, Clone, PartialEq)]
pub struct CharNGramLm {
    order: usize,
    add_k: f64,
    alphabet: Alphabet,
    /// Outcome order: alphabet non-blank indices ascending, then end-of-text.
    outcomes: Vec<usize>,
    table: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl CharNGramLm {
    fn bos(&self) -> usize {
        self.alphabet.len()
    }

    fn eos(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Size of the predicted vocabulary (non-blank symbols + end-of-text).
    pub fn vocab_size(&self) -> usize {
        self.outcomes.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    pub fn train<I, S>(transcripts: I, order: usize, add_k: f64, alphabet: Alphabet) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if order == 0 {
            return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
        }
        if !(add_k > 0.0 && add_k.is_finite()) {
            return Err(Error::InvalidConfig("add_k must be positive".into()));
        }
        let m = alphabet.len();
        let (bos, eos) = (m, m + 1);
        let outcomes: Vec<usize> = alphabet.label_indices().chain([eos]).collect();
        let slot = |sym: usize| -> usize {
            if sym == eos {
                outcomes.len() - 1
            } else {
                outcomes.iter().position(|&o| o == sym).expect("non-blank symbol")
            }
        };
        let mut counts: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
        let mut any = false;
        for text in transcripts {
            let labels = alphabet.encode_lossy(text.as_ref());
            if labels.is_empty() {
                continue;
            }
            any = true;
            let mut seq = vec![bos; order - 1];
            seq.extend(labels);
            seq.push(eos);
            for j in order - 1..seq.len() {
                let target = slot(seq[j]);
                for ctx_len in 0..order {
                    let ctx = seq[j - ctx_len..j].to_vec();
                    counts.entry(ctx).or_insert_with(|| vec![0; outcomes.len()])[target] += 1;
                }
            }
        }
        if !any {
            return Err(Error::EmptyDataset("no non-empty transcripts to train the LM".into()));
        }
        let v = outcomes.len() as f64;
        let table = counts
            .into_iter()
            .map(|(ctx, c)| {
                let total: u64 = c.iter().sum();
                let denom = total as f64 + v * add_k;
                (ctx, c.iter().map(|&n| ((n as f64 + add_k) / denom).ln()).collect())
            })
            .collect();
        Ok(Self {
            order,
            add_k,
            alphabet,
            outcomes,
            table,
        })
    }

    fn distribution(&self, history: &[usize]) -> &[f64] {
        let mut ctx: Vec<usize> = vec![self.bos(); self.order - 1];
        ctx.extend_from_slice(history);
        let mut ctx = &ctx[ctx.len() - (self.order - 1)..];
        loop {
            if let Some(d) = self.table.get(ctx) {
                return d;
            }
            ctx = &ctx[1..];
        }
    }

    fn outcome_slot(&self, sym: usize) -> Option<usize> {
        if sym == self.eos() {
            return Some(self.outcomes.len() - 1);
        }
        self.outcomes.iter().position(|&o| o == sym)
    }

    /// `ln p(next | history)` over alphabet indices. Panics on the blank.
    pub fn log_prob_next(&self, history: &[usize], next: usize) -> f64 {
        let slot = self.outcome_slot(next).expect("blank has no LM probability");
        self.distribution(history)[slot]
    }

    pub fn log_prob_end(&self, history: &[usize]) -> f64 {
        self.distribution(history)[self.outcomes.len() - 1]
    }

    /// Probabilities of every outcome after `history` (sums to one).
    pub fn next_distribution(&self, history: &[usize]) -> Vec<f64> {
        self.distribution(history).iter().map(|l| l.exp()).collect()
    }

    /// Sum of conditional log-probabilities of the characters of `text`.
    /// Out-of-alphabet characters are scored as `<UNK>`.
    pub fn score(&self, text: &str) -> f64 {
        let labels = self.alphabet.encode_lossy(text);
        (0..labels.len())
            .map(|i| self.log_prob_next(&labels[..i], labels[i]))
            .sum()
    }

    fn token(&self, sym: usize) -> Result<char> {
        if sym == self.bos() {
            return Ok('^');
        }
        if sym == self.eos() {
            return Ok('$');
        }
        match self.alphabet.symbol(sym) {
            " " => Ok('_'),
            UNK => Ok('?'),
            s if s.chars().count() == 1 => Ok(s.chars().next().expect("one char")),
            s => Err(Error::InvalidConfig(format!("symbol {s:?} has no LM file token"))),
        }
    }

    fn symbol_of(&self, tok: char) -> Result<usize> {
        match tok {
            '^' => Some(self.bos()),
            '$' => Some(self.eos()),
            '_' => self.alphabet.index_of_char(' '),
            '?' => self.alphabet.unk(),
            c => self.alphabet.index_of_char(c),
        }
        .ok_or_else(|| Error::Parse(format!("unknown LM token {tok:?}")))
    }

    /// Plain text: a `#` header, then sorted `context<TAB>char<TAB>log-prob`
    /// lines. Tokens: `_` space, `?` unknown, `^` start, `$` end.
    pub fn to_text(&self) -> Result<String> {
        let mut lines = Vec::new();
        for (ctx, dist) in &self.table {
            let ctx: String = ctx.iter().map(|&s| self.token(s)).collect::<Result<_>>()?;
            for (slot, lp) in dist.iter().enumerate() {
                let sym = self.outcomes[slot];
                lines.push(format!("{ctx}\t{}\t{lp}", self.token(sym)?));
            }
        }
        lines.sort();
        let mut out = String::new();
        writeln!(out, "# char-ngram order={} add_k={}", self.order, self.add_k).unwrap();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str, alphabet: Alphabet) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty LM file".into()))?;
        let mut order = None;
        let mut add_k = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("order=") {
                order = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("add_k=") {
                add_k = v.parse::<f64>().ok();
            }
        }
        let (Some(order), Some(add_k)) = (order, add_k) else {
            return Err(Error::Parse("LM header missing order/add_k".into()));
        };
        if order == 0 {
            return Err(Error::Parse("LM order must be at least 1".into()));
        }
        let outcomes: Vec<usize> = alphabet.label_indices().chain([alphabet.len() + 1]).collect();
        let mut lm = Self {
            order,
            add_k,
            alphabet,
            outcomes,
            table: BTreeMap::new(),
        };
        let width = lm.outcomes.len();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let [ctx, sym, lp] = parts[..] else {
                return Err(Error::Parse(format!("LM line {}: expected 3 fields", n + 2)));
            };
            let ctx: Vec<usize> = ctx.chars().map(|c| lm.symbol_of(c)).collect::<Result<_>>()?;
            let mut sym_chars = sym.chars();
            let (Some(tok), None) = (sym_chars.next(), sym_chars.next()) else {
                return Err(Error::Parse(format!("LM line {}: bad symbol {sym:?}", n + 2)));
            };
            let slot = lm
                .outcome_slot(lm.symbol_of(tok)?)
                .ok_or_else(|| Error::Parse(format!("LM line {}: symbol cannot be predicted", n + 2)))?;
            let lp: f64 = lp
                .parse()
                .map_err(|_| Error::Parse(format!("LM line {}: bad log-prob {lp:?}", n + 2)))?;
            lm.table.entry(ctx).or_insert_with(|| vec![f64::NAN; width])[slot] = lp;
        }
        if !lm.table.contains_key(&Vec::new()) {
            return Err(Error::Parse("LM file lacks the empty context".into()));
        }
        if lm.table.values().any(|d| d.iter().any(|v| v.is_nan())) {
            return Err(Error::Parse("LM file has an incomplete distribution".into()));
        }
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, alphabet: Alphabet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, alphabet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(corpus: &[&str], n: usize, k: f64) -> CharNGramLm {
        CharNGramLm::train(corpus.iter().copied(), n, k, Alphabet::english()).unwrap()
    }

    #[test]
    fn bigram_prefers_observed_transition() {
        let m = lm(&["ababab"], 2, 0.5);
        let a = Alphabet::english();
        let (ia, ib) = (a.index_of_char('a').unwrap(), a.index_of_char('b').unwrap());
        assert!(m.log_prob_next(&[ia], ib) > m.log_prob_next(&[ia], ia));
        // count oracle: after 'a' we saw 'b' three times out of three
        let expected = ((3.0_f64 + 0.5) / (3.0 + 30.0 * 0.5)).ln();
        assert!((m.log_prob_next(&[ia], ib) - expected).abs() < 1e-12);
    }

    #[test]
    fn unseen_characters_keep_the_smoothing_floor() {
        let k = 0.25;
        let m = lm(&["hello there"], 3, k);
        let a = Alphabet::english();
        let h = a.encode("he").unwrap();
        let z = a.index_of_char('z').unwrap();
        // context "he" seen twice ("hello", "there")
        assert!(m.log_prob_next(&h, z).exp() >= k / (2.0 + 30.0 * k) - 1e-15);
        assert!(m.log_prob_next(&h, z) > f64::NEG_INFINITY);
    }

    #[test]
    fn every_distribution_sums_to_one() {
        let m = lm(&["the cat sat", "on the mat", "it's a hat!"], 3, 0.1);
        assert_eq!(m.vocab_size(), 30);
        let a = Alphabet::english();
        for hist in ["", "t", "th", "zq", "the", "xyz"] {
            let s: f64 = m.next_distribution(&a.encode_lossy(hist)).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{hist:?}: {s}");
        }
        for d in m.table.values() {
            assert!((d.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn score_definitions() {
        let m = lm(&["abc", "abd"], 2, 0.5);
        let a = Alphabet::english();
        assert_eq!(m.score(""), 0.0);
        let (ia, ib) = (a.index_of_char('a').unwrap(), a.index_of_char('b').unwrap());
        let expected = m.log_prob_next(&[], ia) + m.log_prob_next(&[ia], ib);
        assert!((m.score("ab") - expected).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 1..=6 {
            let s = m.score(&"abcabd"[..i]);
            assert!(s < prev);
            prev = s;
        }
        // non-alphabet characters score as <UNK>
        assert_eq!(m.score("a!"), m.score("a#"));
    }

    #[test]
    fn empty_corpus_and_bad_params() {
        let a = Alphabet::english();
        assert!(matches!(
            CharNGramLm::train(Vec::<String>::new(), 2, 0.5, a.clone()),
            Err(Error::EmptyDataset(_))
        ));
        assert!(CharNGramLm::train(["ab"], 0, 0.5, a.clone()).is_err());
        assert!(CharNGramLm::train(["ab"], 2, 0.0, a).is_err());
    }

    #[test]
    fn text_format_round_trips_and_is_sorted() {
        let m = lm(&["it's a test", "don't panic"], 3, 0.2);
        let text = m.to_text().unwrap();
        let body: Vec<&str> = text.lines().skip(1).collect();
        let mut sorted = body.clone();
        sorted.sort();
        assert_eq!(body, sorted);
        let back = CharNGramLm::from_text(&text, Alphabet::english()).unwrap();
        assert_eq!(back, m);
        assert!(CharNGramLm::from_text("# order=2 add_k=0.5\nab\tc\n", Alphabet::english()).is_err());
    }
}
