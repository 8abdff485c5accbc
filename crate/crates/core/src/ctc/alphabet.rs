use crate::error::{Error, Result};

/// Output symbol inventory. The English alphabet has 30 entries: `a`-`z`,
/// space, apostrophe, `<UNK>`, and the CTC blank (last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    blank: usize,
    unk: Option<usize>,
}

pub const UNK: &str = "<UNK>";
pub const BLANK: &str = "<blank>";

impl Default for Alphabet {
    fn default() -> Self {
        Self::english()
    }
}

impl Alphabet {
    pub fn english() -> Self {
        let mut symbols: Vec<String> = ('a'..='z').map(String::from).collect();
        symbols.push(" ".into());
        symbols.push("'".into());
        symbols.push(UNK.into());
        symbols.push(BLANK.into());
        Self::new(symbols).expect("static alphabet is valid")
    }

    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let blanks: Vec<usize> = symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_str() == BLANK)
            .map(|(i, _)| i)
            .collect();
        if blanks.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "alphabet must contain exactly one blank, found {}",
                blanks.len()
            )));
        }
        let unk = symbols.iter().position(|s| s == UNK);
        Ok(Self {
            symbols,
            blank: blanks[0],
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn unk(&self) -> Option<usize> {
        self.unk
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Indices of every symbol except the blank.
    pub fn label_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.blank)
    }

    pub fn index_of_char(&self, c: char) -> Option<usize> {
        let mut buf = [0u8; 4];
        let s = c.encode_utf8(&mut buf);
        self.symbols.iter().position(|sym| sym == s).filter(|&i| i != self.blank)
    }

    /// Lowercases and maps each character; anything outside the alphabet
    /// becomes `<UNK>`. Never emits the blank.
    pub fn encode_lossy(&self, text: &str) -> Vec<usize> {
        text.chars()
            .flat_map(char::to_lowercase)
            .filter_map(|c| self.index_of_char(c).or(self.unk))
            .collect()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let labels = self.encode_lossy(text);
        if labels.is_empty() {
            return Err(Error::EmptyLabel);
        }
        Ok(labels)
    }

    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .filter(|&&i| i != self.blank)
            .map(|&i| self.symbols[i].as_str())
            .collect()
    }
}
