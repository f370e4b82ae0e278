//! Words of the free product `V = V1 * V2`.
//!
//! A vertex of the free product is a finite word over the non-root states of
//! the two factors in which consecutive letters come from different factors.
//! The empty word is the common root `o`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of one of the two free factors.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum Factor {
    One,
    Two,
}

impl Factor {
    pub fn other(self) -> Factor {
        match self {
            Factor::One => Factor::Two,
            Factor::Two => Factor::One,
        }
    }

    /// 0-based index, for table lookups.
    pub fn idx(self) -> usize {
        match self {
            Factor::One => 0,
            Factor::Two => 1,
        }
    }

    /// 1-based number, as used in configs and the compact word syntax.
    pub fn number(self) -> u8 {
        match self {
            Factor::One => 1,
            Factor::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Factor> {
        match n {
            1 => Some(Factor::One),
            2 => Some(Factor::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Interned state id within one factor. Id 0 is always the factor root.
pub type StateId = u32;

/// The id reserved for the factor root `o_i`.
pub const ROOT_STATE: StateId = 0;

/// One letter of a word: a non-root state of one factor.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Letter {
    pub factor: Factor,
    pub state: StateId,
}

impl Letter {
    /// A letter is never the factor root; roots are identified with the
    /// empty word.
    pub fn new(factor: Factor, state: StateId) -> Result<Letter, WordError> {
        if state == ROOT_STATE {
            return Err(WordError::RootLetter);
        }
        Ok(Letter { factor, state })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("a letter must be a non-root factor state")]
    RootLetter,
    #[error("consecutive letters must come from different factors")]
    Alternation,
    #[error("the empty word has no parent")]
    ParentOfRoot,
    #[error("cannot attach a word starting in factor {0} after a letter of factor {0}")]
    BadConcat(Factor),
}

/// A vertex of the free product: an alternating sequence of letters.
///
/// The empty sequence is the root `o`. Constructors maintain alternation, so
/// every `Word` value is a valid vertex.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Word {
    letters: Vec<Letter>,
}

impl Word {
    /// The empty word `o`.
    pub fn root() -> Word {
        Word::default()
    }

    pub fn from_letters<I: IntoIterator<Item = Letter>>(letters: I) -> Result<Word, WordError> {
        let mut w = Word::root();
        for l in letters {
            w.push(l)?;
        }
        Ok(w)
    }

    pub fn single(letter: Letter) -> Word {
        Word { letters: vec![letter] }
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    /// Word length `‖·‖` (number of letters).
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.letters.is_empty()
    }

    /// The type `t(·)`: factor of the last letter, `None` for the empty word.
    pub fn word_type(&self) -> Option<Factor> {
        self.letters.last().map(|l| l.factor)
    }

    pub fn last(&self) -> Option<Letter> {
        self.letters.last().copied()
    }

    pub fn first(&self) -> Option<Letter> {
        self.letters.first().copied()
    }

    fn push(&mut self, letter: Letter) -> Result<(), WordError> {
        if letter.state == ROOT_STATE {
            return Err(WordError::RootLetter);
        }
        if self.word_type() == Some(letter.factor) {
            return Err(WordError::Alternation);
        }
        self.letters.push(letter);
        Ok(())
    }

    /// `w · g`; fails when `g` has the same factor as the last letter.
    pub fn append(&self, letter: Letter) -> Result<Word, WordError> {
        let mut w = self.clone();
        w.push(letter)?;
        Ok(w)
    }

    /// Drop the last letter; fails on the empty word.
    pub fn parent(&self) -> Result<Word, WordError> {
        if self.is_root() {
            return Err(WordError::ParentOfRoot);
        }
        let mut w = self.clone();
        w.letters.pop();
        Ok(w)
    }

    /// Replace the last letter's state within its factor; the factor root
    /// yields the parent word.
    pub fn replace_last(&self, state: StateId) -> Result<Word, WordError> {
        let last = self.last().ok_or(WordError::ParentOfRoot)?;
        let mut w = self.clone();
        if state == ROOT_STATE {
            w.letters.pop();
        } else if let Some(l) = w.letters.last_mut() {
            l.state = state;
            debug_assert_eq!(l.factor, last.factor);
        }
        Ok(w)
    }

    /// Letter-prefix test; every word is a prefix of itself and `o` is a
    /// prefix of everything.
    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.letters.len() >= self.letters.len()
            && other.letters[..self.letters.len()] == self.letters[..]
    }

    /// `x ∧ y`, the common prefix of maximal length.
    pub fn common_prefix(&self, other: &Word) -> Word {
        let n = self
            .letters
            .iter()
            .zip(&other.letters)
            .take_while(|(a, b)| a == b)
            .count();
        Word { letters: self.letters[..n].to_vec() }
    }

    /// Concatenation `u · v`, defined when `v` does not start in the factor
    /// `u` ends in.
    pub fn concat(&self, suffix: &Word) -> Result<Word, WordError> {
        if let (Some(t), Some(f)) = (self.word_type(), suffix.first()) {
            if t == f.factor {
                return Err(WordError::BadConcat(t));
            }
        }
        let mut w = self.clone();
        w.letters.extend_from_slice(&suffix.letters);
        Ok(w)
    }

    /// Remove `prefix` from the front, if it is one.
    pub fn strip_prefix(&self, prefix: &Word) -> Option<Word> {
        if prefix.is_prefix_of(self) {
            Some(Word { letters: self.letters[prefix.len()..].to_vec() })
        } else {
            None
        }
    }

    pub fn prefix(&self, k: usize) -> Word {
        Word { letters: self.letters[..k.min(self.letters.len())].to_vec() }
    }
}

/// `true` iff `y` lies in the cone `C(x)`, i.e. `x` is a letter-prefix of `y`.
pub fn cone_contains(x: &Word, y: &Word) -> bool {
    x.is_prefix_of(y)
}
