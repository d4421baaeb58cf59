use crate::error::{BbsError, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Boundary {
    Periodic,
    Open,
}

/// A 0/1 lattice, 64 sites per word, site `i` in bit `i % 64` of word `i / 64`.
/// Bits past `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct State {
    len: usize,
    words: Vec<u64>,
    boundary: Boundary,
}

pub(crate) fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl State {
    pub fn zeros(len: usize) -> Self {
        State { len, words: vec![0; word_count(len)], boundary: Boundary::Periodic }
    }

    pub fn from_cells(cells: &[u8]) -> Result<Self> {
        let mut s = State::zeros(cells.len());
        for (i, &c) in cells.iter().enumerate() {
            match c {
                0 => {}
                1 => s.words[i / 64] |= 1 << (i % 64),
                _ => return Err(BbsError::Contract(format!("cell {i} holds {c}"))),
            }
        }
        Ok(s)
    }

    pub(crate) fn from_words(len: usize, mut words: Vec<u64>, boundary: Boundary) -> Self {
        debug_assert_eq!(words.len(), word_count(len));
        if len % 64 != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        State { len, words, boundary }
    }

    /// Parses one line of `0`/`1` characters; surrounding whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let cells: Vec<u8> = t
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(BbsError::InvalidParameter(format!("unexpected character {other:?} in state"))),
            })
            .collect::<Result<_>>()?;
        if cells.is_empty() {
            return Err(BbsError::InvalidParameter("empty state".into()));
        }
        State::from_cells(&cells)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> u8 {
        ((self.words[i / 64] >> (i % 64)) & 1) as u8
    }

    pub fn set(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn cells(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn ball_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of balls in sites `start..end`.
    pub fn count_range(&self, start: usize, end: usize) -> usize {
        assert!(start <= end && end <= self.len);
        if start == end {
            return 0;
        }
        let (ws, we) = (start / 64, (end - 1) / 64);
        let lo_mask = !0u64 << (start % 64);
        let hi_mask = if end % 64 == 0 { !0u64 } else { (1u64 << (end % 64)) - 1 };
        if ws == we {
            return (self.words[ws] & lo_mask & hi_mask).count_ones() as usize;
        }
        let mut c = (self.words[ws] & lo_mask).count_ones() as usize;
        for w in &self.words[ws + 1..we] {
            c += w.count_ones() as usize;
        }
        c + (self.words[we] & hi_mask).count_ones() as usize
    }

    /// The flip `ω` applied to every site.
    pub fn complement(&self) -> State {
        let words = self.words.iter().map(|w| !w).collect();
        State::from_words(self.len, words, self.boundary)
    }

    /// Copies `len` sites starting at `start` (wrapping around the ring) into an open-boundary state.
    pub fn window(&self, start: usize, len: usize) -> State {
        let mut out = State::zeros(len).with_boundary(Boundary::Open);
        for k in 0..len {
            if self.get((start + k) % self.len) == 1 {
                out.set(k, true);
            }
        }
        out
    }

    /// Site-wise `self & !other`, counted.
    pub fn count_drops(&self, after: &State) -> usize {
        self.words
            .iter()
            .zip(&after.words)
            .map(|(a, b)| (a & !b).count_ones() as usize)
            .sum()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "State({self}, {:?})", self.boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip_and_complement() {
        let s = State::parse("0101").unwrap();
        assert_eq!(s.to_string(), "0101");
        assert_eq!(s.complement().to_string(), "1010");
        assert_eq!(s.complement().complement(), s);
        assert!(State::parse("01a").is_err());
    }

    #[test]
    fn complement_masks_tail_bits() {
        let s = State::zeros(70).complement();
        assert_eq!(s.ball_count(), 70);
    }

    #[test]
    fn count_range_matches_cells() {
        let text: String = (0..200).map(|i| if (i * 7 + i / 3) % 5 < 2 { '1' } else { '0' }).collect();
        let s = State::parse(&text).unwrap();
        let cells = s.cells();
        for (a, b) in [(0, 200), (3, 64), (63, 65), (64, 128), (10, 10), (100, 199)] {
            let want: usize = cells[a..b].iter().map(|&c| c as usize).sum();
            assert_eq!(s.count_range(a, b), want);
        }
    }
}
