use crate::error::{BbsError, Result};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};

/// Soliton multiplicities `m_1..m_s` on a ring of length `L`; `m_s > 0` unless empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SolitonContent {
    length: u64,
    m: Vec<u64>,
}

impl SolitonContent {
    pub fn new(length: u64, mut m: Vec<u64>) -> Result<Self> {
        while m.last() == Some(&0) {
            m.pop();
        }
        if length == 0 {
            return Err(BbsError::InvalidParameter("lattice length must be positive".into()));
        }
        Ok(SolitonContent { length, m })
    }

    /// From `E_1, E_2, …` ending with a repeated (saturated) value.
    pub fn from_energies(length: u64, e: &[u64]) -> Result<Self> {
        let get = |k: usize| -> i128 {
            if k == 0 {
                0
            } else {
                e[(k - 1).min(e.len() - 1)] as i128
            }
        };
        if e.is_empty() {
            return SolitonContent::new(length, vec![]);
        }
        let mut m = Vec::new();
        for k in 1..=e.len() {
            let v = -get(k - 1) + 2 * get(k) - get(k + 1);
            if v < 0 {
                return Err(BbsError::Contract(format!("negative multiplicity {v} at amplitude {k}")));
            }
            m.push(v as u64);
        }
        SolitonContent::new(length, m)
    }

    pub fn length(&self) -> u64 {
        self.length
    }

    pub fn multiplicities(&self) -> &[u64] {
        &self.m
    }

    /// `m_k` for `k ≥ 1`, zero past the largest amplitude.
    pub fn m(&self, k: usize) -> u64 {
        if k == 0 || k > self.m.len() {
            0
        } else {
            self.m[k - 1]
        }
    }

    /// Largest amplitude `s`.
    pub fn max_amplitude(&self) -> usize {
        self.m.len()
    }

    /// Number of solitons `g`.
    pub fn soliton_count(&self) -> u64 {
        self.m.iter().sum()
    }

    pub fn ball_count(&self) -> u64 {
        self.m.iter().enumerate().map(|(i, &m)| (i as u64 + 1) * m).sum()
    }

    /// `E_l = Σ_k min(l,k) m_k`.
    pub fn energy(&self, l: u64) -> u64 {
        self.m.iter().enumerate().map(|(i, &m)| (i as u64 + 1).min(l) * m).sum()
    }

    /// Vacancy `p_j = L − 2 E_j` (may be negative for invalid contents).
    pub fn vacancy(&self, j: u64) -> i64 {
        self.length as i64 - 2 * self.energy(j) as i64
    }

    pub fn below_half_filling(&self) -> bool {
        2 * self.ball_count() < self.length
    }
}

fn binomial(n: u64, k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Number of states on the ring with the given soliton content.
pub fn count_isolevel(content: &SolitonContent) -> Result<BigUint> {
    let l = content.length();
    let m_total = content.ball_count();
    if 2 * m_total >= l {
        return Err(BbsError::Contract(format!("{m_total} balls on {l} sites is not below half filling")));
    }
    let mut prod = BigUint::one();
    for j in 1..=content.max_amplitude() {
        let mj = content.m(j);
        if mj == 0 {
            continue;
        }
        let p = content.vacancy(j as u64);
        if p <= 0 {
            return Err(BbsError::Contract(format!("vacancy p_{j} = {p} is not positive")));
        }
        prod *= binomial(p as u64 + mj - 1, mj);
    }
    let num = prod * BigUint::from(l);
    let den = BigUint::from(l - 2 * m_total);
    let (q, r) = num.div_rem(&den);
    if !r.is_zero() {
        return Err(BbsError::Contract("fermionic count is not an integer".into()));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_counts() {
        let c = SolitonContent::new(9, vec![1, 0, 1]).unwrap();
        assert_eq!(count_isolevel(&c).unwrap(), BigUint::from(45u32));
        let c = SolitonContent::new(19, vec![2, 2, 1]).unwrap();
        assert_eq!(count_isolevel(&c).unwrap(), BigUint::from(5130u32));
    }

    #[test]
    fn empty_content_has_one_state() {
        let c = SolitonContent::new(7, vec![]).unwrap();
        assert_eq!(count_isolevel(&c).unwrap(), BigUint::from(1u32));
    }

    #[test]
    fn half_filled_content_rejected() {
        let dense = SolitonContent::new(8, vec![0, 2]).unwrap();
        assert!(count_isolevel(&dense).is_err());
    }

    #[test]
    fn energies_and_vacancies() {
        let c = SolitonContent::new(19, vec![2, 2, 1]).unwrap();
        assert_eq!((1..=4).map(|l| c.energy(l)).collect::<Vec<_>>(), vec![5, 8, 9, 9]);
        assert_eq!((0..=3).map(|j| c.vacancy(j)).collect::<Vec<_>>(), vec![19, 9, 3, 1]);
        let from_e = SolitonContent::from_energies(19, &[5, 8, 9, 9]).unwrap();
        assert_eq!(from_e, c);
    }
}
