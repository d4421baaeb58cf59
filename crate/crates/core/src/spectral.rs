//! Finite-size soliton speeds from the period matrix of a soliton content, and the
//! resulting ball currents.

use crate::dynamics::{Level, SolitonContent};
use crate::error::{BbsError, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Block description of the period matrix: one block per amplitude with `m_i > 0`.
/// Entry `((i,α),(j,β))` is `δ_ij δ_αβ p_i + 2 min(i,j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMatrix {
    content: SolitonContent,
    /// `(amplitude, multiplicity)` for every occupied amplitude, increasing.
    blocks: Vec<(u64, u64)>,
}

impl PeriodMatrix {
    pub fn content(&self) -> &SolitonContent {
        &self.content
    }

    pub fn blocks(&self) -> &[(u64, u64)] {
        &self.blocks
    }

    pub fn dimension(&self) -> usize {
        self.content.soliton_count() as usize
    }

    /// Amplitude of each row, rows of one block being consecutive.
    pub fn row_amplitudes(&self) -> Vec<u64> {
        self.blocks.iter().flat_map(|&(i, m)| std::iter::repeat_n(i, m as usize)).collect()
    }

    pub fn entry(&self, row: usize, col: usize) -> i64 {
        let amp = self.row_amplitudes();
        let (i, j) = (amp[row], amp[col]);
        let diag = if row == col { self.content.vacancy(i) } else { 0 };
        diag + 2 * i.min(j) as i64
    }

    /// Dense form, intended for small contents and tests.
    pub fn to_dense(&self) -> Vec<Vec<i64>> {
        let amp = self.row_amplitudes();
        let g = amp.len();
        (0..g)
            .map(|r| {
                (0..g)
                    .map(|c| {
                        let diag = if r == c { self.content.vacancy(amp[r]) } else { 0 };
                        diag + 2 * amp[r].min(amp[c]) as i64
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn build_period_matrix(content: &SolitonContent) -> Result<PeriodMatrix> {
    if !content.below_half_filling() {
        return Err(BbsError::Contract("period matrix needs fewer than L/2 balls".into()));
    }
    let blocks = (1..=content.max_amplitude())
        .filter(|&i| content.m(i) > 0)
        .map(|i| (i as u64, content.m(i)))
        .collect();
    Ok(PeriodMatrix { content: content.clone(), blocks })
}

/// Inverse of the period matrix in block form: entry `((i,α),(j,β))` is
/// `δ_ij δ_αβ / p_i + x_min(i,j)` with `x_k = −Σ_{j≤k} 2/(p_{j−1} p_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversePeriodMatrix {
    blocks: Vec<(u64, u64)>,
    /// `p_0..=p_s`
    p: Vec<BigRational>,
    /// `x_0 = 0, x_1..=x_s`
    x: Vec<BigRational>,
}

impl InversePeriodMatrix {
    pub fn vacancy(&self, j: u64) -> &BigRational {
        &self.p[(j as usize).min(self.p.len() - 1)]
    }

    /// `x_k` for `1 ≤ k ≤ s`.
    pub fn x(&self, k: u64) -> &BigRational {
        &self.x[k as usize]
    }

    pub fn block_entry(&self, i: u64, j: u64, same_row: bool) -> BigRational {
        let base = self.x(i.min(j)).clone();
        if same_row {
            base + self.vacancy(i).recip()
        } else {
            base
        }
    }

    pub fn to_dense_f64(&self) -> Vec<Vec<f64>> {
        let amp: Vec<u64> = self.blocks.iter().flat_map(|&(i, m)| std::iter::repeat_n(i, m as usize)).collect();
        let g = amp.len();
        (0..g)
            .map(|r| (0..g).map(|c| self.block_entry(amp[r], amp[c], r == c).to_f64().unwrap_or(f64::NAN)).collect())
            .collect()
    }

    /// Exact check of `B·X = I` using the block structure; returns the largest deviation.
    pub fn identity_defect(&self, b: &PeriodMatrix) -> BigRational {
        // Off-identity part of (BX) between blocks i and k:
        // p_i x_min(i,k) + 2 min(i,k)/p_k + 2 Σ_j m_j min(i,j) x_min(j,k); the identity part is exact.
        let mut worst = BigRational::zero();
        for &(i, _) in &self.blocks {
            for &(k, _) in &self.blocks {
                let mut v = self.vacancy(i) * self.x(i.min(k)) + rat(2 * i.min(k) as i64) / self.vacancy(k);
                for &(j, mj) in &b.blocks {
                    v += rat(2 * (mj * i.min(j)) as i64) * self.x(j.min(k));
                }
                let a = if v < BigRational::zero() { -v } else { v };
                if a > worst {
                    worst = a;
                }
            }
        }
        worst
    }
}

pub fn inverse_period_matrix(b: &PeriodMatrix) -> Result<InversePeriodMatrix> {
    let c = &b.content;
    let s = c.max_amplitude() as u64;
    let mut p = Vec::with_capacity(s as usize + 1);
    for j in 0..=s {
        let v = c.vacancy(j);
        if v <= 0 {
            return Err(BbsError::Singular(format!("vacancy p_{j} = {v}")));
        }
        p.push(rat(v));
    }
    let mut x = vec![BigRational::zero()];
    for k in 1..=s as usize {
        let prev = x[k - 1].clone();
        x.push(prev - rat(2) / (&p[k - 1] * &p[k]));
    }
    Ok(InversePeriodMatrix { blocks: b.blocks.clone(), p, x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpeedSource {
    FiniteSize,
    DensityLevel,
}

/// Effective speeds `v_1, v_2, …` at one level.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SpeedSolution {
    pub level: Level,
    pub source: SpeedSource,
    /// `speeds[i-1]` is the speed of an `i`-soliton.
    pub speeds: Vec<f64>,
    #[serde(skip)]
    pub exact: Option<Vec<BigRational>>,
}

impl SpeedSolution {
    pub fn speed(&self, i: usize) -> f64 {
        self.speeds[(i - 1).min(self.speeds.len() - 1)]
    }
}

fn kappa_rat(level: Level, i: u64) -> BigRational {
    rat(level.kappa(i) as i64)
}

/// Exact speed of an `i`-soliton in the content at `level`: `L (X κ̂)` restricted to block `i`.
fn finite_speed(c: &SolitonContent, x: &InversePeriodMatrix, level: Level, i: u64) -> BigRational {
    let len = rat(c.length() as i64);
    let s = c.max_amplitude() as u64;
    let mut v = kappa_rat(level, i) / x.vacancy(i.min(s));
    for j in 1..=s {
        let mj = c.m(j as usize);
        if mj > 0 {
            v += rat((mj * level.kappa(j)) as i64) * x.x(i.min(j));
        }
    }
    v * len
}

/// Speeds solving `p_i v_i + Σ_j 2 min(i,j) m_j v_j = L κ_i` for `i = 1..=max(s, l)`.
pub fn solve_speeds_finite(content: &SolitonContent, level: Level) -> Result<SpeedSolution> {
    let b = build_period_matrix(content)?;
    let x = inverse_period_matrix(&b)?;
    let top = match level {
        Level::Finite(l) => (content.max_amplitude() as u64).max(l as u64),
        Level::Infinite => content.max_amplitude() as u64,
    }
    .max(1);
    let exact: Vec<BigRational> = (1..=top).map(|i| finite_speed(content, &x, level, i)).collect();
    Ok(SpeedSolution {
        level,
        source: SpeedSource::FiniteSize,
        speeds: exact.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        exact: Some(exact),
    })
}

/// Largest deviation from the speed equation over amplitudes `1..=s`, computed exactly.
pub fn speed_equation_residual(content: &SolitonContent, sol: &SpeedSolution) -> Result<BigRational> {
    let exact = sol.exact.as_ref().ok_or_else(|| BbsError::Contract("exact speeds required".into()))?;
    let s = content.max_amplitude() as u64;
    let len = rat(content.length() as i64);
    let v = |i: u64| exact[(i - 1) as usize].clone();
    let mut worst = BigRational::zero();
    for i in 1..=s {
        let mut r = rat(content.vacancy(i)) * v(i) - &len * kappa_rat(sol.level, i);
        for j in 1..=s {
            let mj = content.m(j as usize);
            if mj > 0 {
                r += rat((2 * i.min(j) * mj) as i64) * v(j);
            }
        }
        let a = if r < BigRational::zero() { -r } else { r };
        if a > worst {
            worst = a;
        }
    }
    Ok(worst)
}

/// Closed-form finite-size speed `v_k = Σ_{j≤min(k,l)} p_l L/(p_{j−1} p_j)`.
pub fn speed_closed_form(content: &SolitonContent, level: Level, k: u64) -> Result<BigRational> {
    let s = content.max_amplitude() as u64;
    let p = |j: u64| -> Result<BigRational> {
        let v = content.vacancy(j.min(s));
        if v <= 0 {
            return Err(BbsError::Singular(format!("vacancy p_{j} = {v}")));
        }
        Ok(rat(v))
    };
    let l_eff = match level {
        Level::Finite(l) => l as u64,
        Level::Infinite => s.max(1),
    };
    let len = rat(content.length() as i64);
    let mut v = BigRational::zero();
    for j in 1..=level.kappa(k) {
        v += p(l_eff)? * &len / (p(j - 1)? * p(j)?);
    }
    Ok(v)
}

/// Ball current `Σ_i i m_i v_i / L` carried by solitons.
pub fn current_soliton(content: &SolitonContent, level: Level) -> Result<BigRational> {
    if content.soliton_count() == 0 {
        return Ok(BigRational::zero());
    }
    let sol = solve_speeds_finite(content, level)?;
    let exact = sol.exact.expect("finite-size speeds are exact");
    let mut j = BigRational::zero();
    for i in 1..=content.max_amplitude() {
        let mi = content.m(i);
        if mi > 0 {
            j += rat((i as u64 * mi) as i64) * &exact[i - 1];
        }
    }
    Ok(j / rat(content.length() as i64))
}

/// Speeds from hole densities `σ_0 = 1, σ_1, …`; entries past the end repeat the last one,
/// which also stands for `σ_∞`.
pub fn speeds_from_hole_density(sigma: &[f64], level: Level, k_max: usize) -> Result<SpeedSolution> {
    if sigma.is_empty() || sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(BbsError::InvalidParameter("hole densities must be positive".into()));
    }
    let sig = |j: usize| sigma[j.min(sigma.len() - 1)];
    let sig_l = match level {
        Level::Finite(l) => sig(l as usize),
        Level::Infinite => sig(sigma.len() - 1),
    };
    let mut speeds = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    for k in 1..=k_max {
        if level.kappa(k as u64) == k as u64 {
            acc += sig_l / (sig(k - 1) * sig(k));
        }
        speeds.push(acc);
    }
    Ok(SpeedSolution { level, source: SpeedSource::DensityLevel, speeds, exact: None })
}

fn check_two_temp(a: f64, z: f64) -> Result<()> {
    if !(a > 0.0 && a <= z && z < 1.0) {
        return Err(BbsError::InvalidParameter(format!("need 0 < a <= z < 1, got a={a}, z={z}")));
    }
    Ok(())
}

/// `z^l`, zero for the infinite level.
pub(crate) fn zpow(z: f64, level: Level) -> f64 {
    match level {
        Level::Finite(l) => z.powi(l as i32),
        Level::Infinite => 0.0,
    }
}

/// Stationary current at level `l` in the two-temperature ensemble `(a, z)`.
pub fn current_closed_form(a: f64, z: f64, level: Level) -> Result<f64> {
    if a == 0.0 && (0.0..1.0).contains(&z) {
        return Ok(0.0);
    }
    check_two_temp(a, z)?;
    let zl = zpow(z, level);
    let l_zl = match level {
        Level::Finite(l) => l as f64 * zl,
        Level::Infinite => 0.0,
    };
    let d = 1.0 - a * zl;
    Ok(a * (1.0 + z) / ((1.0 + a) * (1.0 - z)) * (1.0 - (1.0 - a) * zl / d) - a * l_zl / d)
}

/// Two-temperature effective speed `v_k` at level `l`.
pub fn speed_two_temp(a: f64, z: f64, level: Level, k: u64) -> Result<f64> {
    check_two_temp(a, z)?;
    let kk = level.kappa(k) as f64;
    let zk = z.powf(kk);
    let v_inf = (1.0 + a) / (1.0 - a) * kk - 2.0 * a * (1.0 + z) * (1.0 - zk) / ((1.0 - a) * (1.0 - z) * (1.0 + a * zk));
    let zl = zpow(z, level);
    Ok((1.0 + a * zl) / (1.0 - a * zl) * v_inf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn content(len: u64, m: &[u64]) -> SolitonContent {
        SolitonContent::new(len, m.to_vec()).unwrap()
    }

    #[test]
    fn nineteen_site_period_matrix() {
        let b = build_period_matrix(&content(19, &[2, 2, 1])).unwrap();
        let want = vec![
            vec![11, 2, 2, 2, 2],
            vec![2, 11, 2, 2, 2],
            vec![2, 2, 7, 4, 4],
            vec![2, 2, 4, 7, 4],
            vec![2, 2, 4, 4, 7],
        ];
        assert_eq!(b.to_dense(), want);
        assert_eq!(b.entry(2, 3), 4);
    }

    #[test]
    fn uniform_content_matrix_rows() {
        let c = content(30, &[2, 2, 2]);
        let b = build_period_matrix(&c).unwrap();
        let p1 = c.vacancy(1);
        assert_eq!(b.to_dense()[0], vec![p1 + 2, 2, 2, 2, 2, 2]);
        assert_eq!(b.dimension(), 6);
    }

    #[test]
    fn single_soliton_inverse() {
        let c = content(12, &[1]);
        let b = build_period_matrix(&c).unwrap();
        let x = inverse_period_matrix(&b).unwrap();
        let want = BigRational::new(BigInt::from(1), BigInt::from(c.vacancy(1) + 2));
        assert_eq!(x.block_entry(1, 1, true), want);
        assert!(x.identity_defect(&b).is_zero());
    }

    #[test]
    fn isolated_soliton_moves_at_bare_speed() {
        for k in 1..=5u64 {
            let mut m = vec![0; k as usize];
            m[k as usize - 1] = 1;
            let c = content(40, &m);
            for l in [1u32, 2, 3, 7] {
                let sol = solve_speeds_finite(&c, Level::Finite(l)).unwrap();
                assert_eq!(sol.exact.as_ref().unwrap()[k as usize - 1], rat(k.min(l as u64) as i64));
            }
        }
    }

    #[test]
    fn speeds_satisfy_equation_and_closed_form() {
        let c = content(19, &[2, 2, 1]);
        for level in [Level::Finite(1), Level::Finite(2), Level::Finite(3), Level::Finite(5), Level::Infinite] {
            let sol = solve_speeds_finite(&c, level).unwrap();
            assert!(speed_equation_residual(&c, &sol).unwrap().is_zero());
            for k in 1..=3u64 {
                assert_eq!(sol.exact.as_ref().unwrap()[k as usize - 1], speed_closed_form(&c, level, k).unwrap());
            }
            if let Level::Finite(l) = level {
                for i in l as usize..sol.speeds.len() {
                    assert_eq!(sol.speeds[i], sol.speeds[l as usize - 1]);
                }
            }
        }
    }

    #[test]
    fn hole_density_route_matches_finite_size() {
        let c = content(19, &[2, 2, 1]);
        let sigma: Vec<f64> = (0..=3).map(|j| c.vacancy(j) as f64 / 19.0).collect();
        for l in 1..=4u32 {
            let dens = speeds_from_hole_density(&sigma, Level::Finite(l), 3).unwrap();
            let fin = solve_speeds_finite(&c, Level::Finite(l)).unwrap();
            for k in 1..=3 {
                assert!((dens.speed(k) - fin.speed(k)).abs() < 1e-12);
            }
        }
        let bare = speeds_from_hole_density(&[1.0], Level::Finite(3), 6).unwrap();
        assert_eq!(bare.speeds, vec![1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert!(speeds_from_hole_density(&[1.0, 0.0], Level::Infinite, 2).is_err());
    }

    #[test]
    fn current_of_empty_content_is_zero() {
        assert!(current_soliton(&content(10, &[]), Level::Finite(2)).unwrap().is_zero());
        assert_eq!(current_closed_form(0.0, 0.5, Level::Finite(3)).unwrap(), 0.0);
    }

    #[test]
    fn equal_temperature_current_form() {
        for &z in &[0.2f64, 0.4, 0.7] {
            for l in 1..=6u32 {
                let zl = z.powi(l as i32);
                let want = z * (1.0 - zl - l as f64 * zl * (1.0 - z)) / ((1.0 - z) * (1.0 - z * zl));
                let got = current_closed_form(z, z, Level::Finite(l)).unwrap();
                assert!((got - want).abs() < 1e-14, "z={z} l={l}");
            }
        }
        assert!(current_closed_form(0.6, 0.5, Level::Finite(2)).is_err());
    }

    #[test]
    fn two_temp_speeds_are_increasing_and_saturate() {
        let (a, z) = (0.2, 0.5);
        let v: Vec<f64> = (1..=8).map(|k| speed_two_temp(a, z, Level::Infinite, k).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        let v3: Vec<f64> = (1..=8).map(|k| speed_two_temp(a, z, Level::Finite(3), k).unwrap()).collect();
        assert!(v3[3..].iter().all(|&x| x == v3[2]));
    }
}
