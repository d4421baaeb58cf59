//! Generalized Gibbs ensembles: Y-system fixed points, two-temperature closed forms,
//! fugacity series and transfer matrices.

use crate::dynamics::{Carrier, Level};
use crate::error::{BbsError, Result};
use crate::linalg::solve_tridiagonal;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::BTreeMap;

/// Inverse temperatures `β_1..β_s` and `β_∞`. With truncation at amplitude `s` the energy
/// `E_∞` coincides with `E_s`, so `β_∞` adds to `β_s`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GgeSpec {
    pub betas: Vec<f64>,
    pub beta_inf: f64,
}

impl GgeSpec {
    pub fn new(betas: Vec<f64>, beta_inf: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(BbsError::InvalidParameter("at least one temperature is required".into()));
        }
        if betas.iter().chain([&beta_inf]).any(|b| !b.is_finite() || *b < 0.0) {
            return Err(BbsError::InvalidParameter("temperatures must be finite and nonnegative".into()));
        }
        Ok(GgeSpec { betas, beta_inf })
    }

    pub fn truncation(&self) -> usize {
        self.betas.len()
    }

    fn effective_betas(&self) -> Vec<f64> {
        let mut b = self.betas.clone();
        *b.last_mut().expect("non-empty") += self.beta_inf;
        b
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TbaSolution {
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: Vec<f64>,
    #[serde(rename = "F")]
    pub free_energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// `2 log Y_i − β_i − log(1+Y_{i−1}) − log(1+Y_{i+1})` with `Y_0 = 0`; the last relation
/// uses `log(1+Y_s)` in place of the missing neighbour.
fn y_system_defects(u: &[f64], beta: &[f64]) -> Vec<f64> {
    let s = u.len();
    (0..s)
        .map(|i| {
            let left = if i > 0 { softplus(u[i - 1]) } else { 0.0 };
            let right = if i + 1 < s { softplus(u[i + 1]) } else { softplus(u[i]) };
            2.0 * u[i] - beta[i] - left - right
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest relation defect of the truncated Y-system, in logarithmic form.
pub fn y_system_residual(y: &[f64], spec: &GgeSpec) -> f64 {
    let u: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    max_abs(&y_system_defects(&u, &spec.effective_betas()))
}

/// Largest defect of `Y_i² = e^{β_i}(1+Y_{i−1})(1+Y_{i+1})` for `i = 1..len−1`, with `Y_0 = 0`
/// and `β_i` taken as zero past the end of `betas` (an untruncated chain).
pub fn chain_residual(y: &[f64], betas: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..y.len().saturating_sub(1) {
        let b = betas.get(i).copied().unwrap_or(0.0);
        let left = if i > 0 { y[i - 1].ln_1p() } else { 0.0 };
        let d = 2.0 * y[i].ln() - b - left - y[i + 1].ln_1p();
        worst = worst.max(d.abs());
    }
    worst
}

const DAMPING: f64 = 0.5;
const MAX_ITERATIONS: usize = 100_000;
const WARM_START_ITERATIONS: usize = 200;

/// Positive fixed point of the truncated Y-system. A damped fixed-point iteration in `log Y`
/// provides the starting point for Newton steps on the tridiagonal Jacobian.
pub fn solve_y_system(spec: &GgeSpec, tol: f64) -> Result<TbaSolution> {
    let beta = spec.effective_betas();
    let s = beta.len();
    let mut u: Vec<f64> = beta.iter().map(|b| b.max(0.0) + 1.0).collect();
    let mut iterations = 0;
    for _ in 0..WARM_START_ITERATIONS {
        let d = y_system_defects(&u, &beta);
        for i in 0..s {
            u[i] -= DAMPING * d[i] / 2.0;
        }
        iterations += 1;
    }
    let mut res = max_abs(&y_system_defects(&u, &beta));
    while res >= tol {
        if iterations >= MAX_ITERATIONS {
            return Err(BbsError::NonConvergence { iterations, residual: res });
        }
        iterations += 1;
        let d = y_system_defects(&u, &beta);
        let g: Vec<f64> = u.iter().map(|&x| logistic(x)).collect();
        let mut diag = vec![2.0; s];
        diag[s - 1] -= g[s - 1];
        let upper: Vec<f64> = (0..s.saturating_sub(1)).map(|i| -g[i + 1]).collect();
        let lower: Vec<f64> = (0..s.saturating_sub(1)).map(|i| -g[i]).collect();
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let step = solve_tridiagonal(&lower, &diag, &upper, &neg)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + lambda * b).collect();
            let r = max_abs(&y_system_defects(&trial, &beta));
            if r < res || lambda < 1e-6 {
                if r >= res {
                    // Newton stalled at rounding level; fall back to a damped fixed-point sweep.
                    let dd = y_system_defects(&u, &beta);
                    for i in 0..s {
                        u[i] -= DAMPING * dd[i] / 2.0;
                    }
                    res = max_abs(&y_system_defects(&u, &beta));
                } else {
                    u = trial;
                    res = r;
                }
                break;
            }
            lambda *= 0.5;
        }
    }
    let y: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let mut sol = densities_from_y(&y)?;
    sol.residual = res;
    sol.iterations = iterations;
    Ok(sol)
}

/// Densities from `Y`: with `C` the inverse of the `min(i,k)` matrix, `σ = 1 − 2 min·ρ` and
/// `ρ = σ/Y` give the tridiagonal system `(C + 2 diag(1/Y)) σ = e_1`.
pub fn densities_from_y(y: &[f64]) -> Result<TbaSolution> {
    let s = y.len();
    let mut diag: Vec<f64> = y.iter().map(|v| 2.0 + 2.0 / v).collect();
    diag[s - 1] -= 1.0;
    let off = vec![-1.0; s.saturating_sub(1)];
    let mut rhs = vec![0.0; s];
    rhs[0] = 1.0;
    let sigma = solve_tridiagonal(&off, &diag, &off, &rhs)?;
    let rho: Vec<f64> = sigma.iter().zip(y).map(|(s, y)| s / y).collect();
    let epsilon: Vec<f64> = sigma.iter().map(|s| (1.0 - s) / 2.0).collect();
    let free_energy = -y.iter().map(|v| (1.0 / v).ln_1p()).sum::<f64>();
    Ok(TbaSolution { y: y.to_vec(), rho, sigma, epsilon, free_energy, residual: 0.0, iterations: 0 })
}

/// Two-temperature ensemble parameters, `0 < a ≤ z < 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TwoTempParams {
    pub a: f64,
    pub z: f64,
}

impl TwoTempParams {
    pub fn new(a: f64, z: f64) -> Result<Self> {
        if !(a > 0.0 && a <= z && z < 1.0) {
            return Err(BbsError::InvalidParameter(format!("need 0 < a <= z < 1, got a={a}, z={z}")));
        }
        Ok(TwoTempParams { a, z })
    }

    /// `(β_1, β_∞)` producing these parameters.
    pub fn betas(&self) -> (f64, f64) {
        let (a, z) = (self.a, self.z);
        let ratio = (a.sqrt() - 1.0 / a.sqrt()) / (z.sqrt() - 1.0 / z.sqrt());
        (2.0 * ratio.ln(), -z.ln())
    }

    /// `Q_i = (a^{1/2} z^{i/2} − a^{−1/2} z^{−i/2}) / (z^{1/2} − z^{−1/2})`.
    pub fn q(&self, i: f64) -> f64 {
        let (a, z) = (self.a, self.z);
        let num = (a * z.powf(i)).sqrt() - 1.0 / (a * z.powf(i)).sqrt();
        num / (z.sqrt() - 1.0 / z.sqrt())
    }

    pub fn ball_density(&self) -> f64 {
        self.a / (1.0 + self.a)
    }
}

pub fn two_temp_from_betas(beta1: f64, beta_inf: f64) -> Result<TwoTempParams> {
    if !(beta1 >= 0.0) || !(beta_inf > 0.0) || !beta1.is_finite() || !beta_inf.is_finite() {
        return Err(BbsError::InvalidParameter(format!("need beta1 >= 0 and beta_inf > 0, got {beta1}, {beta_inf}")));
    }
    let z = (-beta_inf).exp();
    // u = a^{1/2} solves u² + K u − 1 = 0 with K = e^{β_1/2}(z^{−1/2} − z^{1/2}).
    let k = (beta1 / 2.0).exp() * (1.0 / z.sqrt() - z.sqrt());
    let u = 2.0 / (k + (k * k + 4.0).sqrt());
    let a = (u * u).min(z);
    TwoTempParams::new(a, z)
}

/// Closed-form densities of the two-temperature ensemble for amplitudes `1..=i_max`.
pub fn two_temp_closed_forms(p: TwoTempParams, i_max: usize) -> TbaSolution {
    let (a, z) = (p.a, p.z);
    let mut sol = TbaSolution {
        y: Vec::with_capacity(i_max),
        rho: Vec::with_capacity(i_max),
        sigma: Vec::with_capacity(i_max),
        epsilon: Vec::with_capacity(i_max),
        free_energy: ((1.0 - a) / (1.0 - a * z)).ln(),
        residual: 0.0,
        iterations: 0,
    };
    for i in 1..=i_max {
        let zi = z.powi(i as i32);
        let eps = a * (1.0 - zi) / ((1.0 + a) * (1.0 - a * zi));
        let sig = (1.0 - a) * (1.0 + a * zi) / ((1.0 + a) * (1.0 - a * zi));
        let rho = a * zi / z * (1.0 - a) * (1.0 - z).powi(2) * (1.0 + a * zi)
            / ((1.0 + a) * (1.0 - a * zi / z) * (1.0 - a * zi) * (1.0 - a * zi * z));
        sol.epsilon.push(eps);
        sol.sigma.push(sig);
        sol.rho.push(rho);
        sol.y.push(p.q(i as f64 - 1.0) * p.q(i as f64 + 1.0));
    }
    sol
}

/// Probability that the capacity-`l` carrier holds `n` balls, `n = 0..=l`.
pub fn carrier_load_distribution(p: TwoTempParams, l: u32) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(BbsError::InvalidParameter("capacity must be at least 1".into()));
    }
    let (a, z) = (p.a, p.z);
    let norm = (1.0 + a) * (1.0 - a * z.powi(l as i32));
    let mut out = vec![0.0; l as usize + 1];
    out[0] = (1.0 - a * z) / norm;
    for n in 1..l {
        out[n as usize] = a * z.powi(n as i32 - 1) * (1.0 - z * z) / norm;
    }
    out[l as usize] = a * z.powi(l as i32 - 1) * (1.0 - a * z) / norm;
    if l == 1 {
        out[0] = 1.0 / (1.0 + a);
    }
    Ok(out)
}

/// Power series in `w_1..w_s` with exact coefficients, truncated at ball number
/// `Σ_i i·m_i ≤ degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct FugacitySeries {
    pub variables: usize,
    pub degree: usize,
    pub terms: BTreeMap<Vec<u32>, BigRational>,
}

pub const MAX_SERIES_DEGREE: usize = 40;

impl FugacitySeries {
    pub fn coefficient(&self, m: &[u32]) -> BigRational {
        let mut key = m.to_vec();
        key.resize(self.variables, 0);
        self.terms.get(&key).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Sums the series at `w`; refuses any `|w_i|` above `guard`.
    pub fn evaluate(&self, w: &[f64], guard: f64) -> Result<f64> {
        if w.len() < self.variables {
            return Err(BbsError::InvalidParameter(format!("{} variables required", self.variables)));
        }
        if let Some(bad) = w.iter().take(self.variables).find(|x| x.abs() > guard) {
            return Err(BbsError::InvalidParameter(format!("|w| = {} exceeds the guard {guard}", bad.abs())));
        }
        // Accumulate by ball number so that the sum runs from small to large terms.
        let mut shells = vec![0.0; self.degree + 1];
        for (m, c) in &self.terms {
            let mut t = c.to_f64().unwrap_or(f64::NAN);
            let mut weight = 0;
            for (i, &mi) in m.iter().enumerate() {
                t *= w[i].powi(mi as i32);
                weight += (i + 1) * mi as usize;
            }
            shells[weight] += t;
        }
        Ok(shells.iter().rev().sum())
    }
}

fn ratz(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn multi_indices(s: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(i: usize, s: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == s {
            out.push(cur.clone());
            return;
        }
        let amp = i + 1;
        for mi in 0..=left / amp {
            cur.push(mi as u32);
            rec(i + 1, s, left - mi * amp, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, s, degree, &mut Vec::new(), &mut out);
    out
}

fn pochhammer(x: &BigRational, n: u32) -> BigRational {
    let mut acc = BigRational::one();
    for k in 0..n {
        acc *= x + ratz(k as i64);
    }
    acc
}

fn factorial(n: u32) -> BigRational {
    (1..=n as i64).fold(BigRational::one(), |acc, k| acc * ratz(k))
}

fn determinant(mut a: Vec<Vec<BigRational>>) -> BigRational {
    let n = a.len();
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col].clone();
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = &a[r][col] / &a[col][col];
            for k in col..n {
                let t = &f * &a[col][k];
                a[r][k] -= t;
            }
        }
    }
    det
}

/// `q_j = Σ_k min(j,k)(μ_k − 2 m_k)` and `F_jk = δ_jk q_j + 2 min(j,k) m_k` restricted to the
/// amplitudes present in `m`, together with the prefactor `Π (q_j+1)_{m_j−1}/m_j!`.
fn determinant_data(m: &[u32], mu: &[BigRational]) -> (Vec<usize>, Vec<Vec<BigRational>>, BigRational) {
    let s = m.len();
    let q: Vec<BigRational> = (0..s)
        .map(|j| {
            (0..s).fold(BigRational::zero(), |acc, k| {
                acc + ratz(((j.min(k) + 1) as i64) * 1) * (mu[k].clone() - ratz(2 * m[k] as i64))
            })
        })
        .collect();
    let h: Vec<usize> = (0..s).filter(|&j| m[j] > 0).collect();
    let f: Vec<Vec<BigRational>> = h
        .iter()
        .map(|&j| {
            h.iter()
                .map(|&k| {
                    let mut v = ratz(2 * (j.min(k) + 1) as i64 * m[k] as i64);
                    if j == k {
                        v += &q[j];
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut pre = BigRational::one();
    for &j in &h {
        pre *= pochhammer(&(q[j].clone() + BigRational::one()), m[j] - 1) / factorial(m[j]);
    }
    (h, f, pre)
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_SERIES_DEGREE {
        return Err(BbsError::InvalidParameter(format!("series degree {degree} exceeds the cap {MAX_SERIES_DEGREE}")));
    }
    Ok(())
}

/// Series of `Q^μ = Π_i Q_i^{μ_i}` in the fugacities `w_1..w_s`.
pub fn q_series(s: usize, mu: &[BigRational], degree: usize) -> Result<FugacitySeries> {
    check_degree(degree)?;
    if mu.len() != s {
        return Err(BbsError::InvalidParameter(format!("{s} exponents required")));
    }
    let mut terms = BTreeMap::new();
    for m in multi_indices(s, degree) {
        let (_, f, pre) = determinant_data(&m, mu);
        let c = pre * determinant(f);
        if !c.is_zero() {
            terms.insert(m, c);
        }
    }
    Ok(FugacitySeries { variables: s, degree, terms })
}

/// `Q_i` series, i.e. `μ = e_i`.
pub fn q_i_series(i: usize, s: usize, degree: usize) -> Result<FugacitySeries> {
    let mu: Vec<BigRational> = (1..=s).map(|k| if k == i { BigRational::one() } else { BigRational::zero() }).collect();
    q_series(s, &mu, degree)
}

/// Series of `log Q_1`.
pub fn log_q1_series(s: usize, degree: usize) -> Result<FugacitySeries> {
    check_degree(degree)?;
    let zero = vec![BigRational::zero(); s];
    let mut terms = BTreeMap::new();
    for m in multi_indices(s, degree) {
        if m.iter().all(|&x| x == 0) {
            continue;
        }
        let (h, f, pre) = determinant_data(&m, &zero);
        let mut minors = BigRational::zero();
        for r in 0..h.len() {
            let sub: Vec<Vec<BigRational>> = (0..h.len())
                .filter(|&a| a != r)
                .map(|a| (0..h.len()).filter(|&b| b != r).map(|b| f[a][b].clone()).collect())
                .collect();
            minors += determinant(sub);
        }
        let c = pre * minors;
        if !c.is_zero() {
            terms.insert(m, c);
        }
    }
    Ok(FugacitySeries { variables: s, degree, terms })
}

/// `ρ_i = w_i ∂ log Q_1 / ∂ w_i`, term by term.
pub fn rho_series(i: usize, s: usize, degree: usize) -> Result<FugacitySeries> {
    let mut out = log_q1_series(s, degree)?;
    out.terms = out
        .terms
        .into_iter()
        .filter(|(m, _)| m[i - 1] > 0)
        .map(|(m, c)| {
            let k = ratz(m[i - 1] as i64);
            (m, c * k)
        })
        .collect();
    Ok(out)
}

/// `ε_i = Σ_j min(i,j) ρ_j`.
pub fn epsilon_series(i: usize, s: usize, degree: usize) -> Result<FugacitySeries> {
    let log_q = log_q1_series(s, degree)?;
    let mut terms = BTreeMap::new();
    for (m, c) in log_q.terms {
        let weight: i64 = m.iter().enumerate().map(|(j, &mj)| (i.min(j + 1) as i64) * mj as i64).sum();
        if weight != 0 {
            terms.insert(m, c * ratz(weight));
        }
    }
    Ok(FugacitySeries { variables: s, degree, terms })
}

/// Fugacities `w_i = exp(−Σ_j min(i,j) β_j)` for `i = 1..=count`, where `β_∞` acts on every
/// amplitude as a per-ball weight.
pub fn fugacities(betas: &[f64], beta_inf: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|i| {
            let e: f64 = betas.iter().enumerate().map(|(j, b)| (i.min(j + 1)) as f64 * b).sum();
            (-(e + i as f64 * beta_inf)).exp()
        })
        .collect()
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    fn kron(&self, other: &Matrix) -> Matrix {
        let n = self.n * other.n;
        let mut data = vec![0.0; n * n];
        for r1 in 0..self.n {
            for c1 in 0..self.n {
                let a = self.get(r1, c1);
                if a == 0.0 {
                    continue;
                }
                for r2 in 0..other.n {
                    for c2 in 0..other.n {
                        data[(r1 * other.n + r2) * n + c1 * other.n + c2] = a * other.get(r2, c2);
                    }
                }
            }
        }
        Matrix { n, data }
    }

    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.data[r * self.n + c] * v[c]).sum()).collect()
    }
}

/// Single-carrier matrix for site value `eta`: entry `(n, ñ)` is the weight of the move
/// `n → ñ`, `e^{−β}` when the site is emptied.
fn carrier_matrix(l: u32, eta: u8, beta: f64) -> Matrix {
    let n = l as usize + 1;
    let mut data = vec![0.0; n * n];
    for load in 0..=l {
        let (next, out) = Carrier { capacity: l, load }.step(eta);
        let w = if eta > out { (-beta).exp() } else { 1.0 };
        data[load as usize * n + next.load as usize] = w;
    }
    Matrix { n, data }
}

/// Row-to-row transfer matrix of the ensemble weighted by `β_1..β_r` and `β_∞`, acting on
/// the joint loads of carriers with capacities `1..=r`.
pub fn gge_transfer_matrix(betas: &[f64], beta_inf: f64) -> Result<Matrix> {
    let r = betas.len();
    if r == 0 || r > 4 {
        return Err(BbsError::InvalidParameter(format!("transfer matrix supports 1 to 4 carriers, got {r}")));
    }
    let build = |eta: u8| {
        (1..=r as u32)
            .map(|l| carrier_matrix(l, eta, betas[l as usize - 1]))
            .reduce(|acc, m| acc.kron(&m))
            .expect("r >= 1")
    };
    let v0 = build(0);
    let mut v1 = build(1);
    let w = (-beta_inf).exp();
    for x in &mut v1.data {
        *x *= w;
    }
    let data = v0.data.iter().zip(&v1.data).map(|(a, b)| a + b).collect();
    Ok(Matrix { n: v0.n, data })
}

/// Perron eigenvalue of a nonnegative matrix by power iteration on `V + I`.
pub fn largest_eigenvalue(m: &Matrix, tol: f64) -> Result<f64> {
    let n = m.n;
    let mut v = vec![1.0 / n as f64; n];
    let mut lambda = 0.0;
    for it in 0..1_000_000 {
        let mut w = m.mul_vec(&v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += vi;
        }
        let norm: f64 = w.iter().sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(BbsError::NonConvergence { iterations: it, residual: f64::NAN });
        }
        for x in &mut w {
            *x /= norm;
        }
        let change: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        let new_lambda = norm - 1.0;
        v = w;
        if it > 10 && change < tol && (new_lambda - lambda).abs() <= tol * new_lambda.abs() {
            return Ok(new_lambda);
        }
        lambda = new_lambda;
    }
    Err(BbsError::NonConvergence { iterations: 1_000_000, residual: lambda })
}

/// Free energy per site `−log λ_max` of the transfer matrix.
pub fn transfer_free_energy(betas: &[f64], beta_inf: f64) -> Result<f64> {
    Ok(-largest_eigenvalue(&gge_transfer_matrix(betas, beta_inf)?, 1e-13)?.ln())
}

/// Convenience for the level-indexed current: `Σ n P(n)` for the carrier distribution.
pub fn mean_carrier_load(p: TwoTempParams, level: Level) -> Result<f64> {
    match level {
        Level::Finite(l) => Ok(carrier_load_distribution(p, l)?.iter().enumerate().map(|(n, q)| n as f64 * q).sum()),
        Level::Infinite => Err(BbsError::InvalidParameter("carrier distribution needs a finite capacity".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        ratz(n)
    }

    fn check_series(series: &FugacitySeries, expected: &[((u32, u32), i64)]) {
        for &((a, b), c) in expected {
            assert_eq!(series.coefficient(&[a, b]), r(c), "coefficient of w1^{a} w2^{b}");
        }
    }

    #[test]
    fn two_variable_q_series() {
        let q1 = q_i_series(1, 2, 6).unwrap();
        check_series(
            &q1,
            &[((0, 0), 1), ((1, 0), 1), ((2, 0), -1), ((0, 1), 1), ((1, 1), -3), ((2, 1), 10), ((0, 2), -3), ((1, 2), 20), ((2, 2), -105)],
        );
        let q2 = q_i_series(2, 2, 6).unwrap();
        check_series(
            &q2,
            &[((0, 0), 1), ((1, 0), 1), ((2, 0), -1), ((0, 1), 2), ((1, 1), -4), ((2, 1), 12), ((0, 2), -5), ((1, 2), 28), ((2, 2), -135)],
        );
        let one = q_series(2, &[r(0), r(0)], 6).unwrap();
        assert_eq!(one.terms.len(), 1);
        assert_eq!(one.coefficient(&[0, 0]), r(1));
    }

    #[test]
    fn two_variable_density_series() {
        let rho1 = rho_series(1, 2, 6).unwrap();
        check_series(&rho1, &[((1, 0), 1), ((2, 0), -3), ((1, 1), -4), ((2, 1), 30), ((1, 2), 27), ((2, 2), -308), ((0, 1), 0)]);
        let rho2 = rho_series(2, 2, 6).unwrap();
        check_series(&rho2, &[((0, 1), 1), ((1, 1), -4), ((2, 1), 15), ((0, 2), -7), ((1, 2), 54), ((2, 2), -308)]);
        let e1 = epsilon_series(1, 2, 6).unwrap();
        check_series(&e1, &[((1, 0), 1), ((2, 0), -3), ((0, 1), 1), ((1, 1), -8), ((2, 1), 45), ((0, 2), -7), ((1, 2), 81), ((2, 2), -616)]);
        let e2 = epsilon_series(2, 2, 6).unwrap();
        check_series(&e2, &[((1, 0), 1), ((2, 0), -3), ((0, 1), 2), ((1, 1), -12), ((2, 1), 60), ((0, 2), -14), ((1, 2), 135), ((2, 2), -924)]);
    }

    #[test]
    fn series_degree_cap_and_guard() {
        assert!(q_i_series(1, 2, MAX_SERIES_DEGREE + 1).is_err());
        let q = q_i_series(1, 2, 4).unwrap();
        assert!(q.evaluate(&[0.9, 0.1], 0.5).is_err());
        assert!((q.evaluate(&[0.0, 0.0], 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_carrier_eigenvalue() {
        for &(a, z) in &[(0.2, 0.5), (0.1, 0.3), (0.45, 0.45)] {
            let p = TwoTempParams::new(a, z).unwrap();
            let (b1, binf) = p.betas();
            let lam = largest_eigenvalue(&gge_transfer_matrix(&[b1], binf).unwrap(), 1e-14).unwrap();
            assert!((lam - (1.0 - a * z) / (1.0 - a)).abs() < 1e-12, "a={a} z={z} lam={lam}");
        }
    }

    #[test]
    fn single_carrier_matrix_entries() {
        let m = gge_transfer_matrix(&[0.7], 1.1).unwrap();
        let (y, z) = ((-0.7f64).exp(), (-1.1f64).exp());
        let want = [1.0, z * y, 1.0, z];
        for (g, w) in m.data.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_ensemble_eigenvalue() {
        let lam = largest_eigenvalue(&gge_transfer_matrix(&[50.0, 50.0], 50.0).unwrap(), 1e-14).unwrap();
        assert!((lam - 1.0).abs() < 1e-12);
    }

    fn b2_fugacities(z: (f64, f64, f64), count: usize) -> Vec<f64> {
        (1..=count).map(|i| z.0 * z.1.powi(i.min(2) as i32) * z.2.powi(i as i32)).collect()
    }

    #[test]
    fn two_temperature_series_limit_coefficients() {
        // Collect Q_1 by monomials z_1^a z_2^b z_inf^c with w_i = z_1 z_2^min(i,2) z_inf^i.
        let q = q_i_series(1, 4, 4).unwrap();
        let mut by_monomial: BTreeMap<(u32, u32, u32), BigRational> = BTreeMap::new();
        for (m, c) in &q.terms {
            let a: u32 = m.iter().sum();
            let b: u32 = m.iter().enumerate().map(|(i, &k)| (i as u32 + 1).min(2) * k).sum();
            let d: u32 = m.iter().enumerate().map(|(i, &k)| (i as u32 + 1) * k).sum();
            *by_monomial.entry((a, b, d)).or_insert_with(BigRational::zero) += c;
        }
        by_monomial.retain(|_, c| !c.is_zero());
        let want: BTreeMap<(u32, u32, u32), BigRational> = [
            ((0, 0, 0), 1),
            ((1, 1, 1), 1),
            ((1, 2, 2), 1),
            ((2, 2, 2), -1),
            ((1, 2, 3), 1),
            ((2, 3, 3), -3),
            ((3, 3, 3), 2),
            ((1, 2, 4), 1),
            ((2, 3, 4), -3),
            ((2, 4, 4), -3),
            ((3, 4, 4), 10),
            ((4, 4, 4), -5),
        ]
        .into_iter()
        .map(|(k, v)| (k, r(v)))
        .collect();
        assert_eq!(by_monomial, want);
    }

    #[test]
    fn series_matches_transfer_matrix() {
        let z = (0.4f64, 0.3f64, 0.2f64);
        let lam = largest_eigenvalue(&gge_transfer_matrix(&[-z.0.ln(), -z.1.ln()], -z.2.ln()).unwrap(), 1e-14).unwrap();
        let d = 10;
        let q = q_i_series(1, d, d).unwrap().evaluate(&b2_fugacities(z, d), 1.0).unwrap();
        assert!((q - lam).abs() < 1e-8, "{q} vs {lam}");
        assert!((lam - 1.025121).abs() < 1e-6);
        // The low-order part alone (z_inf degree at most 4) gives the shorter value 1.02511.
        let low = q_i_series(1, 4, 4).unwrap().evaluate(&b2_fugacities(z, 4), 1.0).unwrap();
        assert!((low - 1.025113).abs() < 1e-6, "{low}");
    }

    #[test]
    fn betas_round_trip() {
        for &(a, z) in &[(0.2, 0.5), (0.3, 0.6), (0.01, 0.9), (0.5, 0.5)] {
            let p = TwoTempParams::new(a, z).unwrap();
            let (b1, binf) = p.betas();
            let q = two_temp_from_betas(b1, binf).unwrap();
            assert!((q.a - a).abs() < 1e-14 && (q.z - z).abs() < 1e-14, "{q:?}");
        }
        let p = two_temp_from_betas(0.0, 0.7).unwrap();
        assert!((p.a - p.z).abs() < 1e-15);
        assert!(two_temp_from_betas(60.0, 0.7).unwrap().a < 1e-12);
        assert!(two_temp_from_betas(-0.1, 0.7).is_err());
    }

    #[test]
    fn closed_forms_are_consistent() {
        let p = TwoTempParams::new(0.2, 0.5).unwrap();
        let sol = two_temp_closed_forms(p, 50);
        for i in 0..50 {
            assert!((sol.sigma[i] - (1.0 - 2.0 * sol.epsilon[i])).abs() < 1e-14);
            assert!((sol.y[i] - sol.sigma[i] / sol.rho[i]).abs() < 1e-9 * sol.y[i]);
        }
        assert!((sol.epsilon[49] - 0.2 / 1.2).abs() < 1e-14);
        assert!(chain_residual(&sol.y, &[p.betas().0]) < 1e-12);
    }

    #[test]
    fn solver_matches_closed_form_chain() {
        let p = TwoTempParams::new(0.3, 0.6).unwrap();
        let s = 40;
        let (b1, _) = p.betas();
        let mut betas = vec![0.0; s];
        betas[0] = b1;
        // The truncated chain closes exactly on the closed form with β_s = 2 log(Q_{s+1}/Q_s).
        let closing = 2.0 * (p.q(s as f64 + 1.0) / p.q(s as f64)).ln();
        let spec = GgeSpec::new(betas, closing).unwrap();
        let sol = solve_y_system(&spec, 1e-12).unwrap();
        let want = two_temp_closed_forms(p, s);
        for i in 0..s {
            assert!((sol.y[i] / want.y[i] - 1.0).abs() < 1e-10, "i={i}");
            // Densities miss the tail of amplitudes above s, which is of order z^s.
            assert!((sol.rho[i] / want.rho[i] - 1.0).abs() < 1e-7, "i={i}");
        }
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn frozen_gge_is_empty() {
        let spec = GgeSpec::new(vec![50.0; 5], 50.0).unwrap();
        let sol = solve_y_system(&spec, 1e-12).unwrap();
        assert!(sol.rho.iter().all(|&x| x < 1e-20));
        assert!(sol.free_energy.abs() < 1e-20);
    }

    #[test]
    fn gibbs_single_amplitude() {
        let spec = GgeSpec::new(vec![0.8], 0.0).unwrap();
        let sol = solve_y_system(&spec, 1e-12).unwrap();
        assert!(y_system_residual(&sol.y, &spec) < 1e-12);
    }

    #[test]
    fn small_fugacity_densities_follow_series() {
        let w = [0.05f64, 0.02];
        // With s = 2, w_1 = e^{−β_1−β_2}, w_2 = e^{−β_1−2β_2}.
        let b2 = (w[0] / w[1]).ln();
        let b1 = -w[0].ln() - b2;
        let sol = solve_y_system(&GgeSpec::new(vec![b1, b2], 0.0).unwrap(), 1e-13).unwrap();
        for i in 1..=2 {
            let series = rho_series(i, 2, 12).unwrap().evaluate(&w, 0.5).unwrap();
            assert!((sol.rho[i - 1] - series).abs() < 1e-6, "rho_{i}: {} vs {series}", sol.rho[i - 1]);
        }
        let f_series = -log_q1_series(2, 12).unwrap().evaluate(&w, 0.5).unwrap();
        assert!((sol.free_energy - f_series).abs() < 1e-6);
    }

    #[test]
    fn carrier_distribution_normalized_and_reproduces_current() {
        let p = TwoTempParams::new(0.2, 0.5).unwrap();
        for l in 1..=6 {
            let d = carrier_load_distribution(p, l).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let j = crate::spectral::current_closed_form(0.2, 0.5, Level::Finite(l)).unwrap();
            assert!((mean_carrier_load(p, Level::Finite(l)).unwrap() - j).abs() < 1e-14, "l={l}");
        }
    }
}
