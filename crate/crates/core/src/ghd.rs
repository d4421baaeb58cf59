//! Euler-scale hydrodynamics of soliton gases: dressing, effective velocities, the domain-wall
//! plateau solution and diffusive step shapes.

use crate::dynamics::Level;
use crate::error::{BbsError, Result};
use crate::linalg::solve_tridiagonal;
use crate::special::erfc;

/// Entries below this are treated as the end of a decaying filling vector.
pub const TAIL_CUTOFF: f64 = 1e-16;
const MAX_SPECIES: usize = 1 << 20;

/// Filling fractions `y_j = ρ_j/σ_j`, `j = 1..=len`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FillingVector {
    y: Vec<f64>,
}

impl FillingVector {
    /// A decaying filling vector: the last entry must be below `TAIL_CUTOFF`.
    pub fn new(y: Vec<f64>) -> Result<Self> {
        let f = Self::truncated(y)?;
        match f.y.last() {
            Some(&last) if last >= TAIL_CUTOFF => {
                Err(BbsError::InvalidParameter(format!("filling vector has not decayed: last entry {last}")))
            }
            _ => Ok(f),
        }
    }

    /// A gas with exactly `y.len()` species and no tail.
    pub fn truncated(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(BbsError::InvalidParameter("filling vector needs at least one species".into()));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BbsError::InvalidParameter("filling fractions must be finite and nonnegative".into()));
        }
        Ok(FillingVector { y })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `y_j` for 1-based `j`, zero past the truncation.
    pub fn get(&self, j: usize) -> f64 {
        self.y.get(j.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// Occupation `n_j = y_j/(1+y_j)`.
    pub fn occupation(&self, j: usize) -> f64 {
        let y = self.get(j);
        y / (1.0 + y)
    }

    /// Pseudoenergy `ε_j = −log y_j`.
    pub fn pseudoenergy(&self, j: usize) -> f64 {
        -self.get(j).ln()
    }

    fn padded(&self, len: usize) -> Vec<f64> {
        let mut y = self.y.clone();
        y.resize(len.max(y.len()), 0.0);
        y
    }
}

/// Filling of the i.i.d. Bernoulli state with fugacity `z`, at least `min_len` long and extended
/// until the entries decay below `TAIL_CUTOFF`.
pub fn iid_filling(z: f64, min_len: usize) -> Result<FillingVector> {
    if !(0.0..1.0).contains(&z) {
        return Err(BbsError::InvalidParameter(format!("fugacity must lie in [0, 1), got {z}")));
    }
    let mut y = Vec::new();
    let mut j = 1;
    loop {
        let zj = z.powi(j as i32);
        let n = zj * (1.0 - z).powi(2) / (1.0 - z * zj).powi(2);
        let v = n / (1.0 - n);
        y.push(v);
        if j >= min_len.max(1) && v < TAIL_CUTOFF {
            break;
        }
        if j >= MAX_SPECIES {
            return Err(BbsError::InvalidParameter(format!("fugacity {z} too close to 1")));
        }
        j += 1;
    }
    FillingVector::new(y)
}

/// Which kind of soliton a region carries: ball clusters below half filling, clusters of
/// empty sites above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Balls,
    Holes,
}

/// Reservoir of ball density `p ≠ 1/2`: its species and the fugacity below one that describes it.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Reservoir {
    pub density: f64,
    pub fugacity: f64,
    pub species: Species,
}

impl Reservoir {
    pub fn from_density(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) || p == 0.5 {
            return Err(BbsError::InvalidParameter(format!("density must lie in [0, 1) and differ from 1/2, got {p}")));
        }
        let (q, species) = if p < 0.5 { (p, Species::Balls) } else { (1.0 - p, Species::Holes) };
        Ok(Reservoir { density: p, fugacity: q / (1.0 - q), species })
    }

    pub fn from_fugacity(z: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&z) {
            return Err(BbsError::InvalidParameter(format!("fugacity must lie in [0, 1), got {z}")));
        }
        Ok(Reservoir { density: z / (1.0 + z), fugacity: z, species: Species::Balls })
    }
}

/// `C o` with `C` the inverse of the `min(i,k)` matrix on `len` species.
fn apply_c(o: &[f64]) -> Vec<f64> {
    let n = o.len();
    (0..n)
        .map(|i| {
            let prev = if i > 0 { o[i - 1] } else { 0.0 };
            if i + 1 < n {
                2.0 * o[i] - prev - o[i + 1]
            } else {
                o[i] - prev
            }
        })
        .collect()
}

/// Solves `(C + 2 diag(y)) x = rhs`.
fn solve_t(y: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    let mut diag: Vec<f64> = y.iter().map(|v| 2.0 + 2.0 * v).collect();
    diag[n - 1] -= 1.0;
    let off = vec![-1.0; n - 1];
    solve_tridiagonal(&off, &diag, &off, rhs)
}

/// `o^dr = (1 + M diag(y))^{-1} o` with `M_kj = 2 min(k,j)`, computed as `(C + 2 diag(y))^{-1} C o`.
pub fn dress(y: &FillingVector, o: &[f64]) -> Result<Vec<f64>> {
    if o.len() != y.len() {
        return Err(BbsError::InvalidParameter(format!("vector of length {} for {} species", o.len(), y.len())));
    }
    if y.y.iter().all(|&v| v == 0.0) {
        return Ok(o.to_vec());
    }
    solve_t(&y.y, &apply_c(o))
}

/// Row `k` (1-based) of `β = (1 + M diag(y))^{-1} M`, which equals `2 (C + 2 diag(y))^{-1}` and
/// is symmetric.
pub fn dressed_shift_row(y: &FillingVector, k: usize) -> Result<Vec<f64>> {
    let mut e = vec![0.0; y.len()];
    e[k - 1] = 2.0;
    solve_t(&y.y, &e)
}

pub fn bare_speeds(len: usize, level: Level) -> Vec<f64> {
    (1..=len as u64).map(|k| level.kappa(k) as f64).collect()
}

/// `v = κ^dr / 1^dr` for arbitrary bare speeds `κ`.
pub fn velocities_for(y: &FillingVector, kappa: &[f64]) -> Result<Vec<f64>> {
    let sigma = dress(y, &vec![1.0; y.len()])?;
    let k = dress(y, kappa)?;
    Ok(k.iter().zip(&sigma).map(|(a, b)| a / b).collect())
}

pub fn effective_velocities(y: &FillingVector, level: Level) -> Result<Vec<f64>> {
    velocities_for(y, &bare_speeds(y.len(), level))
}

/// Densities and velocities of a homogeneous region.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DressedState {
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub level: Level,
}

impl DressedState {
    /// `Σ_j j ρ_j`.
    pub fn soliton_ball_density(&self) -> f64 {
        self.rho.iter().enumerate().map(|(j, r)| (j + 1) as f64 * r).sum()
    }
}

pub fn dressed_state(y: &FillingVector, level: Level) -> Result<DressedState> {
    let sigma = dress(y, &vec![1.0; y.len()])?;
    if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(BbsError::Singular(format!("nonpositive hole density {bad}")));
    }
    let kd = dress(y, &bare_speeds(y.len(), level))?;
    let v = kd.iter().zip(&sigma).map(|(a, b)| a / b).collect();
    let rho = y.y.iter().zip(&sigma).map(|(a, b)| a * b).collect();
    Ok(DressedState { y: y.y.clone(), sigma, rho, v, level })
}

/// Σ_k from the velocity fluctuations induced by the background of species `i ≠ k`:
/// `Σ_k² = Σ_i β_ki²/σ_k² |v_k − v_i| σ_i y_i (1 + y_i)`.
pub fn front_width(y: &FillingVector, k: usize, level: Level) -> Result<f64> {
    if k == 0 || k > y.len() {
        return Err(BbsError::InvalidParameter(format!("front {k} outside 1..={}", y.len())));
    }
    let st = dressed_state(y, level)?;
    let beta = dressed_shift_row(y, k)?;
    let (vk, sk) = (st.v[k - 1], st.sigma[k - 1]);
    let var: f64 = (0..y.len())
        .filter(|&i| i != k - 1 && (vk - st.v[i]).abs() > 1e-12 * (1.0 + vk.abs()))
        .map(|i| {
            let yi = y.y[i];
            beta[i] * beta[i] / (sk * sk) * (vk - st.v[i]).abs() * st.sigma[i] * yi * (1.0 + yi)
        })
        .sum();
    Ok(var.sqrt())
}

/// Side of a front whose state enters the width formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthSector {
    /// The plateau right of the front (sector `k`).
    #[default]
    Right,
    /// The plateau left of the front (sector `k − 1`).
    Left,
}

/// One plateau of the ray solution.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Sector {
    pub k: usize,
    /// Left edge `ζ(k)`; `−∞` for the first sector.
    pub zeta: f64,
    /// Ball density.
    pub h: f64,
    /// Diffusive width `Σ_k` of the front at `ζ(k)`; zero for the first sector.
    #[serde(rename = "Sigma")]
    pub width: f64,
    pub species: Species,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PlateauProfile {
    pub level: u32,
    pub left: Reservoir,
    pub right: Reservoir,
    pub sectors: Vec<Sector>,
    /// Largest `|v_k(k−1) − v_k(k)|` over the fronts.
    pub matching_defect: f64,
    pub width_sector: WidthSector,
}

impl PlateauProfile {
    pub fn zeta(&self, k: usize) -> f64 {
        self.sectors[k].zeta
    }

    pub fn height(&self, k: usize) -> f64 {
        self.sectors[k].h
    }

    pub fn width(&self, k: usize) -> f64 {
        self.sectors[k].width
    }

    /// Index of the sector containing the ray `zeta`.
    pub fn sector_at(&self, zeta: f64) -> usize {
        self.sectors.iter().rposition(|s| s.zeta <= zeta).unwrap_or(0)
    }

    /// Ball density at `(r, t)` with every front broadened by its width.
    pub fn ball_density(&self, r: f64, t: f64) -> f64 {
        let mut h = self.sectors.last().map(|s| s.h).unwrap_or(0.0);
        for w in self.sectors.windows(2) {
            h += step_profile(w[0].h, w[1].h, w[1].zeta, w[1].width, t, r) - w[1].h;
        }
        h
    }

    /// Density of `j`-solitons at `(r, t)` in the same broadened picture.
    pub fn soliton_density(&self, j: usize, r: f64, t: f64) -> f64 {
        let rho = |s: &Sector| s.rho.get(j - 1).copied().unwrap_or(0.0);
        let mut out = self.sectors.last().map(rho).unwrap_or(0.0);
        for w in self.sectors.windows(2) {
            out += step_profile(rho(&w[0]), rho(&w[1]), w[1].zeta, w[1].width, t, r) - rho(&w[1]);
        }
        out
    }
}

fn ball_height(st: &DressedState, species: Species) -> f64 {
    let q = st.soliton_ball_density();
    match species {
        Species::Balls => q,
        Species::Holes => 1.0 - q,
    }
}

/// Filling of the region where species `j ≤ k` have crossed over to the right reservoir.
fn crossed_filling(yl: &[f64], yr: &[f64], k: usize) -> Result<FillingVector> {
    let y = yl.iter().zip(yr).enumerate().map(|(j, (l, r))| if j < k { *r } else { *l }).collect();
    FillingVector::truncated(y)
}

fn profile_from_fillings(
    left: Reservoir,
    right: Reservoir,
    yl: &FillingVector,
    yr: &FillingVector,
    l: u32,
    width_sector: WidthSector,
) -> Result<PlateauProfile> {
    if l == 0 {
        return Err(BbsError::InvalidParameter("carrier capacity must be at least 1".into()));
    }
    let level = Level::Finite(l);
    let l = l as usize;
    let n = yl.len().max(yr.len()).max(l + 2);
    let (yl, yr) = (yl.padded(n), yr.padded(n));
    // Sectors 0..=l of the crossing rule; the l-th coincides in velocity with every later one.
    let rule: Vec<FillingVector> = (0..=l).map(|k| crossed_filling(&yl, &yr, k)).collect::<Result<_>>()?;
    let rule_states: Vec<DressedState> = rule.iter().map(|y| dressed_state(y, level)).collect::<Result<_>>()?;
    let final_y = FillingVector::truncated(yr.clone())?;
    let final_state = dressed_state(&final_y, level)?;

    let mut sectors = Vec::with_capacity(l + 1);
    let mut matching_defect = 0.0f64;
    for k in 0..=l {
        let (st, species) = if k < l { (&rule_states[k], left.species) } else { (&final_state, right.species) };
        let (zeta, width) = if k == 0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            let before = rule_states[k - 1].v[k - 1];
            let after = rule_states[k].v[k - 1];
            matching_defect = matching_defect.max((before - after).abs());
            let y = match width_sector {
                WidthSector::Right => &rule[k],
                WidthSector::Left => &rule[k - 1],
            };
            (before, front_width(y, k, level)?)
        };
        sectors.push(Sector {
            k,
            zeta,
            h: ball_height(st, species),
            width,
            species,
            y: st.y.clone(),
            sigma: st.sigma.clone(),
            rho: st.rho.clone(),
            v: st.v.clone(),
        });
    }
    Ok(PlateauProfile { level: l as u32, left, right, sectors, matching_defect, width_sector })
}

/// Ray solution of the domain wall between ball densities `p_left` and `p_right` under the
/// capacity-`l` evolution. Densities above one half are handled as gases of empty-site
/// clusters; sectors before the last front carry the left reservoir's species.
pub fn solve_domain_wall_densities(p_left: f64, p_right: f64, l: u32, width_sector: WidthSector) -> Result<PlateauProfile> {
    let left = Reservoir::from_density(p_left)?;
    let right = Reservoir::from_density(p_right)?;
    let yl = iid_filling(left.fugacity, l as usize + 2)?;
    let yr = iid_filling(right.fugacity, l as usize + 2)?;
    profile_from_fillings(left, right, &yl, &yr, l, width_sector)
}

/// Ray solution for reservoir fugacities `z_left, z_right ∈ [0, 1)`.
pub fn solve_domain_wall(z_left: f64, z_right: f64, l: u32) -> Result<PlateauProfile> {
    let left = Reservoir::from_fugacity(z_left)?;
    let right = Reservoir::from_fugacity(z_right)?;
    let yl = iid_filling(z_left, l as usize + 2)?;
    let yr = iid_filling(z_right, l as usize + 2)?;
    profile_from_fillings(left, right, &yl, &yr, l, WidthSector::default())
}

fn bracket(z: f64, j: i32) -> f64 {
    1.0 - z.powi(j)
}

/// Plateau height `h(k)` for an empty right half.
pub fn left_closed_height(z: f64, k: u32) -> f64 {
    let k = k as i32;
    let zk1 = z.powi(k + 1);
    zk1 * (bracket(z, k + 2) + k as f64 * bracket(z, 1))
        / (bracket(z, 2 * k + 3) + (2 * k + 1) as f64 * bracket(z, 1) * zk1)
}

/// Front position `ζ(k)` for an empty right half.
pub fn left_closed_zeta(z: f64, k: u32, level: Level) -> f64 {
    let kf = k as f64;
    let zk1 = z.powi(k as i32 + 1);
    let base = kf * (1.0 - zk1) / (1.0 + zk1);
    match level {
        Level::Finite(l) => {
            let zl1 = z.powi(l as i32 + 1);
            base * (1.0 + zl1) / (1.0 - zl1)
        }
        Level::Infinite => base,
    }
}

/// Conjectured closed-form width `Σ_k` for an empty right half.
pub fn left_closed_width(z: f64, k: u32, level: Level) -> f64 {
    let kf = k as f64;
    let zk1 = z.powi(k as i32 + 1);
    let (zlk, zlk2, zl1) = match level {
        Level::Finite(l) => (z.powi(l as i32 - k as i32), z.powi((l + k + 2) as i32), z.powi(l as i32 + 1)),
        Level::Infinite => (0.0, 0.0, 0.0),
    };
    let two_var = 8.0 * kf * kf * zk1 * (1.0 - zk1) * (1.0 - zlk) * (1.0 + zlk2) / ((1.0 + zk1).powi(3) * (1.0 - zl1).powi(2));
    (two_var / 2.0).sqrt()
}

/// Plateau height `h(k)` for an empty left half, `k < l`.
pub fn right_closed_height(z: f64, k: u32) -> f64 {
    let k = k as i32;
    z * (bracket(z, 2 * k + 2) - (k + 1) as f64 * bracket(z, 2) * z.powi(k))
        / ((1.0 + z) * (bracket(z, 2 * k + 3) - (2 * k + 3) as f64 * bracket(z, 1) * z.powi(k + 1)))
}

/// Front position `ζ(k)` for an empty left half; independent of the capacity.
pub fn right_closed_zeta(z: f64, k: u32) -> f64 {
    let kf = k as f64;
    let zk1 = z.powi(k as i32 + 1);
    (1.0 + zk1) / (1.0 - zk1)
        * (kf * (1.0 + z) / (1.0 - z) - 2.0 * z * (1.0 + z) * (1.0 - z.powi(k as i32)) / ((1.0 - z).powi(2) * (1.0 + zk1)))
}

/// Number of sectors used for the infinite capacity: until the plateau heights vanish.
fn infinite_sector_count(z: f64) -> u32 {
    let mut k = 1;
    while left_closed_height(z, k) > TAIL_CUTOFF && k < 10_000 {
        k += 1;
    }
    k
}

/// Plateaux for `p_right = 0` from the closed forms. Sector vectors come from dressing the
/// closed-form occupations.
pub fn plateaux_left_closed(z: f64, level: Level) -> Result<PlateauProfile> {
    if !(z > 0.0 && z < 1.0) {
        return Err(BbsError::InvalidParameter(format!("fugacity must lie in (0, 1), got {z}")));
    }
    let last = match level {
        Level::Finite(l) if l >= 1 => l,
        Level::Finite(_) => return Err(BbsError::InvalidParameter("carrier capacity must be at least 1".into())),
        Level::Infinite => infinite_sector_count(z),
    };
    let yl = iid_filling(z, last as usize + 2)?;
    let n = yl.len();
    let mut sectors = Vec::new();
    for k in 0..=last {
        let y = crossed_filling(&yl.padded(n), &vec![0.0; n], k as usize)?;
        let st = dressed_state(&y, level)?;
        let bounded = matches!(level, Level::Finite(l) if k >= l);
        sectors.push(Sector {
            k: k as usize,
            zeta: if k == 0 { f64::NEG_INFINITY } else { left_closed_zeta(z, k, level) },
            h: if bounded { 0.0 } else { left_closed_height(z, k) },
            width: if k == 0 { 0.0 } else { left_closed_width(z, k, level) },
            species: Species::Balls,
            y: st.y,
            sigma: st.sigma,
            rho: st.rho,
            v: st.v,
        });
    }
    Ok(PlateauProfile {
        level: last,
        left: Reservoir::from_fugacity(z)?,
        right: Reservoir::from_fugacity(0.0)?,
        sectors,
        matching_defect: 0.0,
        width_sector: WidthSector::Right,
    })
}

/// Plateaux for `p_left = 0` from the closed forms; widths use the general fluctuation formula.
pub fn plateaux_right_closed(z: f64, l: u32) -> Result<PlateauProfile> {
    if !(z > 0.0 && z < 1.0) {
        return Err(BbsError::InvalidParameter(format!("fugacity must lie in (0, 1), got {z}")));
    }
    if l == 0 {
        return Err(BbsError::InvalidParameter("carrier capacity must be at least 1".into()));
    }
    let level = Level::Finite(l);
    let yr = iid_filling(z, l as usize + 2)?;
    let n = yr.len();
    let zero = vec![0.0; n];
    let mut sectors = Vec::new();
    for k in 0..=l {
        let y = if k < l { crossed_filling(&zero, &yr.padded(n), k as usize)? } else { yr.clone() };
        let st = dressed_state(&y, level)?;
        let width = if k == 0 { 0.0 } else { front_width(&crossed_filling(&zero, &yr.padded(n), k as usize)?, k as usize, level)? };
        sectors.push(Sector {
            k: k as usize,
            zeta: if k == 0 { f64::NEG_INFINITY } else { right_closed_zeta(z, k) },
            h: if k < l { right_closed_height(z, k) } else { z / (1.0 + z) },
            width,
            species: Species::Balls,
            y: st.y,
            sigma: st.sigma,
            rho: st.rho,
            v: st.v,
        });
    }
    Ok(PlateauProfile {
        level: l,
        left: Reservoir::from_fugacity(0.0)?,
        right: Reservoir::from_fugacity(z)?,
        sectors,
        matching_defect: 0.0,
        width_sector: WidthSector::Right,
    })
}

/// Width of front `k` of a solved profile, evaluated on either side.
pub fn step_width(profile: &PlateauProfile, k: usize, side: WidthSector) -> Result<f64> {
    if k == 0 || k >= profile.sectors.len() {
        return Err(BbsError::InvalidParameter(format!("front {k} outside 1..{}", profile.sectors.len())));
    }
    let level = Level::Finite(profile.level);
    let l = profile.level as usize;
    let n = profile.sectors.iter().map(|s| s.y.len()).max().unwrap_or(0);
    let pad = |v: &[f64]| {
        let mut v = v.to_vec();
        v.resize(n, 0.0);
        v
    };
    let yl = pad(&profile.sectors[0].y);
    let yr = pad(&profile.sectors[l.min(profile.sectors.len() - 1)].y);
    let sector = match side {
        WidthSector::Right => k,
        WidthSector::Left => k - 1,
    };
    front_width(&crossed_filling(&yl, &yr, sector)?, k, level)
}

/// Average of a local quantity across front `k`, broadened by Gaussian front fluctuations.
/// A zero width gives a sharp step with the midpoint on the front itself.
pub fn step_profile(rho_left: f64, rho_right: f64, zeta_k: f64, width: f64, t: f64, r: f64) -> f64 {
    let ray = r / t;
    if width == 0.0 || !zeta_k.is_finite() {
        return if ray < zeta_k {
            rho_left
        } else if ray > zeta_k {
            rho_right
        } else {
            0.5 * (rho_left + rho_right)
        };
    }
    0.5 * (rho_left - rho_right) * erfc((t / 2.0).sqrt() * (ray - zeta_k) / width) + rho_right
}

/// Largest deviations found by finite differences in the hydrodynamic compatibility checks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DegeneracyReport {
    /// `max |∂v_i/∂y_i|`.
    pub self_independence: f64,
    /// `max |∂_p log σ_i − ∂_p v_i/(v_p − v_i)|` over pairs with distinct speeds.
    pub sigma_compatibility: f64,
    /// `max |(v_p − v_i) ∂_p v'_i − (v'_p − v'_i) ∂_p v_i|`, the flow commutator coefficient.
    pub commutator: f64,
    /// `max |Δ σ_j (v_j − v_k)|` under a finite change of `y_k`.
    pub continuity: f64,
}

impl DegeneracyReport {
    pub fn max_deviation(&self) -> f64 {
        self.self_independence.max(self.sigma_compatibility).max(self.commutator).max(self.continuity)
    }
}

/// Finite-difference checks of linear degeneracy and commuting flows for bare speeds `kappa`
/// and `kappa2`, differentiating in the first `probe` species with central step `step`.
pub fn degeneracy_checks(y: &FillingVector, kappa: &[f64], kappa2: &[f64], probe: usize, step: f64) -> Result<DegeneracyReport> {
    let n = y.len();
    let probe = probe.min(n);
    let one = vec![1.0; n];
    let eval = |yv: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        // Central differences may step slightly below zero; the formulas are analytic there.
        let f = FillingVector { y: yv.to_vec() };
        let sigma = dress(&f, &one)?;
        let v = velocities_for(&f, kappa)?;
        let v2 = velocities_for(&f, kappa2)?;
        Ok((sigma, v, v2))
    };
    let (sigma0, v0, w0) = eval(y.values())?;
    let mut rep = DegeneracyReport { self_independence: 0.0, sigma_compatibility: 0.0, commutator: 0.0, continuity: 0.0 };
    for p in 0..probe {
        let h = step * (1.0 + y.y[p]);
        let mut plus = y.y.clone();
        let mut minus = y.y.clone();
        plus[p] += h;
        minus[p] -= h;
        let denom = 2.0 * h;
        let (sp, vp, wp) = eval(&plus)?;
        let (sm, vm, wm) = eval(&minus)?;
        let d = |a: &[f64], b: &[f64], i: usize| (a[i] - b[i]) / denom;
        rep.self_independence = rep.self_independence.max(d(&vp, &vm, p).abs());
        for i in 0..n {
            if i == p {
                continue;
            }
            let dv = d(&vp, &vm, i);
            let dw = d(&wp, &wm, i);
            let dlogs = (sp[i].ln() - sm[i].ln()) / denom;
            let gap = v0[p] - v0[i];
            if gap.abs() > 1e-6 {
                rep.sigma_compatibility = rep.sigma_compatibility.max((dlogs - dv / gap).abs());
            }
            rep.commutator = rep.commutator.max((gap * dw - (w0[p] - w0[i]) * dv).abs());
        }
        let mut moved = y.y.clone();
        moved[p] += 0.3;
        let (sc, vc, _) = eval(&moved)?;
        for j in 0..n {
            if j == p {
                continue;
            }
            let before = sigma0[j] * (v0[j] - v0[p]);
            let after = sc[j] * (vc[j] - vc[p]);
            rep.continuity = rep.continuity.max((before - after).abs());
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_dense;
    use crate::spectral::speed_two_temp;
    use crate::tba::{two_temp_closed_forms, TwoTempParams};

    fn dense_dress(y: &[f64], o: &[f64]) -> Vec<f64> {
        let n = y.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| f64::from(i == j) + 2.0 * (i.min(j) + 1) as f64 * y[j]).collect())
            .collect();
        solve_dense(a, o.to_vec()).unwrap()
    }

    #[test]
    fn dressing_matches_dense_solve() {
        let y: Vec<f64> = (0..12).map(|j| 0.7 * 0.5f64.powi(j) + 0.01 * (j as f64).sin().abs()).collect();
        let o: Vec<f64> = (0..12).map(|j| (j as f64 * 0.37).cos()).collect();
        let f = FillingVector::truncated(y.clone()).unwrap();
        let fast = dress(&f, &o).unwrap();
        let slow = dense_dress(&y, &o);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        // Shift rows agree with (1 + M y)^{-1} M.
        let row = dressed_shift_row(&f, 3).unwrap();
        let m_col: Vec<f64> = (0..12).map(|j| 2.0 * (j.min(2) + 1) as f64).collect();
        let col = dense_dress(&y, &m_col);
        for (a, b) in row.iter().zip(&col) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_gas_is_undressed() {
        let f = FillingVector::truncated(vec![0.0; 6]).unwrap();
        let o = [1.0, -2.0, 3.0, 0.5, 0.0, 4.0];
        for (a, b) in dress(&f, &o).unwrap().iter().zip(o) {
            assert!((a - b).abs() < 1e-14);
        }
        let v = effective_velocities(&f, Level::Finite(3)).unwrap();
        for (a, b) in v.iter().zip([1.0, 2.0, 3.0, 3.0, 3.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn iid_filling_sums_to_density() {
        let z = 2.0 / 3.0;
        let y = iid_filling(z, 1).unwrap();
        let st = dressed_state(&y, Level::Finite(3)).unwrap();
        assert!((st.soliton_ball_density() - 0.4).abs() < 1e-12);
        assert!(iid_filling(0.0, 4).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(iid_filling(1.0, 4).is_err());
        assert!(FillingVector::new(vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn iid_filling_matches_two_temperature_ensemble() {
        let z = 0.5;
        let y = iid_filling(z, 1).unwrap();
        let st = dressed_state(&y, Level::Finite(5)).unwrap();
        let cf = two_temp_closed_forms(TwoTempParams::new(z, z).unwrap(), 30);
        for i in 0..30 {
            assert!((y.values()[i] - cf.rho[i] / cf.sigma[i]).abs() < 1e-12 * (1.0 + y.values()[i]));
            assert!((st.sigma[i] - cf.sigma[i]).abs() < 1e-10);
        }
        for k in 1..=12 {
            let want = speed_two_temp(z, z, Level::Finite(5), k).unwrap();
            assert!((st.v[k as usize - 1] - want).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn own_filling_leaves_speed_unchanged() {
        let y = iid_filling(0.4, 1).unwrap();
        let v = effective_velocities(&y, Level::Finite(4)).unwrap();
        for k in 0..6 {
            let mut p = y.values().to_vec();
            p[k] += 1e-6;
            let w = effective_velocities(&FillingVector::truncated(p).unwrap(), Level::Finite(4)).unwrap();
            assert!((w[k] - v[k]).abs() < 1e-12, "k={}", k + 1);
            let other = if k == 0 { 1 } else { 0 };
            assert!((w[other] - v[other]).abs() > 1e-12);
        }
    }

    #[test]
    fn equal_reservoirs_give_flat_profile() {
        let p = solve_domain_wall(0.3, 0.3, 4).unwrap();
        for s in &p.sectors {
            assert!((s.h - 0.3 / 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn two_level_plateau() {
        let z = 2.0 / 3.0;
        let p = solve_domain_wall(z, 0.0, 2).unwrap();
        let h1 = (z.powi(4) + z.powi(3) + 2.0 * z * z) / (z.powi(4) + z.powi(3) + 4.0 * z * z + z + 1.0);
        assert!((p.height(1) - h1).abs() < 1e-12);
        assert!((p.height(1) - 0.3511).abs() < 5e-5);
        assert!((p.zeta(1) - 0.7085).abs() < 5e-5);
        assert!((p.zeta(2) - 2.0).abs() < 1e-12);
        assert!(p.matching_defect < 1e-10);
    }

    #[test]
    fn general_solver_matches_left_closed_forms() {
        for &z in &[0.3, 0.5, 2.0 / 3.0] {
            for &l in &[2u32, 3, 4, 10] {
                let g = solve_domain_wall(z, 0.0, l).unwrap();
                let c = plateaux_left_closed(z, Level::Finite(l)).unwrap();
                assert!(g.matching_defect < 1e-10);
                for k in 0..=l as usize {
                    assert!((g.height(k) - c.height(k)).abs() < 1e-10, "z={z} l={l} k={k}");
                    if k > 0 {
                        assert!((g.zeta(k) - c.zeta(k)).abs() < 1e-10, "z={z} l={l} k={k}");
                    }
                }
                assert!((c.height(0) - z / (1.0 + z)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn general_solver_matches_right_closed_forms() {
        for &z in &[0.3, 0.5, 2.0 / 3.0] {
            for &l in &[2u32, 3, 4, 10] {
                let g = solve_domain_wall(0.0, z, l).unwrap();
                let c = plateaux_right_closed(z, l).unwrap();
                assert!(g.matching_defect < 1e-10);
                for k in 0..=l as usize {
                    assert!((g.height(k) - c.height(k)).abs() < 1e-10, "z={z} l={l} k={k}");
                    if k > 0 {
                        assert!((g.zeta(k) - c.zeta(k)).abs() < 1e-10, "z={z} l={l} k={k}: {} vs {}", g.zeta(k), c.zeta(k));
                    }
                }
            }
        }
    }

    #[test]
    fn right_closed_values() {
        let z = 2.0 / 3.0;
        let c = plateaux_right_closed(z, 2).unwrap();
        assert!((c.height(1) - 0.1935).abs() < 5e-5);
        assert!((c.zeta(2) - 2.6316).abs() < 5e-5);
        assert!((right_closed_zeta(z, 10) - 31.2866).abs() < 5e-5);
        assert!((right_closed_zeta(0.999, 1) - 1.0).abs() < 1e-9);
        assert!((right_closed_height(0.999, 1) - 0.2).abs() < 1e-2);
        assert!((right_closed_height(z, 0)).abs() < 1e-15);
    }

    #[test]
    fn closed_form_width_matches_fluctuation_formula() {
        for &z in &[0.3 / 0.7, 0.5, 2.0 / 3.0] {
            for &l in &[2u32, 3, 5] {
                let p = solve_domain_wall(z, 0.0, l).unwrap();
                for k in 1..=l {
                    let want = left_closed_width(z, k, Level::Finite(l));
                    assert!((p.width(k as usize) - want).abs() < 1e-6, "z={z} l={l} k={k}: {} vs {want}", p.width(k as usize));
                }
            }
        }
    }

    #[test]
    fn width_is_the_same_on_both_sides_of_a_front() {
        for &(pl, pr, l) in &[(0.3, 0.0, 3u32), (0.4, 0.2, 5), (0.0, 0.35, 4), (0.2, 0.4, 3)] {
            let p = solve_domain_wall_densities(pl, pr, l, WidthSector::Right).unwrap();
            for k in 1..=l as usize {
                let a = step_width(&p, k, WidthSector::Right).unwrap();
                let b = step_width(&p, k, WidthSector::Left).unwrap();
                assert!((a - b).abs() < 1e-10 * (1.0 + a), "pl={pl} pr={pr} k={k}: {a} vs {b}");
                assert!((a - p.width(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rightmost_step_does_not_broaden() {
        let p = solve_domain_wall(0.4, 0.0, 3).unwrap();
        assert!(p.width(3) < 1e-12);
        let empty = solve_domain_wall(0.0, 0.0, 3).unwrap();
        assert!(empty.sectors.iter().all(|s| s.width == 0.0 && s.h == 0.0));
    }

    #[test]
    fn step_profile_limits() {
        assert!((step_profile(0.3, 0.1, 1.2, 0.4, 500.0, 600.0) - 0.2).abs() < 1e-15);
        assert!((step_profile(0.3, 0.1, 1.2, 0.4, 500.0, -1e4) - 0.3).abs() < 1e-15);
        assert!((step_profile(0.3, 0.1, 1.2, 0.4, 500.0, 1e5) - 0.1).abs() < 1e-15);
        assert_eq!(step_profile(0.3, 0.1, 1.2, 0.0, 500.0, 599.0), 0.3);
    }

    #[test]
    fn above_half_filling_intermediate_plateau() {
        let p = solve_domain_wall_densities(0.8, 0.3, 10, WidthSector::Right).unwrap();
        assert_eq!(p.sectors[5].species, Species::Holes);
        // Heights decrease toward 1 − p_R across the many narrow plateaux before the last front.
        for k in 1..10 {
            assert!(p.height(k) < p.height(k - 1) && p.height(k) > 0.7);
        }
        assert!((p.height(9) - 0.7).abs() < 1e-3);
        assert!((p.height(0) - 0.8).abs() < 1e-12 && (p.height(10) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn degeneracy_of_iid_state() {
        let y = iid_filling(0.5, 1).unwrap();
        let k2 = bare_speeds(y.len(), Level::Finite(2));
        let k5 = bare_speeds(y.len(), Level::Finite(5));
        let rep = degeneracy_checks(&y, &k2, &k5, 8, 1e-5).unwrap();
        assert!(rep.max_deviation() < 1e-6, "{rep:?}");
        let zero = FillingVector::truncated(vec![0.0; 6]).unwrap();
        let rep = degeneracy_checks(&zero, &k2[..6], &k5[..6], 6, 1e-5).unwrap();
        assert!(rep.max_deviation() < 1e-6, "{rep:?}");
    }

    #[test]
    fn charge_identity() {
        let y = FillingVector::truncated((0..10).map(|j| 0.3 / (1.0 + j as f64)).collect()).unwrap();
        let st = dressed_state(&y, Level::Finite(3)).unwrap();
        let h: Vec<f64> = (0..10).map(|j| ((j * 7 % 5) as f64) - 1.5).collect();
        let lhs: f64 = h.iter().zip(&st.rho).map(|(a, b)| a * b).sum();
        let hd = dress(&y, &h).unwrap();
        let rhs: f64 = hd.iter().zip(y.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
