//! Monte Carlo harness: random domain-wall and homogeneous initial states, exact evolution and
//! deterministic accumulation of density profiles, windowed soliton densities and currents.

use crate::dynamics::{carrier_loads, evolve, open_energies, Boundary, Level, State};
use crate::error::{BbsError, Result};
use crate::ghd::{solve_domain_wall_densities, WidthSector};
use crate::linalg::solve_dense;
use crate::special::erfc;
use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

pub const CSV_VERSION_LINE: &str = "# bbs-csv v1";

/// Position of the wall in the `r` coordinate: rays `r = ζt` start here.
pub const WALL_R: f64 = 0.5;

/// Sites `[start_r, end_r)` at snapshot `time`, averaged per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SiteWindow {
    pub time: usize,
    pub start_r: i64,
    pub end_r: i64,
}

/// Simulation protocol. The left half holds sites `0..wall`, the right half `wall..len`; the
/// coordinate `r = i − wall + 1` puts the wall between `r = 0` and `r = 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Protocol {
    pub len: usize,
    pub level: u32,
    pub p_left: f64,
    pub p_right: f64,
    pub wall: usize,
    pub times: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    /// Window width and stride of the soliton density estimator; zero width disables it.
    pub window: usize,
    pub stride: usize,
    /// Largest soliton amplitude resolved by the window estimator.
    pub max_amplitude: usize,
    pub measure_currents: bool,
    pub site_windows: Vec<SiteWindow>,
    /// Skip the hydrodynamic reach check (the per-trajectory checks still run).
    pub allow_wrap_risk: bool,
}

impl Protocol {
    pub fn domain_wall(len: usize, level: u32, p_left: f64, p_right: f64, times: Vec<usize>, samples: usize, seed: u64) -> Self {
        Protocol {
            len,
            level,
            p_left,
            p_right,
            wall: len / 2,
            times,
            samples,
            seed,
            window: 256,
            stride: 64,
            max_amplitude: level as usize + 1,
            measure_currents: false,
            site_windows: Vec::new(),
            allow_wrap_risk: false,
        }
    }

    pub fn homogeneous(len: usize, level: u32, p: f64, times: Vec<usize>, samples: usize, seed: u64) -> Self {
        let mut pr = Self::domain_wall(len, level, p, p, times, samples, seed);
        pr.measure_currents = true;
        pr
    }

    pub fn t_max(&self) -> usize {
        self.times.last().copied().unwrap_or(0)
    }

    pub fn r_of(&self, site: usize) -> i64 {
        site as i64 - self.wall as i64 + 1
    }

    pub fn site_of(&self, r: i64) -> Option<usize> {
        let i = r + self.wall as i64 - 1;
        (0..self.len as i64).contains(&i).then_some(i as usize)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.p_left == self.p_right
    }

    /// Fastest front speed of the wall from `pl` to `pr` (zero for equal densities).
    fn front_reach(&self, pl: f64, pr: f64) -> f64 {
        if pl == pr {
            return 0.0;
        }
        match solve_domain_wall_densities(pl, pr, self.level, WidthSector::Right) {
            Ok(p) => p.sectors.last().map(|s| s.zeta).unwrap_or(0.0).max(self.level as f64),
            // Half-filled reservoirs are not covered by the solver; their fronts run at most at
            // the half-filled limit, which stays below `l(l+2)/3 + l`.
            Err(_) => self.level as f64 * (self.level as f64 + 2.0) / 3.0 + self.level as f64,
        }
    }

    /// Sites each front may travel by `t_max`, with a diffusive margin.
    pub fn reach(&self) -> (f64, f64) {
        let t = self.t_max() as f64;
        let margin = 8.0 * t.sqrt() + 64.0;
        (self.front_reach(self.p_left, self.p_right) * t + margin, self.front_reach(self.p_right, self.p_left) * t + margin)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BbsError::InvalidParameter(m));
        if self.len < 2 {
            return bad("lattice must have at least two sites".into());
        }
        if self.level == 0 {
            return bad("carrier capacity must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("at least one sample is required".into());
        }
        if self.times.is_empty() || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("snapshot times must be a non-empty increasing list".into());
        }
        for p in [self.p_left, self.p_right] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("density {p} outside [0, 1]"));
            }
        }
        if self.wall == 0 || self.wall >= self.len {
            return bad(format!("wall {} must split the lattice of {} sites", self.wall, self.len));
        }
        if self.window > 0 && (self.window > self.len || self.stride == 0) {
            return bad("window must fit the lattice and stride must be positive".into());
        }
        for w in &self.site_windows {
            if !self.times.contains(&w.time) || w.start_r >= w.end_r || self.site_of(w.start_r).is_none() || self.site_of(w.end_r - 1).is_none() {
                return bad(format!("site window {w:?} is not inside the lattice at a snapshot time"));
            }
        }
        if !self.allow_wrap_risk && !self.is_homogeneous() {
            let (wall_reach, seam_reach) = self.reach();
            if wall_reach >= (self.len - self.wall) as f64 || seam_reach >= self.wall as f64 {
                return Err(BbsError::Wrapping(format!(
                    "fronts travel up to {wall_reach:.0} sites from the wall and {seam_reach:.0} from the seam by t={}; \
                     halves of {} and {} sites are too short",
                    self.t_max(),
                    self.wall,
                    self.len - self.wall
                )));
            }
        }
        Ok(())
    }

    pub fn window_starts(&self) -> Vec<usize> {
        if self.window == 0 {
            return Vec::new();
        }
        (0..=(self.len - self.window) / self.stride).map(|i| i * self.stride).collect()
    }
}

fn rng_for(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// Initial state of sample `sample`: independent Bernoulli sites with density `p_left` left of
/// the wall and `p_right` right of it.
pub fn sample_initial(protocol: &Protocol, sample: usize) -> Result<State> {
    let mut rng = rng_for(protocol.seed, sample);
    let mut s = State::zeros(protocol.len);
    for (range, p) in [(0..protocol.wall, protocol.p_left), (protocol.wall..protocol.len, protocol.p_right)] {
        let d = Bernoulli::new(p).map_err(|e| BbsError::InvalidParameter(e.to_string()))?;
        for i in range {
            if d.sample(&mut rng) {
                s.set(i, true);
            }
        }
    }
    Ok(s)
}

/// Integer sums over samples; merging is exact, so results do not depend on scheduling.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct Accumulator {
    pub samples: u64,
    /// `site_counts[snapshot][site]`: samples with a ball at the site.
    pub site_counts: Vec<Vec<u32>>,
    /// `[snapshot][window][amplitude − 1]` sums of per-sample soliton counts and their squares.
    pub soliton_sums: Vec<Vec<Vec<i64>>>,
    pub soliton_squares: Vec<Vec<Vec<u64>>>,
    /// Per site window: sums of per-sample ball counts and their squares.
    pub window_sums: Vec<u64>,
    pub window_squares: Vec<u128>,
    /// Per snapshot: sums over samples of the total carrier load and its square.
    pub load_sums: Vec<u64>,
    pub load_squares: Vec<u128>,
    /// Per snapshot and load value: bond counts and squares of per-sample counts.
    pub load_histogram: Vec<Vec<u64>>,
    pub load_histogram_squares: Vec<Vec<u128>>,
}

impl Accumulator {
    fn new(p: &Protocol) -> Self {
        let nt = p.times.len();
        let nw = p.window_starts().len();
        let jm = p.max_amplitude;
        let (nh, ncur) = if p.measure_currents { (p.level as usize + 1, nt) } else { (0, 0) };
        Accumulator {
            samples: 0,
            site_counts: vec![vec![0; p.len]; nt],
            soliton_sums: vec![vec![vec![0; jm]; nw]; nt],
            soliton_squares: vec![vec![vec![0; jm]; nw]; nt],
            window_sums: vec![0; p.site_windows.len()],
            window_squares: vec![0; p.site_windows.len()],
            load_sums: vec![0; ncur],
            load_squares: vec![0; ncur],
            load_histogram: vec![vec![0; nh]; ncur],
            load_histogram_squares: vec![vec![0; nh]; ncur],
        }
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self.samples += other.samples;
        for (a, b) in self.site_counts.iter_mut().zip(&other.site_counts) {
            add(a, b);
        }
        for (a, b) in self.soliton_sums.iter_mut().zip(&other.soliton_sums) {
            for (x, y) in a.iter_mut().zip(b) {
                add(x, y);
            }
        }
        for (a, b) in self.soliton_squares.iter_mut().zip(&other.soliton_squares) {
            for (x, y) in a.iter_mut().zip(b) {
                add(x, y);
            }
        }
        add(&mut self.window_sums, &other.window_sums);
        add(&mut self.window_squares, &other.window_squares);
        add(&mut self.load_sums, &other.load_sums);
        add(&mut self.load_squares, &other.load_squares);
        for (a, b) in self.load_histogram.iter_mut().zip(&other.load_histogram) {
            add(a, b);
        }
        for (a, b) in self.load_histogram_squares.iter_mut().zip(&other.load_histogram_squares) {
            add(a, b);
        }
        self
    }
}

/// Mean and standard error from a sum and a sum of squares over `n` samples.
pub fn mean_stderr(sum: f64, squares: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = ((squares - sum * sum / n) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// Soliton counts `m_1..m_jmax` per window from the drops of global capacity-`l` passes:
/// `m_k = 2E_k − E_{k−1} − E_{k+1}` with the energies restricted to the window.
pub fn windowed_soliton_counts(state: &State, starts: &[usize], width: usize, max_amplitude: usize) -> Result<Vec<Vec<i64>>> {
    let mut energies = vec![vec![0i64; max_amplitude + 2]; starts.len()];
    for l in 1..=max_amplitude as u32 + 1 {
        let next = evolve(state, Level::Finite(l))?;
        let drops: Vec<u64> = state.words().iter().zip(next.words()).map(|(a, b)| a & !b).collect();
        let drops = State::from_words(state.len(), drops, Boundary::Periodic);
        for (w, &s) in starts.iter().enumerate() {
            energies[w][l as usize] = drops.count_range(s, s + width) as i64;
        }
    }
    Ok(energies
        .iter()
        .map(|e| (1..=max_amplitude).map(|k| 2 * e[k] - e[k - 1] - e[k + 1]).collect())
        .collect())
}

/// Soliton counts of an isolated window: energies of open passes with an empty entering
/// carrier. Solitons cut by the window edges are counted as shorter ones.
pub fn open_window_soliton_counts(state: &State, start: usize, width: usize, max_amplitude: usize) -> Vec<i64> {
    let w = state.window(start, width);
    let mut e = vec![0i64];
    e.extend(open_energies(&w, max_amplitude as u32 + 1).iter().map(|&x| x as i64));
    (1..=max_amplitude).map(|k| 2 * e[k] - e[k - 1] - e[k + 1]).collect()
}

/// Largest site holding a ball in `range`, if any.
fn last_ball(state: &State, start: usize, end: usize) -> Option<usize> {
    (start..end).rev().find(|&i| state.get(i) == 1)
}

/// Exact wrap checks available when a half starts empty: the occupied region must not have
/// spread to within a diffusive margin of the opposite edge of the empty half.
fn check_no_wrap(p: &Protocol, state: &State, t: usize) -> Result<()> {
    let margin = (8.0 * (t as f64).sqrt()) as usize + 64;
    if p.p_right == 0.0 && p.p_left > 0.0 {
        if let Some(i) = last_ball(state, p.wall, p.len) {
            if i + margin >= p.len {
                return Err(BbsError::Wrapping(format!("balls from the wall came within {margin} sites of the seam at t={t}")));
            }
        }
    }
    if p.p_left == 0.0 && p.p_right > 0.0 {
        if let Some(i) = last_ball(state, 0, p.wall) {
            if i + margin >= p.wall {
                return Err(BbsError::Wrapping(format!("balls from the seam came within {margin} sites of the wall at t={t}")));
            }
        }
    }
    Ok(())
}

fn run_sample(p: &Protocol, sample: usize, acc: &mut Accumulator) -> Result<()> {
    let mut state = sample_initial(p, sample)?;
    let balls = state.ball_count();
    let starts = p.window_starts();
    let level = Level::Finite(p.level);
    let mut now = 0;
    for (ti, &t) in p.times.iter().enumerate() {
        while now < t {
            state = evolve(&state, level)?;
            now += 1;
        }
        if state.ball_count() != balls {
            return Err(BbsError::Contract(format!("ball count changed in sample {sample}")));
        }
        check_no_wrap(p, &state, t)?;
        let counts = &mut acc.site_counts[ti];
        for (wi, &w) in state.words().iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                counts[wi * 64 + bits.trailing_zeros() as usize] += 1;
                bits &= bits - 1;
            }
        }
        if !starts.is_empty() && 2 * balls < p.len {
            let m = windowed_soliton_counts(&state, &starts, p.window, p.max_amplitude)?;
            for (w, mw) in m.iter().enumerate() {
                for (k, &c) in mw.iter().enumerate() {
                    acc.soliton_sums[ti][w][k] += c;
                    acc.soliton_squares[ti][w][k] += (c * c) as u64;
                }
            }
        }
        for (wi, win) in p.site_windows.iter().enumerate() {
            if win.time == t {
                let a = p.site_of(win.start_r).expect("validated");
                let b = p.site_of(win.end_r - 1).expect("validated") + 1;
                let c = state.count_range(a, b) as u64;
                acc.window_sums[wi] += c;
                acc.window_squares[wi] += (c as u128) * (c as u128);
            }
        }
        if p.measure_currents {
            let loads = carrier_loads(&state, level)?;
            let total: u64 = loads.iter().map(|&n| n as u64).sum();
            acc.load_sums[ti] += total;
            acc.load_squares[ti] += (total as u128) * (total as u128);
            let mut hist = vec![0u64; p.level as usize + 1];
            for &n in &loads {
                hist[n as usize] += 1;
            }
            for (n, &c) in hist.iter().enumerate() {
                acc.load_histogram[ti][n] += c;
                acc.load_histogram_squares[ti][n] += (c as u128) * (c as u128);
            }
        }
    }
    acc.samples += 1;
    Ok(())
}

/// Snapshot results for one trajectory: the states at every snapshot time.
pub fn run_trajectory(initial: &State, protocol: &Protocol) -> Result<Vec<State>> {
    let level = Level::Finite(protocol.level);
    let mut state = initial.clone();
    let mut now = 0;
    let mut out = Vec::with_capacity(protocol.times.len());
    for &t in &protocol.times {
        while now < t {
            state = evolve(&state, level)?;
            now += 1;
        }
        out.push(state.clone());
    }
    Ok(out)
}

const CHUNK: usize = 16;

/// Bins of width `Σ` across the front.
pub const COLLAPSE_BINS: usize = 4;

/// Runs all samples, optionally on a bounded worker pool.
pub fn run_ensemble(protocol: &Protocol, threads: Option<usize>) -> Result<Accumulator> {
    protocol.validate()?;
    let work = || -> Result<Accumulator> {
        let chunks: Vec<usize> = (0..protocol.samples.div_ceil(CHUNK)).collect();
        let parts: Vec<Result<Accumulator>> = chunks
            .par_iter()
            .map(|&c| {
                let mut acc = Accumulator::new(protocol);
                for s in c * CHUNK..((c + 1) * CHUNK).min(protocol.samples) {
                    run_sample(protocol, s, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        let mut total = Accumulator::new(protocol);
        for part in parts {
            total = total.merge(part?);
        }
        Ok(total)
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| BbsError::InvalidParameter(e.to_string()))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ProfilePoint {
    pub t: usize,
    pub r: i64,
    pub zeta: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Ball density `h(r, t)` at every site for snapshot index `ti`.
pub fn measure_ball_density(p: &Protocol, acc: &Accumulator, ti: usize) -> Vec<ProfilePoint> {
    let n = acc.samples as f64;
    let t = p.times[ti];
    acc.site_counts[ti]
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (mean, stderr) = mean_stderr(c as f64, c as f64, n);
            let r = p.r_of(i);
            ProfilePoint { t, r, zeta: r as f64 / t as f64, mean, stderr }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolitonPoint {
    pub t: usize,
    /// `r` of the window centre.
    pub center: f64,
    pub amplitude: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Soliton densities `ρ_j` per window for snapshot index `ti`.
pub fn measure_soliton_density(p: &Protocol, acc: &Accumulator, ti: usize) -> Vec<SolitonPoint> {
    let n = acc.samples as f64;
    let w = p.window as f64;
    let mut out = Vec::new();
    for (wi, &s) in p.window_starts().iter().enumerate() {
        let center = p.r_of(s) as f64 + (w - 1.0) / 2.0;
        for k in 0..p.max_amplitude {
            let (m, e) = mean_stderr(acc.soliton_sums[ti][wi][k] as f64, acc.soliton_squares[ti][wi][k] as f64, n);
            out.push(SolitonPoint { t: p.times[ti], center, amplitude: k + 1, mean: m / w, stderr: e / w });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WindowMean {
    pub window: SiteWindow,
    pub mean: f64,
    pub stderr: f64,
}

/// Ball density averaged over each configured site window, with the spread across samples.
pub fn measure_site_windows(p: &Protocol, acc: &Accumulator) -> Vec<WindowMean> {
    let n = acc.samples as f64;
    p.site_windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let width = (w.end_r - w.start_r) as f64;
            let (m, e) = mean_stderr(acc.window_sums[i] as f64, acc.window_squares[i] as f64, n);
            WindowMean { window: *w, mean: m / width, stderr: e / width }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CurrentMeasurement {
    pub t: usize,
    pub current: f64,
    pub stderr: f64,
    /// Fraction of bonds with carrier load `n`, and its standard error.
    pub load_frequency: Vec<f64>,
    pub load_stderr: Vec<f64>,
}

/// Mean carrier load per bond, which equals the ball current, for snapshot index `ti`.
pub fn measure_current(p: &Protocol, acc: &Accumulator, ti: usize) -> Result<CurrentMeasurement> {
    if !p.measure_currents {
        return Err(BbsError::Contract("protocol did not record currents".into()));
    }
    let n = acc.samples as f64;
    let len = p.len as f64;
    let (m, e) = mean_stderr(acc.load_sums[ti] as f64, acc.load_squares[ti] as f64, n);
    let (freq, err) = acc.load_histogram[ti]
        .iter()
        .zip(&acc.load_histogram_squares[ti])
        .map(|(&c, &q)| {
            let (a, b) = mean_stderr(c as f64, q as f64, n);
            (a / len, b / len)
        })
        .unzip();
    Ok(CurrentMeasurement { t: p.times[ti], current: m / len, stderr: e / len, load_frequency: freq, load_stderr: err })
}

/// Observations of one step at one time: positions `r` with means and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub t: f64,
    pub r: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepFit {
    pub left: f64,
    pub right: f64,
    /// Lattice offset `δ` of the front from `ζt`.
    pub offset: f64,
    pub offset_stderr: f64,
    #[serde(rename = "Sigma")]
    pub width: f64,
    pub width_stderr: f64,
    /// `A = 1/√(2Σ²)`.
    pub inverse_width: f64,
    pub chi2_per_dof: f64,
    /// Largest deviation between binned rescaled curves at different times, in standard errors;
    /// NaN for a single time.
    pub collapse: f64,
}

/// Value and gradient of the step in `(h_L, h_R, δ, ln Σ)` at `u0 = (r − ζt)/√t`, `s = 1/√t`.
fn model(theta: &[f64; 4], u0: f64, s: f64) -> (f64, [f64; 4]) {
    let [hl, hr, delta, ls] = *theta;
    let width = ls.exp();
    let w = (u0 - delta * s) / (2f64.sqrt() * width);
    let e = erfc(w);
    let g = (hl - hr) / PI.sqrt() * (-w * w).exp();
    let value = hr + 0.5 * (hl - hr) * e;
    (value, [0.5 * e, 1.0 - 0.5 * e, g * s / (2f64.sqrt() * width), g * w])
}

/// Least-squares fit of `h_R + ½(h_L − h_R) erfc(u/(√2 Σ))` with `u = (r − ζt − δ)/√t` to all
/// times at once; `δ` is a lattice offset of the front shared by all times.
pub fn fit_step(data: &[StepData], zeta: f64) -> Result<StepFit> {
    let points: Vec<(f64, f64, f64, f64)> = data
        .iter()
        .flat_map(|d| {
            let s = 1.0 / d.t.sqrt();
            d.r.iter().zip(&d.mean).zip(&d.stderr).map(move |((&r, &m), &e)| ((r - zeta * d.t) * s, s, m, e))
        })
        .collect();
    if points.len() < 8 {
        return Err(BbsError::InvalidParameter(format!("{} points are too few for a step fit", points.len())));
    }
    let floor = points.iter().map(|p| p.3).filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1e-3 };
    let weight = |e: f64| 1.0 / e.max(floor);
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = (sorted.len() / 6).max(1);
    let hl0 = sorted[..q].iter().map(|p| p.2).sum::<f64>() / q as f64;
    let hr0 = sorted[sorted.len() - q..].iter().map(|p| p.2).sum::<f64>() / q as f64;
    let span = sorted.last().unwrap().0 - sorted[0].0;
    let noise = points.iter().map(|p| p.3).sum::<f64>() / points.len() as f64;
    if (hl0 - hr0).abs() < 3.0 * noise / (q as f64).sqrt() {
        return Err(BbsError::InvalidParameter("no resolvable step in the data".into()));
    }
    let mut theta = [hl0, hr0, 0.0, (span / 10.0).ln()];
    let chi2 = |th: &[f64; 4]| -> f64 {
        points.iter().map(|&(u, s, m, e)| ((m - model(th, u, s).0) * weight(e)).powi(2)).sum()
    };
    let mut current = chi2(&theta);
    let mut lambda = 1e-3;
    let mut normal = vec![vec![0.0; 4]; 4];
    for _ in 0..500 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for &(u, s, m, e) in &points {
            let (v, g) = model(&theta, u, s);
            let w = weight(e);
            for a in 0..4 {
                jtr[a] += g[a] * w * w * (m - v);
                for b in 0..4 {
                    jtj[a][b] += g[a] * g[b] * w * w;
                }
            }
        }
        normal = jtj.iter().map(|r| r.to_vec()).collect();
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = normal.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] *= 1.0 + lambda;
            }
            let Ok(step) = solve_dense(a, jtr.to_vec()) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2], theta[3] + step[3]];
            let c = chi2(&trial);
            if c < current {
                let done = (current - c) < 1e-12 * current.max(1e-300);
                theta = trial;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let dof = (points.len() - 4) as f64;
    let width = theta[3].exp();
    // Parameter covariance from the Gauss-Newton normal matrix, scaled by the reduced chi².
    let red = current / dof;
    let variance = |i: usize| {
        let mut e = vec![0.0; 4];
        e[i] = 1.0;
        solve_dense(normal.clone(), e).map(|x| x[i] * red.max(1.0)).unwrap_or(f64::NAN)
    };
    let width_stderr = width * variance(3).sqrt();
    let mut fit = StepFit {
        left: theta[0],
        right: theta[1],
        offset: theta[2],
        offset_stderr: variance(2).sqrt(),
        width,
        width_stderr,
        inverse_width: 1.0 / (2.0f64.sqrt() * width),
        chi2_per_dof: red,
        collapse: f64::NAN,
    };
    if data.len() > 1 {
        fit.collapse = collapse_quality(data, zeta, &fit, COLLAPSE_BINS)?;
    }
    Ok(fit)
}

/// Collapse of the rescaled curves: residuals from the fitted profile are averaged in `bins`
/// equal bins of `u = (r − ζt − δ)/√t` over `[−2Σ, 2Σ]` for every time; returns the largest
/// difference between two times in units of its standard error.
pub fn collapse_quality(data: &[StepData], zeta: f64, fit: &StepFit, bins: usize) -> Result<f64> {
    if data.len() < 2 || bins == 0 {
        return Err(BbsError::InvalidParameter("collapse needs at least two times and one bin".into()));
    }
    let theta = [fit.left, fit.right, fit.offset, fit.width.ln()];
    let (lo, hi) = (-2.0 * fit.width, 2.0 * fit.width);
    let binned: Vec<Vec<Option<(f64, f64)>>> = data
        .iter()
        .map(|d| {
            let s = 1.0 / d.t.sqrt();
            let mut sum = vec![0.0; bins];
            let mut var = vec![0.0; bins];
            let mut cnt = vec![0usize; bins];
            for ((&r, &m), &e) in d.r.iter().zip(&d.mean).zip(&d.stderr) {
                let u0 = (r - zeta * d.t) * s;
                let u = u0 - fit.offset * s;
                if u < lo || u >= hi {
                    continue;
                }
                let b = (((u - lo) / (hi - lo)) * bins as f64) as usize;
                sum[b] += m - model(&theta, u0, s).0;
                var[b] += e * e;
                cnt[b] += 1;
            }
            (0..bins)
                .map(|b| (cnt[b] > 0).then(|| (sum[b] / cnt[b] as f64, var[b].sqrt() / cnt[b] as f64)))
                .collect()
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            for b in 0..bins {
                if let (Some((m1, e1)), Some((m2, e2))) = (binned[i][b], binned[j][b]) {
                    let se = (e1 * e1 + e2 * e2).sqrt();
                    if se > 0.0 {
                        worst = worst.max((m1 - m2).abs() / se);
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Profile CSV: `t,r,zeta,h_mean,h_stderr` for sites with `r` in `r_range`.
pub fn write_profile_csv<W: Write>(out: &mut W, p: &Protocol, acc: &Accumulator, header: &[String], r_range: Option<(i64, i64)>) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "t,r,zeta,h_mean,h_stderr")?;
    for ti in 0..p.times.len() {
        for pt in measure_ball_density(p, acc, ti) {
            if r_range.is_none_or(|(a, b)| pt.r >= a && pt.r < b) {
                writeln!(out, "{},{},{},{},{}", pt.t, pt.r, pt.zeta, pt.mean, pt.stderr)?;
            }
        }
    }
    Ok(())
}

/// Soliton CSV: `t,window_center,j,rho_mean,rho_stderr`.
pub fn write_soliton_csv<W: Write>(out: &mut W, p: &Protocol, acc: &Accumulator, header: &[String]) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "t,window_center,j,rho_mean,rho_stderr")?;
    for ti in 0..p.times.len() {
        for pt in measure_soliton_density(p, acc, ti) {
            writeln!(out, "{},{},{},{},{}", pt.t, pt.center, pt.amplitude, pt.mean, pt.stderr)?;
        }
    }
    Ok(())
}
