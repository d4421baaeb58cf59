//! Exact box-ball dynamics: carriers, time evolutions, conserved energies and state counting.

mod carrier;
mod content;
pub mod reference;
mod state;

pub use carrier::{apply_r, Carrier, Crystal};
pub use content::{count_isolevel, SolitonContent};
pub use state::{Boundary, State};

use crate::error::{BbsError, Result};
use carrier::{last_empty_run_end, pass_tail_load, pass_with_loads, pass_words};

/// Carrier capacity of a time evolution; `Infinite` means capacity ⌈L/2⌉.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Level {
    Finite(u32),
    Infinite,
}

impl Level {
    pub fn capacity(self, len: usize) -> u32 {
        match self {
            Level::Finite(l) => l,
            Level::Infinite => (len.div_ceil(2)).max(1) as u32,
        }
    }

    /// `min(k, l)`, the bare speed of a `k`-soliton.
    pub fn kappa(self, k: u64) -> u64 {
        match self {
            Level::Finite(l) => k.min(l as u64),
            Level::Infinite => k,
        }
    }
}

impl From<u32> for Level {
    fn from(l: u32) -> Self {
        Level::Finite(l)
    }
}

fn check_periodic(state: &State, l: u32) -> Result<()> {
    if state.boundary() != Boundary::Periodic {
        return Err(BbsError::Contract("periodic state required".into()));
    }
    if l == 0 {
        return Err(BbsError::InvalidParameter("carrier capacity must be at least 1".into()));
    }
    if state.is_empty() {
        return Err(BbsError::Contract("empty lattice".into()));
    }
    Ok(())
}

/// Load of the carrier entering site 0 in a closed pass. Returns `None` when neither a run of
/// `l` empty sites nor the double pass yields a load that reproduces itself.
fn entry_load(state: &State, l: u32) -> Option<u32> {
    let (w, len) = (state.words(), state.len());
    if 2 * state.ball_count() != len {
        if let Some(j) = last_empty_run_end(w, len, l) {
            return Some(pass_tail_load(w, j, len, l, 0));
        }
    }
    // Double pass from the empty carrier.
    let first = pass_tail_load(w, 0, len, l, 0);
    let second = pass_tail_load(w, 0, len, l, first);
    (first == second).then_some(first)
}

/// The carrier that reproduces itself after a full pass around the ring.
pub fn find_stationary_carrier(state: &State, l: u32) -> Result<Carrier> {
    check_periodic(state, l)?;
    let m = state.ball_count();
    if 2 * m >= state.len() {
        return Err(BbsError::DensityAtLeastHalf { balls: m, len: state.len() });
    }
    let load = entry_load(state, l).ok_or(BbsError::CarrierNotStationary { start: 0, end: 0 })?;
    Ok(Carrier { capacity: l, load })
}

fn evolve_carrier_route(state: &State, l: u32) -> Result<State> {
    let load = entry_load(state, l);
    let start = match load {
        Some(n) => n,
        None => {
            let len = state.len();
            let first = pass_tail_load(state.words(), 0, len, l, 0);
            let second = pass_tail_load(state.words(), 0, len, l, first);
            return Err(BbsError::CarrierNotStationary { start: first, end: second });
        }
    };
    let mut dst = vec![0u64; state.words().len()];
    let end = pass_words(state.words(), &mut dst, state.len(), l, start);
    if end != start {
        return Err(BbsError::CarrierNotStationary { start, end });
    }
    Ok(State::from_words(state.len(), dst, Boundary::Periodic))
}

/// One step of the capacity-`l` evolution on a periodic lattice.
pub fn evolve(state: &State, level: Level) -> Result<State> {
    let l = level.capacity(state.len());
    check_periodic(state, l)?;
    if 2 * state.ball_count() > state.len() {
        return Ok(evolve_carrier_route(&state.complement(), l)?.complement());
    }
    evolve_carrier_route(state, l)
}

/// Applies `evolve` `steps` times.
pub fn evolve_n(state: &State, level: Level, steps: usize) -> Result<State> {
    let mut s = state.clone();
    for _ in 0..steps {
        s = evolve(&s, level)?;
    }
    Ok(s)
}

/// `E_l`: number of sites emptied by one capacity-`l` step.
pub fn energy(state: &State, l: u32) -> Result<u64> {
    let next = evolve(state, Level::Finite(l))?;
    Ok(state.count_drops(&next) as u64)
}

/// Energies `E_1, E_2, …` up to and including the first repeated value.
pub fn energies(state: &State) -> Result<Vec<u64>> {
    let len = state.len();
    let m = state.ball_count();
    let cap = (m.min(len.div_ceil(2)) + 1) as u32;
    let mut e = Vec::new();
    for l in 1..=cap.max(1) {
        let v = energy(state, l)?;
        let saturated = e.last() == Some(&v);
        e.push(v);
        if saturated {
            break;
        }
    }
    Ok(e)
}

/// Soliton multiplicities from second differences of the energies.
pub fn soliton_content(state: &State) -> Result<SolitonContent> {
    let e = energies(state)?;
    SolitonContent::from_energies(state.len() as u64, &e)
}

/// Carrier loads on the bond right of every site during the capacity-`l` pass, which equal
/// the number of balls crossing that bond in one step.
pub fn carrier_loads(state: &State, level: Level) -> Result<Vec<u32>> {
    let l = level.capacity(state.len());
    check_periodic(state, l)?;
    if 2 * state.ball_count() > state.len() {
        return Err(BbsError::DensityAtLeastHalf { balls: state.ball_count(), len: state.len() });
    }
    let start = entry_load(state, l).ok_or(BbsError::CarrierNotStationary { start: 0, end: 0 })?;
    let mut loads = Vec::new();
    let (_, end) = pass_with_loads(state.words(), state.len(), l, start, &mut loads);
    if end != start {
        return Err(BbsError::CarrierNotStationary { start, end });
    }
    Ok(loads)
}

pub fn bond_current(state: &State, level: Level, site: usize) -> Result<u32> {
    if site >= state.len() {
        return Err(BbsError::InvalidParameter(format!("site {site} outside lattice of {}", state.len())));
    }
    Ok(carrier_loads(state, level)?[site])
}

/// Pass of an initially empty carrier over an open segment. Returns the new segment and the
/// balls still in the carrier after the last site.
pub fn open_pass(state: &State, l: u32) -> (State, u32) {
    let mut dst = vec![0u64; state.words().len()];
    let left = pass_words(state.words(), &mut dst, state.len(), l, 0);
    (State::from_words(state.len(), dst, Boundary::Open), left)
}

/// One step on an open segment; fails if balls would leave through the right end.
pub fn evolve_open(state: &State, l: u32) -> Result<State> {
    let (next, left) = open_pass(state, l);
    if left > 0 {
        return Err(BbsError::OpenBoundaryOverflow(left));
    }
    Ok(next)
}

/// Energies `E_1..=E_{l_max}` of a segment padded with empty sites on both sides.
pub fn open_energies(state: &State, l_max: u32) -> Vec<u64> {
    (1..=l_max)
        .map(|l| {
            let (next, _) = open_pass(state, l);
            state.count_drops(&next) as u64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str) -> State {
        State::parse(s).unwrap()
    }

    #[test]
    fn three_step_example() {
        let s = st("0001111000000");
        let a = evolve(&s, Level::Finite(3)).unwrap();
        assert_eq!(a.to_string(), "0000001111000");
        assert_eq!(evolve(&a, Level::Finite(3)).unwrap().to_string(), "0000000001111");
        assert_eq!(evolve(&s, Level::Finite(5)).unwrap().to_string(), "0000000111100");
        assert_eq!(energies(&s).unwrap(), vec![1, 2, 3, 4, 4]);
    }

    #[test]
    fn nineteen_site_example() {
        let s = st("0110011001110010100");
        let t1 = evolve(&s, Level::Finite(2)).unwrap();
        assert_eq!(t1.to_string(), "0001100110011101010");
        let t2 = evolve(&t1, Level::Finite(2)).unwrap();
        assert_eq!(t2.to_string(), "1000011001100110101");
        assert_eq!(energies(&s).unwrap(), vec![5, 8, 9, 9]);
        assert_eq!(soliton_content(&s).unwrap().multiplicities(), &[2, 2, 1]);
        // The printed carrier row belongs to the pass taking t=1 to t=2.
        let c = find_stationary_carrier(&t1, 2).unwrap();
        let mut row = vec![c.load];
        row.extend(carrier_loads(&t1, Level::Finite(2)).unwrap());
        assert_eq!(row, vec![1, 0, 0, 0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2, 2, 1, 2, 1, 2, 1]);
    }

    #[test]
    fn stationary_carrier_is_fixed_point() {
        let s = st("0001111000000");
        let c = find_stationary_carrier(&s, 3).unwrap();
        let mut load = c.load;
        for i in 0..s.len() {
            load = Carrier { capacity: 3, load }.step(s.get(i)).0.load;
        }
        assert_eq!(load, c.load);
        assert_eq!(find_stationary_carrier(&State::zeros(9), 4).unwrap().load, 0);
        assert!(find_stationary_carrier(&st("0111"), 2).is_err());
    }

    #[test]
    fn unit_capacity_shifts_right() {
        let s = st("1100101000111000");
        let t = evolve(&s, Level::Finite(1)).unwrap();
        let cells = s.cells();
        let n = cells.len();
        for i in 0..n {
            assert_eq!(t.get((i + 1) % n), cells[i]);
        }
    }

    #[test]
    fn dense_state_uses_complement() {
        let s = st("1110111011");
        let t = evolve(&s, Level::Finite(2)).unwrap();
        let want = evolve(&s.complement(), Level::Finite(2)).unwrap().complement();
        assert_eq!(t, want);
        assert_eq!(t.ball_count(), s.ball_count());
    }

    #[test]
    fn empty_state_energies() {
        let z = State::zeros(12);
        for l in 1..5 {
            assert_eq!(energy(&z, l).unwrap(), 0);
        }
        assert!(soliton_content(&z).unwrap().multiplicities().is_empty());
        assert!(carrier_loads(&z, Level::Finite(3)).unwrap().iter().all(|&n| n == 0));
    }

    #[test]
    fn first_energy_counts_ascents() {
        let s = st("011001110100101100010");
        let c = s.cells();
        let n = c.len();
        let ascents = (0..n).filter(|&i| c[i] < c[(i + 1) % n]).count() as u64;
        assert_eq!(energy(&s, 1).unwrap(), ascents);
    }

    #[test]
    fn isolated_soliton_advances_at_bare_speed() {
        for l in 1..=6u32 {
            let mut s = State::zeros(40);
            for i in 2..6 {
                s.set(i, true);
            }
            let mut moved = 0u64;
            for _ in 0..5 {
                moved += carrier_loads(&s, Level::Finite(l)).unwrap().iter().map(|&n| n as u64).sum::<u64>();
                s = evolve(&s, Level::Finite(l)).unwrap();
            }
            assert_eq!(moved, 4 * 5 * l.min(4) as u64);
            assert_eq!(s.get(2 + 5 * l.min(4) as usize), 1);
        }
    }

    #[test]
    fn open_pass_matches_padded_ring() {
        let seg = st("0110111000101100").with_boundary(Boundary::Open);
        let mut padded = State::zeros(seg.len() + 40);
        for i in 0..seg.len() {
            padded.set(i, seg.get(i) == 1);
        }
        let ring_e: Vec<u64> = (1..=6).map(|l| energy(&padded, l).unwrap()).collect();
        assert_eq!(open_energies(&seg, 6), ring_e);
        assert!(evolve_open(&st("0000000111").with_boundary(Boundary::Open), 3).is_err());
        assert_eq!(evolve_open(&st("1100000000").with_boundary(Boundary::Open), 3).unwrap().to_string(), "0011000000");
    }
}
