use crate::error::{BbsError, Result};
use std::sync::OnceLock;

/// Capacity-`l` carrier holding `load` balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Carrier {
    pub capacity: u32,
    pub load: u32,
}

impl Carrier {
    pub fn empty(capacity: u32) -> Self {
        Carrier { capacity, load: 0 }
    }

    pub fn new(capacity: u32, load: u32) -> Result<Self> {
        if capacity == 0 || load > capacity {
            return Err(BbsError::Contract(format!("carrier load {load} with capacity {capacity}")));
        }
        Ok(Carrier { capacity, load })
    }

    /// Passes one site holding `eta` balls; returns the updated carrier and the new site value.
    #[inline]
    pub fn step(self, eta: u8) -> (Carrier, u8) {
        let Carrier { capacity, load } = self;
        match eta {
            0 if load > 0 => (Carrier { capacity, load: load - 1 }, 1),
            0 => (self, 0),
            _ if load < capacity => (Carrier { capacity, load: load + 1 }, 0),
            _ => (self, 1),
        }
    }
}

/// An element of `B_l`: a pair `(x0, x1)` with `x0 + x1 = l`.
pub type Crystal = (u32, u32);

/// The combinatorial R map `B_l ⊗ B_m → B_m ⊗ B_l`.
pub fn apply_r(l: u32, m: u32, a: Crystal, b: Crystal) -> Result<(Crystal, Crystal)> {
    if a.0 + a.1 != l || b.0 + b.1 != m {
        return Err(BbsError::Contract(format!("{a:?} ⊗ {b:?} is not in B_{l} ⊗ B_{m}")));
    }
    let x = [a.0 as i64, a.1 as i64];
    let y = [b.0 as i64, b.1 as i64];
    let mut xt = [0i64; 2];
    let mut yt = [0i64; 2];
    for i in 0..2 {
        let j = (i + 1) % 2;
        let shift = x[j].min(y[i]) - x[i].min(y[j]);
        xt[i] = x[i] + shift;
        yt[i] = y[i] - shift;
    }
    Ok(((yt[0] as u32, yt[1] as u32), (xt[0] as u32, xt[1] as u32)))
}

/// Byte transducer entry: the 8 output sites and the load change.
#[derive(Clone, Copy, Default)]
struct ByteStep {
    out: u8,
    delta: i8,
}

// Within 8 sites the carrier can only notice whether it is within 8 of empty or of full,
// so the table is keyed by (min(n, 8), min(l - n, 8), byte) and is independent of l.
fn byte_table() -> &'static [ByteStep] {
    static TABLE: OnceLock<Vec<ByteStep>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![ByteStep::default(); 9 * 9 * 256];
        for a in 0..9u32 {
            for b in 0..9u32 {
                let cap = a + b;
                if cap == 0 {
                    continue;
                }
                for byte in 0..256u32 {
                    let mut c = Carrier { capacity: cap, load: a };
                    let mut out = 0u8;
                    for k in 0..8 {
                        let (nc, o) = c.step(((byte >> k) & 1) as u8);
                        c = nc;
                        out |= o << k;
                    }
                    t[((a * 9 + b) * 256 + byte) as usize] =
                        ByteStep { out, delta: (c.load as i32 - a as i32) as i8 };
                }
            }
        }
        t
    })
}

/// Runs the capacity-`l` carrier over sites `0..len` of `src`, starting with `load`,
/// writing the new sites to `dst`. Returns the final load.
const LEVEL_TABLE_MAX: u32 = 64;

/// Per-capacity table indexed by `load * 256 + byte`; each entry packs the output byte and the
/// load after the byte into a `u16`.
fn level_table(l: u32) -> &'static [u16] {
    static TABLES: [OnceLock<Vec<u16>>; LEVEL_TABLE_MAX as usize] = [const { OnceLock::new() }; LEVEL_TABLE_MAX as usize];
    TABLES[l as usize - 1].get_or_init(|| {
        let mut t = vec![0u16; (l as usize + 1) * 256];
        for load in 0..=l {
            for byte in 0..256u32 {
                let mut c = Carrier { capacity: l, load };
                let mut out = 0u16;
                for k in 0..8 {
                    let (nc, o) = c.step(((byte >> k) & 1) as u8);
                    c = nc;
                    out |= (o as u16) << k;
                }
                t[(load * 256 + byte) as usize] = out | ((c.load as u16) << 8);
            }
        }
        t
    })
}

fn pass_small_level(src: &[u64], dst: &mut [u64], full: usize, l: u32, mut load: u32) -> u32 {
    let table = level_table(l);
    for wi in 0..full {
        let w = src[wi];
        if load == 0 && w == 0 {
            dst[wi] = 0;
            continue;
        }
        let mut o = 0u64;
        let mut state = load as usize;
        for b in 0..8 {
            let e = table[state * 256 + ((w >> (8 * b)) & 0xff) as usize];
            o |= ((e & 0xff) as u64) << (8 * b);
            state = (e >> 8) as usize;
        }
        load = state as u32;
        dst[wi] = o;
    }
    load
}

pub(crate) fn pass_words(src: &[u64], dst: &mut [u64], len: usize, l: u32, mut load: u32) -> u32 {
    let full = len / 64;
    if l <= LEVEL_TABLE_MAX {
        load = pass_small_level(src, dst, full, l, load);
        return pass_remainder(src, dst, len, l, load);
    }
    let table = byte_table();
    for wi in 0..full {
        let w = src[wi];
        if load == 0 && w == 0 {
            dst[wi] = 0;
            continue;
        }
        if load >= 64 && l - load >= 64 {
            dst[wi] = !w;
            load = load + 2 * w.count_ones() - 64;
            continue;
        }
        let mut o = 0u64;
        for b in 0..8 {
            let byte = ((w >> (8 * b)) & 0xff) as usize;
            let a = load.min(8) as usize;
            let c = (l - load).min(8) as usize;
            let e = table[(a * 9 + c) * 256 + byte];
            o |= (e.out as u64) << (8 * b);
            load = (load as i32 + e.delta as i32) as u32;
        }
        dst[wi] = o;
    }
    pass_remainder(src, dst, len, l, load)
}

fn pass_remainder(src: &[u64], dst: &mut [u64], len: usize, l: u32, mut load: u32) -> u32 {
    let full = len / 64;
    let rem = len % 64;
    if rem > 0 {
        let w = src[full];
        let mut c = Carrier { capacity: l, load };
        let mut o = 0u64;
        for k in 0..rem {
            let (nc, bit) = c.step(((w >> k) & 1) as u8);
            c = nc;
            o |= (bit as u64) << k;
        }
        dst[full] = o;
        load = c.load;
    }
    load
}

/// Final load after running the carrier over sites `start..len` only (output discarded).
pub(crate) fn pass_tail_load(src: &[u64], start: usize, len: usize, l: u32, load: u32) -> u32 {
    let mut c = Carrier { capacity: l, load };
    let mut i = start;
    while i < len && i % 64 != 0 {
        c = c.step(((src[i / 64] >> (i % 64)) & 1) as u8).0;
        i += 1;
    }
    if i >= len {
        return c.load;
    }
    let words = &src[i / 64..];
    let mut scratch = vec![0u64; words.len()];
    pass_words(words, &mut scratch, len - i, l, c.load)
}

/// Site-by-site pass recording the load on the bond right of every site.
pub(crate) fn pass_with_loads(src: &[u64], len: usize, l: u32, load: u32, loads: &mut Vec<u32>) -> (Vec<u64>, u32) {
    let mut dst = vec![0u64; src.len()];
    let mut c = Carrier { capacity: l, load };
    loads.clear();
    loads.reserve(len);
    for i in 0..len {
        let (nc, bit) = c.step(((src[i / 64] >> (i % 64)) & 1) as u8);
        c = nc;
        dst[i / 64] |= (bit as u64) << (i % 64);
        loads.push(c.load);
    }
    (dst, c.load)
}

/// Index just past the last run of at least `l` empty sites, if any such run exists.
/// A carrier of capacity `l` is empty after crossing such a run, whatever it held before.
pub(crate) fn last_empty_run_end(src: &[u64], len: usize, l: u32) -> Option<usize> {
    let need = l as usize;
    let mut run = 0usize;
    let mut top = len;
    let mut i = len;
    while i > 0 {
        // Whole zero words below a word boundary can be skipped in one go.
        if i % 64 == 0 && src[i / 64 - 1] == 0 {
            if run == 0 {
                top = i;
            }
            run += 64;
            i -= 64;
        } else {
            i -= 1;
            if (src[i / 64] >> (i % 64)) & 1 == 0 {
                if run == 0 {
                    top = i + 1;
                }
                run += 1;
            } else {
                run = 0;
            }
        }
        if run >= need {
            return Some(top);
        }
    }
    None
}
