//! Byte-per-site evolution kept for differential testing of the packed implementation.

use super::Carrier;

fn pass(cells: &[u8], l: u32, load: u32) -> (Vec<u8>, u32) {
    let mut c = Carrier { capacity: l, load };
    let mut out = Vec::with_capacity(cells.len());
    for &eta in cells {
        let (nc, o) = c.step(eta);
        c = nc;
        out.push(o);
    }
    (out, c.load)
}

/// One capacity-`l` step on a ring: the first pass from the empty carrier fixes the entry
/// load, the second pass produces the new cells. Returns `None` if the second pass does not
/// close on its starting load.
pub fn evolve_cells(cells: &[u8], l: u32) -> Option<Vec<u8>> {
    let balls: usize = cells.iter().map(|&c| c as usize).sum();
    if 2 * balls > cells.len() {
        let flipped: Vec<u8> = cells.iter().map(|&c| 1 - c).collect();
        return evolve_cells(&flipped, l).map(|v| v.into_iter().map(|c| 1 - c).collect());
    }
    let (_, first) = pass(cells, l, 0);
    let (out, end) = pass(cells, l, first);
    (end == first).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_reproduces_three_step_example() {
        let cells: Vec<u8> = "0001111000000".bytes().map(|b| b - b'0').collect();
        let out = evolve_cells(&cells, 3).unwrap();
        let text: String = out.iter().map(|&c| (b'0' + c) as char).collect();
        assert_eq!(text, "0000001111000");
    }
}
