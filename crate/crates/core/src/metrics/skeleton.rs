use crate::label::Mask;

/// Neighbours in the order P2..P9 (north, then clockwise).
const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn ring(m: &Mask, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        n[k] = m.get_signed(x as isize + dx, y as isize + dy);
    }
    n
}

fn transitions(n: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count()
}

/// Yokoi connectivity number for 8-connected foreground; a pixel whose
/// removal keeps the local topology has value 1.
fn connectivity8(n: &[bool; 8]) -> usize {
    // 4-neighbours sit at even ring positions
    let c = |k: usize| !n[k % 8];
    [0, 2, 4, 6]
        .iter()
        .map(|&k| usize::from(c(k)) - usize::from(c(k) && c(k + 1) && c(k + 2)))
        .sum()
}

/// Zhang–Suen thinning. Candidates of each sub-iteration are chosen on a
/// snapshot as usual, then removed one at a time, each removal re-checked
/// against the current raster so that no component is split or erased
/// (plain parallel removal deletes 2x2 blocks outright).
pub fn skeletonize(mask: &Mask) -> Mask {
    let mut m = mask.clone();
    let (w, h) = m.dims();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut candidates = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !m.get(x, y) {
                        continue;
                    }
                    let n = ring(&m, x, y);
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || transitions(&n) != 1 {
                        continue;
                    }
                    let [p2, _, p4, _, p6, _, p8, _] = n;
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        candidates.push((x, y));
                    }
                }
            }
            for (x, y) in candidates {
                let n = ring(&m, x, y);
                let b = n.iter().filter(|&&v| v).count();
                if b >= 1 && connectivity8(&n) == 1 {
                    m.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}
