//! 3×3×3 neighbourhood tables. Position `p = (dx+1) + 3(dy+1) + 9(dz+1)`;
//! bit 13 is the centre and is never set in a neighbourhood mask.

pub const CENTER: usize = 13;

/// `(dx, dy, dz)` of every position.
pub const OFFSETS: [[i64; 3]; 27] = {
    let mut out = [[0i64; 3]; 27];
    let mut p = 0;
    while p < 27 {
        out[p] = [(p % 3) as i64 - 1, ((p / 3) % 3) as i64 - 1, (p / 9) as i64 - 1];
        p += 1;
    }
    out
};

/// The 26 neighbour offsets in position order.
pub const NEIGHBORS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut p = 0;
    let mut n = 0;
    while p < 27 {
        if p != CENTER {
            out[n] = OFFSETS[p];
            n += 1;
        }
        p += 1;
    }
    out
};

pub const NEIGHBORS_6: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

const fn l1(p: usize) -> i64 {
    let o = OFFSETS[p];
    o[0].abs() + o[1].abs() + o[2].abs()
}

/// Positions in the 18-neighbourhood (faces and edges).
pub const N18_MASK: u32 = {
    let mut m = 0u32;
    let mut p = 0;
    while p < 27 {
        if p != CENTER && l1(p) <= 2 {
            m |= 1 << p;
        }
        p += 1;
    }
    m
};

/// Face neighbours of the centre.
pub const N6_MASK: u32 = {
    let mut m = 0u32;
    let mut p = 0;
    while p < 27 {
        if l1(p) == 1 {
            m |= 1 << p;
        }
        p += 1;
    }
    m
};

pub const N26_MASK: u32 = ((1u32 << 27) - 1) & !(1 << CENTER);

const fn adjacency(six: bool) -> [u32; 27] {
    let mut out = [0u32; 27];
    let mut p = 0;
    while p < 27 {
        let mut q = 0;
        while q < 27 {
            if p != q && p != CENTER && q != CENTER {
                let a = OFFSETS[p];
                let b = OFFSETS[q];
                let d = [(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()];
                let cheb = d[0] <= 1 && d[1] <= 1 && d[2] <= 1;
                let l1 = d[0] + d[1] + d[2];
                if cheb && (!six || l1 == 1) {
                    out[p] |= 1 << q;
                }
            }
            q += 1;
        }
        p += 1;
    }
    out
}

pub const ADJ26: [u32; 27] = adjacency(false);
pub const ADJ6: [u32; 27] = adjacency(true);

/// Number of components of `set` under `adj`, counting only components that
/// touch `seeds`. Stops early once `limit` is exceeded.
#[inline]
fn count_components(set: u32, adj: &[u32; 27], seeds: u32, limit: u32) -> u32 {
    let mut remaining = set;
    let mut count = 0;
    while remaining & seeds != 0 {
        let seed = (remaining & seeds).trailing_zeros();
        let mut comp = 1u32 << seed;
        let mut frontier = comp;
        while frontier != 0 {
            let p = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let grow = adj[p] & remaining & !comp;
            comp |= grow;
            frontier |= grow;
        }
        remaining &= !comp;
        count += 1;
        if count > limit {
            break;
        }
    }
    count
}

/// Whether removing the centre preserves (26, 6) topology: exactly one
/// 26-component of foreground among the 26 neighbours, and exactly one
/// 6-component of background in the 18-neighbourhood touching the centre.
#[inline]
pub fn is_simple(fg: u32) -> bool {
    let fg = fg & N26_MASK;
    if count_components(fg, &ADJ26, N26_MASK, 1) != 1 {
        return false;
    }
    let bg = !fg & N18_MASK;
    count_components(bg, &ADJ6, N6_MASK, 1) == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes() {
        assert_eq!(N26_MASK.count_ones(), 26);
        assert_eq!(N18_MASK.count_ones(), 18);
        assert_eq!(N6_MASK.count_ones(), 6);
        assert_eq!(ADJ26[0].count_ones(), 6);
        assert_eq!(ADJ6[0].count_ones(), 3);
    }

    #[test]
    fn simple_point_cases() {
        // isolated point: no foreground neighbour
        assert!(!is_simple(0));
        // a line end: one neighbour
        assert!(is_simple(1 << 4));
        // middle of a line: two opposite neighbours
        assert!(!is_simple((1 << 4) | (1 << 22)));
        // fully interior point
        assert!(!is_simple(N26_MASK));
        // point on a flat face: all of the lower half plus the middle ring
        let mut face = 0u32;
        for p in 0..18 {
            if p != CENTER {
                face |= 1 << p;
            }
        }
        assert!(is_simple(face));
        // middle of a one-voxel-thick plate: background on both sides
        let mut plate = 0u32;
        for p in 9..18 {
            if p != CENTER {
                plate |= 1 << p;
            }
        }
        assert!(!is_simple(plate));
    }
}
