//! Morton (Z-order) and Hilbert ranks for (z, y, x) cell indices.

use crate::error::{Error, Result};
use crate::partition::CellIndex;

/// Largest supported order: three axes of 21 bits fill a `u64`.
pub const MAX_ORDER: u32 = 21;

fn check(index: CellIndex, order: u32) -> Result<[u64; 3]> {
    let coords = index.as_array();
    if order == 0 || order > MAX_ORDER || coords.iter().any(|&c| (c as u64) >> order != 0) {
        return Err(Error::IndexOutOfRange { index: coords, order });
    }
    Ok(coords.map(|c| c as u64))
}

/// Smallest curve order whose cube holds `max_splits` cells per axis (at least 1).
pub fn order_for(max_splits: usize) -> u32 {
    let mut order = 1;
    while (1usize << order) < max_splits {
        order += 1;
    }
    order
}

/// Bit-interleaved rank; within each bit group z is most significant, then y, then x.
pub fn morton_rank(index: CellIndex, order: u32) -> Result<u64> {
    let c = check(index, order)?;
    Ok(interleave(c, order))
}

fn interleave(c: [u64; 3], order: u32) -> u64 {
    let mut rank = 0u64;
    for bit in (0..order).rev() {
        for v in c {
            rank = (rank << 1) | ((v >> bit) & 1);
        }
    }
    rank
}

/// Rank along the 3D Hilbert curve of side `2^order`. Consecutive ranks are face
/// neighbours in the grid.
pub fn hilbert_rank(index: CellIndex, order: u32) -> Result<u64> {
    let mut x = check(index, order)?;
    // Skilling's axes-to-transpose, then the transpose is read out bit-interleaved.
    let top = 1u64 << (order - 1);
    let mut q = top;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    q = top;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }
    Ok(interleave(x, order))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(z: usize, y: usize, x: usize) -> CellIndex {
        CellIndex::new(z, y, x)
    }

    #[test]
    fn morton_order_one() {
        assert_eq!(morton_rank(c(0, 0, 0), 2).unwrap(), 0);
        assert_eq!(morton_rank(c(1, 0, 0), 1).unwrap(), 4);
        assert_eq!(morton_rank(c(0, 1, 0), 1).unwrap(), 2);
        assert_eq!(morton_rank(c(0, 0, 1), 1).unwrap(), 1);
        assert_eq!(morton_rank(c(1, 1, 1), 1).unwrap(), 7);
    }

    #[test]
    fn morton_two_bits() {
        // z=2 (10), y=1 (01), x=3 (11): groups (1,0,1) then (0,1,1).
        assert_eq!(morton_rank(c(2, 1, 3), 2).unwrap(), 0b101_011);
    }

    #[test]
    fn hilbert_origin() {
        assert_eq!(hilbert_rank(c(0, 0, 0), 1).unwrap(), 0);
        assert_eq!(hilbert_rank(c(0, 0, 0), 3).unwrap(), 0);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(morton_rank(c(2, 0, 0), 1), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(hilbert_rank(c(0, 0, 4), 2), Err(Error::IndexOutOfRange { .. })));
        assert!(hilbert_rank(c(0, 0, 0), 0).is_err());
    }

    #[test]
    fn order_for_grid() {
        assert_eq!(order_for(1), 1);
        assert_eq!(order_for(2), 1);
        assert_eq!(order_for(3), 2);
        assert_eq!(order_for(5), 3);
    }
}
