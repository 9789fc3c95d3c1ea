//! Observed-node selection on a location grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scene::LocationGrid;

/// Evenly strided selection along the grid's long axis.
///
/// When `count` is a multiple of the short side, whole cross-sections are
/// taken at centred, equally spaced positions (100 of a 5 x 800 grid gives
/// every 40th column). Otherwise single nodes are placed at equally spaced
/// long-axis positions with a staggered short-axis offset, starting from
/// the centre row.
pub fn select_observed(grid: &LocationGrid, count: usize) -> Result<Vec<bool>> {
    let n = grid.len();
    if count == 0 || count > n {
        return Err(Error::Config(alloc::format!("observed count {count} out of range 1..={n}")));
    }
    let cols_long = grid.cols() >= grid.rows();
    let (long, short) = if cols_long { (grid.cols(), grid.rows()) } else { (grid.rows(), grid.cols()) };
    let index = |l: usize, s: usize| if cols_long { s * grid.cols() + l } else { l * grid.cols() + s };
    let spread = |i: usize, m: usize, len: usize| ((2 * i + 1) * len) / (2 * m);
    let mut mask = vec![false; n];
    if count.is_multiple_of(short) {
        let m = count / short;
        for i in 0..m {
            let l = spread(i, m, long);
            for s in 0..short {
                mask[index(l, s)] = true;
            }
        }
    } else if count <= long {
        for i in 0..count {
            let l = spread(i, count, long);
            let s = (short / 2 + 2 * i) % short;
            mask[index(l, s)] = true;
        }
    } else {
        // Dense case: spread over the long-axis-major ordering.
        for i in 0..count {
            let p = spread(i, count, n);
            let (l, s) = (p / short, p % short);
            mask[index(l, s)] = true;
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::scene::build_grid;

    fn grid() -> LocationGrid {
        build_grid(5, 800, 0.03, Point3::new(0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn hundred_of_four_thousand_strides_forty_columns() {
        let g = grid();
        let mask = select_observed(&g, 100).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 100);
        let cols: Vec<usize> = (0..800).filter(|&c| mask[c]).collect();
        assert_eq!(cols.len(), 20);
        assert!(cols.windows(2).all(|w| w[1] - w[0] == 40));
        for c in cols {
            assert!((0..5).all(|r| mask[r * 800 + c]));
        }
    }

    #[test]
    fn all_and_single() {
        let g = grid();
        assert!(select_observed(&g, 4000).unwrap().iter().all(|&m| m));
        let one = select_observed(&g, 1).unwrap();
        let k = one.iter().position(|&m| m).unwrap();
        assert_eq!(g.row_col(k), (2, 400));
        assert!(select_observed(&g, 0).is_err());
        assert!(select_observed(&g, 4001).is_err());
    }

    #[test]
    fn odd_counts_hit_exact_totals() {
        let g = build_grid(4, 9, 1.0, Point3::new(0.0, 0.0, 1.0)).unwrap();
        for count in 1..=36 {
            let m = select_observed(&g, count).unwrap();
            assert_eq!(m.iter().filter(|&&x| x).count(), count, "count {count}");
        }
    }
}
