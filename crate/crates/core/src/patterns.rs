//! The eight composition-pattern partitions of an H×W grid.
//!
//! Cell (i, j) (1-indexed) has normalized center u = (i − 0.5)/H, v = (j − 0.5)/W.
//! All comparisons are half-open so every cell lands in exactly one partition.
//!
//! | p | geometry              | K_p |
//! |---|-----------------------|-----|
//! | 1 | left / right halves   | 2   |
//! | 2 | top / bottom halves   | 2   |
//! | 3 | main diagonal         | 2   |
//! | 4 | anti-diagonal         | 2   |
//! | 5 | central third / rest  | 2   |
//! | 6 | quadrants             | 4   |
//! | 7 | X-shaped sectors      | 4   |
//! | 8 | 3×3 thirds            | 9   |

use crate::{Error, Result, NUM_PATTERNS};

/// Partition counts for p = 1..=8.
pub const PARTITION_COUNTS: [usize; NUM_PATTERNS] = [2, 2, 2, 2, 2, 4, 4, 9];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMap {
    pattern: usize,
    height: usize,
    width: usize,
    assignment: Vec<usize>,
    num_partitions: usize,
}

impl PartitionMap {
    pub fn pattern(&self) -> usize {
        self.pattern
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    /// Partition index of each cell, row-major.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn partition_of(&self, i: usize, j: usize) -> usize {
        self.assignment[i * self.width + j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_partitions];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Flat row-major indices of partition `k`'s cells, ascending.
    pub fn partition_cells(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.num_partitions {
            return Err(Error::invalid(format!(
                "partition {k} out of range for pattern {} (K = {})",
                self.pattern, self.num_partitions
            )));
        }
        Ok(self
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == k)
            .map(|(idx, _)| idx)
            .collect())
    }

    /// Cell lists for every partition, in partition order.
    pub fn all_cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.num_partitions];
        for (idx, &a) in self.assignment.iter().enumerate() {
            cells[a].push(idx);
        }
        cells
    }
}

pub fn pattern_mask(p: usize, height: usize, width: usize) -> Result<PartitionMap> {
    if !(1..=NUM_PATTERNS).contains(&p) {
        return Err(Error::invalid(format!("pattern {p} outside 1..={NUM_PATTERNS}")));
    }
    if height < 3 || width < 3 {
        return Err(Error::invalid(format!("grid {height}x{width} smaller than 3x3")));
    }
    let mut assignment = Vec::with_capacity(height * width);
    for i in 1..=height {
        let u = (i as f64 - 0.5) / height as f64;
        for j in 1..=width {
            let v = (j as f64 - 0.5) / width as f64;
            assignment.push(assign(p, u, v));
        }
    }
    Ok(PartitionMap {
        pattern: p,
        height,
        width,
        assignment,
        num_partitions: PARTITION_COUNTS[p - 1],
    })
}

fn assign(p: usize, u: f64, v: f64) -> usize {
    let third = |x: f64| ((3.0 * x).floor() as usize).min(2);
    match p {
        1 => usize::from(v >= 0.5),
        2 => usize::from(u >= 0.5),
        3 => usize::from(u >= v),
        4 => usize::from(u + v >= 1.0),
        5 => {
            let inner = (1.0 / 3.0..2.0 / 3.0).contains(&u) && (1.0 / 3.0..2.0 / 3.0).contains(&v);
            usize::from(!inner)
        }
        6 => 2 * usize::from(u >= 0.5) + usize::from(v >= 0.5),
        7 => {
            let (du, dv) = (u - 0.5, v - 0.5);
            if du.abs() >= dv.abs() {
                usize::from(du >= 0.0)
            } else if dv < 0.0 {
                2
            } else {
                3
            }
        }
        8 => 3 * third(u) + third(v),
        _ => unreachable!("pattern validated by caller"),
    }
}

/// All eight maps for one grid size.
pub fn all_patterns(height: usize, width: usize) -> Result<Vec<PartitionMap>> {
    (1..=NUM_PATTERNS)
        .map(|p| pattern_mask(p, height, width))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirds_on_7x7_has_2_3_2_bands() {
        let m = pattern_mask(8, 7, 7).unwrap();
        let rows: Vec<usize> = (0..7).map(|i| m.partition_of(i, 0) / 3).collect();
        assert_eq!(rows, vec![0, 0, 1, 1, 1, 2, 2]);
        let cols: Vec<usize> = (0..7).map(|j| m.partition_of(0, j) % 3).collect();
        assert_eq!(cols, vec![0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(m.sizes(), vec![4, 6, 4, 6, 9, 6, 4, 6, 4]);
    }

    #[test]
    fn halves_and_diagonal_on_56() {
        assert_eq!(pattern_mask(1, 56, 56).unwrap().sizes(), vec![1568, 1568]);
        assert_eq!(pattern_mask(3, 56, 56).unwrap().sizes(), vec![1540, 1596]);
    }

    #[test]
    fn odd_width_center_column_goes_right() {
        let m = pattern_mask(1, 7, 7).unwrap();
        for i in 0..7 {
            assert_eq!(m.partition_of(i, 3), 1);
        }
        assert_eq!(m.sizes(), vec![21, 28]);
    }

    #[test]
    fn partition_cells_examples() {
        let m = pattern_mask(6, 4, 4).unwrap();
        assert_eq!(m.partition_cells(0).unwrap(), vec![0, 1, 4, 5]);
        assert!(m.partition_cells(4).is_err());
        let mut all: Vec<usize> = (0..4).flat_map(|k| m.partition_cells(k).unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
        for k in 0..4 {
            assert_eq!(m.partition_cells(k).unwrap().len(), m.sizes()[k]);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(pattern_mask(0, 7, 7).is_err());
        assert!(pattern_mask(9, 7, 7).is_err());
        assert!(pattern_mask(1, 2, 7).is_err());
    }

    #[test]
    fn mirror_symmetry_on_even_grids() {
        for n in [4usize, 8, 56] {
            let p1 = pattern_mask(1, n, n).unwrap();
            let p2 = pattern_mask(2, n, n).unwrap();
            let p6 = pattern_mask(6, n, n).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let mj = n - 1 - j;
                    let mi = n - 1 - i;
                    assert_eq!(p1.partition_of(i, j), 1 - p1.partition_of(i, mj));
                    assert_eq!(p2.partition_of(i, j), 1 - p2.partition_of(mi, j));
                    // horizontal mirror swaps left/right quadrants
                    assert_eq!(p6.partition_of(i, j) ^ 1, p6.partition_of(i, mj));
                }
            }
        }
    }

    #[test]
    fn sectors_and_center() {
        let m = pattern_mask(7, 7, 7).unwrap();
        assert_eq!(m.partition_of(0, 3), 0);
        assert_eq!(m.partition_of(6, 3), 1);
        assert_eq!(m.partition_of(3, 0), 2);
        assert_eq!(m.partition_of(3, 6), 3);
        let c = pattern_mask(5, 9, 9).unwrap();
        assert_eq!(c.sizes(), vec![9, 72]);
        let thirds = pattern_mask(8, 9, 9).unwrap();
        for idx in c.partition_cells(0).unwrap() {
            assert_eq!(thirds.assignment()[idx], 4);
        }
    }
}
