use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major index of a core in a [`TorusTopology`].
pub type CoreId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    RowPlus,
    RowMinus,
    ColPlus,
    ColMinus,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::RowPlus, Direction::RowMinus, Direction::ColPlus, Direction::ColMinus];
}

/// A logical `rows × cols` torus of cores with wraparound links in both dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawTopology")]
pub struct TorusTopology {
    rows: usize,
    cols: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    rows: usize,
    cols: usize,
}

impl TryFrom<RawTopology> for TorusTopology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        Self::new(raw.rows, raw.cols)
    }
}

/// Largest core count a topology or partition plan may describe.
pub const MAX_CORES: usize = 1 << 16;

impl TorusTopology {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("TorusTopology::new", format!("extents must be positive, got {rows}x{cols}")));
        }
        if rows.checked_mul(cols).is_none_or(|n| n > MAX_CORES) {
            return Err(Error::invalid("TorusTopology::new", format!("{rows}x{cols} exceeds {MAX_CORES} cores")));
        }
        Ok(Self { rows, cols })
    }

    pub fn single() -> Self {
        Self { rows: 1, cols: 1 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_cores(&self) -> usize {
        self.rows * self.cols
    }

    pub fn coords(&self, core: CoreId) -> Result<(usize, usize)> {
        self.check(core)?;
        Ok((core / self.cols, core % self.cols))
    }

    pub fn core_at(&self, row: usize, col: usize) -> CoreId {
        (row % self.rows) * self.cols + col % self.cols
    }

    fn check(&self, core: CoreId) -> Result<()> {
        if core >= self.num_cores() {
            return Err(Error::invalid("torus", format!("core {core} outside {}x{} torus", self.rows, self.cols)));
        }
        Ok(())
    }

    /// Neighbor reached by following one link. `RowPlus` moves to the next row.
    pub fn neighbor(&self, core: CoreId, dir: Direction) -> Result<CoreId> {
        let (r, c) = self.coords(core)?;
        let (r, c) = match dir {
            Direction::RowPlus => ((r + 1) % self.rows, c),
            Direction::RowMinus => ((r + self.rows - 1) % self.rows, c),
            Direction::ColPlus => (r, (c + 1) % self.cols),
            Direction::ColMinus => (r, (c + self.cols - 1) % self.cols),
        };
        Ok(self.core_at(r, c))
    }

    /// Outgoing links of `core`, excluding self-links along extent-1 dimensions.
    /// Along an extent-2 dimension both links reach the same neighbor.
    pub fn links(&self, core: CoreId) -> Result<Vec<(Direction, CoreId)>> {
        self.check(core)?;
        Direction::ALL.iter().map(|&d| self.neighbor(core, d).map(|n| (d, n))).filter(|l| !matches!(l, Ok((_, n)) if *n == core)).collect()
    }

    /// Cores of one row, ordered by column.
    pub fn row_ring(&self, row: usize) -> Vec<CoreId> {
        (0..self.cols).map(|c| self.core_at(row, c)).collect()
    }

    /// Cores of one column, ordered by row.
    pub fn col_ring(&self, col: usize) -> Vec<CoreId> {
        (0..self.rows).map(|r| self.core_at(r, col)).collect()
    }

    /// All cores in row-major order.
    pub fn all_cores(&self) -> Vec<CoreId> {
        (0..self.num_cores()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbor_examples() {
        let line = TorusTopology::new(1, 4).unwrap();
        assert_eq!(line.neighbor(0, Direction::ColPlus).unwrap(), 1);
        assert_eq!(line.neighbor(3, Direction::ColPlus).unwrap(), 0);
        assert_eq!(line.neighbor(0, Direction::ColMinus).unwrap(), 3);
        let sq = TorusTopology::new(4, 4).unwrap();
        assert_eq!(sq.neighbor(5, Direction::RowPlus).unwrap(), 9);
        assert_eq!(sq.neighbor(1, Direction::RowMinus).unwrap(), 13);
        assert!(sq.neighbor(16, Direction::RowPlus).is_err());
    }

    #[test]
    fn link_counts() {
        let sq = TorusTopology::new(4, 4).unwrap();
        assert!(sq.all_cores().iter().all(|&c| sq.links(c).unwrap().len() == 4));
        let line = TorusTopology::new(1, 4).unwrap();
        assert!(line.all_cores().iter().all(|&c| line.links(c).unwrap().len() == 2));
        assert!(TorusTopology::single().links(0).unwrap().is_empty());
        assert!(TorusTopology::new(0, 3).is_err());
    }

    #[test]
    fn rings() {
        let t = TorusTopology::new(2, 3).unwrap();
        assert_eq!(t.row_ring(1), vec![3, 4, 5]);
        assert_eq!(t.col_ring(2), vec![2, 5]);
    }
}
