//! The `p × p × p` processor cube.
//!
//! Ranks are linearized i-major: `rank = i·p² + j·p + l`, where `i`, `j`, `l`
//! are the coordinates along the x, y and z axes. Every collective in the
//! crate runs over an [`AxisGroup`]: the `p` ranks that share two coordinates
//! and differ only along one axis.

use std::fmt;

use crate::error::{Error, Result};

/// One of the three cube directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Position of a rank inside the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coords {
    pub i: usize,
    pub j: usize,
    pub l: usize,
}

impl Coords {
    pub fn new(i: usize, j: usize, l: usize) -> Self {
        Coords { i, j, l }
    }

    /// Coordinate along `axis`.
    pub fn get(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.i,
            Axis::Y => self.j,
            Axis::Z => self.l,
        }
    }

    pub fn with(mut self, axis: Axis, value: usize) -> Self {
        match axis {
            Axis::X => self.i = value,
            Axis::Y => self.j = value,
            Axis::Z => self.l = value,
        }
        self
    }
}

impl fmt::Display for Coords {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.i, self.j, self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CubeTopology {
    p: usize,
}

impl CubeTopology {
    /// Builds the cube for `ranks` logical processors.
    pub fn build(ranks: usize) -> Result<Self> {
        if ranks == 0 {
            return Err(Error::NotACube(ranks));
        }
        let mut p = (ranks as f64).cbrt().round() as usize;
        // cbrt can land one off for large inputs
        while p * p * p > ranks {
            p -= 1;
        }
        while (p + 1) * (p + 1) * (p + 1) <= ranks {
            p += 1;
        }
        if p * p * p != ranks {
            return Err(Error::NotACube(ranks));
        }
        Ok(CubeTopology { p })
    }

    /// Cube with side `p` (so `p³` ranks).
    pub fn with_side(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::NotACube(0));
        }
        Ok(CubeTopology { p })
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn ranks(&self) -> usize {
        self.p * self.p * self.p
    }

    fn check(&self, c: Coords) -> Result<()> {
        for v in [c.i, c.j, c.l] {
            if v >= self.p {
                return Err(Error::OutOfRange { coord: v, p: self.p });
            }
        }
        Ok(())
    }

    pub fn rank_of(&self, c: Coords) -> Result<usize> {
        self.check(c)?;
        Ok(c.i * self.p * self.p + c.j * self.p + c.l)
    }

    pub fn coords_of(&self, rank: usize) -> Result<Coords> {
        if rank >= self.ranks() {
            return Err(Error::OutOfRange { coord: rank, p: self.p });
        }
        let p = self.p;
        Ok(Coords::new(rank / (p * p), (rank / p) % p, rank % p))
    }

    /// The `p` ranks that share `c`'s other two coordinates, ordered by their
    /// coordinate along `axis`.
    pub fn axis_group(&self, c: Coords, axis: Axis) -> Result<AxisGroup> {
        self.check(c)?;
        let members = (0..self.p)
            .map(|v| self.rank_of(c.with(axis, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AxisGroup {
            axis,
            members,
            my_position: c.get(axis),
        })
    }
}

/// An ordered one-dimensional process group along a cube axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AxisGroup {
    pub axis: Axis,
    pub members: Vec<usize>,
    pub my_position: usize,
}

impl AxisGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Rank of the member whose axis coordinate is 0; identifies the group.
    pub fn anchor(&self) -> usize {
        self.members[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_cube_examples() {
        assert_eq!(CubeTopology::build(8).unwrap().side(), 2);
        assert_eq!(CubeTopology::build(1).unwrap().side(), 1);
        assert_eq!(CubeTopology::build(27).unwrap().side(), 3);
        assert_eq!(CubeTopology::build(12), Err(Error::NotACube(12)));
        assert_eq!(CubeTopology::build(0), Err(Error::NotACube(0)));
        assert_eq!(CubeTopology::build(1_000_000).unwrap().side(), 100);
    }

    #[test]
    fn rank_of_examples() {
        let t = CubeTopology::build(8).unwrap();
        assert_eq!(t.rank_of(Coords::new(0, 0, 0)).unwrap(), 0);
        assert_eq!(t.rank_of(Coords::new(1, 0, 1)).unwrap(), 5);
        assert_eq!(t.rank_of(Coords::new(1, 1, 1)).unwrap(), 7);
        assert!(matches!(
            t.rank_of(Coords::new(2, 0, 0)),
            Err(Error::OutOfRange { coord: 2, p: 2 })
        ));
    }

    #[test]
    fn axis_group_examples() {
        let t = CubeTopology::build(8).unwrap();
        let g = t.axis_group(Coords::new(0, 0, 0), Axis::Y).unwrap();
        assert_eq!(g.members, vec![0, 2]);
        assert_eq!(g.my_position, 0);
        let g = t.axis_group(Coords::new(1, 1, 1), Axis::Z).unwrap();
        assert_eq!(g.members, vec![6, 7]);
        assert_eq!(g.my_position, 1);

        let t1 = CubeTopology::build(1).unwrap();
        for axis in Axis::ALL {
            let g = t1.axis_group(Coords::new(0, 0, 0), axis).unwrap();
            assert_eq!(g.members, vec![0]);
        }
    }

    #[test]
    fn groups_partition_the_cube() {
        for p in 1..=4 {
            let t = CubeTopology::with_side(p).unwrap();
            for axis in Axis::ALL {
                let mut groups = std::collections::BTreeSet::new();
                let mut seen = vec![0usize; t.ranks()];
                for r in 0..t.ranks() {
                    let c = t.coords_of(r).unwrap();
                    assert_eq!(t.rank_of(c).unwrap(), r);
                    let g = t.axis_group(c, axis).unwrap();
                    assert_eq!(g.size(), p);
                    assert_eq!(g.members[g.my_position], r);
                    groups.insert(g.members.clone());
                }
                assert_eq!(groups.len(), p * p);
                for g in &groups {
                    for &r in g {
                        seen[r] += 1;
                    }
                }
                assert!(seen.iter().all(|&n| n == 1));
            }
        }
    }
}
