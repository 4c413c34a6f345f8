//! Balanced placement of matrices and vectors on the cube.
//!
//! With `m = M/p²`, `n = N/p²`, `k = K/p²` and the canonical directions
//! (input `y`, weight `x`, output `z`), rank `(i, j, l)` holds
//!
//! | layout | rows | cols |
//! |--------|------|------|
//! | input `A (M×N)`  | `i·mp + j·m .. +m` | `l·np .. +np` |
//! | weight `B (N×K)` | `l·np .. +np` | `j·kp + i·k .. +k` |
//! | output `C (M×K)` | `i·mp + l·m .. +m` | `j·kp .. +kp` |
//!
//! Every layout is a `p × p` grid of blocks, two axes picking the block and
//! the third ("fine") axis picking a slab of it. All-gathering a shard along
//! its fine axis reassembles the block, which is what the 3-D products need.

mod file;
mod matrix;
mod vector;

use std::fmt;
use std::ops::Range;

pub use file::{read_matrix_file, write_matrix_file, MatrixFile};
pub use matrix::GlobalMatrix;
pub use vector::{collect_vector, diagonal_bounds, partition_vector, DiagonalVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::{Axis, Coords, CubeTopology};

/// Assignment of cube axes to the input, weight and output roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectionTriple {
    pub input: Axis,
    pub weight: Axis,
    pub output: Axis,
}

impl DirectionTriple {
    /// Input gathered along `y`, weights along `x`, outputs scattered along `z`.
    pub const CANONICAL: DirectionTriple = DirectionTriple {
        input: Axis::Y,
        weight: Axis::X,
        output: Axis::Z,
    };

    pub fn new(input: Axis, weight: Axis, output: Axis) -> Result<Self> {
        if input == weight || input == output {
            return Err(Error::DirectionClash(input));
        }
        if weight == output {
            return Err(Error::DirectionClash(weight));
        }
        Ok(DirectionTriple { input, weight, output })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.input, self.weight, self.output).map(|_| ())
    }

    /// Input and output roles exchanged, weight role kept.
    pub fn swapped(&self) -> Self {
        DirectionTriple {
            input: self.output,
            weight: self.weight,
            output: self.input,
        }
    }
}

impl fmt::Display for DirectionTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.input, self.weight, self.output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Input,
    Weight,
    Output,
}

/// Whether the fine axis slices a block by rows or by columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Rows,
    Cols,
}

/// Axis-level description of where a shard sits in the `p × p` block grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub row_axis: Axis,
    pub col_axis: Axis,
    pub fine_axis: Axis,
    pub split: Split,
}

impl Placement {
    /// Shard bounds for the rank at `c` of a `rows × cols` matrix.
    pub fn bounds(&self, c: Coords, rows: usize, cols: usize, p: usize) -> (Range<usize>, Range<usize>) {
        let (rb, cb, f) = (c.get(self.row_axis), c.get(self.col_axis), c.get(self.fine_axis));
        let (bh, bw) = (rows / p, cols / p);
        match self.split {
            Split::Rows => {
                let h = bh / p;
                (rb * bh + f * h..rb * bh + (f + 1) * h, cb * bw..(cb + 1) * bw)
            }
            Split::Cols => {
                let w = bw / p;
                (rb * bh..(rb + 1) * bh, cb * bw + f * w..cb * bw + (f + 1) * w)
            }
        }
    }

    pub fn shard_shape(&self, rows: usize, cols: usize, p: usize) -> (usize, usize) {
        match self.split {
            Split::Rows => (rows / (p * p), cols / p),
            Split::Cols => (rows / p, cols / (p * p)),
        }
    }
}

impl Layout {
    pub fn placement(self, d: DirectionTriple) -> Placement {
        match self {
            Layout::Input => Placement {
                row_axis: d.weight,
                col_axis: d.output,
                fine_axis: d.input,
                split: Split::Rows,
            },
            Layout::Weight => Placement {
                row_axis: d.output,
                col_axis: d.input,
                fine_axis: d.weight,
                split: Split::Cols,
            },
            Layout::Output => Placement {
                row_axis: d.weight,
                col_axis: d.input,
                fine_axis: d.output,
                split: Split::Rows,
            },
        }
    }
}

pub(crate) fn check_divisible(rows: usize, cols: usize, p: usize) -> Result<()> {
    let q = p * p;
    if !rows.is_multiple_of(q) {
        return Err(Error::IndivisibleShape {
            dim: "rows",
            value: rows,
            divisor: q,
        });
    }
    if !cols.is_multiple_of(q) {
        return Err(Error::IndivisibleShape {
            dim: "cols",
            value: cols,
            divisor: q,
        });
    }
    Ok(())
}

/// Half-open `(row_range, col_range)` held by rank `c`.
pub fn shard_bounds(
    layout: Layout,
    d: DirectionTriple,
    c: Coords,
    shape: (usize, usize),
    p: usize,
) -> Result<(Range<usize>, Range<usize>)> {
    d.validate()?;
    check_divisible(shape.0, shape.1, p)?;
    for v in [c.i, c.j, c.l] {
        if v >= p {
            return Err(Error::OutOfRange { coord: v, p });
        }
    }
    Ok(layout.placement(d).bounds(c, shape.0, shape.1, p))
}

/// One rank's piece of a globally `global_rows × global_cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedMatrix<T> {
    global_rows: usize,
    global_cols: usize,
    layout: Layout,
    directions: DirectionTriple,
    p: usize,
    coords: Coords,
    data: Vec<T>,
}

impl<T: Scalar> ShardedMatrix<T> {
    /// Wraps local data produced on a rank. The length must match the layout.
    pub fn from_local(
        global: (usize, usize),
        layout: Layout,
        directions: DirectionTriple,
        p: usize,
        coords: Coords,
        data: Vec<T>,
    ) -> Result<Self> {
        directions.validate()?;
        check_divisible(global.0, global.1, p)?;
        let (r, c) = layout.placement(directions).shard_shape(global.0, global.1, p);
        if data.len() != r * c {
            return Err(Error::LengthMismatch {
                op: "ShardedMatrix::from_local",
                expected: r * c,
                got: data.len(),
            });
        }
        Ok(ShardedMatrix {
            global_rows: global.0,
            global_cols: global.1,
            layout,
            directions,
            p,
            coords,
            data,
        })
    }

    pub fn global_shape(&self) -> (usize, usize) {
        (self.global_rows, self.global_cols)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn directions(&self) -> DirectionTriple {
        self.directions
    }

    pub fn placement(&self) -> Placement {
        self.layout.placement(self.directions)
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn coords(&self) -> Coords {
        self.coords
    }

    pub fn shard_shape(&self) -> (usize, usize) {
        self.placement().shard_shape(self.global_rows, self.global_cols, self.p)
    }

    pub fn bounds(&self) -> (Range<usize>, Range<usize>) {
        self.placement()
            .bounds(self.coords, self.global_rows, self.global_cols, self.p)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same shard with new contents of equal length.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        assert_eq!(data.len(), self.data.len(), "shard length changed");
        ShardedMatrix { data, ..self.clone() }
    }

    /// Re-tags a shard under an equivalent layout. Output shards under `d`
    /// occupy exactly the input slots under `d.swapped()`, which is how one
    /// layer's output becomes the next layer's input without moving data.
    pub fn relabel(self, layout: Layout, directions: DirectionTriple) -> Result<Self> {
        if layout.placement(directions) != self.placement() {
            return Err(Error::LayoutMismatch(format!(
                "{:?}{} does not occupy the same slots as {:?}{}",
                layout, directions, self.layout, self.directions
            )));
        }
        Ok(ShardedMatrix {
            layout,
            directions,
            ..self
        })
    }
}

/// Splits `gm` into one shard per rank (indexed by rank).
pub fn partition<T: Scalar>(
    gm: &GlobalMatrix<T>,
    layout: Layout,
    d: DirectionTriple,
    topo: &CubeTopology,
) -> Result<Vec<ShardedMatrix<T>>> {
    d.validate()?;
    let p = topo.side();
    check_divisible(gm.rows(), gm.cols(), p)?;
    let placement = layout.placement(d);
    (0..topo.ranks())
        .map(|rank| {
            let c = topo.coords_of(rank)?;
            let (rr, cr) = placement.bounds(c, gm.rows(), gm.cols(), p);
            Ok(ShardedMatrix {
                global_rows: gm.rows(),
                global_cols: gm.cols(),
                layout,
                directions: d,
                p,
                coords: c,
                data: gm.block(rr, cr),
            })
        })
        .collect()
}

/// Reassembles the global matrix from a full family of shards.
pub fn collect<T: Scalar>(shards: &[ShardedMatrix<T>]) -> Result<GlobalMatrix<T>> {
    let first = shards
        .first()
        .ok_or_else(|| Error::InconsistentFamily("no shards".into()))?;
    let p = first.p;
    let topo = CubeTopology::with_side(p)?;
    if shards.len() != topo.ranks() {
        return Err(Error::InconsistentFamily(format!(
            "{} shards for {} ranks",
            shards.len(),
            topo.ranks()
        )));
    }
    let (rows, cols) = first.global_shape();
    let mut out = GlobalMatrix::zeros(rows, cols);
    for (rank, s) in shards.iter().enumerate() {
        if s.p != p || s.global_shape() != (rows, cols) || s.placement() != first.placement() {
            return Err(Error::InconsistentFamily(format!(
                "rank {rank} holds {:?}{} of {:?}, rank 0 holds {:?}{} of {:?}",
                s.layout,
                s.directions,
                s.global_shape(),
                first.layout,
                first.directions,
                first.global_shape()
            )));
        }
        if topo.rank_of(s.coords)? != rank {
            return Err(Error::InconsistentFamily(format!(
                "shard at index {rank} belongs to {}",
                s.coords
            )));
        }
        let (rr, cr) = s.bounds();
        let w = cr.len();
        for (k, r) in rr.enumerate() {
            out.data_mut()[r * cols + cr.start..r * cols + cr.end].copy_from_slice(&s.data[k * w..(k + 1) * w]);
        }
    }
    Ok(out)
}

/// Elements each rank stores for `A (M×N)`, `B (N×K)` and `C (M×K)`:
/// `(M/p²)(N/p) + (N/p)(K/p²) + (M/p²)(K/p)`.
pub fn per_rank_memory(m: usize, n: usize, k: usize, p: usize) -> Result<usize> {
    check_divisible(m, n, p)?;
    check_divisible(n, k, p)?;
    let q = p * p;
    Ok((m / q) * (n / p) + (n / p) * (k / q) + (m / q) * (k / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: usize, cols: usize) -> GlobalMatrix<f64> {
        GlobalMatrix::from_fn(rows, cols, |r, c| (r * cols + c) as f64)
    }

    #[test]
    fn input_layout_example() {
        let topo = CubeTopology::build(8).unwrap();
        let shards = partition(&seq(4, 4), Layout::Input, DirectionTriple::CANONICAL, &topo).unwrap();
        let r = topo.rank_of(Coords::new(1, 0, 1)).unwrap();
        assert_eq!(shards[r].data(), &[10.0, 11.0]);
        assert_eq!(shards[r].bounds(), (2..3, 2..4));
    }

    #[test]
    fn weight_and_output_bounds_examples() {
        let d = DirectionTriple::CANONICAL;
        assert_eq!(
            shard_bounds(Layout::Weight, d, Coords::new(0, 1, 0), (4, 4), 2).unwrap(),
            (0..2, 2..3)
        );
        assert_eq!(
            shard_bounds(Layout::Output, d, Coords::new(0, 0, 0), (4, 4), 2).unwrap(),
            (0..1, 0..2)
        );
        assert_eq!(
            shard_bounds(Layout::Input, d, Coords::new(0, 0, 0), (3, 5), 1).unwrap(),
            (0..3, 0..5)
        );
    }

    #[test]
    fn closed_range_formulas_translate_to_half_open() {
        // closed ranges [imp+jm, imp+jm+m-1] etc. checked on every rank, p = 3
        let p = 3;
        let (mm, nn, kk) = (2 * p * p, 3 * p * p, p * p);
        let (m, n, k) = (mm / (p * p), nn / (p * p), kk / (p * p));
        let d = DirectionTriple::CANONICAL;
        let topo = CubeTopology::with_side(p).unwrap();
        for r in 0..topo.ranks() {
            let c = topo.coords_of(r).unwrap();
            let (i, j, l) = (c.i, c.j, c.l);
            let (ar, ac) = shard_bounds(Layout::Input, d, c, (mm, nn), p).unwrap();
            assert_eq!((ar.start, ar.end - 1), (i * m * p + j * m, i * m * p + j * m + m - 1));
            assert_eq!((ac.start, ac.end - 1), (l * n * p, l * n * p + n * p - 1));
            let (br, bc) = shard_bounds(Layout::Weight, d, c, (nn, kk), p).unwrap();
            assert_eq!((br.start, br.end - 1), (l * n * p, l * n * p + n * p - 1));
            assert_eq!((bc.start, bc.end - 1), (j * k * p + i * k, j * k * p + i * k + k - 1));
            let (cr, cc) = shard_bounds(Layout::Output, d, c, (mm, kk), p).unwrap();
            assert_eq!((cr.start, cr.end - 1), (i * m * p + l * m, i * m * p + l * m + m - 1));
            assert_eq!((cc.start, cc.end - 1), (j * k * p, j * k * p + k * p - 1));
        }
    }

    #[test]
    fn indivisible_shapes_are_rejected() {
        let topo = CubeTopology::build(8).unwrap();
        let err = partition(&seq(6, 8), Layout::Input, DirectionTriple::CANONICAL, &topo).unwrap_err();
        assert_eq!(
            err,
            Error::IndivisibleShape {
                dim: "rows",
                value: 6,
                divisor: 4
            }
        );
        let err = partition(&seq(8, 2), Layout::Weight, DirectionTriple::CANONICAL, &topo).unwrap_err();
        assert!(matches!(err, Error::IndivisibleShape { dim: "cols", .. }));
    }

    #[test]
    fn zero_padding_makes_shapes_divisible() {
        let topo = CubeTopology::build(8).unwrap();
        let padded = seq(6, 3).zero_padded(4, 4);
        assert_eq!(padded.shape(), (8, 4));
        assert_eq!(padded.get(5, 2), 17.0);
        assert_eq!(padded.get(7, 3), 0.0);
        assert!(partition(&padded, Layout::Input, DirectionTriple::CANONICAL, &topo).is_ok());
    }

    #[test]
    fn direction_triples_must_be_distinct() {
        assert_eq!(
            DirectionTriple::new(Axis::Y, Axis::Y, Axis::Z),
            Err(Error::DirectionClash(Axis::Y))
        );
        let d = DirectionTriple::CANONICAL.swapped();
        assert_eq!((d.input, d.weight, d.output), (Axis::Z, Axis::X, Axis::Y));
        assert_eq!(d.swapped(), DirectionTriple::CANONICAL);
    }

    #[test]
    fn output_layout_is_next_input_layout() {
        let d = DirectionTriple::CANONICAL;
        assert_eq!(Layout::Output.placement(d), Layout::Input.placement(d.swapped()));
    }

    #[test]
    fn collect_rejects_mixed_family() {
        let topo = CubeTopology::build(8).unwrap();
        let gm = seq(4, 4);
        let mut a = partition(&gm, Layout::Input, DirectionTriple::CANONICAL, &topo).unwrap();
        let b = partition(&gm, Layout::Weight, DirectionTriple::CANONICAL, &topo).unwrap();
        a[3] = b[3].clone();
        assert!(matches!(collect(&a), Err(Error::InconsistentFamily(_))));
        assert!(matches!(collect(&a[..4]), Err(Error::InconsistentFamily(_))));
    }

    #[test]
    fn per_rank_memory_examples() {
        assert_eq!(per_rank_memory(8, 8, 8, 2).unwrap(), 24);
        assert_eq!(per_rank_memory(3, 5, 7, 1).unwrap(), 15 + 35 + 21);
        assert!(per_rank_memory(6, 8, 8, 2).is_err());
    }
}
