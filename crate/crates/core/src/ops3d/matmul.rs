use crate::comm::{Endpoint, ReduceOp};
use crate::error::{Error, Result};
use crate::kernel;
use crate::scalar::Scalar;
use crate::sharding::{DirectionTriple, Layout, Placement, ShardedMatrix, Split};
use crate::topology::Axis;

/// Which product a kernel call computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    /// `A (M×N) · B (N×K)`
    Ab,
    /// `A (M×N) · Bᵀ` with `B (K×N)`
    Abt,
    /// `Aᵀ · B` with `A (M×N)`, `B (M×K)`
    Atb,
}

/// A layout label: which placement an operand is tagged with.
pub type Operand = (Layout, DirectionTriple);

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Ab => "ab",
            Form::Abt => "abt",
            Form::Atb => "atb",
        }
    }

    /// Canonical labels of `(lhs, rhs, output)` for directions `d`.
    pub fn operand_layouts(self, d: DirectionTriple) -> [Operand; 3] {
        match self {
            Form::Ab => [(Layout::Input, d), (Layout::Weight, d), (Layout::Output, d)],
            Form::Abt => [(Layout::Input, d), (Layout::Weight, d.swapped()), (Layout::Output, d)],
            Form::Atb => {
                let e = DirectionTriple {
                    input: d.input,
                    weight: d.output,
                    output: d.weight,
                };
                [(Layout::Input, e), (Layout::Weight, d), (Layout::Weight, e)]
            }
        }
    }

    /// Global shape of the product.
    pub fn output_shape(self, lhs: (usize, usize), rhs: (usize, usize)) -> Result<(usize, usize)> {
        let (ok, out) = match self {
            Form::Ab => (lhs.1 == rhs.0, (lhs.0, rhs.1)),
            Form::Abt => (lhs.1 == rhs.1, (lhs.0, rhs.0)),
            Form::Atb => (lhs.0 == rhs.0, (lhs.1, rhs.1)),
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "{}: {}x{} with {}x{}",
                self.name(),
                lhs.0,
                lhs.1,
                rhs.0,
                rhs.1
            )));
        }
        Ok(out)
    }

    fn default_split(self) -> Split {
        match self {
            Form::Ab | Form::Abt => Split::Rows,
            Form::Atb => Split::Cols,
        }
    }
}

/// Label for a product whose blocks sit at `(row, col)` and which was
/// reduce-scattered along `kappa`.
fn output_label(row: Axis, col: Axis, kappa: Axis, split: Split) -> Operand {
    match split {
        Split::Rows => (
            Layout::Output,
            DirectionTriple {
                input: col,
                weight: row,
                output: kappa,
            },
        ),
        Split::Cols => (
            Layout::Weight,
            DirectionTriple {
                input: col,
                weight: kappa,
                output: row,
            },
        ),
    }
}

fn check_on_rank<T: Scalar>(ep: &Endpoint<T>, s: &ShardedMatrix<T>) -> Result<()> {
    if s.side() != ep.side() || s.coords() != ep.coords() {
        return Err(Error::LayoutMismatch(format!(
            "shard of rank {} (p={}) passed on rank {} (p={})",
            s.coords(),
            s.side(),
            ep.coords(),
            ep.side()
        )));
    }
    Ok(())
}

/// All-gathers a shard along its fine axis into the `R/p × C/p` block.
pub(crate) async fn gather_block<T: Scalar>(
    ep: &mut Endpoint<T>,
    s: &ShardedMatrix<T>,
) -> Result<(usize, usize, Vec<T>)> {
    let pl = s.placement();
    let p = ep.side();
    let g = ep.group(pl.fine_axis);
    let all = ep.all_gather(&g, s.data()).await?;
    let (sr, sc) = s.shard_shape();
    match pl.split {
        Split::Rows => Ok((sr * p, sc, all)),
        Split::Cols => {
            let mut block = Vec::with_capacity(all.len());
            for r in 0..sr {
                for q in 0..p {
                    let base = q * sr * sc + r * sc;
                    block.extend_from_slice(&all[base..base + sc]);
                }
            }
            Ok((sr, sc * p, block))
        }
    }
}

/// Reduce-scatters an `m × n` partial block along `axis`, keeping row or
/// column slab `q` at group position `q`.
pub(crate) async fn scatter_block<T: Scalar>(
    ep: &mut Endpoint<T>,
    axis: Axis,
    m: usize,
    n: usize,
    block: Vec<T>,
    split: Split,
) -> Result<Vec<T>> {
    let g = ep.group(axis);
    let p = g.size();
    let packed = match split {
        Split::Rows => block,
        Split::Cols => {
            let w = n / p;
            let mut packed = Vec::with_capacity(block.len());
            for q in 0..p {
                for r in 0..m {
                    packed.extend_from_slice(&block[r * n + q * w..r * n + (q + 1) * w]);
                }
            }
            packed
        }
    };
    ep.reduce_scatter(&g, &packed, ReduceOp::Sum).await
}

/// The product kernel shared by every forward and backward matmul.
///
/// `lhs` and `rhs` may carry any placements for which the product is
/// expressible: the axes they share must be the contraction block axis, and
/// each operand's fine axis must be the other's free block axis. `d` must
/// name `(lhs fine, rhs fine, contraction)`. `out_split` picks whether the
/// result is scattered by rows (an output layout) or by columns (a weight
/// layout).
pub async fn matmul_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    form: Form,
    lhs: &ShardedMatrix<T>,
    rhs: &ShardedMatrix<T>,
    d: DirectionTriple,
    out_split: Option<Split>,
) -> Result<ShardedMatrix<T>> {
    d.validate()?;
    check_on_rank(ep, lhs)?;
    check_on_rank(ep, rhs)?;
    let out_shape = form.output_shape(lhs.global_shape(), rhs.global_shape())?;
    let (pl, pr): (Placement, Placement) = (lhs.placement(), rhs.placement());
    let (kl, kr, row, col) = match form {
        Form::Ab => (pl.col_axis, pr.row_axis, pl.row_axis, pr.col_axis),
        Form::Abt => (pl.col_axis, pr.col_axis, pl.row_axis, pr.row_axis),
        Form::Atb => (pl.row_axis, pr.row_axis, pl.col_axis, pr.col_axis),
    };
    let expected = DirectionTriple {
        input: pl.fine_axis,
        weight: pr.fine_axis,
        output: kl,
    };
    if kl != kr || row != pr.fine_axis || col != pl.fine_axis || expected != d {
        return Err(Error::LayoutMismatch(format!(
            "{}: operands {:?}{} and {:?}{} cannot be multiplied with directions {d}",
            form.name(),
            lhs.layout(),
            lhs.directions(),
            rhs.layout(),
            rhs.directions()
        )));
    }
    let split = out_split.unwrap_or(form.default_split());

    let (lr, lc, a) = gather_block(ep, lhs).await?;
    let (rr, rc, b) = gather_block(ep, rhs).await?;
    let (m, k, n, prod) = match form {
        Form::Ab => (lr, lc, rc, kernel::gemm_nn(lr, lc, rc, &a, &b)),
        Form::Abt => (lr, lc, rr, kernel::gemm_nt(lr, lc, rr, &a, &b)),
        Form::Atb => (lc, lr, rc, kernel::gemm_tn(lc, lr, rc, &a, &b)),
    };
    ep.charge_multiply_adds((m * k * n) as u64);
    let data = scatter_block(ep, d.output, m, n, prod, split).await?;
    let (layout, dirs) = output_label(row, col, d.output, split);
    ShardedMatrix::from_local(out_shape, layout, dirs, ep.side(), ep.coords(), data)
}

/// `C = A·B` with `A` in the input layout and `B` in the weight layout.
pub async fn matmul_ab_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<ShardedMatrix<T>> {
    matmul_fwd(ep, Form::Ab, a, b, d, None).await
}

/// `dA = dC·Bᵀ` in directions `(o, w, a)`, `dB = Aᵀ·dC` in `(a, o, w)`.
pub async fn matmul_ab_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dc: &ShardedMatrix<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<(ShardedMatrix<T>, ShardedMatrix<T>)> {
    let DirectionTriple {
        input: ia,
        weight: w,
        output: o,
    } = d;
    let da = matmul_fwd(ep, Form::Abt, dc, b, DirectionTriple::new(o, w, ia)?, Some(Split::Rows)).await?;
    let db = matmul_fwd(ep, Form::Atb, a, dc, DirectionTriple::new(ia, o, w)?, Some(Split::Cols)).await?;
    Ok((
        da.relabel(a.layout(), a.directions())?,
        db.relabel(b.layout(), b.directions())?,
    ))
}

/// `C = A·Bᵀ` with `B (K×N)` in the weight layout of `d.swapped()`.
pub async fn matmul_abt_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<ShardedMatrix<T>> {
    matmul_fwd(ep, Form::Abt, a, b, d, None).await
}

/// `dA = dC·B` in `(o, w, a)`, `dB = dCᵀ·A` in `(o, a, w)`.
pub async fn matmul_abt_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dc: &ShardedMatrix<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<(ShardedMatrix<T>, ShardedMatrix<T>)> {
    let DirectionTriple {
        input: ia,
        weight: w,
        output: o,
    } = d;
    let da = matmul_fwd(ep, Form::Ab, dc, b, DirectionTriple::new(o, w, ia)?, Some(Split::Rows)).await?;
    let db = matmul_fwd(ep, Form::Atb, dc, a, DirectionTriple::new(o, ia, w)?, Some(Split::Cols)).await?;
    Ok((
        da.relabel(a.layout(), a.directions())?,
        db.relabel(b.layout(), b.directions())?,
    ))
}

/// `C = Aᵀ·B`; see [`Form::operand_layouts`] for the operand placements.
pub async fn matmul_atb_fwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<ShardedMatrix<T>> {
    matmul_fwd(ep, Form::Atb, a, b, d, None).await
}

/// `dA = B·dCᵀ` in `(w, o, a)`, `dB = A·dC` in `(a, o, w)`.
pub async fn matmul_atb_bwd<T: Scalar>(
    ep: &mut Endpoint<T>,
    dc: &ShardedMatrix<T>,
    a: &ShardedMatrix<T>,
    b: &ShardedMatrix<T>,
    d: DirectionTriple,
) -> Result<(ShardedMatrix<T>, ShardedMatrix<T>)> {
    let DirectionTriple {
        input: ia,
        weight: w,
        output: o,
    } = d;
    let da = matmul_fwd(ep, Form::Abt, b, dc, DirectionTriple::new(w, o, ia)?, Some(Split::Rows)).await?;
    let db = matmul_fwd(ep, Form::Ab, a, dc, DirectionTriple::new(ia, o, w)?, Some(Split::Cols)).await?;
    Ok((
        da.relabel(a.layout(), a.directions())?,
        db.relabel(b.layout(), b.directions())?,
    ))
}

/// A forward product together with the exact operand shards it consumed.
#[derive(Debug, Clone)]
pub struct GradPair<T> {
    pub value: ShardedMatrix<T>,
    pub form: Form,
    pub directions: DirectionTriple,
    pub lhs: ShardedMatrix<T>,
    pub rhs: ShardedMatrix<T>,
}

impl<T: Scalar> GradPair<T> {
    pub async fn forward(
        ep: &mut Endpoint<T>,
        form: Form,
        lhs: ShardedMatrix<T>,
        rhs: ShardedMatrix<T>,
        d: DirectionTriple,
    ) -> Result<Self> {
        let value = matmul_fwd(ep, form, &lhs, &rhs, d, None).await?;
        Ok(GradPair {
            value,
            form,
            directions: d,
            lhs,
            rhs,
        })
    }

    /// Gradients of both operands, in the operands' own layouts.
    pub async fn backward(
        &self,
        ep: &mut Endpoint<T>,
        dc: &ShardedMatrix<T>,
    ) -> Result<(ShardedMatrix<T>, ShardedMatrix<T>)> {
        let (a, b, d) = (&self.lhs, &self.rhs, self.directions);
        match self.form {
            Form::Ab => matmul_ab_bwd(ep, dc, a, b, d).await,
            Form::Abt => matmul_abt_bwd(ep, dc, a, b, d).await,
            Form::Atb => matmul_atb_bwd(ep, dc, a, b, d).await,
        }
    }
}
