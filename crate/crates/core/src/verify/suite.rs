//! The `verify` report: oracle, gradient, traffic and balance checks on one
//! configuration. The report holds no timings, so equal inputs give equal
//! text.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    block_forward_serial, finite_diff, predict_block_costs, predict_costs, rel_err, run_block_parallel,
    run_block_serial, run_model_parallel, serial_add_vec, serial_matmul, serial_mul_vec, serial_transformer_reference,
    Block,
};
use crate::comm::{run_spmd, CostCounters, Schedule};
use crate::error::Result;
use crate::nn::{shard_layer, GroupState, LayerParams, TransformerConfig};
use crate::ops3d::{add_vec_bwd, add_vec_fwd, mul_vec_bwd, mul_vec_fwd, Form, GradPair};
use crate::scalar::{Dtype, Scalar};
use crate::sharding::{collect, collect_vector, partition, partition_vector, DirectionTriple, GlobalMatrix, Layout};
use crate::topology::CubeTopology;

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub cfg: TransformerConfig,
    pub seed: u64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// One `PASS`/`FAIL` line per check, then a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}: {}", c.name, c.detail);
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.len() - self.failures(),
            self.checks.len()
        );
        out
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn within(&mut self, name: impl Into<String>, err: f64, tol: f64) {
        // a NaN error fails
        self.push(name, err <= tol, format!("rel_err {err:.2e} <= {tol:.0e}"));
    }

    fn equal(&mut self, name: impl Into<String>, got: u64, want: u64) {
        self.push(name, got == want, format!("{got} == {want}"));
    }
}

struct Tolerances {
    oracle: f64,
    block: f64,
    stack: f64,
    grad: f64,
    grad_softmax: f64,
}

fn tolerances(dtype: Dtype) -> Tolerances {
    match dtype {
        Dtype::F64 => Tolerances {
            oracle: 1e-12,
            block: 1e-10,
            stack: 1e-9,
            grad: 1e-6,
            grad_softmax: 1e-5,
        },
        Dtype::F32 => Tolerances {
            oracle: 1e-5,
            block: 1e-3,
            stack: 1e-3,
            grad: 1e-3,
            grad_softmax: 1e-3,
        },
    }
}

const FD_STEP: f64 = 1e-5;
const D: DirectionTriple = DirectionTriple::CANONICAL;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> GlobalMatrix<f64> {
    GlobalMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Rounds to `T` and back, so the f64 oracle sees the parallel run's inputs.
fn rounded<T: Scalar>(m: &GlobalMatrix<f64>) -> (GlobalMatrix<T>, GlobalMatrix<f64>) {
    let t = m.map(T::from_f64);
    let back = t.map(Scalar::to_f64);
    (t, back)
}

fn wide<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|&x| Scalar::to_f64(x)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn operand_shapes(form: Form, m: usize, n: usize, k: usize) -> ((usize, usize), (usize, usize)) {
    match form {
        Form::Ab => ((m, n), (n, k)),
        Form::Abt => ((m, n), (k, n)),
        Form::Atb => ((m, n), (m, k)),
    }
}

struct MatmulRun<T> {
    c: GlobalMatrix<T>,
    da: GlobalMatrix<T>,
    db: GlobalMatrix<T>,
    forward: Vec<CostCounters>,
    /// Elements each rank holds of `A`, `B` and `C`.
    memory: Vec<usize>,
}

fn par_matmul<T: Scalar>(
    form: Form,
    a: &GlobalMatrix<T>,
    b: &GlobalMatrix<T>,
    dc: &GlobalMatrix<T>,
    p: usize,
    schedule: Schedule,
) -> Result<MatmulRun<T>> {
    let topo = CubeTopology::with_side(p)?;
    let [(la, da), (lb, db), (lc, dcd)] = form.operand_layouts(D);
    let sa = partition(a, la, da, &topo)?;
    let sb = partition(b, lb, db, &topo)?;
    let sc = partition(dc, lc, dcd, &topo)?;
    let run = run_spmd(topo, schedule, |mut ep| {
        let r = ep.rank();
        let (x, y, g) = (sa[r].clone(), sb[r].clone(), sc[r].clone());
        async move {
            let pair = GradPair::forward(&mut ep, form, x, y, D).await?;
            let fwd = ep.counters();
            let held = pair.lhs.data().len() + pair.rhs.data().len() + pair.value.data().len();
            let (ga, gb) = pair.backward(&mut ep, &g).await?;
            Ok((pair.value, ga, gb, fwd, held))
        }
    })?;
    let mut cs = Vec::new();
    let mut das = Vec::new();
    let mut dbs = Vec::new();
    let mut forward = Vec::new();
    let mut memory = Vec::new();
    for (c, ga, gb, f, m) in run.results {
        cs.push(c);
        das.push(ga);
        dbs.push(gb);
        forward.push(f);
        memory.push(m);
    }
    Ok(MatmulRun {
        c: collect(&cs)?,
        da: collect(&das)?,
        db: collect(&dbs)?,
        forward,
        memory,
    })
}

fn matmul_checks<T: Scalar>(report: &mut VerifyReport, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = &opts.cfg;
    let tol = tolerances(T::DTYPE);
    let (m, n, k) = (cfg.batch * cfg.seq, cfg.hidden, 4 * cfg.hidden);
    let want = predict_costs(m, n, k, cfg.p)?;
    for form in [Form::Ab, Form::Abt, Form::Atb] {
        let name = form.name();
        let ((ar, ac), (br, bc)) = operand_shapes(form, m, n, k);
        let (a, a64) = rounded::<T>(&uniform(rng, ar, ac));
        let (b, b64) = rounded::<T>(&uniform(rng, br, bc));
        let c_shape = form.output_shape(a.shape(), b.shape())?;
        let (dc, dc64) = rounded::<T>(&uniform(rng, c_shape.0, c_shape.1));
        let run = par_matmul(form, &a, &b, &dc, cfg.p, opts.schedule)?;

        let oracle = serial_matmul(&a64, &b64, form)?;
        report.within(
            format!("matmul {name} forward vs serial"),
            rel_err(&wide(run.c.data()), oracle.data()),
            tol.oracle,
        );

        let split = a64.data().len();
        let mut theta = a64.data().to_vec();
        theta.extend_from_slice(b64.data());
        let fd = finite_diff(
            |t| {
                let a = GlobalMatrix::from_vec(ar, ac, t[..split].to_vec()).expect("shape");
                let b = GlobalMatrix::from_vec(br, bc, t[split..].to_vec()).expect("shape");
                dot(serial_matmul(&a, &b, form).expect("conformable").data(), dc64.data())
            },
            &theta,
            FD_STEP,
        )?;
        report.within(
            format!("matmul {name} dA vs finite differences"),
            rel_err(&wide(run.da.data()), &fd[..split]),
            tol.grad,
        );
        report.within(
            format!("matmul {name} dB vs finite differences"),
            rel_err(&wide(run.db.data()), &fd[split..]),
            tol.grad,
        );

        let worst = |f: fn(&CostCounters) -> u64| run.forward.iter().map(f).max().unwrap_or(0);
        let least = |f: fn(&CostCounters) -> u64| run.forward.iter().map(f).min().unwrap_or(0);
        report.equal(
            format!("matmul {name} received per rank (max)"),
            worst(|c| c.elements_received),
            want.per_rank_comm_elems,
        );
        report.equal(
            format!("matmul {name} received per rank (min)"),
            least(|c| c.elements_received),
            want.per_rank_comm_elems,
        );
        report.equal(
            format!("matmul {name} multiply-adds per rank"),
            worst(|c| c.multiply_adds),
            want.per_rank_multiply_adds,
        );
        let (lo, hi) = (run.memory.iter().min().copied(), run.memory.iter().max().copied());
        let balanced = lo == hi && hi == Some(want.per_rank_memory_elems as usize);
        report.push(
            format!("matmul {name} memory per rank"),
            balanced,
            format!(
                "{}..{} == {}",
                lo.unwrap_or(0),
                hi.unwrap_or(0),
                want.per_rank_memory_elems
            ),
        );
    }
    Ok(())
}

/// Forward then backward of a vector op; returns `(C, dA, db)`.
fn par_vector<T: Scalar>(
    mul: bool,
    a: &GlobalMatrix<T>,
    b: &[T],
    dc: &GlobalMatrix<T>,
    p: usize,
    schedule: Schedule,
) -> Result<(GlobalMatrix<T>, GlobalMatrix<T>, Vec<T>)> {
    let topo = CubeTopology::with_side(p)?;
    let sa = partition(a, Layout::Input, D, &topo)?;
    let sg = partition(dc, Layout::Input, D, &topo)?;
    let sb = partition_vector(b, &topo)?;
    let run = run_spmd(topo, schedule, |mut ep| {
        let r = ep.rank();
        let (x, g, v) = (sa[r].clone(), sg[r].clone(), sb[r].clone());
        async move {
            if mul {
                let c = mul_vec_fwd(&mut ep, &x, &v).await?;
                let (da, db) = mul_vec_bwd(&mut ep, &g, &x, &v).await?;
                Ok((c, da, db))
            } else {
                let c = add_vec_fwd(&mut ep, &x, &v).await?;
                let (da, db) = add_vec_bwd(&mut ep, &g).await?;
                Ok((c, da, db))
            }
        }
    })?;
    let mut cs = Vec::new();
    let mut das = Vec::new();
    let mut dbs = Vec::new();
    for (c, da, db) in run.results {
        cs.push(c);
        das.push(da);
        dbs.push(db);
    }
    Ok((collect(&cs)?, collect(&das)?, collect_vector(&dbs)?))
}

fn vector_checks<T: Scalar>(report: &mut VerifyReport, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = &opts.cfg;
    let tol = tolerances(T::DTYPE);
    let (m, n) = (cfg.batch * cfg.seq, cfg.hidden);
    for (mul, name) in [(false, "add_vec"), (true, "mul_vec")] {
        let (a, a64) = rounded::<T>(&uniform(rng, m, n));
        let (b, b64) = rounded::<T>(&uniform(rng, 1, n));
        let (dc, dc64) = rounded::<T>(&uniform(rng, m, n));
        let (c, da, db) = par_vector(mul, &a, b.data(), &dc, cfg.p, opts.schedule)?;
        let apply = |a: &GlobalMatrix<f64>, b: &[f64]| {
            if mul {
                serial_mul_vec(a, b)
            } else {
                serial_add_vec(a, b)
            }
        };
        report.within(
            format!("{name} forward vs serial"),
            rel_err(&wide(c.data()), apply(&a64, b64.data()).data()),
            tol.oracle,
        );
        let split = m * n;
        let mut theta = a64.data().to_vec();
        theta.extend_from_slice(b64.data());
        let fd = finite_diff(
            |t| {
                let a = GlobalMatrix::from_vec(m, n, t[..split].to_vec()).expect("shape");
                dot(apply(&a, &t[split..]).data(), dc64.data())
            },
            &theta,
            FD_STEP,
        )?;
        report.within(
            format!("{name} dA vs finite differences"),
            rel_err(&wide(da.data()), &fd[..split]),
            tol.grad,
        );
        report.within(
            format!("{name} db vs finite differences"),
            rel_err(&wide(&db), &fd[split..]),
            tol.grad,
        );
    }
    Ok(())
}

fn block_checks<T: Scalar>(report: &mut VerifyReport, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = &opts.cfg;
    let tol = tolerances(T::DTYPE);
    let rows = cfg.batch * cfg.seq;
    let params64 = LayerParams::<f64>::init(cfg, opts.seed).cast::<T>().cast::<f64>();
    let params: LayerParams<T> = params64.cast();
    for block in Block::ALL {
        let name = block.name();
        let (x, x64) = rounded::<T>(&uniform(rng, rows, cfg.hidden));
        let (dy, dy64) = rounded::<T>(&uniform(rng, rows, block.output_width(cfg)));
        let group = GroupState::default();
        let out = run_block_parallel(block, cfg, &params, &x, &dy, group, opts.schedule)?;
        let (y, dx, grads) = run_block_serial(block, cfg, &params64, &x64, &dy64);
        let got_grads = out.grads[0].cast::<f64>();
        report.within(
            format!("{name} forward vs serial"),
            rel_err(&wide(out.y.data()), y.data()),
            tol.block,
        );
        report.within(
            format!("{name} input gradient vs serial"),
            rel_err(&wide(out.dx.data()), dx.data()),
            tol.block,
        );
        let worst_serial = got_grads
            .entries()
            .iter()
            .zip(grads.entries())
            .map(|((_, g), (_, w))| rel_err(g.data(), w.data()))
            .fold(0.0, f64::max);
        report.within(format!("{name} parameter gradients vs serial"), worst_serial, tol.block);

        let fd_tol = match block {
            Block::Attention | Block::Layer => tol.grad_softmax,
            _ => tol.grad,
        };
        let loss = |p: &LayerParams<f64>, x: &GlobalMatrix<f64>| {
            dot(block_forward_serial(block, cfg, p, x).data(), dy64.data())
        };
        let fx = finite_diff(
            |t| {
                loss(
                    &params64,
                    &GlobalMatrix::from_vec(rows, cfg.hidden, t.to_vec()).expect("shape"),
                )
            },
            x64.data(),
            FD_STEP,
        )?;
        report.within(
            format!("{name} input gradient vs finite differences"),
            rel_err(&wide(out.dx.data()), &fx),
            fd_tol,
        );
        let fp = finite_diff(
            |t| loss(&LayerParams::from_flat(cfg, t).expect("length"), &x64),
            &params64.to_flat(),
            FD_STEP,
        )?;
        let fp = LayerParams::from_flat(cfg, &fp)?;
        // only the block's own tensors carry gradient; the rest are zero on both sides
        let worst_fd = got_grads
            .entries()
            .iter()
            .zip(fp.entries())
            .map(|((_, g), (_, w))| rel_err(g.data(), w.data()))
            .fold(0.0, f64::max);
        report.within(
            format!("{name} parameter gradients vs finite differences"),
            worst_fd,
            fd_tol,
        );

        let model = predict_block_costs(block, cfg)?;
        let received = |cs: &[CostCounters]| cs.iter().map(|c| c.elements_received).sum::<u64>();
        report.equal(
            format!("{name} forward traffic vs model"),
            received(&out.forward_counters),
            model.forward_total().received,
        );
        report.equal(
            format!("{name} total traffic vs model"),
            received(&out.counters),
            model.total().received,
        );

        let (lo, hi) = (out.tile_sizes.iter().min(), out.tile_sizes.iter().max());
        report.push(
            format!("{name} activation tiles balanced"),
            lo == hi,
            format!(
                "{:?} across {} ranks",
                hi.copied().unwrap_or_default(),
                out.tile_sizes.len()
            ),
        );
        let want = if block.toggles_group() { group.toggled() } else { group };
        report.push(
            format!("{name} group index"),
            out.group_out == want,
            format!("{} -> {}", group.index(), out.group_out.index()),
        );
    }
    Ok(())
}

fn parameter_balance<T: Scalar>(report: &mut VerifyReport, opts: &SuiteOptions) -> Result<()> {
    let cfg = &opts.cfg;
    let topo = CubeTopology::with_side(cfg.p)?;
    let shards = shard_layer(&LayerParams::<T>::zeros(cfg), cfg, GroupState::default(), &topo)?;
    let matrices: Vec<usize> = shards
        .iter()
        .map(|s| {
            [&s.attn.qkv.w, &s.attn.out.w, &s.mlp.fc1.w, &s.mlp.fc2.w]
                .iter()
                .map(|w| w.data().len())
                .sum()
        })
        .collect();
    let vectors: Vec<usize> = shards
        .iter()
        .filter(|s| s.ln1.gamma.is_diagonal())
        .map(|s| {
            [
                &s.ln1.gamma,
                &s.ln1.beta,
                &s.attn.qkv.bias,
                &s.attn.out.bias,
                &s.ln2.gamma,
                &s.ln2.beta,
                &s.mlp.fc1.bias,
                &s.mlp.fc2.bias,
            ]
            .iter()
            .map(|v| v.slice().map_or(0, <[T]>::len))
            .sum()
        })
        .collect();
    let spread = |v: &[usize]| {
        (
            v.iter().min().copied().unwrap_or(0),
            v.iter().max().copied().unwrap_or(0),
        )
    };
    let (lo, hi) = spread(&matrices);
    report.push(
        "weight matrices balanced",
        lo == hi,
        format!("{lo}..{hi} elements on {} ranks", matrices.len()),
    );
    let (lo, hi) = spread(&vectors);
    report.push(
        "parameter vectors balanced on the diagonal",
        lo == hi && vectors.len() == cfg.p * cfg.p,
        format!("{lo}..{hi} elements on {} ranks", vectors.len()),
    );
    Ok(())
}

fn stack_checks<T: Scalar>(report: &mut VerifyReport, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = &opts.cfg;
    let tol = tolerances(T::DTYPE);
    let rows = cfg.batch * cfg.seq;
    let layers64: Vec<LayerParams<f64>> = (0..cfg.layers as u64)
        .map(|l| LayerParams::<f64>::init(cfg, opts.seed + 1 + l).cast::<T>().cast())
        .collect();
    let layers: Vec<LayerParams<T>> = layers64.iter().map(LayerParams::cast).collect();
    let (x, x64) = rounded::<T>(&uniform(rng, rows, cfg.hidden));
    let (dy, dy64) = rounded::<T>(&uniform(rng, rows, cfg.hidden));
    let group = GroupState::default();
    let out = run_model_parallel(cfg, &layers, &x, &dy, group, opts.schedule)?;
    let want = serial_transformer_reference(cfg, &layers64, &x64, &dy64)?;
    let n = cfg.layers;
    report.within(
        format!("{n}-layer stack forward vs serial"),
        rel_err(&wide(out.y.data()), want.y.data()),
        tol.stack,
    );
    report.within(
        format!("{n}-layer stack input gradient vs serial"),
        rel_err(&wide(out.dx.data()), want.dx.data()),
        tol.stack,
    );
    let worst = out
        .grads
        .iter()
        .zip(&want.grads)
        .flat_map(|(g, w)| {
            g.cast::<f64>()
                .entries()
                .into_iter()
                .zip(w.entries())
                .map(|((_, g), (_, w))| rel_err(g.data(), w.data()))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    report.within(
        format!("{n}-layer stack parameter gradients vs serial"),
        worst,
        tol.stack,
    );
    report.push(
        format!("{n}-layer stack keeps the group"),
        out.group_out == group,
        format!("{} -> {}", group.index(), out.group_out.index()),
    );
    Ok(())
}

/// Runs every check in a fixed order with data drawn from `opts.seed`.
pub fn run_verify_suite<T: Scalar>(opts: &SuiteOptions) -> Result<VerifyReport> {
    opts.cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = VerifyReport::default();
    matmul_checks::<T>(&mut report, opts, &mut rng)?;
    vector_checks::<T>(&mut report, opts, &mut rng)?;
    block_checks::<T>(&mut report, opts, &mut rng)?;
    parameter_balance::<T>(&mut report, opts)?;
    stack_checks::<T>(&mut report, opts, &mut rng)?;
    Ok(report)
}
