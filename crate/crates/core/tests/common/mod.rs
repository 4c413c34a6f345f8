#![allow(dead_code)]

use std::future::Future;

use cube3d::comm::{run_spmd, Endpoint, Schedule, SpmdRun};
use cube3d::ops3d::{matmul_fwd, Form, GradPair};
use cube3d::sharding::{collect, partition, DirectionTriple, GlobalMatrix, ShardedMatrix};
use cube3d::topology::CubeTopology;
use cube3d::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SCHEDULES: [Schedule; 2] = [Schedule::Threaded, Schedule::Lockstep];

pub fn cube(p: usize) -> CubeTopology {
    CubeTopology::with_side(p).unwrap()
}

pub fn spmd<R, F, Fut>(p: usize, schedule: Schedule, program: F) -> SpmdRun<R>
where
    R: Send,
    F: Fn(Endpoint<f64>) -> Fut,
    Fut: Future<Output = Result<R>> + Send,
{
    run_spmd(cube(p), schedule, program).unwrap()
}

pub fn uniform(rows: usize, cols: usize, seed: u64) -> GlobalMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GlobalMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn integers(rows: usize, cols: usize, seed: u64) -> GlobalMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GlobalMatrix::from_fn(rows, cols, |_, _| rng.random_range(0..10) as f64)
}

pub fn uniform_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Operand shapes of `form` for the problem `M, N, K`.
pub fn shapes(form: Form, m: usize, n: usize, k: usize) -> ((usize, usize), (usize, usize)) {
    match form {
        Form::Ab => ((m, n), (n, k)),
        Form::Abt => ((m, n), (k, n)),
        Form::Atb => ((m, n), (m, k)),
    }
}

/// Textbook triple loop, written independently of the library kernels.
pub fn oracle(form: Form, a: &GlobalMatrix<f64>, b: &GlobalMatrix<f64>) -> GlobalMatrix<f64> {
    let at = |r: usize, c: usize| match form {
        Form::Atb => a.get(c, r),
        _ => a.get(r, c),
    };
    let bt = |r: usize, c: usize| match form {
        Form::Abt => b.get(c, r),
        _ => b.get(r, c),
    };
    let (m, inner) = match form {
        Form::Atb => (a.cols(), a.rows()),
        _ => (a.rows(), a.cols()),
    };
    let n = match form {
        Form::Abt => b.rows(),
        _ => b.cols(),
    };
    GlobalMatrix::from_fn(m, n, |i, j| {
        let mut s = 0.0;
        for k in 0..inner {
            s += at(i, k) * bt(k, j);
        }
        s
    })
}

fn operands(
    form: Form,
    a: &GlobalMatrix<f64>,
    b: &GlobalMatrix<f64>,
    d: DirectionTriple,
    p: usize,
) -> (Vec<ShardedMatrix<f64>>, Vec<ShardedMatrix<f64>>) {
    let [(la, da), (lb, db), _] = form.operand_layouts(d);
    let topo = cube(p);
    (
        partition(a, la, da, &topo).unwrap(),
        partition(b, lb, db, &topo).unwrap(),
    )
}

/// Runs one 3-D product on `p³` ranks and collects it.
pub fn par_matmul(
    form: Form,
    a: &GlobalMatrix<f64>,
    b: &GlobalMatrix<f64>,
    d: DirectionTriple,
    p: usize,
    schedule: Schedule,
) -> (GlobalMatrix<f64>, SpmdRun<ShardedMatrix<f64>>) {
    let (sa, sb) = operands(form, a, b, d, p);
    let run = spmd(p, schedule, |mut ep| {
        let (x, y) = (sa[ep.rank()].clone(), sb[ep.rank()].clone());
        async move { matmul_fwd(&mut ep, form, &x, &y, d, None).await }
    });
    (collect(&run.results).unwrap(), run)
}

/// Gradients of `⟨dC, form(A, B)⟩` through the 3-D backward.
pub fn par_matmul_grads(
    form: Form,
    a: &GlobalMatrix<f64>,
    b: &GlobalMatrix<f64>,
    dc: &GlobalMatrix<f64>,
    d: DirectionTriple,
    p: usize,
    schedule: Schedule,
) -> (GlobalMatrix<f64>, GlobalMatrix<f64>) {
    let (sa, sb) = operands(form, a, b, d, p);
    let [_, _, (lc, dcd)] = form.operand_layouts(d);
    let sc = partition(dc, lc, dcd, &cube(p)).unwrap();
    let run = spmd(p, schedule, |mut ep| {
        let (x, y, g) = (sa[ep.rank()].clone(), sb[ep.rank()].clone(), sc[ep.rank()].clone());
        async move {
            let pair = GradPair::forward(&mut ep, form, x, y, d).await?;
            pair.backward(&mut ep, &g).await
        }
    });
    let (da, db): (Vec<_>, Vec<_>) = run.results.into_iter().unzip();
    (collect(&da).unwrap(), collect(&db).unwrap())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
