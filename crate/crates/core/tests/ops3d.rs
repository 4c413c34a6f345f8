mod common;

use common::*;
use cube3d::comm::{CollectiveKind, Schedule};
use cube3d::ops3d::{
    add_vec_bwd, add_vec_fwd, matmul_ab_fwd, matmul_ab_fwd_batched, matmul_fwd, mul_vec_bwd, mul_vec_fwd,
    BatchedShardedMatrix, Form,
};
use cube3d::sharding::{
    collect, collect_vector, partition, partition_vector, DirectionTriple, GlobalMatrix, Layout, Split,
};
use cube3d::topology::Axis;
use cube3d::verify::{finite_diff, rel_err};
use cube3d::Error;
use proptest::prelude::*;

const FORMS: [Form; 3] = [Form::Ab, Form::Abt, Form::Atb];
const D: DirectionTriple = DirectionTriple::CANONICAL;

fn block(m: &GlobalMatrix<f64>, br: usize, bc: usize, h: usize, w: usize) -> GlobalMatrix<f64> {
    GlobalMatrix::from_fn(h, w, |r, c| m.get(br * h + r, bc * w + c))
}

fn add(x: &GlobalMatrix<f64>, y: &GlobalMatrix<f64>) -> GlobalMatrix<f64> {
    GlobalMatrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) + y.get(r, c))
}

#[test]
fn every_output_block_is_the_two_term_block_sum() {
    let a = integers(8, 8, 1);
    let b = integers(8, 8, 2);
    let (c, _) = par_matmul(Form::Ab, &a, &b, D, 2, Schedule::Threaded);
    for bi in 0..2 {
        for bj in 0..2 {
            let want = add(
                &oracle(Form::Ab, &block(&a, bi, 0, 4, 4), &block(&b, 0, bj, 4, 4)),
                &oracle(Form::Ab, &block(&a, bi, 1, 4, 4), &block(&b, 1, bj, 4, 4)),
            );
            assert_eq!(block(&c, bi, bj, 4, 4), want, "block ({bi},{bj})");
        }
    }
}

#[test]
fn identity_operands_pass_through_bitwise() {
    let x = uniform(4, 4, 3);
    let i4 = GlobalMatrix::identity(4);
    assert_eq!(par_matmul(Form::Ab, &i4, &x, D, 2, Schedule::Threaded).0, x);
    assert_eq!(par_matmul(Form::Abt, &x, &i4, D, 2, Schedule::Threaded).0, x);
    assert_eq!(par_matmul(Form::Atb, &i4, &x, D, 2, Schedule::Threaded).0, x);
}

#[test]
fn integer_inputs_match_the_triple_loop_exactly() {
    for form in FORMS {
        let a = integers(8, 8, 10);
        let b = integers(8, 8, 11);
        let (c, _) = par_matmul(form, &a, &b, D, 2, Schedule::Threaded);
        assert_eq!(c, oracle(form, &a, &b), "{form:?}");
    }
}

#[test]
fn random_inputs_match_oracle_for_every_cube_side() {
    for p in 1..=3 {
        let (m, n, k) = (2 * p * p, 3 * p * p, p * p);
        for form in FORMS {
            let (sa, sb) = shapes(form, m, n, k);
            let a = uniform(sa.0, sa.1, 20 + p as u64);
            let b = uniform(sb.0, sb.1, 30 + p as u64);
            let (c, run) = par_matmul(form, &a, &b, D, p, Schedule::Threaded);
            let want = oracle(form, &a, &b);
            assert!(rel_err(c.data(), want.data()) <= 1e-12, "{form:?} p={p}");
            if p == 1 {
                assert_eq!(c, want);
                assert_eq!(run.counters[0].elements_received, 0);
                assert_eq!(run.counters[0].elements_sent, 0);
            }
        }
    }
}

#[test]
fn every_rank_does_equal_work_and_moves_the_predicted_volume() {
    for p in 1..=3 {
        let (m, n, k) = (p * p, 2 * p * p, 3 * p * p);
        for form in FORMS {
            let (sa, sb) = shapes(form, m, n, k);
            let (_, run) = par_matmul(
                form,
                &uniform(sa.0, sa.1, 1),
                &uniform(sb.0, sb.1, 2),
                D,
                p,
                Schedule::Lockstep,
            );
            let p3 = (p * p * p) as u64;
            let (m, n, k) = (m as u64, n as u64, k as u64);
            for c in &run.counters {
                assert_eq!(c.multiply_adds, m * n * k / p3);
                assert_eq!(c.elements_received, (p as u64 - 1) * (m * n + n * k + m * k) / p3);
                assert_eq!(c.elements_sent, c.elements_received);
                assert_eq!(c.kind(CollectiveKind::AllGather).calls, 2);
                assert_eq!(c.kind(CollectiveKind::ReduceScatter).calls, 1);
            }
        }
    }
}

#[test]
fn eight_cubed_moves_twenty_four_elements_per_rank() {
    let (_, run) = par_matmul(Form::Ab, &uniform(8, 8, 1), &uniform(8, 8, 2), D, 2, Schedule::Threaded);
    assert!(run
        .counters
        .iter()
        .all(|c| c.elements_received == 24 && c.multiply_adds == 64));
}

#[test]
fn product_output_feeds_the_next_product_with_swapped_directions() {
    let (_, run) = par_matmul(Form::Ab, &uniform(8, 8, 1), &uniform(8, 8, 2), D, 2, Schedule::Threaded);
    let c = &run.results[5];
    assert_eq!(c.layout(), Layout::Output);
    let next = c.clone().relabel(Layout::Input, D.swapped()).unwrap();
    assert_eq!(next.directions().input, D.output);
    assert_eq!(next.directions().output, D.input);
    assert_eq!(next.directions().weight, D.weight);
}

#[test]
fn other_direction_triples_work() {
    let a = uniform(8, 12, 5);
    let b = uniform(12, 4, 6);
    for d in [
        DirectionTriple::new(Axis::Z, Axis::X, Axis::Y).unwrap(),
        DirectionTriple::new(Axis::X, Axis::Z, Axis::Y).unwrap(),
    ] {
        let (c, _) = par_matmul(Form::Ab, &a, &b, d, 2, Schedule::Lockstep);
        assert!(rel_err(c.data(), oracle(Form::Ab, &a, &b).data()) <= 1e-12);
    }
}

#[test]
fn abt_with_one_hot_rows_selects_columns_of_the_transpose() {
    let b = uniform(4, 4, 9);
    let sel = GlobalMatrix::from_fn(4, 4, |r, c| if c == (r + 1) % 4 { 1.0 } else { 0.0 });
    let (c, _) = par_matmul(Form::Abt, &sel, &b, D, 2, Schedule::Threaded);
    for r in 0..4 {
        for k in 0..4 {
            assert_eq!(c.get(r, k), b.get(k, (r + 1) % 4));
        }
    }
}

#[test]
fn gram_matrix_is_exactly_symmetric() {
    let a = integers(8, 8, 4);
    let (c, _) = par_matmul(Form::Atb, &a, &a, D, 2, Schedule::Threaded);
    assert_eq!(c, c.transpose());
    assert!((0..8).all(|i| c.get(i, i) >= 0.0));
}

#[test]
fn gradients_match_reverse_mode_reference() {
    for p in 1..=3 {
        let (m, n, k) = (p * p, 2 * p * p, 3 * p * p);
        for form in FORMS {
            let (sa, sb) = shapes(form, m, n, k);
            let a = uniform(sa.0, sa.1, 41);
            let b = uniform(sb.0, sb.1, 42);
            let c = oracle(form, &a, &b);
            let dc = uniform(c.rows(), c.cols(), 43);
            let (da, db) = par_matmul_grads(form, &a, &b, &dc, D, p, Schedule::Threaded);
            let (wa, wb) = match form {
                Form::Ab => (oracle(Form::Abt, &dc, &b), oracle(Form::Atb, &a, &dc)),
                Form::Abt => (oracle(Form::Ab, &dc, &b), oracle(Form::Atb, &dc, &a)),
                Form::Atb => (oracle(Form::Abt, &b, &dc), oracle(Form::Ab, &a, &dc)),
            };
            assert!(rel_err(da.data(), wa.data()) <= 1e-12, "{form:?} dA p={p}");
            assert!(rel_err(db.data(), wb.data()) <= 1e-12, "{form:?} dB p={p}");
            if p == 1 {
                assert_eq!((da, db), (wa, wb));
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for form in FORMS {
        let a = uniform(8, 8, 51);
        let b = uniform(8, 8, 52);
        let dc = uniform(8, 8, 53);
        let (da, db) = par_matmul_grads(form, &a, &b, &dc, D, 2, Schedule::Threaded);
        let loss = |x: &GlobalMatrix<f64>, y: &GlobalMatrix<f64>| {
            dot(par_matmul(form, x, y, D, 2, Schedule::Lockstep).0.data(), dc.data())
        };
        let fa = finite_diff(
            |t| loss(&GlobalMatrix::from_vec(8, 8, t.to_vec()).unwrap(), &b),
            a.data(),
            1e-5,
        )
        .unwrap();
        let fb = finite_diff(
            |t| loss(&a, &GlobalMatrix::from_vec(8, 8, t.to_vec()).unwrap()),
            b.data(),
            1e-5,
        )
        .unwrap();
        assert!(rel_err(da.data(), &fa) <= 1e-6, "{form:?} dA");
        assert!(rel_err(db.data(), &fb) <= 1e-6, "{form:?} dB");
    }
}

#[test]
fn trivial_gradient_cases() {
    let a = uniform(4, 4, 1);
    let b = uniform(4, 4, 2);
    let i4 = GlobalMatrix::identity(4);
    let ones = GlobalMatrix::from_fn(4, 4, |_, _| 1.0);
    let zero = GlobalMatrix::zeros(4, 4);
    let dc = uniform(4, 4, 3);
    let run = |form, a: &GlobalMatrix<f64>, b: &GlobalMatrix<f64>, dc: &GlobalMatrix<f64>| {
        par_matmul_grads(form, a, b, dc, D, 2, Schedule::Lockstep)
    };
    assert_eq!(run(Form::Ab, &a, &b, &ones).0, oracle(Form::Abt, &ones, &b));
    assert_eq!(run(Form::Ab, &a, &i4, &dc).0, dc);
    assert_eq!(run(Form::Abt, &a, &i4, &dc).0, dc);
    assert_eq!(run(Form::Atb, &a, &i4, &dc).0, dc.transpose());
    for form in FORMS {
        assert_eq!(run(form, &a, &b, &zero), (zero.clone(), zero.clone()));
    }
}

#[test]
fn malformed_calls_are_rejected() {
    let topo = cube(2);
    let a = partition(&uniform(8, 8, 1), Layout::Input, D, &topo).unwrap();
    let b = partition(&uniform(4, 8, 2), Layout::Weight, D, &topo).unwrap();
    let w = partition(&uniform(8, 8, 2), Layout::Weight, D, &topo).unwrap();
    let err = run_expect_err(|mut ep, r| {
        let (x, y) = (a[r].clone(), b[r].clone());
        async move { matmul_ab_fwd(&mut ep, &x, &y, D).await.map(|_| ()) }
    });
    assert!(matches!(err, Error::ShapeMismatch(_)));
    let err = run_expect_err(|mut ep, r| {
        let (x, y) = (a[r].clone(), w[r].clone());
        async move { matmul_ab_fwd(&mut ep, &y, &x, D).await.map(|_| ()) }
    });
    assert!(matches!(err, Error::LayoutMismatch(_)));
    let clash = DirectionTriple {
        input: Axis::Y,
        weight: Axis::Y,
        output: Axis::Z,
    };
    let err = run_expect_err(|mut ep, r| {
        let (x, y) = (a[r].clone(), w[r].clone());
        async move {
            matmul_fwd(&mut ep, Form::Ab, &x, &y, clash, Some(Split::Rows))
                .await
                .map(|_| ())
        }
    });
    assert_eq!(err, Error::DirectionClash(Axis::Y));
}

fn run_expect_err<F, Fut>(f: F) -> Error
where
    F: Fn(cube3d::comm::Endpoint<f64>, usize) -> Fut,
    Fut: std::future::Future<Output = cube3d::Result<()>> + Send,
{
    cube3d::comm::run_spmd(cube(2), Schedule::Lockstep, |ep| {
        let r = ep.rank();
        f(ep, r)
    })
    .unwrap_err()
}

fn par_add_vec(a: &GlobalMatrix<f64>, b: &[f64], layout: Layout, d: DirectionTriple, p: usize) -> GlobalMatrix<f64> {
    let topo = cube(p);
    let sa = partition(a, layout, d, &topo).unwrap();
    let sb = partition_vector(b, &topo).unwrap();
    let run = spmd(p, Schedule::Threaded, |mut ep| {
        let (x, v) = (sa[ep.rank()].clone(), sb[ep.rank()].clone());
        async move { add_vec_fwd(&mut ep, &x, &v).await }
    });
    collect(&run.results).unwrap()
}

fn par_mul_vec(a: &GlobalMatrix<f64>, b: &[f64], layout: Layout, p: usize) -> GlobalMatrix<f64> {
    let topo = cube(p);
    let sa = partition(a, layout, D, &topo).unwrap();
    let sb = partition_vector(b, &topo).unwrap();
    let run = spmd(p, Schedule::Lockstep, |mut ep| {
        let (x, v) = (sa[ep.rank()].clone(), sb[ep.rank()].clone());
        async move { mul_vec_fwd(&mut ep, &x, &v).await }
    });
    collect(&run.results).unwrap()
}

fn row_op(a: &GlobalMatrix<f64>, b: &[f64], f: impl Fn(f64, f64) -> f64) -> GlobalMatrix<f64> {
    GlobalMatrix::from_fn(a.rows(), a.cols(), |r, c| f(a.get(r, c), b[c]))
}

#[test]
fn add_vec_matches_row_broadcast() {
    let got = par_add_vec(&GlobalMatrix::zeros(4, 4), &[1.0, 2.0, 3.0, 4.0], Layout::Input, D, 2);
    assert!((0..4).all(|r| got.row(r) == [1.0, 2.0, 3.0, 4.0]));
    let a = uniform(8, 4, 2);
    assert_eq!(par_add_vec(&a, &[0.0; 4], Layout::Input, D, 2), a);
    for p in 1..=3 {
        let a = uniform(2 * p * p, 3 * p * p, 7);
        let b = uniform_vec(3 * p * p, 8);
        let want = row_op(&a, &b, |x, y| x + y);
        for layout in [Layout::Input, Layout::Output] {
            let got = par_add_vec(&a, &b, layout, D, p);
            assert!(rel_err(got.data(), want.data()) <= 1e-12, "{layout:?} p={p}");
        }
        let got = par_add_vec(&a, &b, Layout::Input, D.swapped(), p);
        assert!(rel_err(got.data(), want.data()) <= 1e-12);
    }
}

#[test]
fn output_layout_broadcasts_along_z() {
    let topo = cube(2);
    let sa = partition(&uniform(4, 4, 1), Layout::Output, D, &topo).unwrap();
    let sb = partition_vector(&[1.0, 2.0, 3.0, 4.0], &topo).unwrap();
    let run = spmd(2, Schedule::Threaded, |mut ep| {
        let (x, v) = (sa[ep.rank()].clone(), sb[ep.rank()].clone());
        async move { add_vec_fwd(&mut ep, &x, &v).await }
    });
    for (rank, c) in run.counters.iter().enumerate() {
        let co = topo.coords_of(rank).unwrap();
        // the broadcast root along z is the rank with l == j
        let bc = c.kind(CollectiveKind::Broadcast);
        assert_eq!(bc.calls, 1);
        assert_eq!(bc.sent > 0, co.l == co.j);
    }
}

#[test]
fn weight_layout_vector_ops_are_rejected() {
    let topo = cube(2);
    let sa = partition(&uniform(4, 4, 1), Layout::Weight, D, &topo).unwrap();
    let sb = partition_vector(&[1.0; 4], &topo).unwrap();
    let err = run_expect_err(|mut ep, r| {
        let (x, v) = (sa[r].clone(), sb[r].clone());
        async move { add_vec_fwd(&mut ep, &x, &v).await.map(|_| ()) }
    });
    assert!(matches!(err, Error::LayoutMismatch(_)));
    let sa = partition(&uniform(4, 8, 1), Layout::Input, D, &topo).unwrap();
    let err = run_expect_err(|mut ep, r| {
        let (x, v) = (sa[r].clone(), sb[r].clone());
        async move { add_vec_fwd(&mut ep, &x, &v).await.map(|_| ()) }
    });
    assert!(matches!(err, Error::ShapeMismatch(_)));
}

/// Gradients `(dA, db)` of `⟨dC, op(A, b)⟩` through the 3-D backward.
fn vec_grads(
    mul: bool,
    a: &GlobalMatrix<f64>,
    b: &[f64],
    dc: &GlobalMatrix<f64>,
    layout: Layout,
    p: usize,
) -> (GlobalMatrix<f64>, Vec<f64>) {
    let topo = cube(p);
    let sa = partition(a, layout, D, &topo).unwrap();
    let sg = partition(dc, layout, D, &topo).unwrap();
    let sb = partition_vector(b, &topo).unwrap();
    let run = spmd(p, Schedule::Threaded, |mut ep| {
        let (x, g, v) = (sa[ep.rank()].clone(), sg[ep.rank()].clone(), sb[ep.rank()].clone());
        async move {
            if mul {
                mul_vec_bwd(&mut ep, &g, &x, &v).await
            } else {
                add_vec_bwd(&mut ep, &g).await
            }
        }
    });
    let (da, db): (Vec<_>, Vec<_>) = run.results.into_iter().unzip();
    (collect(&da).unwrap(), collect_vector(&db).unwrap())
}

#[test]
fn add_vec_bias_gradient_is_column_sum() {
    let ones = GlobalMatrix::from_fn(8, 4, |_, _| 1.0);
    let (da, db) = vec_grads(false, &ones, &[0.0; 4], &ones, Layout::Input, 2);
    assert_eq!(db, vec![8.0; 4]);
    assert_eq!(da, ones);
    let zero = GlobalMatrix::zeros(8, 4);
    assert_eq!(
        vec_grads(false, &zero, &[0.0; 4], &zero, Layout::Output, 2),
        (zero, vec![0.0; 4])
    );
}

#[test]
fn vector_op_gradients_match_finite_differences() {
    for p in [1, 2, 3] {
        let (m, n) = (2 * p * p, p * p);
        let a = uniform(m, n, 61);
        let b = uniform_vec(n, 62);
        let dc = uniform(m, n, 63);
        for layout in [Layout::Input, Layout::Output] {
            for mul in [false, true] {
                let (da, db) = vec_grads(mul, &a, &b, &dc, layout, p);
                let f = |x: f64, y: f64| if mul { x * y } else { x + y };
                let fa = finite_diff(
                    |t| {
                        dot(
                            row_op(&GlobalMatrix::from_vec(m, n, t.to_vec()).unwrap(), &b, f).data(),
                            dc.data(),
                        )
                    },
                    a.data(),
                    1e-5,
                )
                .unwrap();
                let fb = finite_diff(|t| dot(row_op(&a, t, f).data(), dc.data()), &b, 1e-5).unwrap();
                assert!(rel_err(da.data(), &fa) <= 1e-6, "dA mul={mul} {layout:?} p={p}");
                assert!(rel_err(&db, &fb) <= 1e-6, "db mul={mul} {layout:?} p={p}");
            }
        }
    }
}

#[test]
fn mul_vec_examples() {
    let a = uniform(8, 8, 71);
    let dc = uniform(8, 8, 72);
    assert_eq!(par_mul_vec(&a, &[1.0; 8], Layout::Input, 2), a);
    let (_, db) = vec_grads(true, &a, &[1.0; 8], &dc, Layout::Input, 2);
    let prod = row_op(&a, &[0.0; 8], |x, _| x);
    let want: Vec<f64> = (0..8)
        .map(|c| (0..8).map(|r| dc.get(r, c) * prod.get(r, c)).sum())
        .collect();
    assert!(rel_err(&db, &want) <= 1e-14);
    assert_eq!(par_mul_vec(&a, &[0.0; 8], Layout::Output, 2), GlobalMatrix::zeros(8, 8));
    let (da, _) = vec_grads(true, &a, &[0.0; 8], &dc, Layout::Input, 2);
    assert_eq!(da, GlobalMatrix::zeros(8, 8));
    for p in 1..=3 {
        let a = uniform(p * p, 2 * p * p, 73);
        let b = uniform_vec(2 * p * p, 74);
        let got = par_mul_vec(&a, &b, Layout::Input, p);
        assert!(rel_err(got.data(), row_op(&a, &b, |x, y| x * y).data()) <= 1e-12);
    }
}

fn batched_ab(a: &[GlobalMatrix<f64>], b: &[GlobalMatrix<f64>]) -> (Vec<GlobalMatrix<f64>>, Vec<u64>) {
    let topo = cube(2);
    let sa: Vec<_> = a
        .iter()
        .map(|m| partition(m, Layout::Input, D, &topo).unwrap())
        .collect();
    let sb: Vec<_> = b
        .iter()
        .map(|m| partition(m, Layout::Weight, D, &topo).unwrap())
        .collect();
    let run = spmd(2, Schedule::Threaded, |mut ep| {
        let r = ep.rank();
        let x = BatchedShardedMatrix::new(sa.iter().map(|s| s[r].clone()).collect());
        let y = BatchedShardedMatrix::new(sb.iter().map(|s| s[r].clone()).collect());
        async move { matmul_ab_fwd_batched(&mut ep, &x?, &y?, D).await }
    });
    let slices: Vec<Vec<_>> = run.results.into_iter().map(|b| b.into_slices()).collect();
    let out = (0..a.len())
        .map(|k| collect(&slices.iter().map(|s| s[k].clone()).collect::<Vec<_>>()).unwrap())
        .collect();
    (out, run.counters.iter().map(|c| c.elements_received).collect())
}

#[test]
fn batched_products_equal_looped_products() {
    let a = uniform(8, 8, 81);
    let b = uniform(8, 8, 82);
    let (single, run) = par_matmul(Form::Ab, &a, &b, D, 2, Schedule::Threaded);
    let (got, recv) = batched_ab(std::slice::from_ref(&a), std::slice::from_ref(&b));
    assert_eq!(got, vec![single.clone()]);
    assert_eq!(
        recv,
        run.counters.iter().map(|c| c.elements_received).collect::<Vec<_>>()
    );
    let (twice, _) = batched_ab(&[a.clone(), a.clone()], &[b.clone(), b.clone()]);
    assert_eq!(twice[0], twice[1]);
    let xs: Vec<_> = (0..3).map(|k| uniform(8, 8, 90 + k)).collect();
    let ys: Vec<_> = (0..3).map(|k| uniform(8, 8, 95 + k)).collect();
    let (got, recv) = batched_ab(&xs, &ys);
    for k in 0..3 {
        assert!(rel_err(got[k].data(), oracle(Form::Ab, &xs[k], &ys[k]).data()) <= 1e-12);
    }
    assert!(recv.iter().all(|&r| r == 3 * 24));
}

#[test]
fn mismatched_batches_are_rejected() {
    let topo = cube(1);
    let a = partition(&uniform(2, 2, 1), Layout::Input, D, &topo).unwrap();
    let b = partition(&uniform(2, 4, 1), Layout::Input, D, &topo).unwrap();
    assert!(matches!(
        BatchedShardedMatrix::new(vec![a[0].clone(), b[0].clone()]),
        Err(Error::BatchMismatch(_))
    ));
    let one = BatchedShardedMatrix::new(vec![a[0].clone()]).unwrap();
    let two = BatchedShardedMatrix::new(vec![a[0].clone(), a[0].clone()]).unwrap();
    let err = cube3d::comm::run_spmd(topo, Schedule::Lockstep, |mut ep| {
        let (x, y) = (one.clone(), two.clone());
        async move { matmul_ab_fwd_batched(&mut ep, &x, &y, D).await.map(|_| ()) }
    })
    .unwrap_err();
    assert!(matches!(err, Error::BatchMismatch(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_shapes_match_oracle(
        p in 1usize..=2,
        mb in 1usize..=3,
        nb in 1usize..=3,
        kb in 1usize..=3,
        form in prop::sample::select(FORMS.to_vec()),
        seed in any::<u64>(),
    ) {
        let q = p * p;
        let (sa, sb) = shapes(form, mb * q, nb * q, kb * q);
        let a = uniform(sa.0, sa.1, seed);
        let b = uniform(sb.0, sb.1, seed ^ 1);
        let (c, run) = par_matmul(form, &a, &b, D, p, Schedule::Lockstep);
        prop_assert!(rel_err(c.data(), oracle(form, &a, &b).data()) <= 1e-12);
        let want = (p as u64 - 1) * ((mb * nb + nb * kb + mb * kb) * q * q) as u64 / (q * p) as u64;
        prop_assert!(run.counters.iter().all(|c| c.elements_received == want));
    }
}
