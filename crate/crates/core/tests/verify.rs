mod common;

use common::*;
use cube3d::comm::Schedule;
use cube3d::nn::TransformerConfig;
use cube3d::verify::{
    finite_diff, rel_err, render_csv, run_scaling, run_verify_suite, ScalingMode, SuiteOptions, CSV_HEADER,
};

fn toy(schedule: Schedule) -> SuiteOptions {
    SuiteOptions {
        cfg: TransformerConfig {
            layers: 2,
            ..TransformerConfig::toy()
        },
        seed: 7,
        schedule,
    }
}

#[test]
fn suite_passes_on_the_toy_config_under_both_schedules() {
    for schedule in SCHEDULES {
        let report = run_verify_suite::<f64>(&toy(schedule)).unwrap();
        assert!(report.all_passed(), "{}", report.render());
        assert!(report.checks.len() > 50);
    }
}

#[test]
fn suite_report_is_deterministic() {
    for schedule in SCHEDULES {
        let a = run_verify_suite::<f64>(&toy(schedule)).unwrap().render();
        let b = run_verify_suite::<f64>(&toy(schedule)).unwrap().render();
        assert_eq!(a, b);
    }
}

#[test]
fn single_precision_suite_passes() {
    let report = run_verify_suite::<f32>(&toy(Schedule::Threaded)).unwrap();
    assert!(report.all_passed(), "{}", report.render());
}

#[test]
fn suite_passes_on_one_and_three_sided_cubes() {
    let one = SuiteOptions {
        cfg: TransformerConfig::toy().with_side(1),
        seed: 3,
        schedule: Schedule::Lockstep,
    };
    let report = run_verify_suite::<f64>(&one).unwrap();
    assert!(report.all_passed(), "{}", report.render());
    let three = SuiteOptions {
        cfg: TransformerConfig {
            batch: 3,
            seq: 3,
            heads: 3,
            hidden: 9,
            p: 3,
            layers: 1,
            eps: 1e-5,
        },
        seed: 4,
        schedule: Schedule::Threaded,
    };
    let report = run_verify_suite::<f64>(&three).unwrap();
    assert!(report.all_passed(), "{}", report.render());
}

#[test]
fn quadratic_form_gradient() {
    let n = 6;
    let q = uniform(n, n, 17);
    let theta = uniform_vec(n, 18);
    let loss = |t: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += 0.5 * t[i] * q.get(i, j) * t[j];
            }
        }
        s
    };
    let got = finite_diff(loss, &theta, 1e-5).unwrap();
    let want: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (q.get(i, j) + q.get(j, i)) * theta[j]).sum())
        .collect();
    let worst = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-7, "{worst:e}");
    assert!(rel_err(&got, &want) <= 1e-7);
}

#[test]
fn strong_scaling_divides_compute_by_eight() {
    let base = TransformerConfig {
        batch: 4,
        seq: 4,
        heads: 4,
        hidden: 16,
        p: 1,
        layers: 1,
        eps: 1e-5,
    };
    let rows = run_scaling(ScalingMode::Strong, &base, &[2, 4], 0.0, 1).unwrap();
    assert_eq!((rows[0].gpus, rows[1].gpus), (8, 64));
    assert_eq!(rows[0].forward_cost, 8.0 * rows[1].forward_cost);
    assert_eq!(rows[0].backward_cost, 8.0 * rows[1].backward_cost);
    for r in &rows {
        assert_eq!(
            r.average_step_cost,
            (r.forward_cost + r.backward_cost) / r.batch_size as f64
        );
    }
}

#[test]
fn weak_scaling_csv_has_one_row_per_cube() {
    let base = TransformerConfig {
        batch: 2,
        seq: 12,
        heads: 1,
        hidden: 8,
        p: 1,
        layers: 1,
        eps: 1e-5,
    };
    let rows = run_scaling(ScalingMode::Weak, &base, &[1, 2], 1.0, 1).unwrap();
    let csv = render_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("1,2,8,"));
    assert!(lines[2].starts_with("8,4,32,"));
    assert!(!csv.contains('\r'));
    assert!(rows
        .iter()
        .all(|r| r.forward_cost > 0.0 && r.backward_cost > r.forward_cost));
}

#[test]
fn bad_scaling_requests_are_config_errors() {
    let base = TransformerConfig::toy().with_side(1);
    assert!(run_scaling(ScalingMode::Strong, &base, &[], 1.0, 1).is_err());
    assert!(run_scaling(ScalingMode::Strong, &base, &[3], 1.0, 1).is_err());
    assert!(run_scaling(ScalingMode::Strong, &base, &[1], -1.0, 1).is_err());
}
