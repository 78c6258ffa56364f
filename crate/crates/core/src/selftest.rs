//! Quick invariant checks behind `gaze3d selftest`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::evaluation::depth_combination_sweep;
use crate::eye::TwoSphereEye;
use crate::geometry::{EulerAngles, PinholeCamera, Vec2};
use crate::io::{write_results_csv, Dataset};
use crate::mappers::{MapperKind, MapperOptions};
use crate::optimizer::{solve_lm, FnProblem, LmSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn eye_model() -> Check {
    match TwoSphereEye::default().pupil_geometry() {
        Ok(g) => check(
            "eye-model",
            (g.radius_mm - 5.77).abs() <= 0.05,
            format!("pupil circle radius {:.4} mm", g.radius_mm),
        ),
        Err(e) => check("eye-model", false, e.to_string()),
    }
}

fn rotations(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a = [
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.1..3.1),
        ];
        let back = EulerAngles::from_matrix(&EulerAngles::new(a).expect("in range").to_matrix());
        let err = back
            .as_array()
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    check(
        "euler-round-trip",
        worst < 1e-9,
        format!("max angle error {worst:.2e} rad"),
    )
}

fn camera(rng: &mut ChaCha8Rng) -> Check {
    let cam = PinholeCamera::centered(720.0, 1280, 720).expect("valid camera");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let px = Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
        let depth = rng.random_range(0.2..5.0);
        let ray = cam.back_project(&px);
        let point = ray.at(depth / ray.direction().z);
        match cam.project(&point) {
            Ok(p) => worst = worst.max((p - px).norm()),
            Err(_) => worst = f64::INFINITY,
        }
    }
    check(
        "project-back-project",
        worst < 1e-9,
        format!("max reprojection error {worst:.2e} px"),
    )
}

fn optimizer(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let settings = LmSettings::default();
    let rosenbrock = FnProblem::new(2, |x: &[f64]| {
        DVector::from_vec(vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])])
    });
    let rb = solve_lm(&rosenbrock, &[-1.2, 1.0], &settings);
    let rb_check = match rb {
        Ok(r) => {
            let err = (r.params[0] - 1.0).abs().max((r.params[1] - 1.0).abs());
            check(
                "lm-rosenbrock",
                err < 1e-6 && r.is_monotone(),
                format!("distance to (1,1) {err:.2e}"),
            )
        }
        Err(e) => check("lm-rosenbrock", false, e.to_string()),
    };

    let a = DMatrix::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
    let closed = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .expect("svd solve");
    let closed_cost = (&a * &closed - &b).norm_squared();
    let linear = FnProblem::new(5, |x: &[f64]| &a * DVector::from_column_slice(x) - &b);
    let ls_check = match solve_lm(&linear, &[0.0; 5], &settings) {
        Ok(r) => {
            let rel = (r.cost - closed_cost).abs() / closed_cost;
            check(
                "lm-linear-least-squares",
                rel < 1e-8,
                format!("relative cost gap {rel:.2e}"),
            )
        }
        Err(e) => check("lm-linear-least-squares", false, e.to_string()),
    };
    vec![rb_check, ls_check]
}

fn simulation() -> Vec<Check> {
    let cfg = ExperimentConfig::default();
    let dataset = match cfg.simulate() {
        Ok(d) => d,
        Err(e) => return vec![check("simulate", false, e.to_string())],
    };
    let mut bytes = Vec::new();
    dataset.write_to(&mut bytes).expect("write to memory");
    let round_trip = match Dataset::read_from(bytes.as_slice()) {
        Ok(back) => {
            let mut again = Vec::new();
            back.write_to(&mut again).expect("write to memory");
            check(
                "dataset-round-trip",
                back == dataset && again == bytes,
                format!("{} records", dataset.records.len()),
            )
        }
        Err(e) => check("dataset-round-trip", false, e.to_string()),
    };

    let exp = dataset.experiment().expect("simulated header is valid");
    let options = MapperOptions::default();
    let sweep = depth_combination_sweep(&exp, &[MapperKind::ThreeDToThreeD], 1..=1, &options);
    let worst = sweep
        .records
        .iter()
        .map(|r| r.stats().map_or(f64::INFINITY, |s| s.mean))
        .fold(0.0, f64::max);
    let near_zero = check(
        "3d3d-noiseless-single-depth",
        worst < 0.1,
        format!("worst mean error {worst:.2e} deg"),
    );

    let csv = |s| {
        let mut buf = Vec::new();
        write_results_csv(s, &mut buf).map(|_| buf).ok()
    };
    let again = depth_combination_sweep(&exp, &[MapperKind::ThreeDToThreeD], 1..=1, &options);
    let first = csv(&sweep);
    let deterministic = check(
        "sweep-determinism",
        first.is_some() && first == csv(&again),
        "two sweeps, identical CSV".into(),
    );
    vec![round_trip, near_zero, deterministic]
}

pub fn run_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checks = vec![eye_model(), rotations(&mut rng), camera(&mut rng)];
    checks.extend(optimizer(&mut rng));
    checks.extend(simulation());
    checks
}
