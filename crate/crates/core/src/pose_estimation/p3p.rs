//! Minimal three-point absolute pose (Grunert's distance formulation).

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{CameraIntrinsics, Pose};

/// Reprojection tolerance for accepting a P3P solution.
pub const P3P_REPROJ_TOL_PX: f64 = 1e-6;

/// Poses `T(cam←world)` that project the three world points onto the three
/// pixels. Collinear or coincident points yield no solution.
pub fn p3p(k: &CameraIntrinsics, points: &[Vector3<f64>; 3], pixels: &[Vector2<f64>; 3]) -> Vec<Pose> {
    let bearings = [k.bearing(&pixels[0]), k.bearing(&pixels[1]), k.bearing(&pixels[2])];
    p3p_bearings(points, &bearings)
        .into_iter()
        .filter(|pose| {
            points.iter().zip(pixels).all(|(x, px)| {
                let pc = pose.transform_point(x);
                k.project_camera_point(&pc)
                    .is_some_and(|p| (p - px).norm() <= P3P_REPROJ_TOL_PX)
            })
        })
        .collect()
}

/// P3P on unit bearing vectors. Solutions have positive depth for all points.
pub fn p3p_bearings(points: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let [x1, x2, x3] = points;
    let scale = (x2 - x1).norm().max((x3 - x1).norm()).max((x3 - x2).norm());
    if scale == 0.0 || (x2 - x1).cross(&(x3 - x1)).norm() <= 1e-10 * scale * scale {
        return Vec::new();
    }
    let a2 = (x2 - x3).norm_squared();
    let b2 = (x1 - x3).norm_squared();
    let c2 = (x1 - x2).norm_squared();
    let [f1, f2, f3] = bearings.map(|b| b.normalize());
    let ca = f2.dot(&f3);
    let cb = f1.dot(&f3);
    let cg = f1.dot(&f2);

    // u = N(v) / D(v) with u = s2/s1, v = s3/s1.
    let q = [1.0, -2.0 * cb, 1.0]; // 1 + v² − 2v·cβ
    let k_ac = (a2 - c2) / b2;
    let n = poly_add(&poly_scale(&q, k_ac), &[1.0, 0.0, -1.0]);
    let d = [2.0 * cg, -2.0 * ca];
    // b²(N² − 2cγ·N·D + D²) − c²·Q·D² = 0
    let nd = poly_mul(&n, &d);
    let dd = poly_mul(&d, &d);
    let inner = poly_add(&poly_add(&poly_mul(&n, &n), &poly_scale(&nd, -2.0 * cg)), &dd);
    let quartic = poly_add(&poly_scale(&inner, b2), &poly_scale(&poly_mul(&q, &dd), -c2));

    let mut out: Vec<Pose> = Vec::new();
    for v in real_roots(&quartic) {
        let dv = poly_eval(&d, v);
        if dv.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&n, v) / dv;
        let qv = poly_eval(&q, v);
        if u <= 0.0 || v <= 0.0 || qv <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let mut s = Vector3::new(s1, u * s1, v * s1);
        polish_depths(&mut s, [a2, b2, c2], [ca, cb, cg]);
        if s.iter().any(|&si| !(si > 0.0 && si.is_finite())) {
            continue;
        }
        let ys = [f1 * s[0], f2 * s[1], f3 * s[2]];
        let Some(pose) = align_triangles(points, &ys) else {
            continue;
        };
        if !out.iter().any(|p| same_pose(p, &pose)) {
            out.push(pose);
        }
    }
    out
}

fn same_pose(a: &Pose, b: &Pose) -> bool {
    (a.translation() - b.translation()).norm() < 1e-9 && a.rotation().angle_to(b.rotation()) < 1e-9
}

/// Gauss-Newton on the three law-of-cosines equations.
fn polish_depths(s: &mut Vector3<f64>, [a2, b2, c2]: [f64; 3], [ca, cb, cg]: [f64; 3]) {
    for _ in 0..5 {
        let (s1, s2, s3) = (s[0], s[1], s[2]);
        let r = Vector3::new(
            s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2,
            s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cb - b2,
            s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cg - c2,
        );
        #[rustfmt::skip]
        let j = Matrix3::new(
            0.0,                   2.0 * (s2 - s3 * ca), 2.0 * (s3 - s2 * ca),
            2.0 * (s1 - s3 * cb),  0.0,                  2.0 * (s3 - s1 * cb),
            2.0 * (s1 - s2 * cg),  2.0 * (s2 - s1 * cg), 0.0,
        );
        let Some(step) = j.lu().solve(&r) else {
            return;
        };
        *s -= step;
        if step.norm() <= 1e-15 * s.norm() {
            return;
        }
    }
}

/// Rigid transform mapping triangle `xs` onto the congruent triangle `ys`.
fn align_triangles(xs: &[Vector3<f64>; 3], ys: &[Vector3<f64>; 3]) -> Option<Pose> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(0.0)?;
        let w = p[2] - p[0];
        let e2 = (w - e1 * e1.dot(&w)).try_normalize(0.0)?;
        Some(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]))
    };
    let r = frame(ys)? * frame(xs)?.transpose();
    let rot = nalgebra::Rotation3::from_matrix(&r);
    let mx = (xs[0] + xs[1] + xs[2]) / 3.0;
    let my = (ys[0] + ys[1] + ys[2]) / 3.0;
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    Some(Pose::new(q, my - (q * mx)))
}

// Polynomials are coefficient slices in ascending powers.

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += v;
    }
    out
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots via companion-matrix eigenvalues, each polished by Newton steps.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|v| v / scale).collect();
    while c.len() > 1 && c.last().is_some_and(|v| v.abs() < 1e-14) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut m = nalgebra::DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        m[(i, deg - 1)] = -c[i] / lead;
    }
    let deriv: Vec<f64> = c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect();
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let dp = poly_eval(&deriv, x);
                if dp == 0.0 {
                    break;
                }
                let step = poly_eval(&c, x) / dp;
                x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            x
        })
        .filter(|x| x.is_finite())
        .collect()
}
