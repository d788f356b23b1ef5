//! Independent reference implementations shared by the integration tests and
//! the acceptance harness. Nothing here calls into the closed-form SE(3) maps
//! or the dynamic-programming DTW it is used to check.
#![allow(dead_code)]

use fastdemo::geometry::{Pose, Twist};
use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(r: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Twist with rotation angle uniform in `[0, max_angle)` and translation in a unit cube.
pub fn random_twist(r: &mut impl Rng, max_angle: f64) -> Twist {
    let w = unit_vector(r) * r.random_range(0.0..max_angle);
    let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    Twist::new(v, w)
}

pub fn random_pose(r: &mut impl Rng, max_angle: f64) -> Pose {
    let axis = unit_vector(r);
    let angle = r.random_range(0.0..max_angle);
    let t = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    Pose::from_axis_angle(&axis, angle, t)
}

fn hat(x: &Twist) -> Matrix4<f64> {
    let (v, w) = (x.v, x.w);
    #[rustfmt::skip]
    let m = Matrix4::new(
        0.0, -w.z, w.y, v.x,
        w.z, 0.0, -w.x, v.y,
        -w.y, w.x, 0.0, v.z,
        0.0, 0.0, 0.0, 0.0,
    );
    m
}

fn vee(m: &Matrix4<f64>) -> Twist {
    Twist::new(
        Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        Vector3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)])),
    )
}

/// Dense matrix exponential by scaling and squaring of a Taylor series.
pub fn matrix_exp(a: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = a.abs().max() * 4.0;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..30 {
        term = term * x / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

/// Dense principal matrix logarithm: Denman-Beavers square roots until the
/// argument is near identity, then the Mercator series.
pub fn matrix_log(a: &Matrix4<f64>) -> Matrix4<f64> {
    let id = Matrix4::identity();
    let mut y = *a;
    let mut k = 0;
    while (y - id).abs().max() > 1e-3 {
        let mut z = id;
        for _ in 0..100 {
            let yi = y.try_inverse().expect("invertible");
            let zi = z.try_inverse().expect("invertible");
            let ny = 0.5 * (y + zi);
            let nz = 0.5 * (z + yi);
            let done = (ny - y).abs().max() < 1e-15;
            y = ny;
            z = nz;
            if done {
                break;
            }
        }
        k += 1;
        assert!(k < 60, "square-root iteration did not approach identity");
    }
    let x = y - id;
    let mut pow = x;
    let mut sum = Matrix4::zeros();
    for n in 1..40 {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum += pow * (sign / n as f64);
        pow *= x;
    }
    sum * 2f64.powi(k)
}

pub fn oracle_log(p: &Pose) -> Twist {
    vee(&matrix_log(&p.to_homogeneous()))
}

pub fn oracle_exp(x: &Twist) -> Matrix4<f64> {
    matrix_exp(&hat(x))
}

pub fn twist_diff(a: &Twist, b: &Twist) -> f64 {
    (a.to_vector() - b.to_vector()).abs().max()
}

pub fn pose_diff(a: &Pose, b: &Pose) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max()
}

/// Every monotone alignment path from (0,0) to (n-1,m-1), as
/// (cumulative cost, length), enumerated recursively.
pub fn all_paths(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Vec<(f64, usize)> {
    fn go(a: &[Vector3<f64>], b: &[Vector3<f64>], i: usize, j: usize, cost: f64, len: usize, out: &mut Vec<(f64, usize)>) {
        let cost = cost + (a[i] - b[j]).norm();
        let len = len + 1;
        if i + 1 == a.len() && j + 1 == b.len() {
            out.push((cost, len));
            return;
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, cost, len, out);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, cost, len, out);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, cost, len, out);
        }
    }
    let mut out = Vec::new();
    go(a, b, 0, 0, 0.0, 0, &mut out);
    out
}

/// Minimum cumulative cost over all paths, shortest path among the ties,
/// and the resulting normalized cost.
pub fn brute_force_dtw(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (f64, usize, f64) {
    let paths = all_paths(a, b);
    let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let len = paths
        .iter()
        .filter(|p| p.0 <= best + 1e-12)
        .map(|p| p.1)
        .min()
        .expect("at least one path");
    (best, len, best / len as f64)
}

pub fn random_sequence(r: &mut impl Rng, len: usize) -> Vec<Vector3<f64>> {
    (0..len)
        .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}
