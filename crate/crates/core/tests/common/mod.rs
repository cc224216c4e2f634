//! Shared oracles for integration tests. These deliberately avoid the code
//! paths they are used to check: the quadrature oracle is plain adaptive
//! subdivision with a 3-point midpoint rule, nothing from bem::quadrature.

#![allow(dead_code)]

use mscat::vec3::{self, Vec3};

fn midpoint_rule<F: Fn(Vec3) -> f64>(a: Vec3, b: Vec3, c: Vec3, f: &F) -> f64 {
    let area = 0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
    let m = |p: Vec3, q: Vec3| vec3::scale(vec3::add(p, q), 0.5);
    let (mab, mbc, mca) = (m(a, b), m(b, c), m(c, a));
    area * (f(mab) + f(mbc) + f(mca)) / 3.0
}

fn adaptive_rec<F: Fn(Vec3) -> f64>(
    a: Vec3,
    b: Vec3,
    c: Vec3,
    f: &F,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = |p: Vec3, q: Vec3| vec3::scale(vec3::add(p, q), 0.5);
    let (mab, mbc, mca) = (m(a, b), m(b, c), m(c, a));
    let parts = [
        (a, mab, mca),
        (b, mbc, mab),
        (c, mca, mbc),
        (mab, mbc, mca),
    ];
    let fine: f64 = parts.iter().map(|&(p, q, r)| midpoint_rule(p, q, r, f)).sum();
    if depth == 0 || (fine - whole).abs() <= tol {
        return fine;
    }
    parts
        .iter()
        .map(|&(p, q, r)| adaptive_rec(p, q, r, f, midpoint_rule(p, q, r, f), tol / 2.0, depth - 1))
        .sum()
}

/// Adaptive 2D quadrature of `f` over triangle (a, b, c). Handles integrable
/// point singularities away from the midpoint-rule nodes.
pub fn adaptive_triangle_integral<F: Fn(Vec3) -> f64>(a: Vec3, b: Vec3, c: Vec3, f: F, tol: f64) -> f64 {
    adaptive_rec(a, b, c, &f, midpoint_rule(a, b, c, &f), tol, 24)
}

/// Deterministic low-discrepancy directions on the unit sphere (golden spiral).
pub fn sphere_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), y, r * t.sin()]
        })
        .collect()
}
