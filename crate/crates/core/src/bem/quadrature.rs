//! Triangle quadrature: a symmetric 7-point rule for smooth integrands and
//! the closed-form potential of a constant source on a plane triangle for
//! the singular 1/r part.

use crate::vec3::{self, Vec3};

/// Barycentric points and weights of the degree-5 symmetric 7-point rule.
/// Weights sum to 1 and are scaled by the triangle area on use.
pub fn rule_7pt() -> [([f64; 3], f64); 7] {
    let s15 = 15.0_f64.sqrt();
    let b1 = (6.0 - s15) / 21.0;
    let a1 = 1.0 - 2.0 * b1;
    let w1 = (155.0 - s15) / 1200.0;
    let b2 = (6.0 + s15) / 21.0;
    let a2 = 1.0 - 2.0 * b2;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([a1, b1, b1], w1),
        ([b1, a1, b1], w1),
        ([b1, b1, a1], w1),
        ([a2, b2, b2], w2),
        ([b2, a2, b2], w2),
        ([b2, b2, a2], w2),
    ]
}

/// Evaluate `f` at the 7-point rule nodes of triangle (a, b, c) and return
/// the area-weighted sum approximating the surface integral.
pub fn integrate_7pt<F: FnMut(Vec3) -> f64>(a: Vec3, b: Vec3, c: Vec3, mut f: F) -> f64 {
    let area = triangle_area(a, b, c);
    let mut acc = 0.0;
    for (bary, w) in rule_7pt() {
        let y = bary_point(a, b, c, bary);
        acc += w * f(y);
    }
    acc * area
}

#[inline]
pub fn bary_point(a: Vec3, b: Vec3, c: Vec3, bary: [f64; 3]) -> Vec3 {
    [
        bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
        bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2],
    ]
}

#[inline]
pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
}

/// Closed-form integral of 1/||x - y|| over the plane triangle (a, b, c),
/// valid for any observation point x, on or off the plane.
///
/// Edge-by-edge form for uniform source distributions on polygonal panels:
/// each edge contributes a log term along its line plus an arctangent pair
/// accounting for the out-of-plane height.
pub fn inv_r_panel_integral(x: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let n = vec3::unit(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
    let h = vec3::dot(vec3::sub(x, a), n);
    let habs = h.abs();
    // Projection of x onto the triangle plane.
    let p = vec3::sub(x, vec3::scale(n, h));

    let verts = [a, b, c];
    let mut total = 0.0;
    for i in 0..3 {
        let v0 = verts[i];
        let v1 = verts[(i + 1) % 3];
        let edge = vec3::sub(v1, v0);
        let len = vec3::norm(edge);
        if len == 0.0 {
            continue;
        }
        let s_hat = vec3::scale(edge, 1.0 / len);
        // Outward in-plane normal of the edge for a counter-clockwise loop.
        let m_hat = vec3::cross(s_hat, n);
        let t0 = vec3::dot(vec3::sub(v0, p), m_hat);
        let l_minus = vec3::dot(vec3::sub(v0, p), s_hat);
        let l_plus = vec3::dot(vec3::sub(v1, p), s_hat);
        let r0_sq = t0 * t0 + h * h;
        let r_minus = (l_minus * l_minus + r0_sq).sqrt();
        let r_plus = (l_plus * l_plus + r0_sq).sqrt();

        // Observation point on the edge line: both terms vanish.
        if r0_sq == 0.0 {
            continue;
        }

        // log((R+ + l+)/(R- + l-)) with the stable branch when l- < 0,
        // using (R + l)(R - l) = R0^2.
        let log_term = if l_minus >= 0.0 {
            ((r_plus + l_plus) / (r_minus + l_minus)).ln()
        } else {
            ((r_minus - l_minus) / (r_plus - l_plus)).ln()
        };

        let atan_term = if habs > 0.0 {
            let f = |l: f64, r: f64| (t0 * l / (r0_sq + habs * r)).atan();
            f(l_plus, r_plus) - f(l_minus, r_minus)
        } else {
            0.0
        };

        total += t0 * log_term - habs * atan_term;
    }
    total
}
