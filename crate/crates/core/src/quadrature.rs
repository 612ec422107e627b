//! Quadrature rules on triangles and intervals.

use crate::mesh::Point;

/// Seven-point rule exact for polynomials of degree 5. Barycentric
/// coordinates and weights normalised to sum to one.
pub const TRIANGLE_7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Five-point Gauss-Legendre rule on [-1, 1].
pub const GAUSS_LEGENDRE_5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
];

pub fn bary_point(p: &[Point; 3], l: [f64; 3]) -> Point {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}

fn tri_area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs()
}

/// `∫_T g` with the seven-point rule.
pub fn integrate_triangle<F: FnMut(Point) -> f64>(p: &[Point; 3], mut g: F) -> f64 {
    let s: f64 = TRIANGLE_7.iter().map(|&(l, w)| w * g(bary_point(p, l))).sum();
    s * tri_area(p)
}

/// Same as [`integrate_triangle`] after `levels` rounds of splitting every
/// piece into four congruent children.
pub fn integrate_triangle_subdivided<F: FnMut(Point) -> f64>(p: &[Point; 3], levels: u32, mut g: F) -> f64 {
    let mut pieces = vec![*p];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(4 * pieces.len());
        for q in &pieces {
            let m = |a: Point, b: Point| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let (m01, m12, m20) = (m(q[0], q[1]), m(q[1], q[2]), m(q[2], q[0]));
            next.push([q[0], m01, m20]);
            next.push([m01, q[1], m12]);
            next.push([m20, m12, q[2]]);
            next.push([m01, m12, m20]);
        }
        pieces = next;
    }
    pieces.iter().map(|q| integrate_triangle(q, &mut g)).sum()
}

/// Composite five-point Gauss-Legendre on `[a, b]` with `pieces` panels.
pub fn integrate_interval<F: FnMut(f64) -> f64>(a: f64, b: f64, pieces: usize, mut g: F) -> f64 {
    let h = (b - a) / pieces as f64;
    let mut s = 0.0;
    for i in 0..pieces {
        let c = a + (i as f64 + 0.5) * h;
        for &(x, w) in &GAUSS_LEGENDRE_5 {
            s += w * g(c + 0.5 * h * x);
        }
    }
    0.5 * h * s
}
