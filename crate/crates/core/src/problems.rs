//! Benchmark problems on `(-1, 1)^2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use thiserror::Error;

use crate::fem::{element_averages, energy_error_vs_exact, interpolate, P1Function, PwConstField};
use crate::mesh::{build_uniform_mesh, barycentric, MeshError, Point, Square, TriMesh};
use crate::quadrature::integrate_interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem `{0}` (expected example1, example2 or kellogg)")]
    Unknown(String),
    #[error("element {0} straddles a coefficient interface")]
    StraddlesInterface(usize),
    #[error("Kellogg parameters are inconsistent: R = {r}, expected {expected}")]
    InconsistentParameters { r: f64, expected: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

type ScalarFn = fn(Point) -> f64;
type VectorFn = fn(Point) -> Point;

/// A diffusion problem with piecewise-constant coefficient, source and
/// Dirichlet data, and optionally its exact solution.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub domain: Square,
    /// Subdivisions per side of the initial uniform mesh.
    pub initial_subdivisions: usize,
    pub coefficient: ScalarFn,
    pub source: ScalarFn,
    pub boundary: ScalarFn,
    pub exact: Option<ScalarFn>,
    pub exact_gradient: Option<VectorFn>,
    /// `||u||_A`, when known.
    pub exact_energy_norm: Option<f64>,
    /// Point where the exact gradient is singular.
    pub singular_point: Option<Point>,
}

impl BenchmarkProblem {
    pub fn by_name(name: &str) -> Result<Self, ProblemError> {
        match name {
            "example1" | "example2" => Ok(example1_problem()),
            "kellogg" => kellogg_problem(),
            other => Err(ProblemError::Unknown(other.to_string())),
        }
    }

    pub fn initial_mesh(&self) -> Result<TriMesh, ProblemError> {
        Ok(build_uniform_mesh(self.domain, self.initial_subdivisions)?)
    }

    pub fn coefficient_field(&self, mesh: &TriMesh) -> Result<PwConstField, ProblemError> {
        pw_constant_coefficient(mesh, self.coefficient)
    }

    /// Element averages of the source.
    pub fn source_field(&self, mesh: &TriMesh) -> PwConstField {
        element_averages(mesh, self.source)
    }

    /// Nodal Dirichlet values (the interpolant of `g`; interior entries are
    /// ignored by the discretisation).
    pub fn boundary_values(&self, mesh: &TriMesh) -> P1Function {
        interpolate(mesh, self.boundary)
    }

    /// `||u - u_h||_A`, if the exact solution is known.
    pub fn energy_error(&self, mesh: &TriMesh, a: &[f64], u_h: &[f64]) -> Option<f64> {
        self.exact_gradient
            .map(|g| energy_error_vs_exact(mesh, a, g, u_h, self.singular_point))
    }
}

/// `A_K` from a rule that must be constant on each element. The rule is
/// sampled at the centroid and near each vertex; disagreement means the
/// element crosses an interface.
pub fn pw_constant_coefficient(mesh: &TriMesh, rule: ScalarFn) -> Result<PwConstField, ProblemError> {
    let samples = [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.9, 0.05, 0.05],
        [0.05, 0.9, 0.05],
        [0.05, 0.05, 0.9],
    ];
    let mut out = Vec::with_capacity(mesh.num_elements());
    for t in 0..mesh.num_elements() {
        let p = mesh.triangle_points(t);
        let at = |l: [f64; 3]| rule(crate::quadrature::bary_point(&p, l));
        let v = at(samples[0]);
        if samples[1..].iter().any(|&l| at(l) != v) {
            return Err(ProblemError::StraddlesInterface(t));
        }
        out.push(v);
    }
    Ok(out)
}

/// `1 / (pi sqrt(10))`, normalising `||u||_A = 1`.
pub fn example1_alpha() -> f64 {
    1.0 / (PI * 10f64.sqrt())
}

fn ex1_u(p: Point) -> f64 {
    let (x, y) = (p[0], p[1]);
    example1_alpha() * ((PI * x).sin() * (PI * y).sin() + 0.5 * (4.0 * PI * x).sin() * (4.0 * PI * y).sin())
}

fn ex1_grad(p: Point) -> Point {
    let (x, y) = (p[0], p[1]);
    let a = example1_alpha();
    [
        a * (PI * (PI * x).cos() * (PI * y).sin() + 2.0 * PI * (4.0 * PI * x).cos() * (4.0 * PI * y).sin()),
        a * (PI * (PI * x).sin() * (PI * y).cos() + 2.0 * PI * (4.0 * PI * x).sin() * (4.0 * PI * y).cos()),
    ]
}

fn ex1_f(p: Point) -> f64 {
    let (x, y) = (p[0], p[1]);
    example1_alpha()
        * PI
        * PI
        * (2.0 * (PI * x).sin() * (PI * y).sin() + 16.0 * (4.0 * PI * x).sin() * (4.0 * PI * y).sin())
}

fn one(_: Point) -> f64 {
    1.0
}

fn zero(_: Point) -> f64 {
    0.0
}

/// Smooth two-mode solution with `A = 1`, homogeneous boundary data, on
/// the uniform mesh with `h = 1/32`.
pub fn example1_problem() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "example1",
        domain: Square::symmetric_unit(),
        initial_subdivisions: 64,
        coefficient: one,
        source: ex1_f,
        boundary: zero,
        exact: Some(ex1_u),
        exact_gradient: Some(ex1_grad),
        exact_energy_norm: Some(1.0),
        singular_point: None,
    }
}

/// Parameters of the checkerboard interface solution `u = r^gamma psi(theta)`.
pub mod kellogg {
    use super::*;

    pub const GAMMA: f64 = 0.5;
    pub const R: f64 = 5.828_427_124_746_190_7;
    pub const RHO: f64 = FRAC_PI_4;
    pub const SIGMA: f64 = -2.356_194_490_192_344_8;

    /// Value `R` is forced to take by the matching conditions.
    pub fn implied_r() -> f64 {
        -((FRAC_PI_2 - SIGMA) * GAMMA).tan() / (RHO * GAMMA).tan()
    }

    fn angle(theta: f64) -> f64 {
        theta.rem_euclid(2.0 * PI)
    }

    /// `(psi, psi')` at angle `theta`.
    pub fn psi(theta: f64) -> (f64, f64) {
        let t = angle(theta);
        let g = GAMMA;
        let (c, phase) = if t <= FRAC_PI_2 {
            (((FRAC_PI_2 - SIGMA) * g).cos(), t - FRAC_PI_2 + RHO)
        } else if t <= PI {
            ((RHO * g).cos(), t - PI + SIGMA)
        } else if t <= 1.5 * PI {
            ((SIGMA * g).cos(), t - PI - RHO)
        } else {
            (((FRAC_PI_2 - RHO) * g).cos(), t - 1.5 * PI - SIGMA)
        };
        (c * (phase * g).cos(), -c * g * (phase * g).sin())
    }

    /// One-sided `psi` on the quadrant `q` (0..4) formula, for testing
    /// continuity at quadrant boundaries.
    pub fn psi_on_quadrant(q: usize, theta: f64) -> (f64, f64) {
        let g = GAMMA;
        let (c, phase) = match q {
            0 => (((FRAC_PI_2 - SIGMA) * g).cos(), theta - FRAC_PI_2 + RHO),
            1 => ((RHO * g).cos(), theta - PI + SIGMA),
            2 => ((SIGMA * g).cos(), theta - PI - RHO),
            _ => (((FRAC_PI_2 - RHO) * g).cos(), theta - 1.5 * PI - SIGMA),
        };
        (c * (phase * g).cos(), -c * g * (phase * g).sin())
    }

    pub fn coefficient(p: Point) -> f64 {
        if (p[0] >= 0.0) == (p[1] >= 0.0) {
            R
        } else {
            1.0
        }
    }

    pub fn u(p: Point) -> f64 {
        let r = p[0].hypot(p[1]);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(GAMMA) * psi(p[1].atan2(p[0])).0
    }

    pub fn grad(p: Point) -> Point {
        let r = p[0].hypot(p[1]);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let th = p[1].atan2(p[0]);
        let (s, d) = psi(th);
        let rg = r.powf(GAMMA - 1.0);
        let (c, sn) = (th.cos(), th.sin());
        [rg * (GAMMA * s * c - d * sn), rg * (GAMMA * s * sn + d * c)]
    }

    /// `||u||_A^2 = sum A int (gamma^2 psi^2 + psi'^2) r_max^{2 gamma} / (2 gamma) dtheta`
    /// over the eight octants of the square.
    pub fn energy_norm() -> f64 {
        let mut s = 0.0;
        for k in 0..8 {
            let (a, b) = (k as f64 * FRAC_PI_4, (k + 1) as f64 * FRAC_PI_4);
            let mid = 0.5 * (a + b);
            let coef = coefficient([mid.cos(), mid.sin()]);
            s += coef
                * integrate_interval(a, b, 64, |t| {
                    let (p, d) = psi(t);
                    let rmax = 1.0 / t.cos().abs().max(t.sin().abs());
                    (GAMMA * GAMMA * p * p + d * d) * rmax.powf(2.0 * GAMMA) / (2.0 * GAMMA)
                });
        }
        s.sqrt()
    }
}

/// Checkerboard interface problem with `A = R` in the first and third
/// quadrants, `f = 0` and Dirichlet data from the exact solution.
pub fn kellogg_problem() -> Result<BenchmarkProblem, ProblemError> {
    let expected = kellogg::implied_r();
    if (expected - kellogg::R).abs() > 1e-10 {
        return Err(ProblemError::InconsistentParameters {
            r: kellogg::R,
            expected,
        });
    }
    Ok(BenchmarkProblem {
        name: "kellogg",
        domain: Square::symmetric_unit(),
        initial_subdivisions: 4,
        coefficient: kellogg::coefficient,
        source: zero,
        boundary: kellogg::u,
        exact: Some(kellogg::u),
        exact_gradient: Some(kellogg::grad),
        exact_energy_norm: Some(kellogg::energy_norm()),
        singular_point: Some([0.0, 0.0]),
    })
}

/// Value of a P1 function at `p` inside element `t`.
pub fn evaluate_p1(mesh: &TriMesh, u: &[f64], t: usize, p: Point) -> f64 {
    let l = barycentric(mesh, t, p);
    let tri = mesh.triangle(t);
    (0..3).map(|i| l[i] * u[tri[i]]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_triangle;

    #[test]
    fn example1_energy_norm_is_one() {
        let p = example1_problem();
        let m = build_uniform_mesh(p.domain, 64).unwrap();
        let a = vec![1.0; m.num_elements()];
        let e = p.energy_error(&m, &a, &vec![0.0; m.num_vertices()]).unwrap();
        assert!((e - 1.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn example1_vanishes_on_boundary() {
        let p = example1_problem();
        let m = build_uniform_mesh(p.domain, 16).unwrap();
        for v in m.boundary_vertices() {
            assert!(ex1_u(m.vertex(v)).abs() < 1e-15);
        }
    }

    #[test]
    fn example1_source_is_minus_laplacian() {
        let h = 1e-4;
        for p in [[0.3, -0.2], [-0.7, 0.55], [0.1, 0.9]] {
            let lap = (ex1_u([p[0] + h, p[1]]) + ex1_u([p[0] - h, p[1]]) + ex1_u([p[0], p[1] + h])
                + ex1_u([p[0], p[1] - h])
                - 4.0 * ex1_u(p))
                / (h * h);
            assert!((lap + ex1_f(p)).abs() < 1e-5);
        }
    }

    #[test]
    fn projected_load_matches_analytic_integral() {
        // element averages times |K|/3 reproduce (f, phi_z) up to the
        // projection error, which is small on a fine mesh
        let p = example1_problem();
        let m = build_uniform_mesh(p.domain, 64).unwrap();
        let avg = p.source_field(&m);
        for t in (0..m.num_elements()).step_by(97) {
            let q = integrate_triangle(&m.triangle_points(t), p.source) / m.area(t);
            assert!((avg[t] - q).abs() < 1e-12);
        }
    }

    #[test]
    fn kellogg_parameters_are_consistent() {
        assert!((kellogg::implied_r() - kellogg::R).abs() < 1e-10);
        assert!(kellogg_problem().is_ok());
    }

    #[test]
    fn kellogg_psi_is_continuous_with_matched_flux() {
        use kellogg::*;
        let coef = [R, 1.0, R, 1.0];
        for (q, theta) in [(0usize, FRAC_PI_2), (1, PI), (2, 1.5 * PI), (3, 2.0 * PI)] {
            let (left, dl) = psi_on_quadrant(q, theta);
            let next = (q + 1) % 4;
            let th = if next == 0 { 0.0 } else { theta };
            let (right, dr) = psi_on_quadrant(next, th);
            assert!((left - right).abs() < 1e-12, "psi jump at {theta}");
            assert!((coef[q] * dl - coef[next] * dr).abs() < 1e-8, "flux jump at {theta}");
        }
    }

    #[test]
    fn kellogg_flux_continuity_by_finite_differences() {
        use kellogg::*;
        let h = 1e-6;
        for (p, normal) in [([0.4, 0.0], [0.0, 1.0]), ([0.0, -0.3], [1.0, 0.0]), ([-0.7, 0.0], [0.0, 1.0]), ([0.0, 0.5], [1.0, 0.0])] {
            let side = |s: f64| {
                let q = [p[0] + s * 2.0 * h * normal[0], p[1] + s * 2.0 * h * normal[1]];
                let d = (u([q[0] + h * normal[0], q[1] + h * normal[1]]) - u([q[0] - h * normal[0], q[1] - h * normal[1]])) / (2.0 * h);
                coefficient(q) * d
            };
            assert!((side(1.0) - side(-1.0)).abs() < 1e-4, "at {p:?}");
        }
    }

    #[test]
    fn kellogg_scales_like_square_root() {
        for th in [0.1, 1.0, 2.5, 4.0, 5.9] {
            let p = [0.3 * f64::cos(th), 0.3 * f64::sin(th)];
            let q = [2.0 * p[0], 2.0 * p[1]];
            let r = kellogg::u(q) / kellogg::u(p);
            assert!((r - 2f64.sqrt()).abs() < 1e-12);
        }
        assert_eq!(kellogg::u([0.0, 0.0]), 0.0);
    }

    #[test]
    fn kellogg_energy_norm_matches_mesh_quadrature() {
        let p = kellogg_problem().unwrap();
        let mut m = build_uniform_mesh(p.domain, 32).unwrap();
        for _ in 0..3 {
            let near: Vec<usize> = (0..m.num_elements())
                .filter(|&t| m.triangle_points(t).iter().any(|q| q[0].hypot(q[1]) < 0.2))
                .collect();
            m = m.bisect(&near).unwrap();
        }
        let a = p.coefficient_field(&m).unwrap();
        let e = p.energy_error(&m, &a, &vec![0.0; m.num_vertices()]).unwrap();
        let exact = p.exact_energy_norm.unwrap();
        assert!((e - exact).abs() < 1e-4 * exact, "{e} vs {exact}");
    }

    #[test]
    fn coefficient_rule_on_aligned_mesh() {
        let m = build_uniform_mesh(Square::symmetric_unit(), 4).unwrap();
        let a = pw_constant_coefficient(&m, kellogg::coefficient).unwrap();
        for t in 0..m.num_elements() {
            let c = m.centroid(t);
            let want = if c[0] * c[1] > 0.0 { kellogg::R } else { 1.0 };
            assert_eq!(a[t], want);
        }
        let ones = pw_constant_coefficient(&m, one).unwrap();
        assert!(ones.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn straddling_element_rejected() {
        let m = build_uniform_mesh(Square::symmetric_unit(), 3).unwrap();
        assert!(matches!(
            pw_constant_coefficient(&m, kellogg::coefficient),
            Err(ProblemError::StraddlesInterface(_))
        ));
    }

    #[test]
    fn refinement_preserves_quadrant_values() {
        let m = build_uniform_mesh(Square::symmetric_unit(), 4).unwrap();
        let a0 = pw_constant_coefficient(&m, kellogg::coefficient).unwrap();
        let f = m.bisect(&[0, 5, 9, 20]).unwrap();
        let a1 = pw_constant_coefficient(&f, kellogg::coefficient).unwrap();
        for t in 0..f.num_elements() {
            if let Some(parent) = f.parent_element(t) {
                assert_eq!(a1[t], a0[parent]);
            }
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(BenchmarkProblem::by_name("nope"), Err(ProblemError::Unknown(_))));
    }
}
