//! Conforming P1 elements for `-div(A grad u) = f` with piecewise-constant
//! `A` and `f` and Dirichlet data.

use thiserror::Error;

use crate::linalg::CsrMatrix;
use crate::mesh::{Point, TriMesh};
use crate::quadrature::{integrate_triangle, integrate_triangle_subdivided};

/// One value per element.
pub type PwConstField = Vec<f64>;
/// One nodal value per vertex.
pub type P1Function = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("element {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("diffusion coefficient on element {0} is not positive")]
    NonPositiveCoefficient(usize),
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no boundary value given at vertex {0}")]
    MissingBoundaryValue(usize),
    #[error("face {0} lies on the boundary")]
    BoundaryFace(usize),
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), FemError> {
    if v.len() != expected {
        return Err(FemError::LengthMismatch {
            what,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// Full stiffness matrix over all vertices, boundary included.
pub fn assemble_stiffness(mesh: &TriMesh, a: &[f64]) -> Result<CsrMatrix, FemError> {
    check_len("coefficient", a, mesh.num_elements())?;
    let mut trip = Vec::with_capacity(9 * mesh.num_elements());
    for t in 0..mesh.num_elements() {
        if !(a[t] > 0.0) {
            return Err(FemError::NonPositiveCoefficient(t));
        }
        let area = mesh.area(t);
        if !(area > 0.0) {
            return Err(FemError::DegenerateTriangle(t));
        }
        let g = mesh.barycentric_gradients(t);
        let tri = mesh.triangle(t);
        for i in 0..3 {
            for j in 0..3 {
                let v = a[t] * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                trip.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_vertices(), mesh.num_vertices(), trip))
}

/// `(f, phi_z)` for every vertex `z`.
pub fn assemble_load(mesh: &TriMesh, f: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let share = f[t] * mesh.area(t) / 3.0;
        for &v in tri {
            b[v] += share;
        }
    }
    b
}

/// Maps vertices to unknowns: interior vertices are free, boundary
/// vertices carry Dirichlet values.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    free: Vec<usize>,
    index: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut index = vec![None; mesh.num_vertices()];
        let mut free = Vec::new();
        for (v, slot) in index.iter_mut().enumerate() {
            if !mesh.is_boundary_vertex(v) {
                *slot = Some(free.len());
                free.push(v);
            }
        }
        Self { free, index }
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn dof_of(&self, v: usize) -> Option<usize> {
        self.index[v]
    }

    /// Maps a coarse-to-fine vertex interpolation onto free unknowns.
    pub fn restrict_prolongation(
        coarse: &DofMap,
        fine: &DofMap,
        weights: &[Vec<(usize, f64)>],
    ) -> CsrMatrix {
        let mut trip = Vec::new();
        for (i, &v) in fine.free.iter().enumerate() {
            for &(c, w) in &weights[v] {
                if let Some(j) = coarse.index[c] {
                    trip.push((i, j, w));
                }
            }
        }
        CsrMatrix::from_triplets(fine.num_free(), coarse.num_free(), trip)
    }
}

/// Interior system `A x = f` with the Dirichlet lift eliminated.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dofs: DofMap,
    /// Boundary values, zero at interior vertices.
    pub lift: Vec<f64>,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.dofs.num_free()
    }

    /// Full nodal vector from interior unknowns.
    pub fn expand(&self, x: &[f64]) -> P1Function {
        let mut u = self.lift.clone();
        for (i, &v) in self.dofs.free.iter().enumerate() {
            u[v] = x[i];
        }
        u
    }

    /// Interior unknowns of a full nodal vector.
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.dofs.free.iter().map(|&v| u[v]).collect()
    }
}

/// Eliminates Dirichlet vertices. `g` holds nodal values for every vertex;
/// only boundary entries are read, and they must be finite.
pub fn apply_dirichlet(
    mesh: &TriMesh,
    stiffness: &CsrMatrix,
    load: &[f64],
    g: &[f64],
) -> Result<ReducedSystem, FemError> {
    check_len("boundary data", g, mesh.num_vertices())?;
    check_len("load", load, mesh.num_vertices())?;
    let mut lift = vec![0.0; mesh.num_vertices()];
    for v in mesh.boundary_vertices() {
        if !g[v].is_finite() {
            return Err(FemError::MissingBoundaryValue(v));
        }
        lift[v] = g[v];
    }
    let dofs = DofMap::new(mesh);
    let a_lift = stiffness.mul_vec(&lift);
    let rhs = dofs.free.iter().map(|&v| load[v] - a_lift[v]).collect();
    let matrix = stiffness.submatrix(&dofs.free, &dofs.index, dofs.num_free());
    Ok(ReducedSystem {
        matrix,
        rhs,
        dofs,
        lift,
    })
}

/// Gradient of a P1 function on element `t`.
pub fn element_gradient(mesh: &TriMesh, u: &[f64], t: usize) -> Point {
    let g = mesh.barycentric_gradients(t);
    let tri = mesh.triangle(t);
    let mut d = [0.0; 2];
    for i in 0..3 {
        d[0] += u[tri[i]] * g[i][0];
        d[1] += u[tri[i]] * g[i][1];
    }
    d
}

/// `-A grad u` per element.
pub fn numerical_flux(mesh: &TriMesh, a: &[f64], u: &[f64]) -> Vec<Point> {
    (0..mesh.num_elements())
        .map(|t| {
            let d = element_gradient(mesh, u, t);
            [-a[t] * d[0], -a[t] * d[1]]
        })
        .collect()
}

/// `j_F = (A grad u)^- . n_F - (A grad u)^+ . n_F` on an interior face.
pub fn face_jump(mesh: &TriMesh, a: &[f64], u: &[f64], f: usize) -> Result<f64, FemError> {
    let (minus, plus) = mesh.face_elements(f);
    let plus = plus.ok_or(FemError::BoundaryFace(f))?;
    let n = mesh.face_normal(f);
    let gm = element_gradient(mesh, u, minus);
    let gp = element_gradient(mesh, u, plus);
    Ok(a[minus] * (gm[0] * n[0] + gm[1] * n[1]) - a[plus] * (gp[0] * n[0] + gp[1] * n[1]))
}

/// Face jumps for every face; zero on boundary faces.
pub fn face_jumps(mesh: &TriMesh, a: &[f64], u: &[f64]) -> Vec<f64> {
    (0..mesh.num_faces())
        .map(|f| face_jump(mesh, a, u, f).unwrap_or(0.0))
        .collect()
}

/// Number of dyadic refinement levels used for quadrature on elements
/// touching a singular point.
pub const SINGULAR_SUBDIVISION_LEVELS: u32 = 4;

/// `||u - u_h||_A` by per-element quadrature. Elements with a vertex at
/// `singular` are subdivided before integrating.
pub fn energy_error_vs_exact<G>(
    mesh: &TriMesh,
    a: &[f64],
    grad_exact: G,
    u_h: &[f64],
    singular: Option<Point>,
) -> f64
where
    G: Fn(Point) -> Point,
{
    let mut s = 0.0;
    for t in 0..mesh.num_elements() {
        let d = element_gradient(mesh, u_h, t);
        let p = mesh.triangle_points(t);
        let g = |x: Point| {
            let e = grad_exact(x);
            let (dx, dy) = (e[0] - d[0], e[1] - d[1]);
            dx * dx + dy * dy
        };
        let touches = singular.is_some_and(|z| p.iter().any(|q| (q[0] - z[0]).hypot(q[1] - z[1]) < 1e-14));
        let v = if touches {
            integrate_triangle_subdivided(&p, SINGULAR_SUBDIVISION_LEVELS, g)
        } else {
            integrate_triangle(&p, g)
        };
        s += a[t] * v;
    }
    s.sqrt()
}

/// Element averages of `f`.
pub fn element_averages<F: Fn(Point) -> f64>(mesh: &TriMesh, f: F) -> PwConstField {
    (0..mesh.num_elements())
        .map(|t| integrate_triangle(&mesh.triangle_points(t), &f) / mesh.area(t))
        .collect()
}

/// Nodal interpolant of `u`.
pub fn interpolate<F: Fn(Point) -> f64>(mesh: &TriMesh, u: F) -> P1Function {
    mesh.vertices().iter().map(|&p| u(p)).collect()
}

/// Applies vertex interpolation weights to a coarse nodal vector.
pub fn transfer(weights: &[Vec<(usize, f64)>], u: &[f64]) -> P1Function {
    weights
        .iter()
        .map(|row| row.iter().map(|&(c, w)| w * u[c]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{direct_solve, norm_a};
    use crate::mesh::{build_uniform_mesh, Square};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn reference_element_matrix() {
        let m = reference();
        let k = assemble_stiffness(&m, &[1.0]).unwrap().to_dense();
        // vertex order in storage may be relabelled; compare by coordinates
        let expect = |p: Point, q: Point| -> f64 {
            let lookup = |x: Point| match (x[0] as i32, x[1] as i32) {
                (0, 0) => 0,
                (1, 0) => 1,
                _ => 2,
            };
            [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]][lookup(p)][lookup(q)]
        };
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[(i, j)] - expect(m.vertex(i), m.vertex(j))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_is_bilinear_in_coefficient() {
        let m = build_uniform_mesh(Square::unit(), 3).unwrap();
        let one = assemble_stiffness(&m, &vec![1.0; m.num_elements()]).unwrap();
        let three = assemble_stiffness(&m, &vec![3.0; m.num_elements()]).unwrap();
        assert!((one.scaled(3.0).to_dense() - three.to_dense()).abs().max() < 1e-14);
    }

    #[test]
    fn stiffness_symmetric_with_zero_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = build_uniform_mesh(Square::symmetric_unit(), 6).unwrap();
        let marked: Vec<usize> = (0..m.num_elements()).filter(|_| rng.random_bool(0.3)).collect();
        let m = m.bisect(&marked).unwrap();
        let a: Vec<f64> = (0..m.num_elements()).map(|_| rng.random_range(0.5..3.0)).collect();
        let k = assemble_stiffness(&m, &a).unwrap();
        assert!(k.symmetry_defect() < 1e-13);
        let sums = k.mul_vec(&vec![1.0; m.num_vertices()]);
        assert!(sums.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_coefficient() {
        let m = reference();
        assert_eq!(assemble_stiffness(&m, &[0.0]), Err(FemError::NonPositiveCoefficient(0)));
    }

    #[test]
    fn load_of_constant_is_patch_area_over_three() {
        let m = build_uniform_mesh(Square::unit(), 4).unwrap();
        let b = assemble_load(&m, &vec![1.0; m.num_elements()]);
        for z in 0..m.num_vertices() {
            let patch: f64 = m.vertex_elements(z).iter().map(|&t| m.area(t)).sum();
            assert!((b[z] - patch / 3.0).abs() < 1e-15);
        }
        assert!(assemble_load(&m, &vec![0.0; m.num_elements()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn load_matches_quadrature_of_hat_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = build_uniform_mesh(Square::unit(), 5).unwrap();
        let f: Vec<f64> = (0..m.num_elements()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = assemble_load(&m, &f);
        for z in 0..m.num_vertices() {
            let mut s = 0.0;
            for &t in m.vertex_elements(z) {
                let i = m.triangle(t).iter().position(|&v| v == z).unwrap();
                s += f[t] * integrate_triangle(&m.triangle_points(t), |p| crate::mesh::barycentric(&m, t, p)[i]);
            }
            assert!((b[z] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_boundary_data_reproduced_exactly() {
        let m = build_uniform_mesh(Square::symmetric_unit(), 5).unwrap();
        let lin = |p: Point| 0.3 + 2.0 * p[0] - 1.5 * p[1];
        let k = assemble_stiffness(&m, &vec![1.0; m.num_elements()]).unwrap();
        let b = assemble_load(&m, &vec![0.0; m.num_elements()]);
        let g = interpolate(&m, lin);
        let sys = apply_dirichlet(&m, &k, &b, &g).unwrap();
        let x = direct_solve(&sys.matrix, &sys.rhs).unwrap();
        let u = sys.expand(&x);
        for (v, &p) in m.vertices().iter().enumerate() {
            assert!((u[v] - lin(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_data_keeps_load() {
        let n = 8;
        let m = build_uniform_mesh(Square::symmetric_unit(), n).unwrap();
        let k = assemble_stiffness(&m, &vec![1.0; m.num_elements()]).unwrap();
        let b = assemble_load(&m, &vec![1.0; m.num_elements()]);
        let sys = apply_dirichlet(&m, &k, &b, &vec![0.0; m.num_vertices()]).unwrap();
        assert_eq!(sys.dim(), (n - 1) * (n - 1));
        assert_eq!(sys.rhs, sys.restrict(&b));
    }

    #[test]
    fn missing_boundary_value() {
        let m = build_uniform_mesh(Square::unit(), 2).unwrap();
        let k = assemble_stiffness(&m, &vec![1.0; m.num_elements()]).unwrap();
        let b = vec![0.0; m.num_vertices()];
        let mut g = vec![0.0; m.num_vertices()];
        g[0] = f64::NAN;
        assert_eq!(apply_dirichlet(&m, &k, &b, &g).unwrap_err(), FemError::MissingBoundaryValue(0));
    }

    #[test]
    fn flux_of_linear_function() {
        let m = reference();
        let u = interpolate(&m, |p| p[0]);
        assert_eq!(numerical_flux(&m, &[2.0], &u), vec![[-2.0, 0.0]]);
        let c = numerical_flux(&m, &[2.0], &[4.0; 3]);
        assert_eq!(c[0], [0.0, 0.0]);
    }

    #[test]
    fn flux_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = build_uniform_mesh(Square::unit(), 3).unwrap();
        let u: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let flux = numerical_flux(&m, &vec![1.0; m.num_elements()], &u);
        let eval = |t: usize, p: Point| {
            let l = crate::mesh::barycentric(&m, t, p);
            let tri = m.triangle(t);
            (0..3).map(|i| l[i] * u[tri[i]]).sum::<f64>()
        };
        let h = 1e-6;
        for t in 0..m.num_elements() {
            let c = m.centroid(t);
            let dx = (eval(t, [c[0] + h, c[1]]) - eval(t, [c[0] - h, c[1]])) / (2.0 * h);
            let dy = (eval(t, [c[0], c[1] + h]) - eval(t, [c[0], c[1] - h])) / (2.0 * h);
            assert!((flux[t][0] + dx).abs() < 1e-8 && (flux[t][1] + dy).abs() < 1e-8);
        }
    }

    #[test]
    fn jumps_vanish_for_linear_functions() {
        let m = build_uniform_mesh(Square::symmetric_unit(), 4).unwrap();
        let u = interpolate(&m, |p| 1.0 - 3.0 * p[0] + 0.5 * p[1]);
        let a = vec![2.5; m.num_elements()];
        for f in 0..m.num_faces() {
            match face_jump(&m, &a, &u, f) {
                Ok(j) => assert!(j.abs() < 1e-13),
                Err(e) => assert_eq!(e, FemError::BoundaryFace(f)),
            }
        }
    }

    #[test]
    fn jump_matches_two_sided_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = build_uniform_mesh(Square::symmetric_unit(), 4).unwrap();
        let u: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..m.num_elements()).map(|_| rng.random_range(1.0..2.0)).collect();
        let flux = numerical_flux(&m, &a, &u);
        for f in 0..m.num_faces() {
            let (minus, Some(plus)) = m.face_elements(f) else {
                continue;
            };
            // outward normal of the plus element is -n_F
            let n = m.face_normal(f);
            let out_minus = flux[minus][0] * n[0] + flux[minus][1] * n[1];
            let out_plus = -(flux[plus][0] * n[0] + flux[plus][1] * n[1]);
            // jump of A grad u = -(sum of outward fluxes of -A grad u)
            let j = -(out_minus + out_plus);
            assert!((face_jump(&m, &a, &u, f).unwrap() - j).abs() < 1e-13);
        }
    }

    #[test]
    fn energy_error_of_interpolated_linear_is_zero() {
        let m = build_uniform_mesh(Square::unit(), 3).unwrap();
        let u = interpolate(&m, |p| 2.0 * p[0] + p[1]);
        let e = energy_error_vs_exact(&m, &vec![1.0; m.num_elements()], |_| [2.0, 1.0], &u, None);
        assert!(e < 1e-14);
    }

    #[test]
    fn function_and_matrix_energy_norms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = build_uniform_mesh(Square::unit(), 6).unwrap();
        let a: Vec<f64> = (0..m.num_elements()).map(|_| rng.random_range(1.0..4.0)).collect();
        let v: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = assemble_stiffness(&m, &a).unwrap();
        let matrix = norm_a(&k, &v).unwrap();
        let minus_v: Vec<f64> = v.iter().map(|x| -x).collect();
        let quad = energy_error_vs_exact(&m, &a, |_| [0.0, 0.0], &minus_v, None);
        assert!((matrix - quad).abs() <= 1e-12 * matrix);
    }

    #[test]
    fn smooth_solution_converges_at_first_order() {
        use std::f64::consts::PI;
        let grad = |p: Point| {
            [
                PI * (PI * p[0]).cos() * (PI * p[1]).sin(),
                PI * (PI * p[0]).sin() * (PI * p[1]).cos(),
            ]
        };
        let err = |n: usize| {
            let m = build_uniform_mesh(Square::unit(), n).unwrap();
            let a = vec![1.0; m.num_elements()];
            let f = element_averages(&m, |p| 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin());
            let k = assemble_stiffness(&m, &a).unwrap();
            let sys = apply_dirichlet(&m, &k, &assemble_load(&m, &f), &vec![0.0; m.num_vertices()]).unwrap();
            let u = sys.expand(&direct_solve(&sys.matrix, &sys.rhs).unwrap());
            energy_error_vs_exact(&m, &a, grad, &u, None)
        };
        let ratio = err(16) / err(32);
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }
}
