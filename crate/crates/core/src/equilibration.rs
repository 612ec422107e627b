//! Patch-wise equilibrated flux correction in the broken lowest-order
//! Raviart-Thomas space and the resulting total-error estimator.
//!
//! On an element with vertices `p_0, p_1, p_2` the basis field of face `i`
//! (opposite `p_i`) is `psi_i = |F_i| / (2|K|) (x - p_i)`. Its outward
//! normal component is one on face `i` and zero on the other faces, so a
//! field is stored as three outward normal fluxes per element.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{face_jumps, FemError};
use crate::mesh::{vertex_patch, Patch, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibrationError {
    #[error("patch problem at vertex {vertex} is infeasible (constraint residual {residual:e})")]
    Infeasible { vertex: usize, residual: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Normal-flux condition on one local face of a patch element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceCondition {
    /// Normal component fixed to zero.
    Zero,
    /// Unconstrained normal component.
    Free,
    /// Shared face; the two outward coefficients must sum to
    /// `jump_targets[j]`.
    Jump(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchElement {
    pub area: f64,
    pub face_lengths: [f64; 3],
    /// Mass matrix of the three basis fields, weighted by `1/A_K`.
    pub mass: [[f64; 3]; 3],
    /// Prescribed constant divergence.
    pub div_target: f64,
    pub faces: [FaceCondition; 3],
}

/// `min ||A^{-1/2} tau||` over broken RT0 fields on a patch subject to
/// divergence, jump and normal-flux constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchProblem {
    pub vertex: usize,
    pub elements: Vec<PatchElement>,
    pub jump_targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSolution {
    /// Outward normal fluxes per patch element.
    pub coefficients: Vec<[f64; 3]>,
    /// Lagrange multipliers of the retained constraints.
    pub multipliers: Vec<f64>,
}

/// Unweighted mass matrix of the three RT0 basis fields, exact via the
/// edge-midpoint rule.
pub fn rt0_mass(p: &[[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    let len = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let lengths = [len(p[1], p[2]), len(p[2], p[0]), len(p[0], p[1])];
    let mids = [
        [(p[1][0] + p[2][0]) / 2.0, (p[1][1] + p[2][1]) / 2.0],
        [(p[2][0] + p[0][0]) / 2.0, (p[2][1] + p[0][1]) / 2.0],
        [(p[0][0] + p[1][0]) / 2.0, (p[0][1] + p[1][1]) / 2.0],
    ];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let s: f64 = mids
                .iter()
                .map(|q| (q[0] - p[i][0]) * (q[0] - p[j][0]) + (q[1] - p[i][1]) * (q[1] - p[j][1]))
                .sum();
            m[i][j] = lengths[i] * lengths[j] / (4.0 * area * area) * area / 3.0 * s;
        }
    }
    m
}

impl PatchProblem {
    fn unknowns(&self) -> Vec<(usize, usize)> {
        let mut u = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            for (i, c) in el.faces.iter().enumerate() {
                if !matches!(c, FaceCondition::Zero) {
                    u.push((e, i));
                }
            }
        }
        u
    }

    fn has_free(&self) -> bool {
        self.elements
            .iter()
            .any(|el| el.faces.contains(&FaceCondition::Free))
    }

    /// Residuals of every constraint: divergence rows, zero-normal slots,
    /// then jumps.
    pub fn constraint_residuals(&self, coeffs: &[[f64; 3]]) -> Vec<f64> {
        let mut res = Vec::with_capacity(self.elements.len() + self.jump_targets.len());
        for (el, a) in self.elements.iter().zip(coeffs) {
            let flux: f64 = (0..3).map(|i| a[i] * el.face_lengths[i]).sum();
            res.push(flux - el.div_target * el.area);
        }
        let mut jumps: Vec<f64> = self.jump_targets.iter().map(|t| -t).collect();
        for (el, a) in self.elements.iter().zip(coeffs) {
            for i in 0..3 {
                match el.faces[i] {
                    FaceCondition::Jump(j) => jumps[j] += a[i],
                    FaceCondition::Zero => res.push(a[i]),
                    FaceCondition::Free => {}
                }
            }
        }
        res.extend(jumps);
        res
    }

    /// Weighted energy `||A^{-1/2} tau||^2` of a patch field.
    pub fn energy(&self, coeffs: &[[f64; 3]]) -> f64 {
        self.elements
            .iter()
            .zip(coeffs)
            .map(|(el, a)| {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += a[i] * el.mass[i][j] * a[j];
                    }
                }
                s
            })
            .sum()
    }

    /// Size of the data, used to scale feasibility tolerances.
    pub fn data_scale(&self) -> f64 {
        let d = self
            .elements
            .iter()
            .map(|el| (el.div_target * el.area).abs())
            .fold(0.0, f64::max);
        let j = self.jump_targets.iter().map(|t| t.abs()).fold(0.0, f64::max);
        d.max(j)
    }
}

/// Solves the patch minimisation through the Schur complement of its KKT
/// system. When no face is free the divergence rows are linearly
/// dependent on the jump rows; the row of the largest element is dropped
/// and checked afterwards.
pub fn solve_patch(problem: &PatchProblem) -> Result<PatchSolution, EquilibrationError> {
    let unknowns = problem.unknowns();
    let n = unknowns.len();
    let mut slot = vec![[usize::MAX; 3]; problem.elements.len()];
    for (k, &(e, i)) in unknowns.iter().enumerate() {
        slot[e][i] = k;
    }

    let dropped = if problem.has_free() {
        None
    } else {
        problem
            .elements
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.area.total_cmp(&b.1.area).then(b.0.cmp(&a.0)))
            .map(|(e, _)| e)
    };

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (e, el) in problem.elements.iter().enumerate() {
        if Some(e) == dropped {
            continue;
        }
        let row: Vec<(usize, f64)> = (0..3)
            .filter(|&i| slot[e][i] != usize::MAX)
            .map(|i| (slot[e][i], el.face_lengths[i]))
            .collect();
        rows.push((row, el.div_target * el.area));
    }
    let mut jump_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.jump_targets.len()];
    for (e, el) in problem.elements.iter().enumerate() {
        for i in 0..3 {
            if let FaceCondition::Jump(j) = el.faces[i] {
                jump_rows[j].push((slot[e][i], 1.0));
            }
        }
    }
    for (row, &t) in jump_rows.into_iter().zip(&problem.jump_targets) {
        rows.push((row, t));
    }

    let mut coeffs = vec![[0.0; 3]; problem.elements.len()];
    let mut multipliers = Vec::new();
    let m = rows.len();
    if n > 0 && m > 0 {
        // M is block diagonal; invert each element block on its unknowns
        let mut minv = DMatrix::<f64>::zeros(n, n);
        for (e, el) in problem.elements.iter().enumerate() {
            let idx: Vec<usize> = (0..3).filter(|&i| slot[e][i] != usize::MAX).collect();
            if idx.is_empty() {
                continue;
            }
            let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| el.mass[idx[r]][idx[c]]);
            let inv = block
                .cholesky()
                .map(|c| c.inverse())
                .ok_or(EquilibrationError::Infeasible {
                    vertex: problem.vertex,
                    residual: f64::NAN,
                })?;
            for (r, &ir) in idx.iter().enumerate() {
                for (c, &ic) in idx.iter().enumerate() {
                    minv[(slot[e][ir], slot[e][ic])] = inv[(r, c)];
                }
            }
        }
        let mut cmat = DMatrix::<f64>::zeros(m, n);
        let mut d = DVector::<f64>::zeros(m);
        for (r, (row, t)) in rows.iter().enumerate() {
            for &(k, v) in row {
                cmat[(r, k)] += v;
            }
            d[r] = *t;
        }
        let cm = &cmat * &minv;
        let s = &cm * cmat.transpose();
        let chol = s.cholesky().ok_or(EquilibrationError::Infeasible {
            vertex: problem.vertex,
            residual: f64::NAN,
        })?;
        let lambda = chol.solve(&d);
        let x = cm.transpose() * &lambda;
        for (k, &(e, i)) in unknowns.iter().enumerate() {
            coeffs[e][i] = x[k];
        }
        multipliers = lambda.iter().copied().collect();
    }

    let worst = problem
        .constraint_residuals(&coeffs)
        .into_iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let scale = problem.data_scale();
    if !(worst <= 1e-9 * scale.max(f64::MIN_POSITIVE)) && worst > 0.0 {
        return Err(EquilibrationError::Infeasible {
            vertex: problem.vertex,
            residual: worst,
        });
    }
    Ok(PatchSolution {
        coefficients: coeffs,
        multipliers,
    })
}

/// `(r_bar_K, j_bar_F)` for a vertex: `f_K / 3` on each patch element and
/// `j_F / 2` on each face of the patch sharing the vertex.
pub fn projected_data(f: &[f64], jumps: &[f64], patch: &Patch) -> (Vec<f64>, Vec<f64>) {
    let r = patch.elements.iter().map(|&t| f[t] / 3.0).collect();
    let j = patch.interior_faces.iter().map(|&e| jumps[e] / 2.0).collect();
    (r, j)
}

/// `c_z = (sum_F j_bar |F| - sum_K r_bar |K|) / |omega_z|` at interior
/// vertices, which enforces solvability of the patch problem; zero on the
/// boundary.
pub fn compensation_constant(mesh: &TriMesh, f: &[f64], jumps: &[f64], patch: &Patch) -> f64 {
    if mesh.is_boundary_vertex(patch.center) {
        return 0.0;
    }
    let (r, j) = projected_data(f, jumps, patch);
    let sj: f64 = patch
        .interior_faces
        .iter()
        .zip(&j)
        .map(|(&e, jb)| jb * mesh.face_length(e))
        .sum();
    let sr: f64 = patch.elements.iter().zip(&r).map(|(&t, rb)| rb * mesh.area(t)).sum();
    (sj - sr) / patch.area
}

/// Patch problem at vertex `z` for the iterate with face jumps `jumps`.
pub fn build_patch_problem(
    mesh: &TriMesh,
    a: &[f64],
    f: &[f64],
    jumps: &[f64],
    patch: &Patch,
) -> (PatchProblem, f64) {
    let z = patch.center;
    let boundary = mesh.is_boundary_vertex(z);
    let c = compensation_constant(mesh, f, jumps, patch);
    let (r, jbar) = projected_data(f, jumps, patch);
    let mut elements = Vec::with_capacity(patch.elements.len());
    for (k, &t) in patch.elements.iter().enumerate() {
        let p = mesh.triangle_points(t);
        let area = mesh.area(t);
        let faces = mesh.element_faces(t);
        let mut mass = rt0_mass(&p, area);
        for row in mass.iter_mut() {
            for v in row.iter_mut() {
                *v /= a[t];
            }
        }
        let mut cond = [FaceCondition::Zero; 3];
        for i in 0..3 {
            let e = faces[i];
            if let Ok(j) = patch.interior_faces.binary_search(&e) {
                cond[i] = FaceCondition::Jump(j);
            } else if boundary && patch.domain_faces.binary_search(&e).is_ok() {
                cond[i] = FaceCondition::Free;
            }
        }
        elements.push(PatchElement {
            area,
            face_lengths: [0, 1, 2].map(|i| mesh.face_length(faces[i])),
            mass,
            div_target: r[k] + c,
            faces: cond,
        });
    }
    (
        PatchProblem {
            vertex: z,
            elements,
            jump_targets: jbar,
        },
        c,
    )
}

/// Result of equilibrating one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibration {
    /// `sigma^Delta` as outward normal fluxes per element.
    pub sigma: Vec<[f64; 3]>,
    /// `eta_{d,K}` per element.
    pub indicators: Vec<f64>,
    /// Global `eta_d`.
    pub eta: f64,
    /// `c_z` per vertex (zero on the boundary).
    pub compensation: Vec<f64>,
    /// Largest scaled constraint residual over all patches.
    pub max_constraint_residual: f64,
}

/// Sums patch contributions element by element, patches in ascending
/// vertex order.
pub fn accumulate_flux(mesh: &TriMesh, patches: &[(Patch, PatchSolution)]) -> Vec<[f64; 3]> {
    let mut sigma = vec![[0.0; 3]; mesh.num_elements()];
    for (patch, sol) in patches {
        for (&t, a) in patch.elements.iter().zip(&sol.coefficients) {
            for i in 0..3 {
                sigma[t][i] += a[i];
            }
        }
    }
    sigma
}

/// `eta_{d,K} = ||A^{-1/2} sigma^Delta||_K` per element and the global norm.
pub fn eta_d(mesh: &TriMesh, a: &[f64], sigma: &[[f64; 3]]) -> (Vec<f64>, f64) {
    let ind: Vec<f64> = (0..mesh.num_elements())
        .map(|t| {
            let m = rt0_mass(&mesh.triangle_points(t), mesh.area(t));
            let s = &sigma[t];
            let mut e = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    e += s[i] * m[i][j] * s[j];
                }
            }
            (e.max(0.0) / a[t]).sqrt()
        })
        .collect();
    let eta = ind.iter().map(|x| x * x).sum::<f64>().sqrt();
    (ind, eta)
}

/// Full equilibration of the P1 iterate `u` (nodal values including the
/// boundary).
pub fn equilibrate(mesh: &TriMesh, a: &[f64], f: &[f64], u: &[f64]) -> Result<Equilibration, EquilibrationError> {
    let jumps = face_jumps(mesh, a, u);
    let solved: Vec<Result<(Patch, PatchSolution, f64, f64), EquilibrationError>> = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|z| {
            let patch = vertex_patch(mesh, z);
            let (problem, c) = build_patch_problem(mesh, a, f, &jumps, &patch);
            let sol = solve_patch(&problem)?;
            let scale = problem.data_scale().max(f64::MIN_POSITIVE);
            let res = problem
                .constraint_residuals(&sol.coefficients)
                .into_iter()
                .fold(0.0f64, |m, r| m.max(r.abs()))
                / scale;
            Ok((patch, sol, c, res))
        })
        .collect();
    let mut patches = Vec::with_capacity(solved.len());
    let mut compensation = vec![0.0; mesh.num_vertices()];
    let mut max_res = 0.0f64;
    for item in solved {
        let (patch, sol, c, res) = item?;
        compensation[patch.center] = c;
        max_res = max_res.max(res);
        patches.push((patch, sol));
    }
    let sigma = accumulate_flux(mesh, &patches);
    let (indicators, eta) = eta_d(mesh, a, &sigma);
    Ok(Equilibration {
        sigma,
        indicators,
        eta,
        compensation,
        max_constraint_residual: max_res,
    })
}

/// Outward-normal jump check helper: `[sigma . n_F]` on every face, with
/// boundary faces reporting the one-sided outward flux.
pub fn normal_jumps(mesh: &TriMesh, sigma: &[[f64; 3]]) -> Vec<f64> {
    (0..mesh.num_faces())
        .map(|e| {
            let (minus, plus) = mesh.face_elements(e);
            let im = mesh.local_face(minus, e).unwrap();
            let mut j = sigma[minus][im];
            if let Some(p) = plus {
                j += sigma[p][mesh.local_face(p, e).unwrap()];
            }
            j
        })
        .collect()
}

/// Constant divergence of a broken RT0 field per element.
pub fn divergence(mesh: &TriMesh, sigma: &[[f64; 3]]) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|t| {
            let faces = mesh.element_faces(t);
            (0..3).map(|i| sigma[t][i] * mesh.face_length(faces[i])).sum::<f64>() / mesh.area(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_triangle;

    fn reference() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn basis_has_unit_normal_trace_and_constant_divergence() {
        let m = TriMesh::new(vec![[0.1, 0.0], [1.2, 0.3], [0.4, 0.9]], vec![[0, 1, 2]]).unwrap();
        let p = m.triangle_points(0);
        let area = m.area(0);
        let faces = m.element_faces(0);
        for i in 0..3 {
            let fl = m.face_length(faces[i]);
            let psi = |x: [f64; 2]| [fl / (2.0 * area) * (x[0] - p[i][0]), fl / (2.0 * area) * (x[1] - p[i][1])];
            for k in 0..3 {
                let e = faces[k];
                let mid = m.face_midpoint(e);
                let mut n = m.face_normal(e);
                n = [n[0] * m.face_orientation(0, e), n[1] * m.face_orientation(0, e)];
                let v = psi(mid);
                let flux = v[0] * n[0] + v[1] * n[1];
                let expect = if k == i { 1.0 } else { 0.0 };
                assert!((flux - expect).abs() < 1e-14);
            }
            // div of c (x - p) is 2c
            assert!((2.0 * fl / (2.0 * area) - fl / area).abs() < 1e-15);
        }
    }

    #[test]
    fn mass_matrix_matches_quadrature() {
        let m = TriMesh::new(vec![[0.1, 0.0], [1.2, 0.3], [0.4, 0.9]], vec![[0, 1, 2]]).unwrap();
        let p = m.triangle_points(0);
        let area = m.area(0);
        let got = rt0_mass(&p, area);
        let fl = m.element_faces(0).map(|e| m.face_length(e));
        for i in 0..3 {
            for j in 0..3 {
                let q = integrate_triangle(&p, |x| {
                    fl[i] * fl[j] / (4.0 * area * area)
                        * ((x[0] - p[i][0]) * (x[0] - p[j][0]) + (x[1] - p[i][1]) * (x[1] - p[j][1]))
                });
                assert!((got[i][j] - q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_targets_give_zero_field() {
        let m = crate::mesh::build_uniform_mesh(crate::mesh::Square::unit(), 4).unwrap();
        let a = vec![1.0; m.num_elements()];
        let f = vec![0.0; m.num_elements()];
        let e = equilibrate(&m, &a, &f, &vec![0.0; m.num_vertices()]).unwrap();
        assert_eq!(e.eta, 0.0);
        assert!(e.sigma.iter().all(|s| *s == [0.0; 3]));
    }

    #[test]
    fn closed_single_element_requires_zero_divergence() {
        let m = reference();
        let mk = |d: f64| PatchProblem {
            vertex: 0,
            elements: vec![PatchElement {
                area: m.area(0),
                face_lengths: m.element_faces(0).map(|e| m.face_length(e)),
                mass: rt0_mass(&m.triangle_points(0), m.area(0)),
                div_target: d,
                faces: [FaceCondition::Zero; 3],
            }],
            jump_targets: vec![],
        };
        assert!(matches!(
            solve_patch(&mk(1.0)),
            Err(EquilibrationError::Infeasible { .. })
        ));
        assert_eq!(solve_patch(&mk(0.0)).unwrap().coefficients, vec![[0.0; 3]]);
    }

    #[test]
    fn eta_scales_with_inverse_root_of_coefficient() {
        let m = reference();
        let sigma = vec![[0.3, -0.2, 0.7]];
        let (_, e1) = eta_d(&m, &[1.0], &sigma);
        let (_, e4) = eta_d(&m, &[4.0], &sigma);
        assert!((e4 - e1 / 2.0).abs() < 1e-15);
        assert_eq!(eta_d(&m, &[1.0], &[[0.0; 3]]).1, 0.0);
    }
}
