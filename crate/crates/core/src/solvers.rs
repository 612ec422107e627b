//! Linear symmetric iterations `u <- u + B (f - A u)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::DofMap;
use crate::linalg::{dot, residual, Cholesky, CsrMatrix, LinalgError};
use crate::mesh::{nested_interpolation, MeshError, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("inconsistent hierarchy: {0}")]
    InconsistentHierarchy(String),
    #[error("power iteration did not converge after {0} steps")]
    NoConvergence(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Application of the symmetric operator `B`.
pub trait IterativeSolver: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

fn check_diagonal(a: &CsrMatrix) -> Result<Vec<f64>, SolverError> {
    let d = a.diagonal();
    match d.iter().position(|&x| x == 0.0) {
        Some(i) => Err(SolverError::ZeroDiagonal(i)),
        None => Ok(d),
    }
}

/// One forward Gauss-Seidel sweep for `A x = r`, in place.
fn gs_forward(a: &CsrMatrix, diag: &[f64], r: &[f64], x: &mut [f64]) {
    for i in 0..x.len() {
        let (c, v) = a.row(i);
        let mut s = r[i];
        for (&j, &aij) in c.iter().zip(v) {
            if j != i {
                s -= aij * x[j];
            }
        }
        x[i] = s / diag[i];
    }
}

/// One backward Gauss-Seidel sweep for `A x = r`, in place.
fn gs_backward(a: &CsrMatrix, diag: &[f64], r: &[f64], x: &mut [f64]) {
    for i in (0..x.len()).rev() {
        let (c, v) = a.row(i);
        let mut s = r[i];
        for (&j, &aij) in c.iter().zip(v) {
            if j != i {
                s -= aij * x[j];
            }
        }
        x[i] = s / diag[i];
    }
}

/// Symmetric Gauss-Seidel: a forward sweep from zero followed by a
/// backward sweep, `B = (L + D)^{-T} D (L + D)^{-1}`.
#[derive(Debug, Clone)]
pub struct SymmetricGaussSeidel {
    a: CsrMatrix,
    diag: Vec<f64>,
}

impl SymmetricGaussSeidel {
    pub fn new(a: CsrMatrix) -> Result<Self, SolverError> {
        let diag = check_diagonal(&a)?;
        Ok(Self { a, diag })
    }
}

impl IterativeSolver for SymmetricGaussSeidel {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; r.len()];
        gs_forward(&self.a, &self.diag, r, &mut x);
        gs_backward(&self.a, &self.diag, r, &mut x);
        x
    }
}

pub fn sgs_apply(a: &CsrMatrix, r: &[f64]) -> Result<Vec<f64>, SolverError> {
    Ok(SymmetricGaussSeidel::new(a.clone())?.apply(r))
}

#[derive(Debug, Clone)]
struct Level {
    a: CsrMatrix,
    diag: Vec<f64>,
    /// Prolongation from the next coarser level.
    p: CsrMatrix,
    pt: CsrMatrix,
}

/// Multigrid V(1,1)-cycle: forward Gauss-Seidel before and backward
/// Gauss-Seidel after the coarse-grid correction, direct solve on the
/// coarsest level.
#[derive(Debug, Clone)]
pub struct VCycle {
    coarse: Cholesky,
    /// Finer levels, coarsest first.
    levels: Vec<Level>,
}

impl VCycle {
    /// `prolongations[i]` maps level `i` to level `i + 1`, level 0 being the
    /// coarsest. Coarse operators are Galerkin products `P^T A P`.
    pub fn new(fine: CsrMatrix, prolongations: Vec<CsrMatrix>) -> Result<Self, SolverError> {
        let mut mats = vec![fine];
        for (i, p) in prolongations.iter().enumerate().rev() {
            let a = mats.last().unwrap();
            if p.nrows() != a.nrows() {
                return Err(SolverError::InconsistentHierarchy(format!(
                    "prolongation {i} has {} rows, level has {} unknowns",
                    p.nrows(),
                    a.nrows()
                )));
            }
            mats.push(a.galerkin(p));
        }
        mats.reverse();
        let coarse = Cholesky::factor(&mats[0])?;
        let mut levels = Vec::with_capacity(prolongations.len());
        for (a, p) in mats.into_iter().skip(1).zip(prolongations) {
            let diag = check_diagonal(&a)?;
            let pt = p.transpose();
            levels.push(Level { a, diag, p, pt });
        }
        Ok(Self { coarse, levels })
    }

    /// Builds the hierarchy from nested meshes, coarsest first, using nodal
    /// interpolation between free vertices.
    pub fn from_meshes(fine: CsrMatrix, meshes: &[&TriMesh]) -> Result<Self, SolverError> {
        let dofs: Vec<DofMap> = meshes.iter().map(|m| DofMap::new(m)).collect();
        let mut ps = Vec::with_capacity(meshes.len().saturating_sub(1));
        for w in 0..meshes.len().saturating_sub(1) {
            let weights = nested_interpolation(meshes[w], meshes[w + 1])?;
            ps.push(DofMap::restrict_prolongation(&dofs[w], &dofs[w + 1], &weights));
        }
        Self::new(fine, ps)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn cycle(&self, l: usize, r: &[f64]) -> Vec<f64> {
        if l == 0 {
            return self.coarse.solve(r).expect("coarse dimension checked at construction");
        }
        let lev = &self.levels[l - 1];
        let mut x = vec![0.0; r.len()];
        gs_forward(&lev.a, &lev.diag, r, &mut x);
        let res = residual(&lev.a, r, &x);
        let ec = self.cycle(l - 1, &lev.pt.mul_vec(&res));
        let corr = lev.p.mul_vec(&ec);
        for (xi, ci) in x.iter_mut().zip(corr) {
            *xi += ci;
        }
        gs_backward(&lev.a, &lev.diag, r, &mut x);
        x
    }
}

impl IterativeSolver for VCycle {
    fn dim(&self) -> usize {
        match self.levels.last() {
            Some(l) => l.a.nrows(),
            None => self.coarse.dim(),
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.cycle(self.levels.len(), r)
    }
}

/// `u_k + B (f - A u_k)`
pub fn iterate(solver: &dyn IterativeSolver, a: &CsrMatrix, f: &[f64], u: &[f64]) -> Vec<f64> {
    let r = residual(a, f, u);
    let d = solver.apply(&r);
    u.iter().zip(d).map(|(x, y)| x + y).collect()
}

/// Entries uniform in `[-1, 1]`, reproducible for a fixed seed.
pub fn random_initial_guess(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Spectral radius of `I - BA` by power iteration in the `A` inner
/// product. Stops when successive estimates differ by less than `tol`.
pub fn spectral_radius_oracle(
    solver: &dyn IterativeSolver,
    a: &CsrMatrix,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, SolverError> {
    let n = a.nrows();
    let zero = vec![0.0; n];
    let mut e = random_initial_guess(n, seed);
    let mut ae = a.mul_vec(&e);
    let mut norm2 = dot(&ae, &e);
    if norm2 == 0.0 {
        return Ok(0.0);
    }
    let mut last = f64::NAN;
    for k in 0..max_iter {
        // e <- (I - BA) e is one iteration with zero right-hand side
        let next = iterate(solver, a, &zero, &e);
        let an = a.mul_vec(&next);
        let n2 = dot(&an, &next);
        let est = (dot(&an, &e) / norm2).abs();
        if n2 <= f64::MIN_POSITIVE || n2.sqrt() < 1e-300 {
            return Ok(0.0);
        }
        if (est - last).abs() < tol && k > 2 {
            return Ok(est);
        }
        last = est;
        let s = 1.0 / n2.sqrt();
        e = next.into_iter().map(|x| x * s).collect();
        ae = an.into_iter().map(|x| x * s).collect();
        norm2 = dot(&ae, &e);
    }
    Err(SolverError::NoConvergence(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{apply_dirichlet, assemble_load, assemble_stiffness};
    use crate::linalg::{direct_solve, norm2, norm_a, sub};
    use crate::mesh::{build_uniform_mesh, Square};

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        CsrMatrix::from_dense(&(&b * b.transpose() + nalgebra::DMatrix::identity(n, n) * (n as f64)))
    }

    fn poisson(n: usize) -> (Vec<TriMesh>, CsrMatrix) {
        let meshes: Vec<TriMesh> = std::iter::successors(Some(2), |&k| (k < n).then_some(2 * k))
            .map(|k| build_uniform_mesh(Square::symmetric_unit(), k).unwrap())
            .collect();
        let m = meshes.last().unwrap();
        let k = assemble_stiffness(m, &vec![1.0; m.num_elements()]).unwrap();
        let b = assemble_load(m, &vec![1.0; m.num_elements()]);
        let sys = apply_dirichlet(m, &k, &b, &vec![0.0; m.num_vertices()]).unwrap();
        (meshes, sys.matrix)
    }

    fn vcycle(n: usize) -> (VCycle, CsrMatrix) {
        let (meshes, a) = poisson(n);
        let refs: Vec<&TriMesh> = meshes.iter().collect();
        (VCycle::from_meshes(a.clone(), &refs).unwrap(), a)
    }

    #[test]
    fn sgs_is_exact_on_diagonal_systems() {
        let a = CsrMatrix::from_diagonal(&[2.0, 4.0, 0.5]);
        let r = [1.0, 2.0, 3.0];
        assert_eq!(sgs_apply(&a, &r).unwrap(), vec![0.5, 0.5, 6.0]);
        assert_eq!(sgs_apply(&a, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let s = SymmetricGaussSeidel::new(a.clone()).unwrap();
        let rho = spectral_radius_oracle(&s, &a, 1, 1e-10, 100).unwrap();
        assert!(rho < 1e-14);
    }

    #[test]
    fn sgs_matches_closed_form_operator() {
        let a = random_spd(30, 3);
        let d = a.to_dense();
        let n = 30;
        let mut lower = d.clone();
        for i in 0..n {
            for j in i + 1..n {
                lower[(i, j)] = 0.0;
            }
        }
        let diag = nalgebra::DMatrix::from_diagonal(&d.diagonal());
        let inv = lower.clone().try_inverse().unwrap();
        let b = inv.transpose() * diag * &inv;
        let r = random_initial_guess(n, 4);
        let got = sgs_apply(&a, &r).unwrap();
        let want = &b * nalgebra::DVector::from_vec(r);
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sgs_is_symmetric_and_linear() {
        let a = random_spd(30, 7);
        let s = SymmetricGaussSeidel::new(a).unwrap();
        let r1 = random_initial_guess(30, 1);
        let r2 = random_initial_guess(30, 2);
        let lhs = dot(&r1, &s.apply(&r2));
        let rhs = dot(&r2, &s.apply(&r1));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        let comb: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let bc = s.apply(&comb);
        let (b1, b2) = (s.apply(&r1), s.apply(&r2));
        for i in 0..30 {
            assert!((bc[i] - (2.0 * b1[i] - 3.0 * b2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_diagonal_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert_eq!(sgs_apply(&a, &[1.0, 1.0]).unwrap_err(), SolverError::ZeroDiagonal(0));
    }

    #[test]
    fn single_level_vcycle_is_direct_solve() {
        let a = random_spd(15, 11);
        let v = VCycle::new(a.clone(), vec![]).unwrap();
        let r = random_initial_guess(15, 5);
        let x = v.apply(&r);
        let y = direct_solve(&a, &r).unwrap();
        assert!(norm2(&sub(&x, &y)) < 1e-12);
        assert_eq!(v.apply(&[0.0; 15]), vec![0.0; 15]);
    }

    #[test]
    fn vcycle_is_symmetric() {
        let (v, _) = vcycle(16);
        let n = v.dim();
        let r1 = random_initial_guess(n, 1);
        let r2 = random_initial_guess(n, 2);
        let lhs = dot(&r1, &v.apply(&r2));
        let rhs = dot(&r2, &v.apply(&r1));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
    }

    #[test]
    fn vcycle_contracts_independently_of_h() {
        let mut rates = vec![];
        for n in [8, 16, 32] {
            let (v, a) = vcycle(n);
            rates.push(spectral_radius_oracle(&v, &a, 9, 1e-8, 20_000).unwrap());
        }
        // lexicographic Gauss-Seidel with linear interpolation on this
        // triangulation contracts at about 1/3; 15 cycles reach 1e-7
        assert!(rates[2] < 0.4, "{rates:?}");
        let spread = rates.iter().cloned().fold(0.0, f64::max) - rates.iter().cloned().fold(1.0, f64::min);
        assert!(spread < 0.1, "{rates:?}");
    }

    #[test]
    fn inconsistent_hierarchy_rejected() {
        let a = random_spd(6, 1);
        let p = CsrMatrix::identity(5);
        assert!(matches!(
            VCycle::new(a, vec![p]),
            Err(SolverError::InconsistentHierarchy(_))
        ));
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let (v, a) = vcycle(8);
        let f = random_initial_guess(a.nrows(), 3);
        let u = direct_solve(&a, &f).unwrap();
        let next = iterate(&v, &a, &f, &u);
        assert!(norm2(&sub(&next, &u)) < 1e-12);
        let s = SymmetricGaussSeidel::new(a.clone()).unwrap();
        let next = iterate(&s, &a, &f, &u);
        assert!(norm2(&sub(&next, &u)) < 1e-12);
    }

    #[test]
    fn energy_error_is_monotone() {
        let (v, a) = vcycle(16);
        let s = SymmetricGaussSeidel::new(a.clone()).unwrap();
        let f = random_initial_guess(a.nrows(), 8);
        let exact = direct_solve(&a, &f).unwrap();
        for solver in [&v as &dyn IterativeSolver, &s] {
            let mut u = random_initial_guess(a.nrows(), 1);
            let mut last = f64::INFINITY;
            for _ in 0..20 {
                u = iterate(solver, &a, &f, &u);
                let e = norm_a(&a, &sub(&exact, &u)).unwrap();
                assert!(e <= last * (1.0 + 1e-12));
                last = e;
            }
        }
    }

    #[test]
    fn scalar_model_radius() {
        struct Scaled(f64, Cholesky);
        impl IterativeSolver for Scaled {
            fn dim(&self) -> usize {
                self.1.dim()
            }
            fn apply(&self, r: &[f64]) -> Vec<f64> {
                self.1.solve(r).unwrap().into_iter().map(|x| self.0 * x).collect()
            }
        }
        let a = random_spd(10, 2);
        for omega in [0.3, 0.7, 1.6] {
            let b = Scaled(omega, Cholesky::factor(&a).unwrap());
            let rho = spectral_radius_oracle(&b, &a, 1, 1e-12, 1000).unwrap();
            assert!((rho - (1.0f64 - omega).abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn random_guess_properties() {
        assert_eq!(random_initial_guess(50, 7), random_initial_guess(50, 7));
        let v = random_initial_guess(100_000, 42);
        assert!(v.iter().all(|x| x.abs() <= 1.0));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01);
    }
}
