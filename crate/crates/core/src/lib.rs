//! Adaptive P1 finite elements for `-div(A grad u) = f` with
//! equilibrated-flux error estimation and estimator-driven stopping of
//! the iterative algebraic solver.

pub mod afem;
pub mod algebraic;
pub mod equilibration;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod solvers;
