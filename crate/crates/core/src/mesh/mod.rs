//! Conforming triangulations of planar polygonal domains.
//!
//! Triangles are stored counterclockwise with the *newest vertex* in
//! position 0, so the refinement edge of triangle `t` is always the edge
//! `(t[1], t[2])`. Local face `i` of a triangle is the edge opposite local
//! vertex `i`.

mod io;
mod patch;
mod refine;

use std::collections::HashMap;

use thiserror::Error;

pub use patch::Patch;
pub use refine::{barycentric, nested_interpolation, InterpolationWeights};

pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("number of subdivisions must be at least 1")]
    ZeroSubdivisions,
    #[error("triangle {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("vertex index {index} out of range ({count} vertices)")]
    VertexOutOfRange { index: usize, count: usize },
    #[error("element index {index} out of range ({count} elements)")]
    ElementOutOfRange { index: usize, count: usize },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("vertex {0} of the fine mesh is not covered by the coarse mesh")]
    NotNested(usize),
    #[error("mesh file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Axis-aligned square `[min.0, min.0 + side] x [min.1, min.1 + side]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Square {
    pub min: Point,
    pub side: f64,
}

impl Square {
    pub fn new(min: Point, side: f64) -> Self {
        Self { min, side }
    }

    /// `(-1, 1)^2`
    pub fn symmetric_unit() -> Self {
        Self::new([-1.0, -1.0], 2.0)
    }

    pub fn unit() -> Self {
        Self::new([0.0, 0.0], 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    faces: Vec<[usize; 2]>,
    /// `(minus, plus)`; `plus` is `None` on the domain boundary. The minus
    /// element always has the lower index, and `n_F` points out of it.
    face_elements: Vec<(usize, Option<usize>)>,
    element_faces: Vec<[usize; 3]>,
    vertex_elements: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
    level: usize,
    /// Element of the previous mesh each element descends from.
    parent_element: Vec<Option<usize>>,
    /// Endpoints of the coarse edge bisected to create each vertex.
    vertex_parents: Vec<Option<[usize; 2]>>,
}

impl TriMesh {
    /// Builds a mesh from raw triangles. Orientation is fixed to
    /// counterclockwise and every triangle is labelled so that its longest
    /// edge becomes the refinement edge.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mut labelled = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.into_iter().enumerate() {
            for &v in &tri {
                if v >= vertices.len() {
                    return Err(MeshError::VertexOutOfRange {
                        index: v,
                        count: vertices.len(),
                    });
                }
            }
            let mut tri = tri;
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a.abs() <= f64::EPSILON * bbox_scale(&vertices, &tri).powi(2) {
                return Err(MeshError::DegenerateTriangle(t));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
            // longest edge opposite position 0
            let mut best = 0;
            let mut best_len = -1.0;
            for i in 0..3 {
                let l = dist2(vertices[tri[(i + 1) % 3]], vertices[tri[(i + 2) % 3]]);
                if l > best_len * (1.0 + 1e-12) {
                    best = i;
                    best_len = l;
                }
            }
            labelled.push([tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]);
        }
        let nv = vertices.len();
        let nt = labelled.len();
        Self::from_labelled(vertices, labelled, 0, vec![None; nt], vec![None; nv])
    }

    /// Builds a mesh whose triangles are already counterclockwise and
    /// labelled newest-vertex-first.
    pub(crate) fn from_labelled(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        level: usize,
        parent_element: Vec<Option<usize>>,
        vertex_parents: Vec<Option<[usize; 2]>>,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange { index: v, count: nv });
                }
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a <= f64::EPSILON * bbox_scale(&vertices, tri).powi(2) {
                return Err(MeshError::DegenerateTriangle(t));
            }
            areas.push(a);
        }

        let mut face_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
        let mut faces = Vec::new();
        let mut face_elements: Vec<(usize, Option<usize>)> = Vec::new();
        let mut element_faces = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut ef = [0usize; 3];
            for (i, slot) in ef.iter_mut().enumerate() {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let f = match face_index.get(&key) {
                    Some(&f) => {
                        if face_elements[f].1.is_some() {
                            return Err(MeshError::NonManifoldEdge(key.0, key.1));
                        }
                        face_elements[f].1 = Some(t);
                        f
                    }
                    None => {
                        let f = faces.len();
                        faces.push([key.0, key.1]);
                        face_elements.push((t, None));
                        face_index.insert(key, f);
                        f
                    }
                };
                *slot = f;
            }
            element_faces.push(ef);
        }

        let mut vertex_elements = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_elements[v].push(t);
            }
        }
        let mut boundary_vertex = vec![false; nv];
        for (f, fe) in face_elements.iter().enumerate() {
            if fe.1.is_none() {
                boundary_vertex[faces[f][0]] = true;
                boundary_vertex[faces[f][1]] = true;
            }
        }

        Ok(Self {
            vertices,
            triangles,
            areas,
            faces,
            face_elements,
            element_faces,
            vertex_elements,
            boundary_vertex,
            level,
            parent_element,
            vertex_parents,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        dist2(a, b).max(dist2(b, c)).max(dist2(c, a)).sqrt()
    }

    pub fn face(&self, f: usize) -> [usize; 2] {
        self.faces[f]
    }

    pub fn faces(&self) -> &[[usize; 2]] {
        &self.faces
    }

    pub fn face_length(&self, f: usize) -> f64 {
        let [a, b] = self.faces[f];
        dist2(self.vertices[a], self.vertices[b]).sqrt()
    }

    pub fn face_midpoint(&self, f: usize) -> Point {
        let [a, b] = self.faces[f];
        midpoint(self.vertices[a], self.vertices[b])
    }

    pub fn face_elements(&self, f: usize) -> (usize, Option<usize>) {
        self.face_elements[f]
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_elements[f].1.is_none()
    }

    /// Faces of element `t`; entry `i` is opposite local vertex `i`.
    pub fn element_faces(&self, t: usize) -> [usize; 3] {
        self.element_faces[t]
    }

    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.boundary_vertex[v]).collect()
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| !self.boundary_vertex[v]).collect()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn parent_element(&self, t: usize) -> Option<usize> {
        self.parent_element[t]
    }

    pub fn vertex_parents(&self, v: usize) -> Option<[usize; 2]> {
        self.vertex_parents[v]
    }

    /// Fixed unit normal of face `f`: out of the minus element, which is
    /// the outward normal on boundary faces.
    pub fn face_normal(&self, f: usize) -> Point {
        let [a, b] = self.faces[f];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let len = dist2(pa, pb).sqrt();
        let mut n = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
        let c = self.centroid(self.face_elements[f].0);
        let m = midpoint(pa, pb);
        if n[0] * (m[0] - c[0]) + n[1] * (m[1] - c[1]) < 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }

    /// +1 if the outward normal of element `t` on face `f` agrees with
    /// `n_F`, -1 otherwise.
    pub fn face_orientation(&self, t: usize, f: usize) -> f64 {
        if self.face_elements[f].0 == t {
            1.0
        } else {
            -1.0
        }
    }

    /// Local index of face `f` within element `t`.
    pub fn local_face(&self, t: usize, f: usize) -> Option<usize> {
        self.element_faces[t].iter().position(|&g| g == f)
    }

    /// Gradients of the three barycentric coordinates on element `t`.
    pub fn barycentric_gradients(&self, t: usize) -> [Point; 3] {
        let p = self.triangle_points(t);
        let two_area = 2.0 * self.areas[t];
        let mut g = [[0.0; 2]; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let a = p[(i + 1) % 3];
            let b = p[(i + 2) % 3];
            *gi = [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area];
        }
        g
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = f64::INFINITY;
        for t in 0..self.num_elements() {
            let p = self.triangle_points(t);
            for i in 0..3 {
                let o = p[i];
                let a = p[(i + 1) % 3];
                let b = p[(i + 2) % 3];
                let u = [a[0] - o[0], a[1] - o[1]];
                let v = [b[0] - o[0], b[1] - o[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v));
                best = best.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        best
    }

    /// Checks that every face has one or two elements, every triangle is
    /// positively oriented and no vertex lies in the interior of a
    /// single-sided face (a hanging node). Quadratic in the boundary size;
    /// intended for tests and diagnostics.
    pub fn is_conforming(&self) -> bool {
        if self.areas.iter().any(|&a| a <= 0.0) {
            return false;
        }
        let mut lonely = Vec::new();
        for f in 0..self.num_faces() {
            if self.is_boundary_face(f) {
                lonely.push(f);
            }
        }
        let scale = self.bounding_box_diameter();
        let tol = 1e-12 * scale;
        for &f in &lonely {
            let [a, b] = self.faces[f];
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            let len = dist2(pa, pb).sqrt();
            for (v, &p) in self.vertices.iter().enumerate() {
                if v == a || v == b {
                    continue;
                }
                let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                if (cross / len).abs() > tol {
                    continue;
                }
                let s = ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / (len * len);
                if s > 1e-12 && s < 1.0 - 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    pub fn bounding_box_diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        dist2(lo, hi).sqrt()
    }

    /// Interior angles of triangle `t` in radians, ordered by local vertex.
    pub fn angles(&self, t: usize) -> [f64; 3] {
        let p = self.triangle_points(t);
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let u = sub(p[(i + 1) % 3], p[i]);
            let v = sub(p[(i + 2) % 3], p[i]);
            *o = ((u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v))).clamp(-1.0, 1.0).acos();
        }
        out
    }
}

/// Uniform mesh of `domain` with `n` cells per side, each cell split along
/// its south-west to north-east diagonal. Vertices are numbered row by
/// row, so vertex `(i, j)` has index `j * (n + 1) + i`.
pub fn build_uniform_mesh(domain: Square, n: usize) -> Result<TriMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::ZeroSubdivisions);
    }
    let h = domain.side / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([domain.min[0] + i as f64 * h, domain.min[1] + j as f64 * h]);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            // right angle first, hypotenuse is the refinement edge
            triangles.push([v10, v11, v00]);
            triangles.push([v01, v00, v11]);
        }
    }
    let nt = triangles.len();
    let nv = vertices.len();
    TriMesh::from_labelled(vertices, triangles, 0, vec![None; nt], vec![None; nv])
}

pub fn vertex_patch(mesh: &TriMesh, z: usize) -> Patch {
    Patch::new(mesh, z)
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub(crate) fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

fn bbox_scale(vertices: &[Point], tri: &[usize; 3]) -> f64 {
    let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    dist2(p[0], p[1]).max(dist2(p[1], p[2])).max(dist2(p[2], p[0])).sqrt()
}
