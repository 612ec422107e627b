use super::{midpoint, MeshError, Point, TriMesh};

/// Sparse interpolation weights: for each fine vertex, the coarse vertices
/// and barycentric weights reproducing it.
pub type InterpolationWeights = Vec<Vec<(usize, f64)>>;

impl TriMesh {
    /// Newest-vertex bisection of the `marked` elements with conforming
    /// closure. Every marked element is bisected at least once; neighbours
    /// are refined recursively until no hanging vertex remains.
    pub fn bisect(&self, marked: &[usize]) -> Result<TriMesh, MeshError> {
        let nt = self.num_elements();
        for &t in marked {
            if t >= nt {
                return Err(MeshError::ElementOutOfRange { index: t, count: nt });
            }
        }

        // refinement edge of t is its local face 0
        let mut cut = vec![false; self.num_faces()];
        let mut work = Vec::new();
        for &t in marked {
            let f = self.element_faces(t)[0];
            if !cut[f] {
                cut[f] = true;
                work.push(f);
            }
        }
        while let Some(f) = work.pop() {
            let (a, b) = self.face_elements(f);
            for t in std::iter::once(a).chain(b) {
                let r = self.element_faces(t)[0];
                if !cut[r] {
                    cut[r] = true;
                    work.push(r);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut vertex_parents = vec![None; self.num_vertices()];
        let mut mid = vec![usize::MAX; self.num_faces()];
        for f in 0..self.num_faces() {
            if cut[f] {
                let [a, b] = self.face(f);
                mid[f] = vertices.len();
                vertices.push(midpoint(self.vertex(a), self.vertex(b)));
                vertex_parents.push(Some([a, b]));
            }
        }

        let mut triangles = Vec::with_capacity(nt + 2 * marked.len());
        let mut parent_element = Vec::with_capacity(triangles.capacity());
        for t in 0..nt {
            let [p0, p1, p2] = self.triangle(t);
            let faces = self.element_faces(t);
            if !cut[faces[0]] {
                debug_assert!(!cut[faces[1]] && !cut[faces[2]]);
                triangles.push([p0, p1, p2]);
                parent_element.push(Some(t));
                continue;
            }
            let m = mid[faces[0]];
            // children carry the parent's other edges as refinement edges
            let children = [([m, p2, p0], faces[1]), ([m, p0, p1], faces[2])];
            for (child, edge) in children {
                if cut[edge] {
                    let [c0, c1, c2] = child;
                    let m2 = mid[edge];
                    triangles.push([m2, c2, c0]);
                    triangles.push([m2, c0, c1]);
                    parent_element.push(Some(t));
                    parent_element.push(Some(t));
                } else {
                    triangles.push(child);
                    parent_element.push(Some(t));
                }
            }
        }

        TriMesh::from_labelled(
            vertices,
            triangles,
            self.level + 1,
            parent_element,
            vertex_parents,
        )
    }

    /// Uniform refinement: every element bisected twice.
    pub fn bisect_all_twice(&self) -> Result<TriMesh, MeshError> {
        let all: Vec<usize> = (0..self.num_elements()).collect();
        let once = self.bisect(&all)?;
        let all: Vec<usize> = (0..once.num_elements()).collect();
        once.bisect(&all)
    }
}

/// Nodal interpolation from `coarse` onto the vertices of a nested `fine`
/// mesh. Uses the recorded bisection parents when `fine` was produced by
/// bisecting `coarse`, and point location otherwise.
pub fn nested_interpolation(coarse: &TriMesh, fine: &TriMesh) -> Result<InterpolationWeights, MeshError> {
    if let Some(w) = parent_weights(coarse, fine) {
        return Ok(w);
    }
    let locator = Locator::new(coarse);
    let mut weights = Vec::with_capacity(fine.num_vertices());
    for (v, &p) in fine.vertices().iter().enumerate() {
        let (t, bary) = locator
            .locate(coarse, p)
            .ok_or(MeshError::NotNested(v))?;
        let tri = coarse.triangle(t);
        let mut row = Vec::with_capacity(3);
        for i in 0..3 {
            let mut w = bary[i];
            if w.abs() < 1e-12 {
                continue;
            }
            if (w - 1.0).abs() < 1e-12 {
                w = 1.0;
            }
            row.push((tri[i], w));
        }
        weights.push(row);
    }
    Ok(weights)
}

fn parent_weights(coarse: &TriMesh, fine: &TriMesh) -> Option<InterpolationWeights> {
    let nc = coarse.num_vertices();
    if fine.level() != coarse.level() + 1 || fine.num_vertices() < nc {
        return None;
    }
    if fine.vertices()[..nc] != *coarse.vertices() {
        return None;
    }
    let mut weights = Vec::with_capacity(fine.num_vertices());
    for v in 0..fine.num_vertices() {
        if v < nc {
            weights.push(vec![(v, 1.0)]);
        } else {
            let [a, b] = fine.vertex_parents(v)?;
            if a >= nc || b >= nc {
                return None;
            }
            weights.push(vec![(a, 0.5), (b, 0.5)]);
        }
    }
    Some(weights)
}

struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &TriMesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.vertices() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let per_side = ((mesh.num_elements() as f64).sqrt().ceil() as usize).max(1);
        let cell = side / per_side as f64;
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for t in 0..mesh.num_elements() {
            let p = mesh.triangle_points(t);
            let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
            let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
            let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
            let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
            let pad = 1e-10 * cell;
            let i0 = Self::clamp_index((xmin - pad - lo[0]) / cell, nx);
            let i1 = Self::clamp_index((xmax + pad - lo[0]) / cell, nx);
            let j0 = Self::clamp_index((ymin - pad - lo[1]) / cell, ny);
            let j1 = Self::clamp_index((ymax + pad - lo[1]) / cell, ny);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn clamp_index(x: f64, n: usize) -> usize {
        if x <= 0.0 {
            0
        } else {
            (x.floor() as usize).min(n - 1)
        }
    }

    fn locate(&self, mesh: &TriMesh, p: Point) -> Option<(usize, [f64; 3])> {
        let i = Self::clamp_index((p[0] - self.origin[0]) / self.cell, self.nx);
        let j = Self::clamp_index((p[1] - self.origin[1]) / self.cell, self.ny);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let b = barycentric(mesh, t, p);
            let worst = b[0].min(b[1]).min(b[2]);
            if worst >= -1e-10 && best.is_none_or(|(_, _, w)| worst > w) {
                best = Some((t, b, worst));
            }
        }
        best.map(|(t, b, _)| (t, b))
    }
}

/// Barycentric coordinates of `p` with respect to element `t`.
pub fn barycentric(mesh: &TriMesh, t: usize, p: Point) -> [f64; 3] {
    let [a, b, c] = mesh.triangle_points(t);
    let two_area = 2.0 * mesh.area(t);
    let l0 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / two_area;
    let l1 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / two_area;
    [l0, l1, 1.0 - l0 - l1]
}
