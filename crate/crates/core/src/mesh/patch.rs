use super::TriMesh;

/// The elements sharing a vertex `z`, with its faces classified by role.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: usize,
    pub elements: Vec<usize>,
    /// Faces shared by two elements of the patch (all contain `z`).
    pub interior_faces: Vec<usize>,
    /// Patch boundary faces inside the domain.
    pub outer_faces: Vec<usize>,
    /// Patch boundary faces on the domain boundary.
    pub domain_faces: Vec<usize>,
    pub area: f64,
}

impl Patch {
    pub(crate) fn new(mesh: &TriMesh, z: usize) -> Self {
        let elements = mesh.vertex_elements(z).to_vec();
        let mut interior_faces = Vec::new();
        let mut outer_faces = Vec::new();
        let mut domain_faces = Vec::new();
        let in_patch = |t: usize| elements.contains(&t);
        let mut seen = Vec::new();
        for &t in &elements {
            for f in mesh.element_faces(t) {
                if seen.contains(&f) {
                    continue;
                }
                seen.push(f);
                match mesh.face_elements(f) {
                    (_, None) => domain_faces.push(f),
                    (a, Some(b)) if in_patch(a) && in_patch(b) => interior_faces.push(f),
                    _ => outer_faces.push(f),
                }
            }
        }
        interior_faces.sort_unstable();
        outer_faces.sort_unstable();
        domain_faces.sort_unstable();
        let area = elements.iter().map(|&t| mesh.area(t)).sum();
        Self {
            center: z,
            elements,
            interior_faces,
            outer_faces,
            domain_faces,
            area,
        }
    }

    pub fn is_interior(&self, mesh: &TriMesh) -> bool {
        !mesh.is_boundary_vertex(self.center)
    }
}
