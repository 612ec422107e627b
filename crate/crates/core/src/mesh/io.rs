//! Plain-text mesh format.
//!
//! ```text
//! ntri nvert
//! x y                 (nvert lines)
//! a b c               (ntri lines, counterclockwise, newest vertex first)
//! nboundary
//! v                   (nboundary lines)
//! ```

use std::io::{BufRead, Write};

use super::{MeshError, TriMesh};

impl TriMesh {
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.num_elements(), self.num_vertices())?;
        for p in self.vertices() {
            writeln!(w, "{:.16e} {:.16e}", p[0], p[1])?;
        }
        for t in self.triangles() {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        let boundary = self.boundary_vertices();
        writeln!(w, "{}", boundary.len())?;
        for v in boundary {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Reads the text format. Triangle labelling is preserved, so a mesh
    /// written after refinement continues bisecting the same way. The
    /// boundary list must agree with the boundary derived from topology.
    pub fn read_text<R: BufRead>(r: R) -> Result<TriMesh, MeshError> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, String), MeshError> {
            match lines.next() {
                Some((n, Ok(s))) => Ok((n, s)),
                Some((n, Err(e))) => Err(MeshError::Parse {
                    line: n,
                    msg: e.to_string(),
                }),
                None => Err(MeshError::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };

        let (n, header) = next("header")?;
        let h: Vec<usize> = parse_all(n, &header)?;
        if h.len() != 2 {
            return Err(MeshError::Parse {
                line: n,
                msg: "header must be `ntri nvert`".into(),
            });
        }
        let (ntri, nvert) = (h[0], h[1]);

        let mut vertices = Vec::with_capacity(nvert);
        for _ in 0..nvert {
            let (n, l) = next("vertex")?;
            let c: Vec<f64> = parse_all(n, &l)?;
            if c.len() != 2 {
                return Err(MeshError::Parse {
                    line: n,
                    msg: "vertex line needs two coordinates".into(),
                });
            }
            vertices.push([c[0], c[1]]);
        }
        let mut triangles = Vec::with_capacity(ntri);
        for _ in 0..ntri {
            let (n, l) = next("triangle")?;
            let c: Vec<usize> = parse_all(n, &l)?;
            if c.len() != 3 {
                return Err(MeshError::Parse {
                    line: n,
                    msg: "triangle line needs three indices".into(),
                });
            }
            triangles.push([c[0], c[1], c[2]]);
        }
        let (n, l) = next("boundary count")?;
        let nb: Vec<usize> = parse_all(n, &l)?;
        let nb = *nb.first().ok_or(MeshError::Parse {
            line: n,
            msg: "missing boundary count".into(),
        })?;
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (n, l) = next("boundary vertex")?;
            let v: Vec<usize> = parse_all(n, &l)?;
            boundary.push(*v.first().ok_or(MeshError::Parse {
                line: n,
                msg: "missing boundary vertex".into(),
            })?);
        }

        let nt = triangles.len();
        let mesh = TriMesh::from_labelled(vertices, triangles, 0, vec![None; nt], vec![None; nvert])?;
        boundary.sort_unstable();
        if boundary != mesh.boundary_vertices() {
            return Err(MeshError::Parse {
                line: 0,
                msg: "boundary vertex list disagrees with mesh topology".into(),
            });
        }
        Ok(mesh)
    }
}

fn parse_all<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>, MeshError> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| MeshError::Parse {
                line,
                msg: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}
