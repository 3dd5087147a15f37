use crate::error::{invalid, Result};
use crate::spectral::Rectangle;

/// Triangulation of a rectangle with P1 nodes at the vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedMesh {
    rect: Rectangle,
    nx: usize,
    ny: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    h: f64,
}

/// Uniform `nx × ny` grid, each cell split along its rising diagonal.
pub fn build_mesh(rect: Rectangle, nx: usize, ny: usize) -> Result<TriangulatedMesh> {
    if nx == 0 || ny == 0 {
        return invalid(format!("mesh needs positive subdivisions, got {nx} x {ny}"));
    }
    let (hx, hy) = (rect.lx() / nx as f64, rect.ly() / ny as f64);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // snap the last row/column to the exact boundary
            let x = if i == nx { rect.lx() } else { i as f64 * hx };
            let y = if j == ny { rect.ly() } else { j as f64 * hy };
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Ok(TriangulatedMesh {
        rect,
        nx,
        ny,
        nodes,
        triangles,
        h: hx.hypot(hy),
    })
}

impl TriangulatedMesh {
    /// Mesh from explicit nodes and triangles. Orientation and area are not
    /// checked here; assembly rejects degenerate elements.
    pub fn from_parts(rect: Rectangle, nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&k| k >= nodes.len())) {
            return invalid(format!("triangle {t:?} references a missing node"));
        }
        let pts = &nodes;
        let h = triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |e| {
                    let (a, b) = (pts[t[e]], pts[t[(e + 1) % 3]]);
                    (a[0] - b[0]).hypot(a[1] - b[1])
                })
            })
            .fold(0.0, f64::max);
        Ok(TriangulatedMesh {
            rect,
            nx: 0,
            ny: 0,
            nodes,
            triangles,
            h,
        })
    }

    pub fn rect(&self) -> &Rectangle {
        &self.rect
    }

    /// Grid subdivisions; `(0, 0)` for meshes built with [`TriangulatedMesh::from_parts`].
    pub fn subdivisions(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Signed area of triangle `t` (positive when counter-clockwise).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let [x, y] = self.nodes[node];
        let tol = 1e-12 * self.rect.lx().max(self.rect.ly());
        x.abs() <= tol
            || y.abs() <= tol
            || (x - self.rect.lx()).abs() <= tol
            || (y - self.rect.ly()).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_counts() {
        let m = build_mesh(Rectangle::unit(), 1, 1).unwrap();
        assert_eq!(m.nodes().len(), 4);
        assert_eq!(m.triangles().len(), 2);
        let area: f64 = (0..2).map(|t| m.signed_area(t)).sum();
        assert!((area - 1.0).abs() < 1e-15);

        let m = build_mesh(Rectangle::unit(), 2, 2).unwrap();
        assert_eq!(m.nodes().len(), 9);
        assert_eq!(m.triangles().len(), 8);
    }

    #[test]
    fn orientation_and_tiling() {
        let r = Rectangle::new(2.0, 1.0).unwrap();
        let m = build_mesh(r, 5, 3).unwrap();
        assert!((0..m.triangles().len()).all(|t| m.signed_area(t) > 0.0));
        let area: f64 = (0..m.triangles().len()).map(|t| m.signed_area(t)).sum();
        assert!((area - 2.0).abs() < 1e-14);
    }

    #[test]
    fn max_edge_is_hypotenuse() {
        let m = build_mesh(Rectangle::new(2.0, 1.0).unwrap(), 2, 1).unwrap();
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(build_mesh(Rectangle::unit(), 0, 3).is_err());
        assert!(build_mesh(Rectangle::unit(), 3, 0).is_err());
    }

    #[test]
    fn boundary_flags() {
        let m = build_mesh(Rectangle::unit(), 2, 2).unwrap();
        let interior: Vec<usize> = (0..9).filter(|&k| !m.is_boundary(k)).collect();
        assert_eq!(interior, vec![4]);
    }
}
