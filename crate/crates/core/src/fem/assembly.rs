use std::fmt;
use std::sync::Arc;

use super::mesh::TriangulatedMesh;
use super::sparse::CsrMatrix;
use crate::coefficient::SharedCoefficient;
use crate::error::{Error, Result};

type TensorFn = dyn Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync;
type VectorFn = dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync;

/// Coefficients of `A(t)u = ∇·(Q(x,t)∇u) − q(x,t)·∇u`.
#[derive(Clone)]
pub struct CoefficientField {
    diffusion: Arc<TensorFn>,
    advection: Option<Arc<VectorFn>>,
    c1: f64,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("advection", &self.advection.is_some())
            .field("c1", &self.c1)
            .finish()
    }
}

impl CoefficientField {
    /// `diffusion(x, y, t)` is the tensor `Q`, `advection(x, y, t)` the vector `q`.
    pub fn new(
        diffusion: impl Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
        advection: Option<Arc<VectorFn>>,
        c1: f64,
    ) -> Result<Self> {
        if !(c1 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ellipticity constant must be positive, got {c1}"
            )));
        }
        Ok(CoefficientField {
            diffusion: Arc::new(diffusion),
            advection,
            c1,
        })
    }

    /// `Q = D(t) I`, no advection. `c1` is the declared lower bound of `D`.
    pub fn isotropic(d: SharedCoefficient, c1: f64) -> Result<Self> {
        CoefficientField::new(
            move |_, _, t| {
                let v = d.value(t);
                [[v, 0.0], [0.0, v]]
            },
            None,
            c1,
        )
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn has_advection(&self) -> bool {
        self.advection.is_some()
    }

    pub fn diffusion_at(&self, x: f64, y: f64, t: f64) -> [[f64; 2]; 2] {
        (self.diffusion)(x, y, t)
    }

    pub fn advection_at(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        self.advection.as_ref().map_or([0.0, 0.0], |q| q(x, y, t))
    }

    /// Smallest eigenvalue of the symmetric part of `Q` at `(x, y, t)`.
    pub fn min_eigenvalue(&self, x: f64, y: f64, t: f64) -> f64 {
        let q = self.diffusion_at(x, y, t);
        let (a, d) = (q[0][0], q[1][1]);
        let b = 0.5 * (q[0][1] + q[1][0]);
        0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
    }

    fn check_at(&self, x: f64, y: f64, t: f64) -> Result<()> {
        let min_eig = self.min_eigenvalue(x, y, t);
        if min_eig < self.c1 || !min_eig.is_finite() {
            return Err(Error::Ellipticity {
                x,
                y,
                t,
                min_eig,
                c1: self.c1,
            });
        }
        Ok(())
    }

    /// Spot-checks ellipticity on an `samples³` grid over `rect × [0, t_final]`.
    pub fn check_ellipticity(
        &self,
        rect: &crate::spectral::Rectangle,
        t_final: f64,
        samples: usize,
    ) -> Result<()> {
        let s = samples.max(2);
        for a in 0..s {
            for b in 0..s {
                for c in 0..s {
                    let f = |k: usize| k as f64 / (s - 1) as f64;
                    self.check_at(f(a) * rect.lx(), f(b) * rect.ly(), f(c) * t_final)?;
                }
            }
        }
        Ok(())
    }
}

struct Element {
    area: f64,
    grads: [[f64; 2]; 3],
    centroid: [f64; 2],
}

fn element(mesh: &TriangulatedMesh, t: usize) -> Result<Element> {
    let [p0, p1, p2] = mesh.triangles()[t].map(|k| mesh.nodes()[k]);
    let area = mesh.signed_area(t);
    let scale = mesh.h().max(f64::MIN_POSITIVE);
    if !(area > 1e-14 * scale * scale) {
        return Err(Error::Assembly(format!(
            "triangle {t} is degenerate or clockwise (signed area {area})"
        )));
    }
    let inv = 1.0 / (2.0 * area);
    let grads = [
        [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
        [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
        [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
    ];
    let centroid = [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0];
    Ok(Element {
        area,
        grads,
        centroid,
    })
}

/// P1 element mass matrix `(A/12)[[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

/// Consistent mass matrix `M_kl = ∫ φ_k φ_l` over all mesh nodes.
pub fn assemble_mass(mesh: &TriangulatedMesh) -> Result<CsrMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = element(mesh, t)?;
        let me = element_mass(e.area);
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], me[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.nodes().len(), trip)
}

/// Stiffness `K(t)_kl = a(t)(φ_l, φ_k)` over all mesh nodes, with the
/// coefficients sampled at element centroids.
pub fn assemble_stiffness(
    mesh: &TriangulatedMesh,
    coeffs: &CoefficientField,
    t: f64,
) -> Result<CsrMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for (ti, tri) in mesh.triangles().iter().enumerate() {
        let e = element(mesh, ti)?;
        let [cx, cy] = e.centroid;
        coeffs.check_at(cx, cy, t)?;
        let q = coeffs.diffusion_at(cx, cy, t);
        let adv = coeffs.advection_at(cx, cy, t);
        for a in 0..3 {
            let ga = e.grads[a];
            for b in 0..3 {
                let gb = e.grads[b];
                // (∇φ_b)ᵀ Q ∇φ_a
                let diff = gb[0] * (q[0][0] * ga[0] + q[0][1] * ga[1])
                    + gb[1] * (q[1][0] * ga[0] + q[1][1] * ga[1]);
                // ∫ (q·∇φ_b) φ_a with ∫ φ_a = A/3
                let conv = (adv[0] * gb[0] + adv[1] * gb[1]) / 3.0;
                trip.push((tri[a], tri[b], e.area * (diff + conv)));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.nodes().len(), trip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{Constant, RelaxingDiffusion};
    use crate::fem::mesh::build_mesh;
    use crate::spectral::Rectangle;

    fn unit_laplace(c: f64) -> CoefficientField {
        CoefficientField::isotropic(Arc::new(Constant(c)), c).unwrap()
    }

    #[test]
    fn mass_sums_to_area() {
        for (r, nx, ny) in [(Rectangle::unit(), 1, 1), (Rectangle::unit(), 7, 4), (Rectangle::new(2.0, 0.5).unwrap(), 6, 9)] {
            let m = assemble_mass(&build_mesh(r, nx, ny).unwrap()).unwrap();
            assert!((m.sum() - r.area()).abs() < 1e-12);
            assert_eq!(m.max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn element_mass_by_exact_quadrature() {
        // edge-midpoint rule integrates quadratics exactly on a triangle
        let mesh = TriangulatedMesh::from_parts(
            Rectangle::unit(),
            vec![[0.1, 0.2], [0.9, 0.3], [0.4, 0.8]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let area = mesh.signed_area(0);
        let m = assemble_mass(&mesh).unwrap();
        // barycentric coordinates at edge midpoints
        let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                let exact: f64 = mids.iter().map(|l| l[a] * l[b]).sum::<f64>() * area / 3.0;
                assert!((m.get(a, b) - exact).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let mesh = TriangulatedMesh::from_parts(
            Rectangle::unit(),
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(assemble_mass(&mesh), Err(Error::Assembly(_))));
    }

    #[test]
    fn neumann_kernel_and_linearity() {
        let mesh = build_mesh(Rectangle::unit(), 8, 8).unwrap();
        let d = CoefficientField::isotropic(Arc::new(RelaxingDiffusion::default()), 0.1).unwrap();
        let k = assemble_stiffness(&mesh, &d, 0.0).unwrap();
        let ones = vec![1.0; mesh.nodes().len()];
        let r = k.mul_vec(&ones);
        let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rmax <= 1e-12 * k.max_abs());
        assert_eq!(k.max_asymmetry(), 0.0);

        let lap = assemble_stiffness(&mesh, &unit_laplace(1.0), 0.0).unwrap();
        for (i, j, v) in k.iter() {
            assert!((v - 0.2 * lap.get(i, j)).abs() <= 1e-15 * lap.max_abs());
        }
    }

    #[test]
    fn advection_breaks_symmetry() {
        let mesh = build_mesh(Rectangle::unit(), 4, 4).unwrap();
        let adv: Arc<VectorFn> = Arc::new(|_, _, _| [0.5, -0.2]);
        let c = CoefficientField::new(|_, _, _| [[1.0, 0.0], [0.0, 1.0]], Some(adv), 0.5).unwrap();
        let k = assemble_stiffness(&mesh, &c, 0.0).unwrap();
        assert!(k.max_asymmetry() > 1e-3);
        // constants still lie in the kernel: every term contains ∇u
        let r = k.mul_vec(&vec![1.0; mesh.nodes().len()]);
        assert!(r.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn ellipticity_violation_reported() {
        let mesh = build_mesh(Rectangle::unit(), 2, 2).unwrap();
        let c = CoefficientField::new(|x, _, _| [[x - 0.5, 0.0], [0.0, 1.0]], None, 0.01).unwrap();
        assert!(matches!(
            assemble_stiffness(&mesh, &c, 0.0),
            Err(Error::Ellipticity { .. })
        ));
        assert!(c.check_ellipticity(&Rectangle::unit(), 1.0, 5).is_err());
        let ok = unit_laplace(0.3);
        assert!(ok.check_ellipticity(&Rectangle::unit(), 1.0, 5).is_ok());
    }
}
