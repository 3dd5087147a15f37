//! P1 finite elements on a triangulated rectangle.
//!
//! In nodal coordinates the discrete operator is `A_h(t) = -M⁻¹ K(t)`, with
//! `M` the consistent mass matrix and `K(t)` the stiffness of the bilinear
//! form `a(t)`. Dirichlet conditions drop boundary nodes from the unknowns.

mod assembly;
mod eigen;
mod mesh;
mod sparse;

use std::sync::OnceLock;

use nalgebra::DMatrix;

pub use assembly::{assemble_mass, assemble_stiffness, element_mass, CoefficientField};
pub use eigen::{smallest_eigenpairs, EigenOptions, EigenPairs};
pub use mesh::{build_mesh, TriangulatedMesh};
pub use sparse::{BandCholesky, CsrMatrix};

use crate::error::{invalid, Error, Result};
use crate::expm::OperatorHandle;
use crate::spectral::SpectralBasis;
use crate::state::{BackendKind, NormContext, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Neumann,
    Dirichlet,
}

#[derive(Debug)]
pub struct FemOperator {
    mesh: TriangulatedMesh,
    coeffs: CoefficientField,
    bc: BoundaryCondition,
    /// Node index of each unknown.
    dof_nodes: Vec<usize>,
    /// Unknown index of each node, `None` for eliminated Dirichlet nodes.
    node_dofs: Vec<Option<usize>>,
    mass: CsrMatrix,
    mass_factor: BandCholesky,
    mass_inverse: OnceLock<DMatrix<f64>>,
}

impl FemOperator {
    pub fn new(mesh: TriangulatedMesh, coeffs: CoefficientField, bc: BoundaryCondition) -> Result<Self> {
        let n = mesh.nodes().len();
        let mut node_dofs = vec![None; n];
        let mut dof_nodes = Vec::with_capacity(n);
        for (node, slot) in node_dofs.iter_mut().enumerate() {
            if bc == BoundaryCondition::Neumann || !mesh.is_boundary(node) {
                *slot = Some(dof_nodes.len());
                dof_nodes.push(node);
            }
        }
        if dof_nodes.is_empty() {
            return invalid("mesh has no interior nodes for Dirichlet conditions");
        }
        let mass = restrict(&assemble_mass(&mesh)?, &node_dofs, dof_nodes.len())?;
        let mass_factor = BandCholesky::factor(&mass)
            .map_err(|e| Error::Assembly(format!("mass matrix not positive definite: {e}")))?;
        Ok(FemOperator {
            mesh,
            coeffs,
            bc,
            dof_nodes,
            node_dofs,
            mass,
            mass_factor,
            mass_inverse: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &TriangulatedMesh {
        &self.mesh
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeffs
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn dof_count(&self) -> usize {
        self.dof_nodes.len()
    }

    /// Node index of each unknown.
    pub fn dof_nodes(&self) -> &[usize] {
        &self.dof_nodes
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// `K(t)` on the unknowns.
    pub fn stiffness(&self, t: f64) -> Result<CsrMatrix> {
        restrict(
            &assemble_stiffness(&self.mesh, &self.coeffs, t)?,
            &self.node_dofs,
            self.dof_count(),
        )
    }

    /// `A_h(t) v`, i.e. the solution `w` of `M w = -K(t) v`.
    pub fn apply(&self, t: f64, v: &StateVector) -> Result<StateVector> {
        self.check_state(v)?;
        let kv = self.stiffness(t)?.mul_vec(v.values());
        let neg: Vec<f64> = kv.iter().map(|x| -x).collect();
        Ok(StateVector::from_raw(self.mass_factor.solve(&neg), BackendKind::Fem))
    }

    /// `M⁻¹ r` for a nodal load vector.
    pub fn solve_mass(&self, rhs: &[f64]) -> Vec<f64> {
        self.mass_factor.solve(rhs)
    }

    /// Dense `A_h(t) = -M⁻¹K(t)` for the matrix-exponential path.
    pub fn dense_operator(&self, t: f64) -> Result<OperatorHandle> {
        let n = self.dof_count();
        let minv = self.mass_inverse.get_or_init(|| {
            let mut inv = DMatrix::zeros(n, n);
            let mut e = vec![0.0; n];
            for c in 0..n {
                e[c] = 1.0;
                let col = self.mass_factor.solve(&e);
                inv.column_mut(c).copy_from_slice(&col);
                e[c] = 0.0;
            }
            inv
        });
        let k = self.stiffness(t)?.to_dense();
        OperatorHandle::dense(-(minv * k))
    }

    /// Nodal interpolant of a spectral field, restricted to the unknowns.
    pub fn interpolate(&self, basis: &SpectralBasis, coeffs: &[f64]) -> Result<StateVector> {
        let full = interpolate_field(&self.mesh, basis, coeffs)?;
        let vals = self.dof_nodes.iter().map(|&n| full.values()[n]).collect();
        Ok(StateVector::from_raw(vals, BackendKind::Fem))
    }

    fn check_state(&self, v: &StateVector) -> Result<()> {
        if v.backend() != BackendKind::Fem || v.len() != self.dof_count() {
            return invalid(format!(
                "expected a FEM state with {} unknowns, got {:?} of length {}",
                self.dof_count(),
                v.backend(),
                v.len()
            ));
        }
        Ok(())
    }
}

fn restrict(full: &CsrMatrix, node_dofs: &[Option<usize>], dofs: usize) -> Result<CsrMatrix> {
    let trip = full
        .iter()
        .filter_map(|(i, j, v)| Some((node_dofs[i]?, node_dofs[j]?, v)))
        .collect();
    CsrMatrix::from_triplets(dofs, trip)
}

impl NormContext for FemOperator {
    fn backend(&self) -> BackendKind {
        BackendKind::Fem
    }

    fn dofs(&self) -> usize {
        self.dof_count()
    }

    fn norm_squared(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(self.mass.mul_vec(values))
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Values of `Σ c_k e_k(x, y)` at every mesh node.
pub fn interpolate_field(
    mesh: &TriangulatedMesh,
    basis: &SpectralBasis,
    coeffs: &[f64],
) -> Result<StateVector> {
    if coeffs.len() != basis.len() {
        return invalid(format!(
            "{} coefficients for {} modes",
            coeffs.len(),
            basis.len()
        ));
    }
    let rect = basis.rect();
    let (lx, ly) = (rect.lx(), rect.ly());
    let modes = basis.modes().indices();
    let max_i = modes.iter().map(|m| m.0).max().unwrap_or(0);
    let max_j = modes.iter().map(|m| m.1).max().unwrap_or(0);
    let values = mesh
        .nodes()
        .iter()
        .map(|&[x, y]| {
            let cx: Vec<f64> = (0..=max_i).map(|i| crate::spectral::cosine_mode(i, lx, x)).collect();
            let cy: Vec<f64> = (0..=max_j).map(|j| crate::spectral::cosine_mode(j, ly, y)).collect();
            modes
                .iter()
                .zip(coeffs)
                .map(|(&(i, j), c)| c * cx[i] * cy[j])
                .sum()
        })
        .collect();
    Ok(StateVector::from_raw(values, BackendKind::Fem))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{Constant, RelaxingDiffusion};
    use crate::spectral::{build_basis, ModeSet, Rectangle};
    use crate::state::l2_norm;
    use std::sync::Arc;

    fn neumann(nx: usize) -> FemOperator {
        let mesh = build_mesh(Rectangle::unit(), nx, nx).unwrap();
        let c = CoefficientField::isotropic(Arc::new(RelaxingDiffusion::default()), 0.1).unwrap();
        FemOperator::new(mesh, c, BoundaryCondition::Neumann).unwrap()
    }

    #[test]
    fn constant_function_has_unit_norm() {
        let op = neumann(5);
        let v = StateVector::new(vec![1.0; op.dof_count()], BackendKind::Fem).unwrap();
        assert!((l2_norm(&v, &op).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn operator_kills_constants_and_zero() {
        let op = neumann(6);
        let ones = StateVector::new(vec![1.0; op.dof_count()], BackendKind::Fem).unwrap();
        let w = op.apply(0.0, &ones).unwrap();
        assert!(w.values().iter().all(|x| x.abs() < 1e-12));
        let z = StateVector::zeros(op.dof_count(), BackendKind::Fem);
        assert!(op.apply(0.3, &z).unwrap().values().iter().all(|&x| x == 0.0));
        let wrong = StateVector::zeros(op.dof_count(), BackendKind::Spectral);
        assert!(op.apply(0.0, &wrong).is_err());
    }

    #[test]
    fn discrete_eigenvector_maps_to_minus_mu() {
        // dense generalized eigensolve as the oracle
        let op = neumann(6);
        let k = op.stiffness(0.0).unwrap().to_dense();
        let m = op.mass().to_dense();
        let l = m.clone().cholesky().unwrap().l();
        let li = l.try_inverse().unwrap();
        let c = &li * &k * li.transpose();
        let eig = ((&c + c.transpose()) * 0.5).symmetric_eigen();
        for idx in 0..eig.eigenvalues.len() {
            let mu = eig.eigenvalues[idx];
            if mu < 1.0 {
                continue;
            }
            let x = li.transpose() * eig.eigenvectors.column(idx);
            let v = StateVector::new(x.as_slice().to_vec(), BackendKind::Fem).unwrap();
            let w = op.apply(0.0, &v).unwrap();
            let err: f64 = w
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| (a + mu * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = mu * x.norm();
            assert!(err <= 1e-10 * scale, "mode {idx}: {err}");
        }
    }

    #[test]
    fn dense_operator_agrees_with_apply() {
        let op = neumann(4);
        let a = op.dense_operator(0.4).unwrap();
        let v: Vec<f64> = (0..op.dof_count()).map(|i| (i as f64).cos()).collect();
        let dense = a.apply(&v).unwrap();
        let sparse = op
            .apply(0.4, &StateVector::new(v, BackendKind::Fem).unwrap())
            .unwrap();
        for (a, b) in dense.iter().zip(sparse.values()) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn interpolation_examples() {
        let mesh = build_mesh(Rectangle::unit(), 2, 2).unwrap();
        let basis = SpectralBasis::from_modes(Rectangle::unit(), ModeSet::from_pairs(vec![(1, 0)]).unwrap());
        let zero = interpolate_field(&mesh, &basis, &[0.0]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let f = interpolate_field(&mesh, &basis, &[1.0]).unwrap();
        // node 0 at (0, 0), node 1 at (1/2, 0)
        assert!((f.values()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(f.values()[1].abs() < 1e-15);
        assert!(interpolate_field(&mesh, &basis, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dirichlet_eliminates_boundary() {
        let mesh = build_mesh(Rectangle::unit(), 4, 4).unwrap();
        let c = CoefficientField::isotropic(Arc::new(Constant(1.0)), 1.0).unwrap();
        let op = FemOperator::new(mesh, c, BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(op.dof_count(), 9);
        let k = op.stiffness(0.0).unwrap();
        // Dirichlet stiffness is positive definite: no constants in its kernel
        assert!(BandCholesky::factor(&k).is_ok());
        let basis = build_basis(Rectangle::unit(), 2).unwrap();
        let coeffs = vec![1.0; basis.len()];
        assert_eq!(op.interpolate(&basis, &coeffs).unwrap().len(), 9);
    }

    #[test]
    fn interpolation_l2_norm_converges() {
        // ‖e_{1,0}‖ = 1; the nodal interpolant's mass norm approaches it at O(h²)
        let basis = SpectralBasis::from_modes(Rectangle::unit(), ModeSet::from_pairs(vec![(1, 0)]).unwrap());
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let op = neumann(n);
                let v = op.interpolate(&basis, &[1.0]).unwrap();
                (l2_norm(&v, &op).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(errs[2] < 1e-3);
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5);
    }
}
