pub mod eigen;
pub mod laplacian;
pub mod sparse;
pub mod spectrum;

pub use laplacian::{cotan_laplacian, dirichlet_reduce, pc_laplacian, LaplacianPair, DEFAULT_KNN};
pub use spectrum::{
    offset_decode, offset_encode, predicted_signature, shape_dna, signature_distance, BoundaryCondition, OffsetSeq,
    Provenance, Signature, Spectrum, DEFAULT_K,
};

use crate::error::{CoreError, Result};
use crate::geometry::{PointCloud, Shape, TriMesh};

/// `k` smallest eigenvalues of `L u = lambda M u`, ascending.
pub fn smallest_eigs(lp: &LaplacianPair, k: usize) -> Result<Vec<f64>> {
    eigen::smallest_eigenvalues(&lp.standard_form(), k)
}

fn finish(lp: &LaplacianPair, k: usize, bc: BoundaryCondition) -> Result<Spectrum> {
    let values = match bc {
        BoundaryCondition::Dirichlet => smallest_eigs(lp, k)?,
        BoundaryCondition::Closed => smallest_eigs(lp, k + 1)?.split_off(1),
    };
    Spectrum::new(values, bc)
}

pub fn mesh_spectrum(mesh: &TriMesh, k: usize, bc: BoundaryCondition) -> Result<Spectrum> {
    let lp = cotan_laplacian(mesh)?;
    match bc {
        BoundaryCondition::Dirichlet => {
            let boundary = mesh.boundary_flags();
            if !boundary.iter().any(|&b| b) {
                return Err(CoreError::NoBoundary);
            }
            finish(&dirichlet_reduce(&lp, boundary)?, k, bc)
        }
        BoundaryCondition::Closed => finish(&lp, k, bc),
    }
}

pub fn cloud_spectrum(pc: &PointCloud, k: usize, bc: BoundaryCondition, k_nn: usize) -> Result<Spectrum> {
    let lp = pc_laplacian(pc, k_nn)?;
    match bc {
        BoundaryCondition::Dirichlet => {
            if !pc.boundary_flags.iter().any(|&b| b) {
                return Err(CoreError::NoBoundary);
            }
            finish(&dirichlet_reduce(&lp, &pc.boundary_flags)?, k, bc)
        }
        BoundaryCondition::Closed => finish(&lp, k, bc),
    }
}

/// Assemble, reduce when Dirichlet, solve.
pub fn spectrum(shape: &Shape, k: usize, bc: BoundaryCondition) -> Result<Spectrum> {
    match shape {
        Shape::Mesh(m) => mesh_spectrum(m, k, bc),
        Shape::Cloud(pc) => cloud_spectrum(pc, k, bc, DEFAULT_KNN),
    }
}

/// Spectrum of a mesh with Dirichlet conditions if it has a boundary and the
/// closed convention otherwise.
pub fn natural_spectrum(mesh: &TriMesh, k: usize) -> Result<Spectrum> {
    let bc = if mesh.has_boundary() { BoundaryCondition::Dirichlet } else { BoundaryCondition::Closed };
    mesh_spectrum(mesh, k, bc)
}
