use super::{DeformationField, TriMesh};
use crate::error::{Error, Result};
use crate::fem::{solve_constrained, SOLVER_TOL};
use crate::sparse::CsrMatrix;

/// Lamé parameters of the plane-strain material used to extend interface
/// displacements into the volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self { lambda: 0.0, mu: 1.0 }
    }
}

fn assemble_elasticity(mesh: &TriMesh, params: ElasticParams) -> Result<CsrMatrix> {
    let (lambda, mu) = (params.lambda, params.mu);
    let mut trip = Vec::with_capacity(36 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = mesh.p1_gradients(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle(t));
        }
        // dof 2v + c is component c of vertex v
        for k in 0..3 {
            for l in 0..3 {
                let gkgl = g[k][0] * g[l][0] + g[k][1] * g[l][1];
                for a in 0..2 {
                    for b in 0..2 {
                        let mut v = mu * g[k][b] * g[l][a] + lambda * g[k][a] * g[l][b];
                        if a == b {
                            v += mu * gkgl;
                        }
                        trip.push((2 * tri[k] + a, 2 * tri[l] + b, area * v));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(2 * mesh.num_vertices(), &trip))
}

/// Volume displacement from linear elasticity with the given displacement
/// on the interface nodes and zero displacement on the outer boundary.
pub fn solve_elastic_deformation(mesh: &TriMesh, interface_displacement: &[[f64; 2]]) -> Result<DeformationField> {
    solve_elastic_deformation_with(mesh, interface_displacement, ElasticParams::default())
}

pub fn solve_elastic_deformation_with(
    mesh: &TriMesh,
    interface_displacement: &[[f64; 2]],
    params: ElasticParams,
) -> Result<DeformationField> {
    let nodes = mesh.interface_nodes();
    if interface_displacement.len() != nodes.len() {
        return Err(Error::FieldLength {
            expected: nodes.len(),
            found: interface_displacement.len(),
        });
    }
    let n = mesh.num_vertices();
    if interface_displacement.iter().all(|d| d[0] == 0.0 && d[1] == 0.0) {
        return Ok(DeformationField::zeros(n));
    }
    let matrix = assemble_elasticity(mesh, params)?;
    let mut constrained = vec![false; 2 * n];
    let mut values = vec![0.0; 2 * n];
    for &v in mesh.outer_boundary_nodes() {
        constrained[2 * v] = true;
        constrained[2 * v + 1] = true;
    }
    for (&v, d) in nodes.iter().zip(interface_displacement) {
        constrained[2 * v] = true;
        constrained[2 * v + 1] = true;
        if !mesh.is_outer_boundary(v) {
            values[2 * v] = d[0];
            values[2 * v + 1] = d[1];
        }
    }
    let rhs = vec![0.0; 2 * n];
    let (x, _) = solve_constrained(&matrix, &rhs, &constrained, &values, SOLVER_TOL)?;
    Ok(DeformationField {
        displacement: x.chunks(2).map(|c| [c[0], c[1]]).collect(),
    })
}
