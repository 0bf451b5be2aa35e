//! P1 finite elements for the Poisson-type problems on a [`TriMesh`]:
//! stiffness, mass and piecewise-constant load assembly, homogeneous
//! Dirichlet solves, and the state / adjoint equations.
//!
//! The interface jump term of the weak form vanishes for conforming
//! continuous elements, so the interface conditions hold weakly through
//! conformity and nothing interface-specific is assembled here.

use crate::error::{Error, Result};
use crate::mesh::{Point, PointLocator, Subdomain, TriMesh};
use crate::sparse::{norm, pcg, CgReport, CsrMatrix, EnvelopeCholesky};

pub const SOLVER_TOL: f64 = 1e-10;

/// Scalar P1 coefficient vector tied to one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    mesh_id: u64,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::FieldLength {
                expected: mesh.num_vertices(),
                found: values.len(),
            });
        }
        Ok(Self {
            mesh_id: mesh.id(),
            values,
        })
    }

    pub fn zeros(mesh: &TriMesh) -> Self {
        Self {
            mesh_id: mesh.id(),
            values: vec![0.0; mesh.num_vertices()],
        }
    }

    pub fn from_fn(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Self {
        Self {
            mesh_id: mesh.id(),
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps the coefficients and re-tags the field onto a mesh with the
    /// same vertex numbering (e.g. after a deformation).
    pub fn transport_to(&self, mesh: &TriMesh) -> Result<Self> {
        Self::new(mesh, self.values.clone())
    }

    pub fn check(&self, mesh: &TriMesh) -> Result<()> {
        if self.mesh_id != mesh.id() {
            return Err(Error::MeshMismatch {
                mesh: mesh.id(),
                field_mesh: self.mesh_id,
            });
        }
        Ok(())
    }

    pub fn sub(&self, other: &NodalField) -> NodalField {
        NodalField {
            mesh_id: self.mesh_id,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> NodalField {
        NodalField {
            mesh_id: self.mesh_id,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric matrix, right-hand side, and the set of constrained nodes
/// (homogeneous Dirichlet).
#[derive(Debug, Clone)]
pub struct SparseSpdSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained: Vec<bool>,
}

fn element_stiffness(grads: &[[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
        }
    }
    k
}

fn checked_gradients(mesh: &TriMesh, t: usize) -> Result<([[f64; 2]; 3], f64)> {
    let (g, area) = mesh.p1_gradients(t);
    if !(area > 0.0) || !area.is_finite() {
        return Err(Error::DegenerateTriangle(t));
    }
    Ok((g, area))
}

/// P1 stiffness matrix `K_ij = ∫ ∇φ_i·∇φ_j`.
pub fn assemble_stiffness(mesh: &TriMesh) -> Result<CsrMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = checked_gradients(mesh, t)?;
        let k = element_stiffness(&g, area);
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], k[a][b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_vertices(), &trip))
}

/// Consistent P1 mass matrix, `∫_T φ_a φ_b = |T| (1 + δ_ab) / 12`.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                trip.push((tri[a], tri[b], m));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), &trip)
}

/// `∫ f φ_i` for `f` equal to `f1` on the left subdomain and `f2` on the right.
pub fn assemble_load_piecewise(mesh: &TriMesh, f1: f64, f2: f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let f = match mesh.subdomain(t) {
            Subdomain::Left => f1,
            Subdomain::Right => f2,
        };
        let share = f * mesh.area(t) / 3.0;
        for &v in tri {
            b[v] += share;
        }
    }
    b
}

/// Load vector of a continuous source given by nodal values, `M f`.
pub fn assemble_load_nodal(mass: &CsrMatrix, f: &[f64]) -> Vec<f64> {
    mass.mul_vec(f)
}

/// Homogeneous Dirichlet system on the outer boundary of `mesh`.
pub fn dirichlet_system(mesh: &TriMesh, matrix: CsrMatrix, rhs: Vec<f64>) -> SparseSpdSystem {
    SparseSpdSystem {
        matrix,
        rhs,
        constrained: mesh.outer_boundary_mask().to_vec(),
    }
}

/// Solves `A x = b` with constrained entries of `x` fixed to `values`,
/// by symmetric elimination and Jacobi-preconditioned CG.
pub fn solve_constrained(
    matrix: &CsrMatrix,
    rhs: &[f64],
    constrained: &[bool],
    values: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, CgReport)> {
    if !constrained.iter().any(|&c| c) {
        return Err(Error::NoConstraints);
    }
    let free: Vec<bool> = constrained.iter().map(|&c| !c).collect();
    let (reduced, kept) = matrix.principal_submatrix(&free);
    let mut b: Vec<f64> = kept.iter().map(|&i| rhs[i]).collect();
    if values.iter().any(|&v| v != 0.0) {
        for (k, &i) in kept.iter().enumerate() {
            for (j, a) in matrix.row(i) {
                if constrained[j] {
                    b[k] -= a * values[j];
                }
            }
        }
    }
    let max_iter = 10 * kept.len().max(1);
    let (xf, report) = pcg(&reduced, &b, None, tol, max_iter)?;
    let mut x: Vec<f64> = (0..rhs.len()).map(|i| if constrained[i] { values[i] } else { 0.0 }).collect();
    for (k, &i) in kept.iter().enumerate() {
        x[i] = xf[k];
    }
    Ok((x, report))
}

/// Homogeneous Dirichlet solve of an assembled system.
pub fn solve_dirichlet(mesh: &TriMesh, system: &SparseSpdSystem) -> Result<NodalField> {
    let zeros = vec![0.0; system.rhs.len()];
    let (x, _) = solve_constrained(
        &system.matrix,
        &system.rhs,
        &system.constrained,
        &zeros,
        SOLVER_TOL,
    )?;
    NodalField::new(mesh, x)
}

/// Cached Cholesky factor of the stiffness matrix restricted to the free
/// (non-boundary) nodes, for many right-hand sides on one mesh.
#[derive(Debug, Clone)]
pub struct DirichletFactor {
    kept: Vec<usize>,
    n: usize,
    chol: EnvelopeCholesky,
}

impl DirichletFactor {
    pub fn new(matrix: &CsrMatrix, constrained: &[bool]) -> Result<Self> {
        if !constrained.iter().any(|&c| c) {
            return Err(Error::NoConstraints);
        }
        let free: Vec<bool> = constrained.iter().map(|&c| !c).collect();
        let (reduced, kept) = matrix.principal_submatrix(&free);
        let chol = EnvelopeCholesky::factor(&reduced)?;
        Ok(Self {
            kept,
            n: matrix.dim(),
            chol,
        })
    }

    /// Solution with zero boundary values for the full-length load `rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b: Vec<f64> = self.kept.iter().map(|&i| rhs[i]).collect();
        let xf = self.chol.solve(&b);
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.kept.iter().enumerate() {
            x[i] = xf[k];
        }
        x
    }
}

/// `-Δy = f` with `f = f1 | f2`, `y = 0` on the outer boundary.
pub fn solve_state(mesh: &TriMesh, f1: f64, f2: f64) -> Result<NodalField> {
    let k = assemble_stiffness(mesh)?;
    let b = assemble_load_piecewise(mesh, f1, f2);
    solve_dirichlet(mesh, &dirichlet_system(mesh, k, b))
}

/// `-Δp = -(y - ȳ)`, `p = 0` on the outer boundary.
pub fn solve_adjoint(mesh: &TriMesh, y: &NodalField, ybar: &NodalField) -> Result<NodalField> {
    y.check(mesh)?;
    ybar.check(mesh)?;
    let k = assemble_stiffness(mesh)?;
    let m = assemble_mass(mesh);
    let diff = y.sub(ybar);
    let b: Vec<f64> = m.mul_vec(&diff.values).into_iter().map(|v| -v).collect();
    solve_dirichlet(mesh, &dirichlet_system(mesh, k, b))
}

/// Piecewise-linear interpolation of `field` at arbitrary points.
pub fn evaluate_field(mesh: &TriMesh, field: &NodalField, points: &[Point]) -> Result<Vec<f64>> {
    field.check(mesh)?;
    let loc = PointLocator::new(mesh);
    evaluate_with(&loc, field, points)
}

/// As [`evaluate_field`] with a prebuilt locator.
pub fn evaluate_with(loc: &PointLocator<'_>, field: &NodalField, points: &[Point]) -> Result<Vec<f64>> {
    field.check(loc.mesh())?;
    points
        .iter()
        .map(|&x| {
            let l = loc.locate(x)?;
            let tri = loc.mesh().triangles()[l.triangle];
            Ok((0..3).map(|k| l.barycentric[k] * field.values[tri[k]]).sum())
        })
        .collect()
}

/// Exact `∫ v^2` of a P1 field.
pub fn l2_norm_squared(mesh: &TriMesh, values: &[f64]) -> f64 {
    let mut s = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = tri.map(|v| values[v]);
        s += mesh.area(t) / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a);
    }
    s
}

pub fn l2_norm(mesh: &TriMesh, field: &NodalField) -> Result<f64> {
    field.check(mesh)?;
    Ok(l2_norm_squared(mesh, &field.values).sqrt())
}

/// Seven-point rule exact for quintics: (barycentric weight, coordinates).
const QUAD7: [(f64, [f64; 3]); 7] = [
    (0.225, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    (0.132394152788506, [0.059715871789770, 0.470142064105115, 0.470142064105115]),
    (0.132394152788506, [0.470142064105115, 0.059715871789770, 0.470142064105115]),
    (0.132394152788506, [0.470142064105115, 0.470142064105115, 0.059715871789770]),
    (0.125939180544827, [0.797426985353087, 0.101286507323456, 0.101286507323456]),
    (0.125939180544827, [0.101286507323456, 0.797426985353087, 0.101286507323456]),
    (0.125939180544827, [0.101286507323456, 0.101286507323456, 0.797426985353087]),
];

/// `‖u_h - u‖_{L²}` against a function known in closed form.
pub fn l2_error(mesh: &TriMesh, field: &NodalField, exact: impl Fn(Point) -> f64) -> Result<f64> {
    field.check(mesh)?;
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = mesh.triangle_points(t);
        let area = mesh.area(t);
        for (w, b) in QUAD7 {
            let x = [
                b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
            ];
            let uh: f64 = (0..3).map(|k| b[k] * field.values[tri[k]]).sum();
            sum += w * area * (uh - exact(x)).powi(2);
        }
    }
    Ok(sum.sqrt())
}

/// `½ ∫ (y - ȳ)^2` with exact P1 quadrature.
pub fn objective_misfit(mesh: &TriMesh, y: &NodalField, ybar: &NodalField) -> Result<f64> {
    y.check(mesh)?;
    ybar.check(mesh)?;
    Ok(0.5 * l2_norm_squared(mesh, &y.sub(ybar).values))
}

/// Relative residual `|A x - b| / |b|` on the free rows of a system.
pub fn relative_residual(system: &SparseSpdSystem, x: &[f64]) -> f64 {
    let ax = system.matrix.mul_vec(x);
    let r: Vec<f64> = (0..x.len())
        .filter(|&i| !system.constrained[i])
        .map(|i| ax[i] - system.rhs[i])
        .collect();
    let b: Vec<f64> = (0..x.len())
        .filter(|&i| !system.constrained[i])
        .map(|i| system.rhs[i])
        .collect();
    let bn = norm(&b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}
