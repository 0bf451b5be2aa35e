//! The Lagrange-Newton subproblem on the current interface.
//!
//! For a normal step `w` the linearized state `z` solves
//! `∫∇z·∇q̄ - ∫_u [[f]] q̄ w = -∫∇y·∇q̄ + ∫ f q̄` and the multiplier `q` solves
//! `-Δq = -z - (y - ȳ)`. The design residual, in the `b - A w` convention,
//! is
//!
//! `r(w) = [[f]] (κ p w + q(w)) - μ κ + μ ∂²w/∂τ²`
//!
//! so that `r(0) = -g` (with `q(0) = p`) and `A w = r(0) - r(w)` is the
//! reduced Hessian applied to `w`. Interface integrals use trapezoidal
//! lumping with the arc-length weights `s_i`.

use crate::error::{Error, Result};
use crate::fem::{assemble_load_piecewise, assemble_mass, assemble_stiffness, DirichletFactor, NodalField};
use crate::mesh::TriMesh;
use crate::shape::{compute_geometry, shape_gradient, tangential_laplacian_apply, FieldRole, InterfaceField, InterfaceGeometry};
use crate::sparse::{norm, CsrMatrix};

/// Relative tolerance on the discrete state and adjoint equations checked
/// when a workspace is built.
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerProduct {
    /// `Σ s_i a_i b_i`, the lumped `L²(u)` pairing.
    ArcLength,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    /// Tridiagonal `μ L` from the tangential Laplacian.
    Tangential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpParams {
    pub f1: f64,
    pub f2: f64,
    pub mu: f64,
    pub cg_tol: f64,
    /// `None` means twice the number of free interface nodes.
    pub cg_max_iter: Option<usize>,
    pub inner: InnerProduct,
    pub preconditioner: Preconditioner,
}

impl Default for QpParams {
    fn default() -> Self {
        Self {
            f1: 1000.0,
            f2: 1.0,
            mu: 10.0,
            cg_tol: 1e-8,
            cg_max_iter: None,
            inner: InnerProduct::ArcLength,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: InterfaceField,
    pub iterations: usize,
    /// Final relative residual norm in the chosen inner product.
    pub residual: f64,
    /// Relative residual norm per iteration, starting with iteration 0.
    pub residual_history: Vec<f64>,
    /// Quadratic model `½⟨w,Aw⟩ - ⟨b,w⟩` per iteration.
    pub energy_history: Vec<f64>,
    pub negative_curvature: bool,
}

/// State, adjoint and factorized stiffness on one interface configuration.
#[derive(Debug)]
pub struct QpWorkspace {
    mesh: TriMesh,
    geometry: InterfaceGeometry,
    y: NodalField,
    p: NodalField,
    ybar: NodalField,
    params: QpParams,
    stiffness: CsrMatrix,
    mass: CsrMatrix,
    load: Vec<f64>,
    factor: DirichletFactor,
    r0: InterfaceField,
}

impl QpWorkspace {
    pub fn new(mesh: &TriMesh, ybar: &NodalField, params: QpParams) -> Result<Self> {
        ybar.check(mesh)?;
        let geometry = compute_geometry(mesh)?;
        let stiffness = assemble_stiffness(mesh)?;
        let mass = assemble_mass(mesh);
        let load = assemble_load_piecewise(mesh, params.f1, params.f2);
        let factor = DirichletFactor::new(&stiffness, mesh.outer_boundary_mask())?;

        let y = NodalField::new(mesh, factor.solve(&load))?;
        let diff = y.sub(ybar);
        let adj_rhs: Vec<f64> = mass.mul_vec(&diff.values).into_iter().map(|v| -v).collect();
        let p = NodalField::new(mesh, factor.solve(&adj_rhs))?;

        let mut ws = Self {
            mesh: mesh.clone(),
            geometry,
            y,
            p,
            ybar: ybar.clone(),
            params,
            stiffness,
            mass,
            load,
            factor,
            r0: InterfaceField::zeros(FieldRole::Residual, 0),
        };
        let load = ws.load.clone();
        ws.check_equation(&ws.y.values, &load)?;
        ws.check_equation(&ws.p.values, &adj_rhs)?;
        let zero = InterfaceField::zeros(FieldRole::Design, ws.geometry.len());
        ws.r0 = ws.design_residual_uncached(&zero)?;
        Ok(ws)
    }

    fn check_equation(&self, x: &[f64], rhs: &[f64]) -> Result<()> {
        let ax = self.stiffness.mul_vec(x);
        let free = |i: &usize| !self.mesh.is_outer_boundary(*i);
        let r: Vec<f64> = (0..x.len()).filter(free).map(|i| ax[i] - rhs[i]).collect();
        let b: Vec<f64> = (0..x.len()).filter(free).map(|i| rhs[i]).collect();
        let rel = norm(&r) / norm(&b).max(f64::MIN_POSITIVE);
        if norm(&b) > 0.0 && rel > CONSISTENCY_TOL {
            return Err(Error::NotConverged {
                iterations: 0,
                residual: rel,
            });
        }
        Ok(())
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn geometry(&self) -> &InterfaceGeometry {
        &self.geometry
    }

    pub fn state(&self) -> &NodalField {
        &self.y
    }

    pub fn adjoint(&self) -> &NodalField {
        &self.p
    }

    pub fn data(&self) -> &NodalField {
        &self.ybar
    }

    pub fn params(&self) -> &QpParams {
        &self.params
    }

    fn jump(&self) -> f64 {
        self.params.f1 - self.params.f2
    }

    pub fn shape_gradient(&self) -> Result<InterfaceField> {
        shape_gradient(&self.mesh, &self.geometry, &self.p, self.params.f1, self.params.f2, self.params.mu)
    }

    pub fn objective(&self) -> Result<f64> {
        crate::shape::objective(&self.mesh, &self.y, &self.ybar, &self.geometry, self.params.mu)
    }

    /// Solves the linearized state equation for the step `w`.
    pub fn qp_state_solve(&self, w: &InterfaceField) -> Result<NodalField> {
        self.check_len(w)?;
        let ky = self.stiffness.mul_vec(&self.y.values);
        let mut rhs: Vec<f64> = self.load.iter().zip(&ky).map(|(b, k)| b - k).collect();
        let jump = self.jump();
        let m = self.geometry.len();
        for (i, &v) in self.mesh.interface_nodes().iter().enumerate().take(m - 1).skip(1) {
            rhs[v] += jump * self.geometry.arc_weights[i] * w.values[i];
        }
        NodalField::new(&self.mesh, self.factor.solve(&rhs))
    }

    /// Solves `-Δq = -z - (y - ȳ)`, `q = 0` on the outer boundary.
    pub fn qp_adjoint_solve(&self, z: &NodalField) -> Result<NodalField> {
        z.check(&self.mesh)?;
        let src: Vec<f64> = z
            .values
            .iter()
            .zip(self.y.values.iter().zip(&self.ybar.values))
            .map(|(z, (y, yb))| z + y - yb)
            .collect();
        let rhs: Vec<f64> = self.mass.mul_vec(&src).into_iter().map(|v| -v).collect();
        NodalField::new(&self.mesh, self.factor.solve(&rhs))
    }

    fn check_len(&self, w: &InterfaceField) -> Result<()> {
        if w.len() != self.geometry.len() {
            return Err(Error::FieldLength {
                expected: self.geometry.len(),
                found: w.len(),
            });
        }
        Ok(())
    }

    fn design_residual_uncached(&self, w: &InterfaceField) -> Result<InterfaceField> {
        let z = self.qp_state_solve(w)?;
        let q = self.qp_adjoint_solve(&z)?;
        let lw = tangential_laplacian_apply(&self.geometry, w)?;
        let (jump, mu) = (self.jump(), self.params.mu);
        let values = self
            .mesh
            .interface_nodes()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let kappa = self.geometry.curvature[i];
                jump * (kappa * self.p.values[v] * w.values[i] + q.values[v]) - mu * kappa - mu * lw.values[i]
            })
            .collect();
        Ok(InterfaceField::new(FieldRole::Residual, values))
    }

    /// Residual of the design equation at `w`.
    pub fn design_residual(&self, w: &InterfaceField) -> Result<InterfaceField> {
        self.check_len(w)?;
        if w.values.iter().all(|&v| v == 0.0) {
            return Ok(self.r0.clone());
        }
        self.design_residual_uncached(w)
    }

    /// `A w = r(0) - r(w)`.
    pub fn reduced_hessian_apply(&self, w: &InterfaceField) -> Result<InterfaceField> {
        let r = self.design_residual(w)?;
        let values = self.r0.values.iter().zip(&r.values).map(|(a, b)| a - b).collect();
        Ok(InterfaceField::new(FieldRole::Residual, values))
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.params.inner {
            InnerProduct::ArcLength => self.geometry.inner(a, b),
            InnerProduct::Euclidean => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        match self.params.preconditioner {
            Preconditioner::None => r.to_vec(),
            Preconditioner::Tangential => solve_tangential(&self.geometry, self.params.mu, r),
        }
    }

    /// Conjugate gradients on `A w = r(0)` in the configured inner product.
    pub fn solve_qp_cg(&self) -> Result<QpSolution> {
        let m = self.geometry.len();
        let b = self.r0.values.clone();
        let max_iter = self.params.cg_max_iter.unwrap_or(2 * m.saturating_sub(2)).max(1);
        let b_norm = self.inner(&b, &b).sqrt();
        let mut w = vec![0.0; m];
        let mut history = vec![if b_norm > 0.0 { 1.0 } else { 0.0 }];
        let mut energy = vec![0.0];
        if b_norm == 0.0 {
            return Ok(QpSolution {
                w: InterfaceField::new(FieldRole::Design, w),
                iterations: 0,
                residual: 0.0,
                residual_history: history,
                energy_history: energy,
                negative_curvature: false,
            });
        }
        let mut r = b.clone();
        let mut z = self.precondition(&r);
        let mut d = z.clone();
        let mut rz = self.inner(&r, &z);
        let mut iterations = 0;
        let mut negative_curvature = false;
        let mut rel = 1.0;
        while iterations < max_iter && rel > self.params.cg_tol {
            let ad = self.reduced_hessian_apply(&InterfaceField::new(FieldRole::Design, d.clone()))?;
            let curv = self.inner(&d, &ad.values);
            if curv <= 0.0 {
                negative_curvature = true;
                break;
            }
            let alpha = rz / curv;
            for i in 0..m {
                w[i] += alpha * d[i];
                r[i] -= alpha * ad.values[i];
            }
            iterations += 1;
            rel = self.inner(&r, &r).sqrt() / b_norm;
            history.push(rel);
            let e: Vec<f64> = b.iter().zip(&r).map(|(bi, ri)| bi + ri).collect();
            energy.push(-0.5 * self.inner(&w, &e));
            z = self.precondition(&r);
            let rz_new = self.inner(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                d[i] = z[i] + beta * d[i];
            }
        }
        Ok(QpSolution {
            w: InterfaceField::new(FieldRole::Design, w),
            iterations,
            residual: rel,
            residual_history: history,
            energy_history: energy,
            negative_curvature,
        })
    }
}

/// Solves `μ L v = r` on the interior interface nodes (tridiagonal, Thomas
/// algorithm); endpoint entries are zero.
pub fn solve_tangential(geometry: &InterfaceGeometry, mu: f64, r: &[f64]) -> Vec<f64> {
    let m = geometry.len();
    let mut out = vec![0.0; m];
    if m < 3 {
        return out;
    }
    let e = &geometry.edge_lengths;
    let s = &geometry.arc_weights;
    let k = m - 2;
    // row i (1..m-1): μ/s_i [ -v_{i-1}/e_{i-1} + (1/e_{i-1} + 1/e_i) v_i - v_{i+1}/e_i ]
    let mut lower = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        let c = mu / s[i];
        lower[j] = -c / e[i - 1];
        diag[j] = c * (1.0 / e[i - 1] + 1.0 / e[i]);
        upper[j] = -c / e[i];
        rhs[j] = r[i];
    }
    for j in 1..k {
        let f = lower[j] / diag[j - 1];
        diag[j] -= f * upper[j - 1];
        rhs[j] -= f * rhs[j - 1];
    }
    let mut x = vec![0.0; k];
    x[k - 1] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        x[j] = (rhs[j] - upper[j] * x[j + 1]) / diag[j];
    }
    out[1..m - 1].copy_from_slice(&x);
    out
}
