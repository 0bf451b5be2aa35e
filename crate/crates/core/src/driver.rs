//! Outer loops: shape-SQP, the steepest-descent baseline and the
//! multi-level convergence study.

use crate::error::{Error, Result};
use crate::fem::{evaluate_with, solve_dirichlet, assemble_load_piecewise, assemble_stiffness, dirichlet_system, NodalField};
use crate::mesh::{build_template, refine_uniform, PointLocator, TriMesh};
use crate::qp::{InnerProduct, Preconditioner, QpParams, QpSolution, QpWorkspace};
use crate::shape::{dist_to_solution, initial_mesh, retract, FieldRole, InterfaceField, MAX_HALVINGS};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub f1: f64,
    pub f2: f64,
    pub mu: f64,
    /// Template subdivision of the coarse level; must be even.
    pub n: usize,
    pub levels: usize,
    pub max_sqp_iters: usize,
    pub cg_tol: f64,
    pub alpha: f64,
    pub baseline_scaling: f64,
    pub baseline_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub preconditioner: Preconditioner,
    pub inner_product: InnerProduct,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            f1: 1000.0,
            f2: 1.0,
            mu: 10.0,
            n: 56,
            levels: 3,
            max_sqp_iters: 2,
            cg_tol: 1e-8,
            alpha: 1.0,
            baseline_scaling: 1e4,
            baseline_iters: 5,
            grad_tol: 1e-10,
            seed: 20240611,
            preconditioner: Preconditioner::None,
            inner_product: InnerProduct::ArcLength,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if !(self.f1.is_finite() && self.f2.is_finite()) {
            return bad("f1/f2", "sources must be finite");
        }
        if self.f1 == self.f2 {
            return bad("f1/f2", "f1 and f2 must differ");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu", "must be positive");
        }
        if self.n < 2 || self.n % 2 != 0 {
            return bad("n", "must be even and at least 2");
        }
        if self.levels == 0 {
            return bad("levels", "must be at least 1");
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return bad("cg_tol", "must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if !(self.baseline_scaling > 0.0 && self.baseline_scaling.is_finite()) {
            return bad("baseline_scaling", "must be positive");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol", "must be nonnegative");
        }
        Ok(())
    }

    pub fn qp_params(&self) -> QpParams {
        QpParams {
            f1: self.f1,
            f2: self.f2,
            mu: self.mu,
            cg_tol: self.cg_tol,
            cg_max_iter: None,
            inner: self.inner_product,
            preconditioner: self.preconditioner,
        }
    }
}

/// Synthetic measurements: the state on a straight-interface mesh.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub mesh: TriMesh,
    pub ybar: NodalField,
}

impl DataSet {
    /// Solves the state on `mesh` and keeps it as the data field.
    pub fn from_mesh(mesh: TriMesh, f1: f64, f2: f64) -> Result<Self> {
        let k = assemble_stiffness(&mesh)?;
        let b = assemble_load_piecewise(&mesh, f1, f2);
        let ybar = solve_dirichlet(&mesh, &dirichlet_system(&mesh, k, b))?;
        Ok(Self { mesh, ybar })
    }

    /// Nodal interpolant of the data on another mesh.
    pub fn sample_on(&self, mesh: &TriMesh) -> Result<NodalField> {
        if mesh.id() == self.mesh.id() {
            return Ok(self.ybar.clone());
        }
        let loc = PointLocator::new(&self.mesh);
        let values = evaluate_with(&loc, &self.ybar, mesh.vertices())?;
        NodalField::new(mesh, values)
    }
}

/// Number of uniform refinements between the coarse working mesh and the
/// data mesh.
pub const DATA_REFINEMENTS: usize = 2;

pub fn generate_data(config: &ExperimentConfig) -> Result<DataSet> {
    let mut mesh = build_template(config.n)?;
    for _ in 0..DATA_REFINEMENTS {
        mesh = refine_uniform(&mesh)?;
    }
    DataSet::from_mesh(mesh, config.f1, config.f2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpRecord {
    pub level: usize,
    pub iter: usize,
    pub dist: f64,
    /// `false` if the interface was not a graph over `y`.
    pub dist_exact: bool,
    pub objective: f64,
    pub grad_norm: f64,
    /// CG iterations spent on the step leaving this iterate (0 for the last).
    pub cg_iters: usize,
    /// Step length used to leave this iterate (0 for the last).
    pub alpha: f64,
    pub negative_curvature: bool,
}

#[derive(Debug, Clone)]
pub struct SqpTrace {
    pub level: usize,
    pub records: Vec<SqpRecord>,
    /// Plain-text run log, one line per event.
    pub log: Vec<String>,
    pub final_mesh: TriMesh,
}

impl SqpTrace {
    pub fn dists(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dist).collect()
    }
}

/// What an observer sees at each iterate.
pub struct Snapshot<'a> {
    pub level: usize,
    pub iter: usize,
    pub workspace: &'a QpWorkspace,
    pub gradient: &'a InterfaceField,
    pub step: Option<&'a InterfaceField>,
}

pub type Observer<'o> = &'o mut dyn FnMut(&Snapshot<'_>) -> Result<()>;

/// Shape-SQP from the spline start on the given level.
pub fn sqp_solve(config: &ExperimentConfig, level: usize, data: &DataSet) -> Result<SqpTrace> {
    let start = initial_mesh(config.n, level)?;
    sqp_solve_from(config, level, data, start, &mut |_| Ok(()))
}

pub fn sqp_solve_from(
    config: &ExperimentConfig,
    level: usize,
    data: &DataSet,
    start: TriMesh,
    observer: Observer<'_>,
) -> Result<SqpTrace> {
    config.validate()?;
    let params = config.qp_params();
    let mut log = vec![format!(
        "sqp level={level} vertices={} triangles={} interface_nodes={} data_triangles={}",
        start.num_vertices(),
        start.num_triangles(),
        start.interface_nodes().len(),
        data.mesh.num_triangles()
    )];
    let mut ws = QpWorkspace::new(&start, &data.sample_on(&start)?, params)?;
    let mut records = Vec::new();
    for iter in 0..=config.max_sqp_iters {
        let g = ws.shape_gradient()?;
        let grad_norm = ws.geometry().norm(&g.values);
        let objective = ws.objective()?;
        let dist = dist_to_solution(ws.mesh());
        let mut record = SqpRecord {
            level,
            iter,
            dist: dist.value,
            dist_exact: dist.exact,
            objective,
            grad_norm,
            cg_iters: 0,
            alpha: 0.0,
            negative_curvature: false,
        };
        if iter == config.max_sqp_iters || grad_norm <= config.grad_tol {
            log.push(format!("iter={iter} dist={:.7e} J={objective:.7e} |g|={grad_norm:.7e} stop", dist.value));
            observer(&Snapshot { level, iter, workspace: &ws, gradient: &g, step: None })?;
            records.push(record);
            break;
        }
        let sol = ws.solve_qp_cg()?;
        log_cg(&mut log, iter, &sol);
        observer(&Snapshot { level, iter, workspace: &ws, gradient: &g, step: Some(&sol.w) })?;

        let (next, alpha) = take_step(config, &ws, &sol.w, objective, iter, data, &mut log)?;
        record.cg_iters = sol.iterations;
        record.alpha = alpha;
        record.negative_curvature = sol.negative_curvature;
        log.push(format!(
            "iter={iter} dist={:.7e} J={objective:.7e} |g|={grad_norm:.7e} cg={} alpha={alpha}",
            dist.value, sol.iterations
        ));
        records.push(record);
        ws = next;
    }
    Ok(SqpTrace {
        level,
        records,
        log,
        final_mesh: ws.mesh().clone(),
    })
}

fn log_cg(log: &mut Vec<String>, iter: usize, sol: &QpSolution) {
    for (k, r) in sol.residual_history.iter().enumerate() {
        log.push(format!("cg outer={iter} k={k} residual={r:.7e}"));
    }
    if sol.negative_curvature {
        log.push(format!("cg outer={iter} negative curvature after {} iterations", sol.iterations));
    }
}

/// Retracts along `w`, halving the step on mesh inversion or when the
/// objective grows by more than 10%.
fn take_step(
    config: &ExperimentConfig,
    ws: &QpWorkspace,
    w: &InterfaceField,
    objective: f64,
    iteration: usize,
    data: &DataSet,
    log: &mut Vec<String>,
) -> Result<(QpWorkspace, f64)> {
    let mut alpha = config.alpha;
    let mut halvings = 0;
    loop {
        let r = match retract(ws.mesh(), w, ws.geometry(), alpha) {
            Ok(r) => r,
            Err(Error::RetractionFailed { .. }) => {
                return Err(Error::StepFailure {
                    iteration,
                    halvings: halvings + MAX_HALVINGS,
                })
            }
            Err(e) => return Err(e),
        };
        halvings += r.halvings;
        alpha = r.step;
        let next = QpWorkspace::new(&r.mesh, &data.sample_on(&r.mesh)?, *ws.params())?;
        let j = next.objective()?;
        if j > 1.1 * objective && halvings < MAX_HALVINGS {
            log.push(format!("iter={iteration} objective grew to {j:.7e} at alpha={alpha}, halving"));
            alpha *= 0.5;
            halvings += 1;
            continue;
        }
        return Ok((next, alpha));
    }
}

/// Gradient descent with `V·n = -scaling · g` and unit step.
pub fn steepest_descent_solve(config: &ExperimentConfig, level: usize, data: &DataSet, scaling: f64) -> Result<SqpTrace> {
    let start = initial_mesh(config.n, level)?;
    steepest_descent_from(config, level, data, start, scaling)
}

pub fn steepest_descent_from(
    config: &ExperimentConfig,
    level: usize,
    data: &DataSet,
    start: TriMesh,
    scaling: f64,
) -> Result<SqpTrace> {
    config.validate()?;
    let params = config.qp_params();
    let mut log = vec![format!("steepest descent level={level} scaling={scaling}")];
    let mut ws = QpWorkspace::new(&start, &data.sample_on(&start)?, params)?;
    let mut records = Vec::new();
    for iter in 0..=config.baseline_iters {
        let g = ws.shape_gradient()?;
        let grad_norm = ws.geometry().norm(&g.values);
        let objective = ws.objective()?;
        let dist = dist_to_solution(ws.mesh());
        let mut record = SqpRecord {
            level,
            iter,
            dist: dist.value,
            dist_exact: dist.exact,
            objective,
            grad_norm,
            cg_iters: 0,
            alpha: 0.0,
            negative_curvature: false,
        };
        if iter == config.baseline_iters || grad_norm <= config.grad_tol {
            log.push(format!("iter={iter} dist={:.7e} J={objective:.7e} |g|={grad_norm:.7e} stop", dist.value));
            records.push(record);
            break;
        }
        let w = InterfaceField::new(FieldRole::Design, g.values.iter().map(|v| -scaling * v).collect());
        let r = match retract(ws.mesh(), &w, ws.geometry(), 1.0) {
            Ok(r) => r,
            Err(Error::RetractionFailed { halvings, .. }) => return Err(Error::StepFailure { iteration: iter, halvings }),
            Err(e) => return Err(e),
        };
        record.alpha = r.step;
        log.push(format!(
            "iter={iter} dist={:.7e} J={objective:.7e} |g|={grad_norm:.7e} alpha={}",
            dist.value, r.step
        ));
        records.push(record);
        ws = QpWorkspace::new(&r.mesh, &data.sample_on(&r.mesh)?, params)?;
    }
    Ok(SqpTrace {
        level,
        records,
        log,
        final_mesh: ws.mesh().clone(),
    })
}

/// Runs SQP on levels `1..=config.levels` in parallel threads. A failing
/// level does not stop the others.
pub fn convergence_study(config: &ExperimentConfig, data: &DataSet) -> Vec<(usize, Result<SqpTrace>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (1..=config.levels)
            .map(|level| (level, scope.spawn(move || sqp_solve(config, level, data))))
            .collect();
        handles
            .into_iter()
            .map(|(level, h)| {
                let res = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Config(format!("level {level} worker panicked"))));
                (level, res)
            })
            .collect()
    })
}
