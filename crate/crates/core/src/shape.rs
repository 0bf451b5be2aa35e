//! Interface geometry and shape calculus on the polyline interface.
//!
//! Normals point out of the left subdomain. Curvature is signed so that
//! `d(length)[V] = Σ κ_i s_i ⟨V_i, n_i⟩` holds exactly for the polyline,
//! where `s_i` are the lumped arc-length weights.

use crate::error::{Error, Result};
use crate::fem::{objective_misfit, NodalField};
use crate::mesh::{
    apply_deformation, build_template, solve_elastic_deformation, DeformationField, Point, Subdomain, TriMesh,
};

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceGeometry {
    pub normals: Vec<[f64; 2]>,
    pub tangents: Vec<[f64; 2]>,
    pub curvature: Vec<f64>,
    pub arc_weights: Vec<f64>,
    pub edge_lengths: Vec<f64>,
}

impl InterfaceGeometry {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.edge_lengths.iter().sum()
    }

    /// Lumped `L²(u)` pairing `Σ s_i a_i b_i`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.arc_weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(s, (x, y))| s * x * y)
            .sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    Design,
    Gradient,
    Residual,
}

/// Scalar per interface node; the two endpoints are pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceField {
    pub role: FieldRole,
    pub values: Vec<f64>,
}

impl InterfaceField {
    /// Endpoint entries of `values` are overwritten with zero.
    pub fn new(role: FieldRole, mut values: Vec<f64>) -> Self {
        if let Some(v) = values.first_mut() {
            *v = 0.0;
        }
        if let Some(v) = values.last_mut() {
            *v = 0.0;
        }
        Self { role, values }
    }

    pub fn zeros(role: FieldRole, len: usize) -> Self {
        Self {
            role,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }
}

fn sub(a: Point, b: Point) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Normals, tangents, turning-angle curvature and lumped arc-length weights
/// at the interface nodes.
pub fn compute_geometry(mesh: &TriMesh) -> Result<InterfaceGeometry> {
    polyline_geometry(&mesh.interface_points())
}

/// [`compute_geometry`] for a bare polyline, ordered from bottom to top.
pub fn polyline_geometry(pts: &[Point]) -> Result<InterfaceGeometry> {
    let m = pts.len();
    if m < 2 {
        return Err(Error::TooFewInterfaceNodes(m));
    }
    let mut edge_lengths = Vec::with_capacity(m - 1);
    let mut edge_tangents = Vec::with_capacity(m - 1);
    for (e, w) in pts.windows(2).enumerate() {
        let d = sub(w[1], w[0]);
        let len = d[0].hypot(d[1]);
        if !(len > 0.0) {
            return Err(Error::DegenerateEdge { edge: e });
        }
        edge_lengths.push(len);
        edge_tangents.push([d[0] / len, d[1] / len]);
    }
    // right-hand normal of the upward direction points out of the left side
    let edge_normal = |t: [f64; 2]| [t[1] + 0.0, -t[0] + 0.0];

    let mut normals = Vec::with_capacity(m);
    let mut curvature = vec![0.0; m];
    let mut arc_weights = vec![0.0; m];
    for i in 0..m {
        let n = if i == 0 {
            edge_normal(edge_tangents[0])
        } else if i == m - 1 {
            edge_normal(edge_tangents[m - 2])
        } else {
            let (a, b) = (edge_normal(edge_tangents[i - 1]), edge_normal(edge_tangents[i]));
            let s = [a[0] + b[0], a[1] + b[1]];
            let len = s[0].hypot(s[1]);
            if len < 1e-14 {
                return Err(Error::InvalidInterface(format!("interface folds back at node {i}")));
            }
            [s[0] / len, s[1] / len]
        };
        normals.push(n);
        let left = if i > 0 { edge_lengths[i - 1] } else { 0.0 };
        let right = if i + 1 < m { edge_lengths[i] } else { 0.0 };
        arc_weights[i] = 0.5 * (left + right);
        if i > 0 && i + 1 < m {
            // t_{i-1} - t_i is parallel to n_i with length 2 sin(Δθ/2)
            let (t0, t1) = (edge_tangents[i - 1], edge_tangents[i]);
            let turn = n[0] * (t0[0] - t1[0]) + n[1] * (t0[1] - t1[1]);
            curvature[i] = turn / arc_weights[i];
        }
    }
    let tangents = normals.iter().map(|n| [-n[1] + 0.0, n[0]]).collect();
    Ok(InterfaceGeometry {
        normals,
        tangents,
        curvature,
        arc_weights,
        edge_lengths,
    })
}

/// Nodal density `g = -[[f]] p + μ κ` of the shape derivative
/// `dJ[V] = ∫_u g ⟨V, n⟩ ds`, with `[[f]] = f1 - f2`.
pub fn shape_gradient(
    mesh: &TriMesh,
    geometry: &InterfaceGeometry,
    p: &NodalField,
    f1: f64,
    f2: f64,
    mu: f64,
) -> Result<InterfaceField> {
    p.check(mesh)?;
    let jump = f1 - f2;
    let values = mesh
        .interface_nodes()
        .iter()
        .zip(&geometry.curvature)
        .map(|(&v, &k)| -jump * p.values[v] + mu * k)
        .collect();
    Ok(InterfaceField::new(FieldRole::Gradient, values))
}

/// `Σ s_i g_i ⟨V_i, n_i⟩` for a vector field sampled at the interface nodes.
pub fn gradient_pairing(geometry: &InterfaceGeometry, g: &InterfaceField, v: &[[f64; 2]]) -> f64 {
    (0..geometry.len())
        .map(|i| {
            let n = geometry.normals[i];
            geometry.arc_weights[i] * g.values[i] * (v[i][0] * n[0] + v[i][1] * n[1])
        })
        .sum()
}

/// Volume form of the shape derivative of the Lagrangian (without the
/// perimeter term) for a P1 vector field `V` vanishing on the outer boundary:
///
/// `∫ -∇yᵀ(∇V + ∇Vᵀ)∇p + div V (½(y-ȳ)² + ∇y·∇p - f p) - (y-ȳ) V·∇ȳ dx`
///
/// with `f` constant on each triangle and transported with the mesh, so the
/// interface jump of `f` enters through `div V` integrated per subdomain.
/// The last term accounts for `ȳ` being fixed in space while the mesh moves.
pub fn shape_gradient_domain(
    mesh: &TriMesh,
    y: &NodalField,
    p: &NodalField,
    ybar: &NodalField,
    f1: f64,
    f2: f64,
    deformation: &DeformationField,
) -> Result<f64> {
    y.check(mesh)?;
    p.check(mesh)?;
    ybar.check(mesh)?;
    let v = &deformation.displacement;
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = mesh.p1_gradients(t);
        let f = match mesh.subdomain(t) {
            Subdomain::Left => f1,
            Subdomain::Right => f2,
        };
        let grad = |vals: &[f64]| -> [f64; 2] {
            let mut out = [0.0; 2];
            for k in 0..3 {
                out[0] += vals[tri[k]] * g[k][0];
                out[1] += vals[tri[k]] * g[k][1];
            }
            out
        };
        let gy = grad(&y.values);
        let gp = grad(&p.values);
        let gybar = grad(&ybar.values);
        // jv[a][b] = ∂_b V_a
        let mut jv = [[0.0; 2]; 2];
        for k in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    jv[a][b] += v[tri[k]][a] * g[k][b];
                }
            }
        }
        let div = jv[0][0] + jv[1][1];
        let mut sym_term = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                sym_term += gy[a] * (jv[a][b] + jv[b][a]) * gp[b];
            }
        }
        let d = tri.map(|k| y.values[k] - ybar.values[k]);
        // ∫_T (y-ȳ)²
        let misfit = area / 6.0 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[0] * d[1] + d[1] * d[2] + d[2] * d[0]);
        let p_mean = (p.values[tri[0]] + p.values[tri[1]] + p.values[tri[2]]) / 3.0;
        let vg = tri.map(|k| v[k][0] * gybar[0] + v[k][1] * gybar[1]);
        let mut transport = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let w = if a == b { area / 6.0 } else { area / 12.0 };
                transport += d[a] * vg[b] * w;
            }
        }
        total += -area * sym_term
            + div * (0.5 * misfit + area * (gy[0] * gp[0] + gy[1] * gp[1]) - f * area * p_mean)
            - transport;
    }
    Ok(total)
}

/// `J = ½∫(y - ȳ)² + μ · length(u)`.
pub fn objective(
    mesh: &TriMesh,
    y: &NodalField,
    ybar: &NodalField,
    geometry: &InterfaceGeometry,
    mu: f64,
) -> Result<f64> {
    Ok(objective_misfit(mesh, y, ybar)? + mu * geometry.arc_weights.iter().sum::<f64>())
}

/// Lumped weak form of `-∂²w/∂τ²` with pinned ends:
/// `(L w)_i = [(w_i - w_{i-1}) / |e_{i-1}| + (w_i - w_{i+1}) / |e_i|] / s_i`.
pub fn tangential_laplacian_apply(geometry: &InterfaceGeometry, w: &InterfaceField) -> Result<InterfaceField> {
    let m = geometry.len();
    if m < 3 {
        return Err(Error::TooFewInterfaceNodes(m));
    }
    let mut out = vec![0.0; m];
    let e = &geometry.edge_lengths;
    let wv = &w.values;
    for i in 1..m - 1 {
        out[i] = ((wv[i] - wv[i - 1]) / e[i - 1] + (wv[i] - wv[i + 1]) / e[i]) / geometry.arc_weights[i];
    }
    Ok(InterfaceField::new(w.role, out))
}

/// Result of a retraction: the new mesh and the step length actually used.
#[derive(Debug, Clone)]
pub struct Retraction {
    pub mesh: TriMesh,
    pub step: f64,
    pub halvings: usize,
}

pub const MAX_HALVINGS: usize = 10;

/// Moves interface node `i` by `step · w_i · n_i` and extends the motion
/// into the volume by linear elasticity. Invalid meshes trigger up to
/// [`MAX_HALVINGS`] step halvings.
pub fn retract(mesh: &TriMesh, w: &InterfaceField, geometry: &InterfaceGeometry, step: f64) -> Result<Retraction> {
    let mut step = step;
    let mut last = String::new();
    for halvings in 0..=MAX_HALVINGS {
        match retract_once(mesh, w, geometry, step) {
            Ok(mesh) => return Ok(Retraction { mesh, step, halvings }),
            Err(e @ (Error::InvertedElement { .. } | Error::InvalidInterface(_))) => {
                last = e.to_string();
                step *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RetractionFailed {
        halvings: MAX_HALVINGS,
        last,
    })
}

/// Single retraction attempt without step control.
pub fn retract_once(mesh: &TriMesh, w: &InterfaceField, geometry: &InterfaceGeometry, step: f64) -> Result<TriMesh> {
    let disp = interface_displacement(geometry, w, step);
    let d = solve_elastic_deformation(mesh, &disp)?;
    apply_deformation(mesh, &d)
}

pub fn interface_displacement(geometry: &InterfaceGeometry, w: &InterfaceField, step: f64) -> Vec<[f64; 2]> {
    let m = geometry.len();
    (0..m)
        .map(|i| {
            if i == 0 || i + 1 == m {
                [0.0; 2]
            } else {
                let n = geometry.normals[i];
                [step * w.values[i] * n[0], step * w.values[i] * n[1]]
            }
        })
        .collect()
}

/// Distance to the straight solution line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    /// `false` when the interface is not a graph over `y` and the value
    /// comes from the segment-wise `|dy|` approximation.
    pub exact: bool,
}

/// `∫₀¹ |x_u(y) - ½| dy`, exact for the piecewise-linear interface.
pub fn dist_to_solution(mesh: &TriMesh) -> Distance {
    polyline_dist(&mesh.interface_points())
}

pub fn polyline_dist(pts: &[Point]) -> Distance {
    let exact = pts.windows(2).all(|w| w[1][1] > w[0][1]);
    let value = pts
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0][0] - 0.5, w[1][0] - 0.5);
            let dy = (w[1][1] - w[0][1]).abs();
            if a * b >= 0.0 {
                0.5 * (a.abs() + b.abs()) * dy
            } else {
                0.5 * (a * a + b * b) / (a.abs() + b.abs()) * dy
            }
        })
        .sum();
    Distance { value, exact }
}

/// Strict variant: errors when the interface is not a graph over `y`.
pub fn dist_to_solution_strict(mesh: &TriMesh) -> Result<f64> {
    let d = dist_to_solution(mesh);
    if d.exact {
        Ok(d.value)
    } else {
        Err(Error::NotAGraph("interface y-coordinates are not increasing".into()))
    }
}

/// Natural cubic interpolating spline through the points
/// (0.5,0), (0.4,0.3), (0.6,0.7), (0.5,1) with uniform parameters 0..3.
#[derive(Debug, Clone)]
pub struct InitialSpline {
    points: [Point; 4],
    second: [[f64; 2]; 4],
}

impl Default for InitialSpline {
    fn default() -> Self {
        Self::new([[0.5, 0.0], [0.4, 0.3], [0.6, 0.7], [0.5, 1.0]])
    }
}

impl InitialSpline {
    pub fn new(points: [Point; 4]) -> Self {
        // natural ends: M0 = M3 = 0; 4 M1 + M2 = r1, M1 + 4 M2 = r2
        let mut second = [[0.0; 2]; 4];
        for c in 0..2 {
            let r1 = 6.0 * (points[2][c] - 2.0 * points[1][c] + points[0][c]);
            let r2 = 6.0 * (points[3][c] - 2.0 * points[2][c] + points[1][c]);
            second[1][c] = (4.0 * r1 - r2) / 15.0;
            second[2][c] = (4.0 * r2 - r1) / 15.0;
        }
        Self { points, second }
    }

    /// Point at parameter `t ∈ [0, 3]`.
    pub fn eval(&self, t: f64) -> Point {
        let t = t.clamp(0.0, 3.0);
        let i = (t.floor() as usize).min(2);
        let u = t - i as f64;
        let v = 1.0 - u;
        let mut out = [0.0; 2];
        for c in 0..2 {
            out[c] = v * self.points[i][c]
                + u * self.points[i + 1][c]
                + ((v * v * v - v) * self.second[i][c] + (u * u * u - u) * self.second[i + 1][c]) / 6.0;
        }
        out
    }

    /// Point on the curve with the given height, by bisection on the
    /// monotone `y(t)`.
    pub fn at_height(&self, y: f64) -> Point {
        if y <= 0.0 {
            return self.points[0];
        }
        if y >= 1.0 {
            return self.points[3];
        }
        let (mut lo, mut hi) = (0.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid)[1] < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        let p = self.eval(0.5 * (lo + hi));
        [p[0], y]
    }
}

/// `m` samples of the initial spline at uniformly spaced heights; the
/// endpoints are exactly (0.5,0) and (0.5,1).
pub fn spline_initial_interface(m: usize) -> Vec<Point> {
    let spline = InitialSpline::default();
    let mut pts: Vec<Point> = (0..m)
        .map(|j| spline.at_height(j as f64 / (m - 1) as f64))
        .collect();
    pts[0] = [0.5, 0.0];
    pts[m - 1] = [0.5, 1.0];
    pts
}

/// Deforms a mesh so that its interface nodes land on `targets`, with
/// the volume following by linear elasticity.
pub fn deform_interface_to(mesh: &TriMesh, targets: &[Point]) -> Result<TriMesh> {
    let disp: Vec<[f64; 2]> = mesh
        .interface_points()
        .iter()
        .zip(targets)
        .map(|(p, q)| sub(*q, *p))
        .collect();
    let d = solve_elastic_deformation(mesh, &disp)?;
    apply_deformation(mesh, &d)
}

/// Straight template on `n` cells per side refined `level - 1` times and
/// deformed onto the initial spline.
pub fn initial_mesh(n: usize, level: usize) -> Result<TriMesh> {
    let mut mesh = build_template(n)?;
    for _ in 1..level {
        mesh = crate::mesh::refine_uniform(&mesh)?;
    }
    let m = mesh.interface_nodes().len();
    let ys: Vec<f64> = mesh.interface_points().iter().map(|p| p[1]).collect();
    let spline = InitialSpline::default();
    let targets: Vec<Point> = ys.iter().map(|&y| spline.at_height(y)).collect();
    debug_assert_eq!(targets.len(), m);
    deform_interface_to(&mesh, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{generate_data, DataSet, ExperimentConfig};
    use crate::fem::solve_adjoint;
    use crate::fem::solve_state;
    use std::f64::consts::PI;

    fn straight(m: usize) -> Vec<Point> {
        (0..m).map(|i| [0.5, i as f64 / (m - 1) as f64]).collect()
    }

    /// Arc of the circle through (0.5,0) and (0.5,1) centred at (0.5-c, 0.5),
    /// sampled uniformly in angle.
    fn arc(m: usize, c: f64) -> (Vec<Point>, f64) {
        let r = (c * c + 0.25_f64).sqrt();
        let phi = (0.5 / r).asin();
        let pts = (0..m)
            .map(|i| {
                let a = -phi + 2.0 * phi * i as f64 / (m - 1) as f64;
                [0.5 - c + r * a.cos(), 0.5 + r * a.sin()]
            })
            .collect();
        (pts, r)
    }

    #[test]
    fn straight_line_geometry() {
        let g = polyline_geometry(&straight(11)).unwrap();
        assert!(g.curvature.iter().all(|&k| k == 0.0));
        assert!((g.arc_weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for (n, t) in g.normals.iter().zip(&g.tangents) {
            assert!((n[0] - 1.0).abs() < 1e-15 && n[1].abs() < 1e-15);
            assert!((n[0] * t[0] + n[1] * t[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn arc_weights_sum_to_length() {
        let (pts, _) = arc(17, 0.3);
        let g = polyline_geometry(&pts).unwrap();
        assert!((g.arc_weights.iter().sum::<f64>() - g.length()).abs() < 1e-14);
    }

    #[test]
    fn circle_curvature_converges() {
        // the arc bulges into the right subdomain: n points away from the centre and κ = 1/R
        let mut prev = f64::INFINITY;
        for m in [9, 17, 33, 65] {
            let (mut pts, r) = arc(m, 0.5);
            // perturb the spacing so the estimate is not trivially exact
            for (i, p) in pts.iter_mut().enumerate().skip(1).take(m - 2) {
                let a = ((p[1] - 0.5) / r).asin() + 0.2 * (i as f64 * 1.7).sin() / m as f64;
                *p = [0.0 + r * a.cos(), 0.5 + r * a.sin()];
            }
            let g = polyline_geometry(&pts).unwrap();
            let err = g.curvature[1..m - 1]
                .iter()
                .map(|k| (k - 1.0 / r).abs())
                .fold(0.0, f64::max);
            assert!(err < prev, "m={m} err={err}");
            prev = err;
        }
        assert!(prev < 1e-3, "{prev}");
    }

    #[test]
    fn unperturbed_arc_has_exact_curvature() {
        let (pts, r) = arc(21, -0.2);
        let g = polyline_geometry(&pts).unwrap();
        for k in &g.curvature[1..20] {
            assert!((k - 1.0 / r).abs() < 1e-12);
        }
    }

    #[test]
    fn perimeter_derivative_is_exact() {
        let (pts, _) = arc(13, 0.4);
        let g = polyline_geometry(&pts).unwrap();
        let w: Vec<f64> = (0..13).map(|i| if i == 0 || i == 12 { 0.0 } else { (i as f64).cos() }).collect();
        let len = |eps: f64| {
            let moved: Vec<Point> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| [p[0] + eps * w[i] * g.normals[i][0], p[1] + eps * w[i] * g.normals[i][1]])
                .collect();
            polyline_geometry(&moved).unwrap().length()
        };
        let eps = 1e-6;
        let fd = (len(eps) - len(-eps)) / (2.0 * eps);
        let analytic: f64 = (0..13).map(|i| g.arc_weights[i] * g.curvature[i] * w[i]).sum();
        assert!((fd - analytic).abs() < 1e-8, "{fd} vs {analytic}");
    }

    #[test]
    fn zero_length_edge_is_rejected() {
        let pts = vec![[0.5, 0.0], [0.5, 0.5], [0.5, 0.5], [0.5, 1.0]];
        assert!(matches!(polyline_geometry(&pts), Err(Error::DegenerateEdge { edge: 1 })));
    }

    #[test]
    fn tangential_laplacian_of_sine() {
        let mut prev = f64::INFINITY;
        for m in [17, 33, 65] {
            let pts = straight(m);
            let g = polyline_geometry(&pts).unwrap();
            let w = InterfaceField::new(FieldRole::Design, pts.iter().map(|p| (PI * p[1]).sin()).collect());
            let lw = tangential_laplacian_apply(&g, &w).unwrap();
            let err = (1..m - 1)
                .map(|i| (lw.values[i] - PI * PI * w.values[i]).abs() / (PI * PI))
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn tangential_laplacian_is_symmetric() {
        let (pts, _) = arc(15, 0.25);
        let g = polyline_geometry(&pts).unwrap();
        let a = InterfaceField::new(FieldRole::Design, (0..15).map(|i| (i as f64 * 0.7).sin()).collect());
        let b = InterfaceField::new(FieldRole::Design, (0..15).map(|i| (i as f64 * 0.3).cos()).collect());
        let la = tangential_laplacian_apply(&g, &a).unwrap();
        let lb = tangential_laplacian_apply(&g, &b).unwrap();
        assert!((g.inner(&la.values, &b.values) - g.inner(&lb.values, &a.values)).abs() < 1e-10);
        assert!(matches!(
            tangential_laplacian_apply(&polyline_geometry(&straight(2)).unwrap(), &InterfaceField::zeros(FieldRole::Design, 2)),
            Err(Error::TooFewInterfaceNodes(2))
        ));
    }

    #[test]
    fn dist_closed_forms() {
        assert_eq!(polyline_dist(&straight(9)).value, 0.0);
        let pts: Vec<Point> = (0..2001)
            .map(|i| {
                let y = i as f64 / 2000.0;
                [0.5 + 0.1 * y * (1.0 - y), y]
            })
            .collect();
        assert!((polyline_dist(&pts).value - 0.1 / 6.0).abs() < 1e-8);
        // a segment crossing the line: ∫|x-½| over two triangles
        let d = polyline_dist(&[[0.5, 0.0], [0.4, 0.5], [0.7, 0.75], [0.5, 1.0]]);
        let crossing = 0.5 * (0.01 + 0.04) / 0.3 * 0.25;
        assert!((d.value - (0.025 + crossing + 0.025)).abs() < 1e-15);
        assert!(d.exact);
    }

    #[test]
    fn dist_flags_non_graph() {
        let d = polyline_dist(&[[0.5, 0.0], [0.4, 0.6], [0.45, 0.4], [0.5, 1.0]]);
        assert!(!d.exact && d.value > 0.0);
    }

    #[test]
    fn spline_start() {
        let s = InitialSpline::default();
        assert_eq!(s.eval(0.0), [0.5, 0.0]);
        assert_eq!(s.eval(3.0), [0.5, 1.0]);
        assert!((s.eval(1.5)[0] - 0.5).abs() < 1e-15);
        assert!((s.at_height(0.5)[0] - 0.5).abs() < 1e-12);
        let pts = spline_initial_interface(4001);
        assert_eq!(pts[0], [0.5, 0.0]);
        assert_eq!(pts[4000], [0.5, 1.0]);
        let d = polyline_dist(&pts).value;
        assert!((d - 0.0706).abs() < 0.05 * 0.0706, "{d}");
    }

    #[test]
    fn initial_mesh_lands_on_spline() {
        let mesh = initial_mesh(8, 1).unwrap();
        let s = InitialSpline::default();
        for p in mesh.interface_points() {
            assert!((s.at_height(p[1])[0] - p[0]).abs() < 1e-9);
        }
        assert!(mesh.min_area() > 0.0);
    }

    fn smooth_field(mesh: &TriMesh, coeffs: &[f64]) -> InterfaceField {
        let values = mesh
            .interface_points()
            .iter()
            .map(|p| coeffs.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * p[1]).sin()).sum())
            .collect();
        InterfaceField::new(FieldRole::Design, values)
    }

    #[test]
    fn retract_identity_and_round_trip() {
        let mesh = initial_mesh(8, 1).unwrap();
        let g = compute_geometry(&mesh).unwrap();
        let w = smooth_field(&mesh, &[0.01, -0.005]);
        let same = retract(&mesh, &w, &g, 0.0).unwrap();
        assert_eq!(same.mesh.vertices(), mesh.vertices());
        let zero = InterfaceField::zeros(FieldRole::Design, w.len());
        assert_eq!(retract(&mesh, &zero, &g, 1.0).unwrap().mesh.vertices(), mesh.vertices());

        let there = retract(&mesh, &w, &g, 1.0).unwrap().mesh;
        let g2 = compute_geometry(&there).unwrap();
        let back = retract(&there, &w, &g2, -1.0).unwrap().mesh;
        for (a, b) in back.interface_points().iter().zip(mesh.interface_points()) {
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-3);
        }
    }

    #[test]
    fn retract_halves_oversized_steps() {
        let mesh = build_template(8).unwrap();
        let g = compute_geometry(&mesh).unwrap();
        let w = smooth_field(&mesh, &[1.0]);
        let r = retract(&mesh, &w, &g, 1.0).unwrap();
        assert!(r.halvings > 0 && r.step < 1.0);
        assert!(r.mesh.min_area() > 0.0);
    }

    #[test]
    fn tangential_fields_pair_to_zero() {
        let mesh = initial_mesh(8, 1).unwrap();
        let geom = compute_geometry(&mesh).unwrap();
        let g = InterfaceField::new(FieldRole::Gradient, (0..geom.len()).map(|i| 1.0 + i as f64).collect());
        assert_eq!(gradient_pairing(&geom, &g, &geom.tangents), 0.0);
    }

    struct Setup {
        mesh: TriMesh,
        data: DataSet,
        ybar: NodalField,
        cfg: ExperimentConfig,
    }

    fn setup(n: usize) -> Setup {
        let cfg = ExperimentConfig { n, ..Default::default() };
        let data = generate_data(&cfg).unwrap();
        let mesh = initial_mesh(n, 1).unwrap();
        let ybar = data.sample_on(&mesh).unwrap();
        Setup { mesh, data, ybar, cfg }
    }

    fn j_of(s: &Setup, mesh: &TriMesh) -> f64 {
        let ybar = s.data.sample_on(mesh).unwrap();
        let y = solve_state(mesh, s.cfg.f1, s.cfg.f2).unwrap();
        let geom = compute_geometry(mesh).unwrap();
        objective(mesh, &y, &ybar, &geom, s.cfg.mu).unwrap()
    }

    fn gradient_fd_gap(n: usize) -> f64 {
        let s = setup(n);
        let geom = compute_geometry(&s.mesh).unwrap();
        let y = solve_state(&s.mesh, s.cfg.f1, s.cfg.f2).unwrap();
        let p = solve_adjoint(&s.mesh, &y, &s.ybar).unwrap();
        let g = shape_gradient(&s.mesh, &geom, &p, s.cfg.f1, s.cfg.f2, s.cfg.mu).unwrap();
        let mut worst: f64 = 0.0;
        for coeffs in [[0.2, 1.0, 0.1], [0.5, -1.0, 0.3]] {
            let w = smooth_field(&s.mesh, &coeffs);
            let analytic = geom.inner(&g.values, &w.values);
            let eps = 1e-5;
            let jp = j_of(&s, &retract_once(&s.mesh, &w, &geom, eps).unwrap());
            let jm = j_of(&s, &retract_once(&s.mesh, &w, &geom, -eps).unwrap());
            let fd = (jp - jm) / (2.0 * eps);
            worst = worst.max((fd - analytic).abs() / analytic.abs());
        }
        worst
    }

    // The interface form is the exact derivative only in the continuum; on
    // P1 meshes it is off by O(h).
    #[test]
    fn gradient_matches_finite_differences_to_first_order() {
        let coarse = gradient_fd_gap(16);
        let fine = gradient_fd_gap(32);
        assert!(coarse < 5e-2, "{coarse}");
        assert!(fine < 0.6 * coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn domain_form_agrees_with_interface_form() {
        let s = setup(32);
        let geom = compute_geometry(&s.mesh).unwrap();
        let y = solve_state(&s.mesh, s.cfg.f1, s.cfg.f2).unwrap();
        let p = solve_adjoint(&s.mesh, &y, &s.ybar).unwrap();
        let g = shape_gradient(&s.mesh, &geom, &p, s.cfg.f1, s.cfg.f2, 0.0).unwrap();
        let w = smooth_field(&s.mesh, &[1.0, 0.5]);
        let disp = interface_displacement(&geom, &w, 1.0);
        let d = solve_elastic_deformation(&s.mesh, &disp).unwrap();
        let domain = shape_gradient_domain(&s.mesh, &y, &p, &s.ybar, s.cfg.f1, s.cfg.f2, &d).unwrap();
        let boundary = gradient_pairing(&geom, &g, &disp);
        assert!((domain - boundary).abs() <= 5e-2 * boundary.abs(), "{domain} vs {boundary}");
        let zero = DeformationField::zeros(s.mesh.num_vertices());
        assert_eq!(shape_gradient_domain(&s.mesh, &y, &p, &s.ybar, 1.0, 2.0, &zero).unwrap(), 0.0);
    }

    #[test]
    fn solution_configuration_has_zero_gradient() {
        let mesh = build_template(8).unwrap();
        let y = solve_state(&mesh, 1000.0, 1.0).unwrap();
        let p = solve_adjoint(&mesh, &y, &y).unwrap();
        let geom = compute_geometry(&mesh).unwrap();
        let g = shape_gradient(&mesh, &geom, &p, 1000.0, 1.0, 10.0).unwrap();
        assert!(g.max_abs() <= 1e-8);
        assert_eq!(objective(&mesh, &y, &y, &geom, 10.0).unwrap(), 10.0);
    }
}
