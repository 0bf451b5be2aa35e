//! Conforming triangulations of the unit square split by an interface
//! polyline running from (0.5, 0) to (0.5, 1).
//!
//! Subdomain 1 lies left of the directed interface, subdomain 2 right of it.
//! Meshes are immutable; every operation returns a new mesh with a fresh
//! identity tag.

mod elastic;
mod locate;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

pub use elastic::{solve_elastic_deformation, solve_elastic_deformation_with, ElasticParams};
pub use locate::{locate_point, Location, PointLocator};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const INTERFACE_START: Point = [0.5, 0.0];
pub const INTERFACE_END: Point = [0.5, 1.0];

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subdomain {
    Left = 1,
    Right = 2,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    id: u64,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    subdomain: Vec<Subdomain>,
    outer_boundary_nodes: Vec<usize>,
    on_outer_boundary: Vec<bool>,
    interface_nodes: Vec<usize>,
}

/// Per-vertex displacement of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub displacement: Vec<[f64; 2]>,
}

impl DeformationField {
    pub fn zeros(n: usize) -> Self {
        Self {
            displacement: vec![[0.0; 2]; n],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.displacement
            .iter()
            .map(|d| d[0].hypot(d[1]))
            .fold(0.0, f64::max)
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Structured template on `n x n` square cells, each split along a diagonal
/// whose direction alternates in a checkerboard, with the straight interface
/// on the grid line `x = 0.5`.
pub fn build_template(n: usize) -> Result<TriMesh> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidSubdivision(n));
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // i/n is exact at i = n/2 and i = n
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    let mut subdomain = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            let label = if 2 * i < n {
                Subdomain::Left
            } else {
                Subdomain::Right
            };
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
            subdomain.push(label);
            subdomain.push(label);
        }
    }
    let interface_nodes: Vec<usize> = (0..=n).map(|j| idx(n / 2, j)).collect();
    TriMesh::from_parts(vertices, triangles, subdomain, interface_nodes)
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints.
pub fn refine_uniform(mesh: &TriMesh) -> Result<TriMesh> {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    let mut subdomain = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        subdomain.extend_from_slice(&[mesh.subdomain[t]; 4]);
    }
    let mut interface_nodes = Vec::with_capacity(2 * mesh.interface_nodes.len() - 1);
    for w in mesh.interface_nodes.windows(2) {
        interface_nodes.push(w[0]);
        interface_nodes.push(midpoint[&(w[0].min(w[1]), w[0].max(w[1]))]);
    }
    interface_nodes.push(*mesh.interface_nodes.last().unwrap());
    TriMesh::from_parts(vertices, triangles, subdomain, interface_nodes)
}

/// Moves every vertex by the given displacement. Connectivity, labels and
/// node orderings are kept; the result is re-validated.
pub fn apply_deformation(mesh: &TriMesh, d: &DeformationField) -> Result<TriMesh> {
    if d.displacement.len() != mesh.vertices.len() {
        return Err(Error::FieldLength {
            expected: mesh.vertices.len(),
            found: d.displacement.len(),
        });
    }
    if d.displacement.iter().all(|v| v[0] == 0.0 && v[1] == 0.0) {
        return Ok(mesh.clone());
    }
    let vertices = mesh
        .vertices
        .iter()
        .zip(&d.displacement)
        .map(|(p, v)| [p[0] + v[0], p[1] + v[1]])
        .collect();
    let out = TriMesh {
        id: fresh_id(),
        vertices,
        ..mesh.clone()
    };
    out.validate()?;
    Ok(out)
}

impl TriMesh {
    fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        subdomain: Vec<Subdomain>,
        interface_nodes: Vec<usize>,
    ) -> Result<Self> {
        // boundary edges have exactly one incident triangle
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut on_outer_boundary = vec![false; vertices.len()];
        for (&(a, b), &c) in &edge_count {
            if c == 1 {
                on_outer_boundary[a] = true;
                on_outer_boundary[b] = true;
            }
        }
        let outer_boundary_nodes = (0..vertices.len()).filter(|&i| on_outer_boundary[i]).collect();
        let mesh = Self {
            id: fresh_id(),
            vertices,
            triangles,
            subdomain,
            outer_boundary_nodes,
            on_outer_boundary,
            interface_nodes,
        };
        mesh.validate()?;
        mesh.check_interface_labels()?;
        Ok(mesh)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn subdomain(&self, t: usize) -> Subdomain {
        self.subdomain[t]
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomain
    }

    pub fn outer_boundary_nodes(&self) -> &[usize] {
        &self.outer_boundary_nodes
    }

    pub fn is_outer_boundary(&self, v: usize) -> bool {
        self.on_outer_boundary[v]
    }

    pub fn outer_boundary_mask(&self) -> &[bool] {
        &self.on_outer_boundary
    }

    pub fn interface_nodes(&self) -> &[usize] {
        &self.interface_nodes
    }

    pub fn interface_edges(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.interface_nodes.windows(2).map(|w| [w[0], w[1]])
    }

    pub fn interface_points(&self) -> Vec<Point> {
        self.interface_nodes.iter().map(|&i| self.vertices[i]).collect()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn min_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.area(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Area of the subdomain with the given label.
    pub fn subdomain_area(&self, label: Subdomain) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.subdomain[t] == label)
            .map(|t| self.area(t))
            .sum()
    }

    /// Gradients of the three P1 basis functions and the triangle area.
    pub fn p1_gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [p0, p1, p2] = self.triangle_points(t);
        let area = signed_area(p0, p1, p2);
        let s = 0.5 / area;
        (
            [
                [(p1[1] - p2[1]) * s, (p2[0] - p1[0]) * s],
                [(p2[1] - p0[1]) * s, (p0[0] - p2[0]) * s],
                [(p0[1] - p1[1]) * s, (p1[0] - p0[0]) * s],
            ],
            area,
        )
    }

    pub fn interface_length(&self) -> f64 {
        self.interface_edges()
            .map(|[a, b]| {
                let (p, q) = (self.vertices[a], self.vertices[b]);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .sum()
    }

    /// Checks triangle orientation and the interface polyline invariants.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            let area = self.area(t);
            if !(area > 0.0) {
                return Err(Error::InvertedElement { triangle: t, area });
            }
        }
        let pts = self.interface_points();
        if pts.len() < 2 {
            return Err(Error::InvalidInterface("fewer than two interface nodes".into()));
        }
        if pts[0] != INTERFACE_START || *pts.last().unwrap() != INTERFACE_END {
            return Err(Error::InvalidInterface(format!(
                "endpoints moved to {:?} and {:?}",
                pts[0],
                pts.last().unwrap()
            )));
        }
        for (k, p) in pts.iter().enumerate().skip(1).take(pts.len() - 2) {
            if !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0) {
                return Err(Error::InvalidInterface(format!(
                    "interface node {k} at {p:?} left the open square"
                )));
            }
        }
        if let Some((i, j)) = first_self_intersection(&pts) {
            return Err(Error::InvalidInterface(format!(
                "interface edges {i} and {j} intersect"
            )));
        }
        Ok(())
    }

    /// Every interface edge must border one left and one right triangle,
    /// with the left triangle on the left of the directed edge.
    fn check_interface_labels(&self) -> Result<()> {
        let mut owner: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                owner.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        for (e, [a, b]) in self.interface_edges().enumerate() {
            let tris = owner.get(&(a.min(b), a.max(b))).ok_or_else(|| {
                Error::InvalidInterface(format!("interface edge {e} is not a mesh edge"))
            })?;
            if tris.len() != 2 {
                return Err(Error::InvalidInterface(format!(
                    "interface edge {e} has {} incident triangles",
                    tris.len()
                )));
            }
            for &t in tris {
                let third = self.triangles[t].iter().copied().find(|&v| v != a && v != b).unwrap();
                let left = signed_area(self.vertices[a], self.vertices[b], self.vertices[third]) > 0.0;
                let expected = if left {
                    Subdomain::Left
                } else {
                    Subdomain::Right
                };
                if self.subdomain[t] != expected {
                    return Err(Error::InvalidInterface(format!(
                        "triangle {t} on interface edge {e} carries the wrong label"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = signed_area(q1, q2, p1);
    let d2 = signed_area(q1, q2, p2);
    let d3 = signed_area(p1, p2, q1);
    let d4 = signed_area(p1, p2, q2);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

fn first_self_intersection(pts: &[Point]) -> Option<(usize, usize)> {
    let m = pts.len();
    for i in 0..m.saturating_sub(1) {
        let (xmin, xmax) = (pts[i][0].min(pts[i + 1][0]), pts[i][0].max(pts[i + 1][0]));
        let (ymin, ymax) = (pts[i][1].min(pts[i + 1][1]), pts[i][1].max(pts[i + 1][1]));
        for j in i + 2..m - 1 {
            let (a, b) = (pts[j], pts[j + 1]);
            if a[0].max(b[0]) < xmin || a[0].min(b[0]) > xmax || a[1].max(b[1]) < ymin || a[1].min(b[1]) > ymax {
                continue;
            }
            if segments_intersect(pts[i], pts[i + 1], a, b) {
                return Some((i, j));
            }
        }
    }
    None
}
