use super::{Point, TriMesh};
use crate::error::{Error, Result};

const HULL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

/// Bucket grid over triangle bounding boxes for repeated point queries.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    mesh: &'a TriMesh,
    origin: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    start: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in mesh.vertices() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let side = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = Self {
            mesh,
            origin: lo,
            cell,
            dims,
            start: Vec::new(),
            items: Vec::new(),
        };

        let ranges: Vec<[usize; 4]> = (0..mesh.num_triangles())
            .map(|t| {
                let pts = mesh.triangle_points(t);
                let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in pts {
                    for k in 0..2 {
                        a[k] = a[k].min(p[k]);
                        b[k] = b[k].max(p[k]);
                    }
                }
                let (i0, j0) = loc.bucket(a);
                let (i1, j1) = loc.bucket(b);
                [i0, i1, j0, j1]
            })
            .collect();
        let mut counts = vec![0usize; dims[0] * dims[1] + 1];
        for r in &ranges {
            for j in r[2]..=r[3] {
                for i in r[0]..=r[1] {
                    counts[j * dims[0] + i + 1] += 1;
                }
            }
        }
        for k in 0..dims[0] * dims[1] {
            counts[k + 1] += counts[k];
        }
        let mut next = counts.clone();
        let mut items = vec![0usize; counts[dims[0] * dims[1]]];
        // triangles enter each bucket in increasing index order
        for (t, r) in ranges.iter().enumerate() {
            for j in r[2]..=r[3] {
                for i in r[0]..=r[1] {
                    let b = j * dims[0] + i;
                    items[next[b]] = t;
                    next[b] += 1;
                }
            }
        }
        loc.start = counts;
        loc.items = items;
        loc
    }

    fn bucket(&self, p: Point) -> (usize, usize) {
        let f = |k: usize| -> usize {
            let c = ((p[k] - self.origin[k]) / self.cell[k]).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[k] - 1)
            }
        };
        (f(0), f(1))
    }

    /// Containing triangle and barycentric weights. Points on shared edges
    /// resolve to the lowest triangle index.
    pub fn locate(&self, x: Point) -> Result<Location> {
        let (i, j) = self.bucket(x);
        let b = j * self.dims[0] + i;
        for &t in &self.items[self.start[b]..self.start[b + 1]] {
            let pts = self.mesh.triangle_points(t);
            let bary = barycentric(pts, x);
            if bary.iter().all(|&l| l >= -HULL_TOL) {
                let mut w = bary.map(|l| l.clamp(0.0, 1.0));
                let s: f64 = w.iter().sum();
                for l in &mut w {
                    *l /= s;
                }
                return Ok(Location {
                    triangle: t,
                    barycentric: w,
                });
            }
        }
        Err(Error::PointNotFound { x: x[0], y: x[1] })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }
}

fn barycentric(pts: [Point; 3], x: Point) -> [f64; 3] {
    let [a, b, c] = pts;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// One-off point query. Build a [`PointLocator`] for repeated queries.
pub fn locate_point(mesh: &TriMesh, x: Point) -> Result<Location> {
    PointLocator::new(mesh).locate(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_template;

    #[test]
    fn centroid_gives_equal_weights() {
        let m = build_template(4).unwrap();
        let loc = PointLocator::new(&m);
        for t in [0, 5, 17, 31] {
            let [a, b, c] = m.triangle_points(t);
            let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            let l = loc.locate(g).unwrap();
            assert_eq!(l.triangle, t);
            for w in l.barycentric {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_gets_unit_weight_in_lowest_triangle() {
        let m = build_template(2).unwrap();
        let l = locate_point(&m, [0.5, 0.5]).unwrap();
        let lowest = m.triangles().iter().position(|t| t.contains(&4)).unwrap();
        assert_eq!(l.triangle, lowest);
        let k = m.triangles()[lowest].iter().position(|&v| v == 4).unwrap();
        assert!((l.barycentric[k] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_point_is_not_found() {
        let m = build_template(2).unwrap();
        assert!(matches!(
            locate_point(&m, [1.0 + 1e-6, 0.5]),
            Err(Error::PointNotFound { .. })
        ));
    }
}
