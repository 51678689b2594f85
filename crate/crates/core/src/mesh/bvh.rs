//! Bounding-volume hierarchy for exact closest-point queries.
//!
//! Axis-aligned boxes over triangles, median split along the longest axis,
//! leaf size 4. Queries are branch-and-bound on squared distance and return
//! the same (distance, triangle) minimum as a brute-force scan, with ties
//! broken by the lowest triangle index.

use nalgebra::{Point3, Vector3};

use super::{SurfacePoint, TriangleMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    min: Vector3<f64>,
    max: Vector3<f64>,
    // Leaf: `left == u32::MAX`, triangles in `order[start..start + count]`.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

impl Node {
    fn leaf(min: Vector3<f64>, max: Vector3<f64>, start: u32, count: u32) -> Self {
        Node {
            min,
            max,
            left: u32::MAX,
            right: u32::MAX,
            start,
            count,
        }
    }

    fn is_leaf(&self) -> bool {
        self.left == u32::MAX
    }

    fn distance_sq(&self, q: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = q[k];
            if v < self.min[k] {
                d2 += (self.min[k] - v) * (self.min[k] - v);
            } else if v > self.max[k] {
                d2 += (v - self.max[k]) * (v - self.max[k]);
            }
        }
        d2
    }
}

/// Immutable closest-point index over a mesh's triangles.
#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Permutation of triangle indices referenced by leaf ranges.
    order: Vec<u32>,
    /// Corner positions per original triangle index.
    corners: Vec<[Point3<f64>; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let corners: Vec<[Point3<f64>; 3]> = (0..mesh.triangle_count())
            .map(|t| mesh.triangle_vertices(t))
            .collect();
        if corners.is_empty() {
            return Bvh::default();
        }
        let centroids: Vec<Vector3<f64>> = corners
            .iter()
            .map(|[a, b, c]| (a.coords + b.coords + c.coords) / 3.0)
            .collect();
        let mut order: Vec<u32> = (0..corners.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * corners.len());
        let len = order.len();
        build_node(&corners, &centroids, &mut order, 0, len, &mut nodes);
        Bvh {
            nodes,
            order,
            corners,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// Closest surface point to `query`.
    ///
    /// Panics if the index is empty; [`TriangleMesh::closest_point`] guards
    /// this with a validation error.
    pub fn closest_point(&self, query: &Point3<f64>) -> SurfacePoint {
        assert!(!self.is_empty(), "closest_point on an empty mesh");
        let mut best_d2 = f64::INFINITY;
        let mut best_tri = usize::MAX;
        let mut best_point = Point3::origin();
        let mut best_bary = [0.0; 3];

        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.distance_sq(query) > best_d2 {
                continue;
            }
            if node.is_leaf() {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let tri = tri as usize;
                    let [a, b, c] = &self.corners[tri];
                    let (point, bary) = closest_point_on_triangle(query, a, b, c);
                    let d2 = (query - point).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && tri < best_tri) {
                        best_d2 = d2;
                        best_tri = tri;
                        best_point = point;
                        best_bary = bary;
                    }
                }
            } else {
                let (l, r) = (node.left as usize, node.right as usize);
                let dl = self.nodes[l].distance_sq(query);
                let dr = self.nodes[r].distance_sq(query);
                // Push the farther child first so the nearer is explored next.
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }

        SurfacePoint {
            position: best_point,
            triangle: best_tri,
            barycentric: best_bary,
            distance: best_d2.sqrt(),
        }
    }
}

fn build_node(
    corners: &[[Point3<f64>; 3]],
    centroids: &[Vector3<f64>],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for &t in &order[start..start + count] {
        for p in &corners[t as usize] {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        }
    }

    let id = nodes.len() as u32;
    if count <= LEAF_SIZE {
        nodes.push(Node::leaf(min, max, start as u32, count as u32));
        return id;
    }

    let extent = max - min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };

    let mid = count / 2;
    order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    nodes.push(Node::leaf(min, max, 0, 0)); // children patched below
    let left = build_node(corners, centroids, order, start, mid, nodes);
    let right = build_node(corners, centroids, order, start + mid, count - mid, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

/// Closest point on triangle `(a, b, c)` to `p`, with barycentric
/// coordinates of the result. Degenerate triangles are handled as the best
/// of their three edges.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> (Point3<f64>, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let denom = d1 - d3;
        if denom > 0.0 {
            let v = d1 / denom;
            return (a + ab * v, [1.0 - v, v, 0.0]);
        }
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let denom = d2 - d6;
        if denom > 0.0 {
            let w = d2 / denom;
            return (a + ac * w, [1.0 - w, 0.0, w]);
        }
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let denom = (d4 - d3) + (d5 - d6);
        if denom > 0.0 {
            let w = (d4 - d3) / denom;
            return (b + (c - b) * w, [0.0, 1.0 - w, w]);
        }
    }

    let denom = va + vb + vc;
    if denom.abs() < 1e-300 {
        // Zero-area triangle: fall back to the nearest of the three edges.
        return closest_point_degenerate(p, a, b, c);
    }
    let v = vb / denom;
    let w = vc / denom;
    let u = 1.0 - v - w;
    (a + ab * v + ac * w, [u, v, w])
}

fn closest_point_degenerate(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> (Point3<f64>, [f64; 3]) {
    let segments = [
        (*a, *b, 0usize, 1usize),
        (*b, *c, 1, 2),
        (*a, *c, 0, 2),
    ];
    let mut best = (*a, [1.0, 0.0, 0.0]);
    let mut best_d2 = f64::INFINITY;
    for (s, e, si, ei) in segments {
        let dir = e - s;
        let len2 = dir.norm_squared();
        let t = if len2 < 1e-300 {
            0.0
        } else {
            ((p - s).dot(&dir) / len2).clamp(0.0, 1.0)
        };
        let point = s + dir * t;
        let d2 = (p - point).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            let mut bary = [0.0; 3];
            bary[si] = 1.0 - t;
            bary[ei] = t;
            best = (point, bary);
        }
    }
    best
}
