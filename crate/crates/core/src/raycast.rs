//! Ray/triangle intersection and the two casters built on it: an exhaustive
//! scan over every triangle and a bounding volume hierarchy.
//!
//! Both casters report the same hit parameter for every ray because they share
//! [`intersect_triangle`] and take the extremum over the same candidate set;
//! the hierarchy only skips triangles whose boxes cannot improve the result.

use alloc::vec::Vec;

use crate::geometry::{Aabb, Vec3};
use crate::mesh::TriangleMesh;

/// Minimum |det| for a Möller–Trumbore hit; smaller values are treated as a
/// ray parallel to the triangle plane.
pub const DET_EPSILON: f64 = 1e-9;
/// Barycentric slack so rays through a shared edge hit at least one neighbour.
const BARY_EPSILON: f64 = 1e-10;
/// Node boxes are padded to cover the barycentric slack.
const BOX_PAD: f64 = 1e-9;
pub const MAX_LEAF_TRIANGLES: usize = 8;

/// Which intersection along a ray is reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HitMode {
    /// Largest ray parameter: the outermost surface.
    #[default]
    Farthest,
    /// Smallest non-negative ray parameter.
    Nearest,
}

impl HitMode {
    fn better(self, candidate: f64, best: Option<f64>) -> bool {
        match (self, best) {
            (_, None) => true,
            (HitMode::Farthest, Some(b)) => candidate > b,
            (HitMode::Nearest, Some(b)) => candidate < b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction }
    }

    pub fn from_center(direction: Vec3) -> Self {
        Ray::new(Vec3::ZERO, direction)
    }
}

/// Triangle with its two edges precomputed.
#[derive(Clone, Copy, Debug)]
pub struct PreparedTriangle {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl PreparedTriangle {
    /// `None` for zero-area triangles, which can never be hit.
    pub fn new([a, b, c]: [Vec3; 3]) -> Option<Self> {
        let e1 = b - a;
        let e2 = c - a;
        let area2 = e1.cross(e2).norm();
        (area2 > 0.0 && area2.is_finite()).then_some(PreparedTriangle { v0: a, e1, e2 })
    }

    fn bounds(&self) -> Aabb {
        Aabb::from_points([self.v0, self.v0 + self.e1, self.v0 + self.e2])
    }

    fn centroid(&self) -> Vec3 {
        self.v0 + (self.e1 + self.e2).scale(1.0 / 3.0)
    }
}

/// Möller–Trumbore. Returns the ray parameter `t >= 0` of the hit, if any.
pub fn intersect_triangle(tri: &PreparedTriangle, ray: &Ray) -> Option<f64> {
    let p = ray.direction.cross(tri.e2);
    let det = tri.e1.dot(p);
    if det.abs() < DET_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri.v0;
    let u = s.dot(p) * inv;
    if !(-BARY_EPSILON..=1.0 + BARY_EPSILON).contains(&u) {
        return None;
    }
    let q = s.cross(tri.e1);
    let v = ray.direction.dot(q) * inv;
    if v < -BARY_EPSILON || u + v > 1.0 + BARY_EPSILON {
        return None;
    }
    let t = tri.e2.dot(q) * inv;
    (t >= 0.0).then_some(t)
}

fn prepare(mesh: &TriangleMesh) -> Vec<PreparedTriangle> {
    (0..mesh.faces().len()).filter_map(|f| PreparedTriangle::new(mesh.triangle(f))).collect()
}

pub trait RayCaster {
    /// Parameter of the selected hit, or `None` when the ray misses.
    fn cast(&self, ray: &Ray) -> Option<f64>;
}

/// Tests every triangle. Slow, obviously correct.
#[derive(Clone, Debug)]
pub struct BruteForceCaster {
    triangles: Vec<PreparedTriangle>,
    mode: HitMode,
}

impl BruteForceCaster {
    pub fn new(mesh: &TriangleMesh, mode: HitMode) -> Self {
        BruteForceCaster { triangles: prepare(mesh), mode }
    }
}

impl RayCaster for BruteForceCaster {
    fn cast(&self, ray: &Ray) -> Option<f64> {
        let mut best = None;
        for tri in &self.triangles {
            if let Some(t) = intersect_triangle(tri, ray) {
                if self.mode.better(t, best) {
                    best = Some(t);
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: first triangle. Interior: index of the right child (left is `self + 1`).
    index: u32,
    /// Triangle count for leaves, zero for interior nodes.
    count: u32,
}

/// Median-split bounding volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    triangles: Vec<PreparedTriangle>,
    mode: HitMode,
}

impl Bvh {
    pub fn new(mesh: &TriangleMesh, mode: HitMode) -> Self {
        let mut triangles = prepare(mesh);
        let mut nodes = Vec::with_capacity(2 * triangles.len() / MAX_LEAF_TRIANGLES + 1);
        if !triangles.is_empty() {
            let n = triangles.len();
            build(&mut nodes, &mut triangles, 0, n);
        }
        Bvh { nodes, triangles, mode }
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Largest leaf, for checking the split policy.
    pub fn max_leaf_size(&self) -> usize {
        self.nodes.iter().map(|n| n.count as usize).max().unwrap_or(0)
    }
}

fn build(nodes: &mut Vec<BvhNode>, tris: &mut [PreparedTriangle], start: usize, end: usize) -> usize {
    let slice = &mut tris[start..end];
    let bounds = slice.iter().fold(Aabb::EMPTY, |b, t| b.union(t.bounds()));
    let pad = Vec3::new(BOX_PAD, BOX_PAD, BOX_PAD);
    let bounds = Aabb { min: bounds.min - pad, max: bounds.max + pad };
    let id = nodes.len();
    if slice.len() <= MAX_LEAF_TRIANGLES {
        nodes.push(BvhNode { bounds, index: start as u32, count: slice.len() as u32 });
        return id;
    }
    let axis = Aabb::from_points(slice.iter().map(|t| t.centroid())).longest_axis();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.centroid()[axis].total_cmp(&b.centroid()[axis]));
    nodes.push(BvhNode { bounds, index: 0, count: 0 });
    build(nodes, tris, start, start + mid);
    let right = build(nodes, tris, start + mid, end);
    nodes[id].index = right as u32;
    id
}

impl RayCaster for Bvh {
    fn cast(&self, ray: &Ray) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let d = ray.direction;
        let inv_dir = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<f64> = None;
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let id = stack[top];
            let node = &self.nodes[id as usize];
            let Some((t_enter, t_exit)) = node.bounds.intersect(ray.origin, inv_dir) else {
                continue;
            };
            if t_exit < 0.0 {
                continue;
            }
            let prune = match (self.mode, best) {
                (HitMode::Farthest, Some(b)) => t_exit < b,
                (HitMode::Nearest, Some(b)) => t_enter > b,
                _ => false,
            };
            if prune {
                continue;
            }
            if node.count > 0 {
                let start = node.index as usize;
                for tri in &self.triangles[start..start + node.count as usize] {
                    if let Some(t) = intersect_triangle(tri, ray) {
                        if self.mode.better(t, best) {
                            best = Some(t);
                        }
                    }
                }
            } else {
                stack[top] = node.index;
                stack[top + 1] = id + 1;
                top += 2;
            }
        }
        best
    }
}

/// Distance from the origin to the outermost surface along `direction`, or 0
/// when the ray misses the mesh.
pub fn ray_cast(mesh: &TriangleMesh, direction: Vec3) -> f64 {
    Bvh::new(mesh, HitMode::Farthest).cast(&Ray::from_center(direction)).unwrap_or(0.0)
}
