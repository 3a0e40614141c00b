//! Bounding volume hierarchy over mesh triangles.
//!
//! Median split on the longest centroid axis, leaves of at most
//! [`MAX_LEAF`] triangles. Closest-hit queries return exactly what a linear
//! scan over all triangles returns: the smallest `t`, ties broken by the
//! lowest face index.

use crate::scene::{TriangleMesh, Vec3};

use super::GeometryError;

pub const MAX_LEAF: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.min[i] && self.max[i] >= o.max[i])
    }

    /// Slab test; returns the entry distance if the box is hit within
    /// `[0, t_max]`.
    #[inline]
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            // NaN (0 * inf) means the origin is on the slab plane of a
            // parallel ray; f64::min/max skip NaN operands.
            let (near, far) = (a.min(b), a.max(b));
            if near.is_nan() {
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
    /// Barycentric weights of vertices 1 and 2.
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    triangles: Vec<[Vec3; 3]>,
}

/// Möller–Trumbore; hits with `t > t_min` only. Zero determinant is a miss.
#[inline]
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3], t_min: f64) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > t_min && t.is_finite()).then_some((t, u, v))
}

#[inline]
fn closer(t: f64, face: u32, best: &Option<Hit>) -> bool {
    match best {
        None => true,
        Some(b) => t < b.t || (t == b.t && face < b.face),
    }
}

/// Linear scan over all triangles; the reference the BVH must agree with.
pub fn brute_force_intersect(mesh_tris: &[[Vec3; 3]], ray: &Ray, t_min: f64) -> Option<Hit> {
    let mut best = None;
    for (i, tri) in mesh_tris.iter().enumerate() {
        if let Some((t, u, v)) = intersect_triangle(ray, tri, t_min) {
            if closer(t, i as u32, &best) {
                best = Some(Hit {
                    t,
                    face: i as u32,
                    u,
                    v,
                });
            }
        }
    }
    best
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Result<Self, GeometryError> {
        if mesh.faces.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let triangles: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / MAX_LEAF + 1);
        build_node(&triangles, &centroids, &mut order, 0, &mut nodes);
        Ok(Self {
            nodes,
            order,
            triangles,
        })
    }

    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.triangles
    }

    pub fn root_is_leaf(&self) -> bool {
        matches!(self.nodes[0].kind, NodeKind::Leaf { .. })
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Closest hit with `t > t_min`.
    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            let limit = best.map_or(f64::INFINITY, |b| b.t);
            // boxes touching `limit` may still hold an equal-t, lower-id hit
            if node.bounds.hit(&ray.origin, &inv, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &face in &self.order[start as usize..(start + count) as usize] {
                        if let Some((t, u, v)) = intersect_triangle(ray, &self.triangles[face as usize], t_min) {
                            if closer(t, face, &best) {
                                best = Some(Hit { t, face, u, v });
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let l = self.nodes[left as usize].bounds.hit(&ray.origin, &inv, limit);
                    let r = self.nodes[right as usize].bounds.hit(&ray.origin, &inv, limit);
                    match (l, r) {
                        (Some(tl), Some(tr)) => {
                            // visit the nearer child first
                            if tl <= tr {
                                stack.push(right);
                                stack.push(left);
                            } else {
                                stack.push(left);
                                stack.push(right);
                            }
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }

    /// Any hit with `t_min < t < t_max`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if node.bounds.hit(&ray.origin, &inv, t_max).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &face in &self.order[start as usize..(start + count) as usize] {
                        if let Some((t, _, _)) = intersect_triangle(ray, &self.triangles[face as usize], t_min) {
                            if t < t_max {
                                return true;
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        false
    }

    /// Checks the structural invariants: every triangle in exactly one leaf,
    /// leaf size bound, parents containing children and their triangles.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = vec![0usize; self.triangles.len()];
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if count as usize > MAX_LEAF || count == 0 {
                        return Err(format!("leaf {n} holds {count} triangles"));
                    }
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        seen[f as usize] += 1;
                        let mut b = Aabb::empty();
                        for p in &self.triangles[f as usize] {
                            b.grow(p);
                        }
                        if !node.bounds.contains(&b) {
                            return Err(format!("leaf {n} does not contain triangle {f}"));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains(&self.nodes[c as usize].bounds) {
                            return Err(format!("node {n} does not contain child {c}"));
                        }
                        stack.push(c);
                    }
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(f) => Err(format!("triangle {f} appears in {} leaves", seen[f])),
            None => Ok(()),
        }
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in order.iter() {
        for p in &tris[f as usize] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[f as usize]);
    }
    // Pad so that rays grazing an axis-aligned triangle still enter the box;
    // padding can only add candidates, never change the closest hit.
    let pad = 1e-9 * (bounds.max - bounds.min).norm().max(1.0);
    bounds.min -= Vec3::repeat(pad);
    bounds.max += Vec3::repeat(pad);

    let id = nodes.len() as u32;
    if order.len() <= MAX_LEAF {
        nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                start: offset as u32,
                count: order.len() as u32,
            },
        });
        return id;
    }
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf { start: 0, count: 0 },
    });
    let extent = cbounds.max - cbounds.min;
    let axis = extent.imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(tris, centroids, lo, offset, nodes);
    let right = build_node(tris, centroids, hi, offset + mid, nodes);
    nodes[id as usize].kind = NodeKind::Inner { left, right };
    id
}
