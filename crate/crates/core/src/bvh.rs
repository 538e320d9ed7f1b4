//! Bounding volume hierarchy over a triangle soup.
//!
//! Built top-down with a binned surface-area heuristic and stored as a flat
//! node array (children always follow their parent, so a reverse sweep
//! refits bounds bottom-up after vertices move). Nearest-hit queries break
//! exact distance ties toward the lower triangle id, which makes the result
//! identical to a brute-force scan over all triangles.

use crate::mesh::Vec3;

const BINS: usize = 16;
const MAX_LEAF: usize = 4;

/// Ray–triangle intersection (Möller–Trumbore, edges inclusive).
///
/// Returns the ray parameter `t` of the hit, if any. The caller applies its
/// own `t` interval.
#[inline]
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// The result of a nearest-hit query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: u32,
}

impl RayHit {
    /// Strict ordering used for nearest-hit selection: smaller `t` wins,
    /// equal `t` resolves to the lower triangle id.
    #[inline]
    pub fn beats(&self, other: &RayHit) -> bool {
        self.t < other.t || (self.t == other.t && self.triangle < other.triangle)
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.lo = self.lo.inf(&other.lo);
        self.hi = self.hi.sup(&other.hi);
    }

    fn area(&self) -> f64 {
        let d = self.hi - self.lo;
        if d.x < 0.0 {
            return 0.0;
        }
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Entry distance of the ray into the box clipped to `[0, t_max]`, or
    /// `None` when it misses.
    #[inline]
    fn entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if inv_dir[a].is_infinite() {
                if origin[a] < self.lo[a] || origin[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            let ta = (self.lo[a] - origin[a]) * inv_dir[a];
            let tb = (self.hi[a] - origin[a]) * inv_dir[a];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
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
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Interior: index of the left child
    /// (the right child is `left + 1` subtree start stored in `count`).
    start: u32,
    /// Leaf: number of triangles. Interior: 0.
    count: u32,
    /// Interior: index of the right child.
    right: u32,
}

/// BVH over a triangle soup addressed by triangle id.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(triangles: &[[Vec3; 3]]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..triangles.len() as u32).collect(),
        };
        if triangles.is_empty() {
            return bvh;
        }
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|p| b.grow(p));
                b
            })
            .collect();
        let n = bvh.order.len();
        bvh.build_node(&centroids, &boxes, 0, n);
        bvh
    }

    fn build_node(&mut self, centroids: &[Vec3], boxes: &[Aabb], start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds.merge(&boxes[i as usize]);
            cbounds.grow(&centroids[i as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            bounds,
            start: start as u32,
            count: (end - start) as u32,
            right: 0,
        });
        let count = end - start;
        if count <= MAX_LEAF {
            return id;
        }

        let Some((axis, split)) = self.best_split(centroids, boxes, &cbounds, start, end) else {
            return id;
        };
        let lo = cbounds.lo[axis];
        let extent = cbounds.hi[axis] - lo;
        let bin_of = |c: &Vec3| (((c[axis] - lo) / extent * BINS as f64) as usize).min(BINS - 1);
        let slice = &mut self.order[start..end];
        // stable partition keeps the build deterministic
        let (mut left, mut right): (Vec<u32>, Vec<u32>) = slice
            .iter()
            .partition(|&&i| bin_of(&centroids[i as usize]) < split);
        let mid = start + left.len();
        if left.is_empty() || right.is_empty() {
            return id;
        }
        left.append(&mut right);
        slice.copy_from_slice(&left);

        let l = self.build_node(centroids, boxes, start, mid);
        let r = self.build_node(centroids, boxes, mid, end);
        debug_assert_eq!(l, id + 1);
        let node = &mut self.nodes[id as usize];
        node.start = l;
        node.count = 0;
        node.right = r;
        id
    }

    fn best_split(
        &self,
        centroids: &[Vec3],
        boxes: &[Aabb],
        cbounds: &Aabb,
        start: usize,
        end: usize,
    ) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for axis in 0..3 {
            let lo = cbounds.lo[axis];
            let extent = cbounds.hi[axis] - lo;
            if !(extent > 0.0) {
                continue;
            }
            let mut bins = [(Aabb::empty(), 0usize); BINS];
            for &i in &self.order[start..end] {
                let c = centroids[i as usize][axis];
                let b = (((c - lo) / extent * BINS as f64) as usize).min(BINS - 1);
                bins[b].0.merge(&boxes[i as usize]);
                bins[b].1 += 1;
            }
            let mut left_area = [0.0; BINS];
            let mut left_count = [0usize; BINS];
            let mut acc = Aabb::empty();
            let mut n = 0;
            for b in 0..BINS - 1 {
                acc.merge(&bins[b].0);
                n += bins[b].1;
                left_area[b] = acc.area();
                left_count[b] = n;
            }
            let mut acc = Aabb::empty();
            let mut n = 0;
            for b in (1..BINS).rev() {
                acc.merge(&bins[b].0);
                n += bins[b].1;
                let nl = left_count[b - 1];
                if nl == 0 || n == 0 {
                    continue;
                }
                let cost = left_area[b - 1] * nl as f64 + acc.area() * n as f64;
                if best.map_or(true, |(c, _, _)| cost < c) {
                    best = Some((cost, axis, b));
                }
            }
        }
        best.map(|(_, axis, split)| (axis, split))
    }

    /// Recompute node bounds after the triangles moved, keeping topology.
    pub fn refit(&mut self, triangles: &[[Vec3; 3]]) {
        for id in (0..self.nodes.len()).rev() {
            let node = self.nodes[id];
            let mut b = Aabb::empty();
            if node.count > 0 {
                for &i in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    triangles[i as usize].iter().for_each(|p| b.grow(p));
                }
            } else {
                b = self.nodes[node.start as usize].bounds;
                b.merge(&self.nodes[node.right as usize].bounds);
            }
            self.nodes[id].bounds = b;
        }
    }

    /// Nearest hit with `0 < t <= t_max`.
    pub fn nearest(&self, triangles: &[[Vec3; 3]], origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<RayHit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let limit = best.map_or(t_max, |h| h.t);
            if node.bounds.entry(origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(t) = intersect_triangle(origin, dir, &triangles[tri as usize]) {
                        let hit = RayHit { t, triangle: tri };
                        if t > 0.0 && t <= t_max && best.map_or(true, |b| hit.beats(&b)) {
                            best = Some(hit);
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.start);
            }
        }
        best
    }

    /// Whether any triangle is hit with `0 < t < t_max`.
    pub fn any_hit(&self, triangles: &[[Vec3; 3]], origin: &Vec3, dir: &Vec3, t_max: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.bounds.entry(origin, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(t) = intersect_triangle(origin, dir, &triangles[tri as usize]) {
                        if t > 0.0 && t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.start);
            }
        }
        false
    }
}

/// Brute-force nearest hit over every triangle; the reference the BVH must
/// agree with.
pub fn nearest_brute_force(triangles: &[[Vec3; 3]], origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (i, tri) in triangles.iter().enumerate() {
        if let Some(t) = intersect_triangle(origin, dir, tri) {
            let hit = RayHit { t, triangle: i as u32 };
            if t > 0.0 && t <= t_max && best.map_or(true, |b| hit.beats(&b)) {
                best = Some(hit);
            }
        }
    }
    best
}
