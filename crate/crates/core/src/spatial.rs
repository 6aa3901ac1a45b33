//! Spatial indices over 3D points: a bucketed kd-tree for nearest-neighbor
//! queries and a uniform voxel hash for fixed-radius counts.

use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::geometry::Point3;
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Kind {
    Leaf { start: u32, end: u32 },
    Split { left: u32, right: u32 },
}

/// A node with the tight bounding box of the points beneath it.
#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    kind: Kind,
}

impl Node {
    #[inline]
    fn dist2(&self, q: &[f64; 3]) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = (self.lo[a] - q[a]).max(q[a] - self.hi[a]).max(0.0);
            d += e * e;
        }
        d
    }
}

/// Static 3D kd-tree. Indices returned by queries refer to the input slice.
///
/// Pruning uses each node's tight bounding box rather than its split cell,
/// which keeps queries cheap when they start far from every point.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    index: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut items: Vec<([f64; 3], u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ([p.x, p.y, p.z], i as u32))
            .collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            build(&mut items, 0, &mut nodes);
        }
        Self {
            points: items.iter().map(|i| i.0).collect(),
            index: items.iter().map(|i| i.1).collect(),
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Children of a split, nearer one first, with their box distances.
    #[inline]
    fn order(&self, left: u32, right: u32, q: &[f64; 3]) -> [(usize, f64); 2] {
        let l = (left as usize, self.nodes[left as usize].dist2(q));
        let r = (right as usize, self.nodes[right as usize].dist2(q));
        if l.1 <= r.1 {
            [l, r]
        } else {
            [r, l]
        }
    }

    /// Closest point as `(index, squared distance)`.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, &q, &mut best);
        Some((self.index[best.0] as usize, best.1))
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node].kind {
            Kind::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let d = dist2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && self.index[i] < self.index[best.0]) {
                        *best = (i, d);
                    }
                }
            }
            Kind::Split { left, right } => {
                for (child, d) in self.order(left, right, q) {
                    if d <= best.1 {
                        self.nearest_rec(child, q, best);
                    }
                }
            }
        }
    }

    /// The `k` closest points, sorted by ascending squared distance.
    pub fn knn(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, &[q.x, q.y, q.z], k, &mut heap);
        }
        heap.into_iter()
            .map(|(d, i)| (self.index[i as usize] as usize, d))
            .collect()
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut Vec<(f64, u32)>) {
        match self.nodes[node].kind {
            Kind::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(&self.points[i as usize], q);
                    if heap.len() == k && d >= heap[k - 1].0 {
                        continue;
                    }
                    let pos = heap.partition_point(|e| e.0 <= d);
                    heap.insert(pos, (d, i));
                    heap.truncate(k);
                }
            }
            Kind::Split { left, right } => {
                for (child, d) in self.order(left, right, q) {
                    if heap.len() < k || d <= heap[k - 1].0 {
                        self.knn_rec(child, q, k, heap);
                    }
                }
            }
        }
    }

    /// Number of points within `radius` (inclusive).
    pub fn count_within(&self, q: &Point3, radius: f64) -> usize {
        let mut n = 0;
        if !self.nodes.is_empty() {
            self.radius_rec(0, &[q.x, q.y, q.z], radius * radius, &mut n);
        }
        n
    }

    fn radius_rec(&self, node: usize, q: &[f64; 3], r2: f64, n: &mut usize) {
        let nd = &self.nodes[node];
        if nd.dist2(q) > r2 {
            return;
        }
        match nd.kind {
            Kind::Leaf { start, end } => {
                *n += (start..end)
                    .filter(|&i| dist2(&self.points[i as usize], q) <= r2)
                    .count();
            }
            Kind::Split { left, right } => {
                self.radius_rec(left as usize, q, r2, n);
                self.radius_rec(right as usize, q, r2, n);
            }
        }
    }
}

fn build(items: &mut [([f64; 3], u32)], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in items.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if items.len() <= LEAF_SIZE {
        nodes.push(Node {
            lo,
            hi,
            kind: Kind::Leaf {
                start: offset as u32,
                end: (offset + items.len()) as u32,
            },
        });
        return id;
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[dim].total_cmp(&b.0[dim]).then(a.1.cmp(&b.1)));
    nodes.push(Node {
        lo,
        hi,
        kind: Kind::Leaf { start: 0, end: 0 },
    });
    let (l, r) = items.split_at_mut(mid);
    let left = build(l, offset, nodes);
    let right = build(r, offset + mid, nodes);
    nodes[id as usize].kind = Kind::Split { left, right };
    id
}

/// Points bucketed into cubic cells of a fixed size. Neighbor queries with
/// a radius no larger than the cell size only need the 27 surrounding cells.
#[derive(Debug, Clone)]
pub struct VoxelHash {
    cell: f64,
    points: Vec<[f64; 3]>,
    cells: HashMap<[i64; 3], (u32, u32)>,
}

impl VoxelHash {
    pub fn new(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel size must be positive");
        let mut keyed: Vec<([i64; 3], [f64; 3])> = points
            .iter()
            .map(|p| (voxel_key(p, cell), [p.x, p.y, p.z]))
            .collect();
        keyed.sort_by_key(|k| k.0);
        let mut cells = HashMap::with_capacity(keyed.len() / 4 + 1);
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            start = end;
        }
        Self {
            cell,
            points: keyed.into_iter().map(|k| k.1).collect(),
            cells,
        }
    }

    /// Points within `radius` of `q`, inclusive. `radius` must not exceed the cell size.
    pub fn count_within(&self, q: &Point3, radius: f64) -> usize {
        debug_assert!(radius <= self.cell);
        let r2 = radius * radius;
        let key = voxel_key(q, self.cell);
        let qa = [q.x, q.y, q.z];
        let mut n = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(&(s, e)) = self.cells.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) {
                        n += self.points[s as usize..e as usize]
                            .iter()
                            .filter(|p| dist2(p, &qa) <= r2)
                            .count();
                    }
                }
            }
        }
        n
    }
}

pub fn voxel_key(p: &Point3, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

/// Replaces the points of each occupied voxel by their centroid. Output is
/// ordered by voxel key, so it does not depend on input order.
pub fn voxel_downsample(points: &[Point3], cell: f64) -> Vec<Point3> {
    let mut keyed: Vec<([i64; 3], usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (voxel_key(p, cell), i))
        .collect();
    keyed.sort_unstable();
    let mut out = Vec::new();
    let mut start = 0;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut sum = nalgebra::Vector3::zeros();
        let mut end = start;
        while end < keyed.len() && keyed[end].0 == key {
            sum += points[keyed[end].1].coords;
            end += 1;
        }
        out.push(Point3::from(sum / (end - start) as f64));
        start = end;
    }
    out
}
