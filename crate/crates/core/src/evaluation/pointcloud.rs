use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, Vec3};
use crate::error::{Error, Result};
use crate::generator::DepthMap;

/// Back-projected foreground pixels of one depth map, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPointCloud {
    pub points: Vec<Vec3>,
    /// Row-major pixel index each point came from.
    pub pixels: Vec<usize>,
}

impl DepthPointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        let pixels = (0..points.len()).collect();
        Self { points, pixels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the depth map had no foreground.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `origin + depth * direction` for every foreground pixel.
pub fn backproject(depth: &DepthMap, pose: &CameraPose) -> DepthPointCloud {
    let origin = pose.origin();
    let mut points = Vec::with_capacity(depth.foreground_count());
    let mut pixels = Vec::with_capacity(points.capacity());
    for row in 0..depth.height {
        for col in 0..depth.width {
            let idx = row * depth.width + col;
            if !depth.is_foreground(idx) {
                continue;
            }
            let d = depth.values[idx];
            let dir = pose.ray_direction(row, col, depth.height, depth.width);
            let p = [
                origin[0] + d * dir[0],
                origin[1] + d * dir[1],
                origin[2] + d * dir[2],
            ];
            if p.iter().all(|v| v.is_finite()) {
                points.push(p);
                pixels.push(idx);
            }
        }
    }
    DepthPointCloud { points, pixels }
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static 3-d tree for exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order, 0, &mut nodes);
        Self { points, nodes, root }
    }

    fn build_rec(points: &[Vec3], idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut rest[1..], depth + 1, nodes);
        nodes.push(Node {
            point,
            axis,
            left,
            right,
        });
        Some(nodes.len() - 1)
    }

    /// Squared distance to the nearest point other than `skip`.
    pub fn nearest_dist2(&self, q: &Vec3, skip: Option<usize>) -> Option<f64> {
        let mut best = f64::INFINITY;
        self.search(self.root, q, skip, &mut best);
        best.is_finite().then_some(best)
    }

    fn search(&self, node: Option<usize>, q: &Vec3, skip: Option<usize>, best: &mut f64) {
        let Some(n) = node else { return };
        let node = self.nodes[n];
        let p = &self.points[node.point];
        if skip != Some(node.point) {
            let d = dist2(p, q);
            if d < *best {
                *best = d;
            }
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, skip, best);
        if diff * diff <= *best {
            self.search(far, q, skip, best);
        }
    }
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(cloud: &DepthPointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::EmptyCloud("spacing needs at least two points".into()));
    }
    let tree = KdTree::build(&cloud.points);
    let mut d: Vec<f64> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| tree.nearest_dist2(p, Some(i)).expect("two points").sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    })
}

pub const DEFAULT_VISIBILITY_FACTOR: f64 = 4.0;

/// Default visibility radius: four times the median spacing of `reference`.
pub fn visibility_radius(reference: &DepthPointCloud) -> Result<f64> {
    Ok(DEFAULT_VISIBILITY_FACTOR * median_spacing(reference)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferResult {
    /// Scene units.
    pub distance: f64,
    /// Share of all points (both clouds) without a neighbour within `r_vis`.
    pub excluded_fraction: f64,
    pub r_vis: f64,
}

/// Nearest-neighbour distance from each point of `from` into `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::build(to);
    from.iter()
        .map(|p| tree.nearest_dist2(p, None).map_or(f64::INFINITY, f64::sqrt))
        .collect()
}

fn visible_mean(d: &[f64], r_vis: f64) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for &v in d {
        if v <= r_vis {
            sum += v;
            n += 1;
        }
    }
    (sum / n as f64, d.len() - n)
}

/// Mean of the two directed mean nearest-neighbour distances, each over the
/// points that have a neighbour within `r_vis`.
pub fn modified_chamfer(a: &DepthPointCloud, b: &DepthPointCloud, r_vis: f64) -> Result<ChamferResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud("chamfer distance of an empty cloud".into()));
    }
    if !(r_vis.is_finite() && r_vis >= 0.0) {
        return Err(crate::error::invalid("r_vis must be finite and non-negative"));
    }
    let (mean_ab, ex_a) = visible_mean(&nearest_distances(&a.points, &b.points), r_vis);
    let (mean_ba, ex_b) = visible_mean(&nearest_distances(&b.points, &a.points), r_vis);
    if ex_a == a.len() || ex_b == b.len() {
        return Err(Error::EmptyCloud("no mutually visible points".into()));
    }
    Ok(ChamferResult {
        distance: 0.5 * (mean_ab + mean_ba),
        excluded_fraction: (ex_a + ex_b) as f64 / (a.len() + b.len()) as f64,
        r_vis,
    })
}
