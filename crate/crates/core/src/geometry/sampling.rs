use super::{dist2, Point, PointCloud};
use crate::error::{Error, Result};

/// Farthest point sampling. Ties go to the lowest index.
pub fn fps(cloud: &PointCloud, n_p: usize, start_idx: usize) -> Result<Vec<usize>> {
    let pts = cloud.points();
    if n_p > pts.len() {
        return Err(Error::Argument(format!(
            "cannot sample {n_p} keypoints from {} points",
            pts.len()
        )));
    }
    if start_idx >= pts.len() {
        return Err(Error::Argument(format!("start index {start_idx} out of range")));
    }
    if n_p == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = vec![false; pts.len()];
    let mut min_d: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[start_idx])).collect();
    let mut out = Vec::with_capacity(n_p);
    out.push(start_idx);
    chosen[start_idx] = true;
    while out.len() < n_p {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if !chosen[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        chosen[best] = true;
        out.push(best);
        let bp = pts[best];
        for (d, p) in min_d.iter_mut().zip(pts) {
            *d = d.min(dist2(p, &bp));
        }
    }
    Ok(out)
}

/// Keypoints with their k-nearest-neighbor groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedCloud {
    /// Geometric center positions, one per group.
    pub keypoints: Vec<Point>,
    /// `n_p × k` neighbor coordinates, re-centered on their keypoint.
    pub groups: Vec<Vec<Point>>,
    /// Source-cloud indices of each group's members.
    pub neighbors: Vec<Vec<usize>>,
    /// Serialization order applied to the groups: position `i` holds the
    /// group that was originally at `perm[i]`.
    pub perm: Vec<usize>,
}

impl GroupedCloud {
    pub fn n_groups(&self) -> usize {
        self.keypoints.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    /// Reorders the groups by `order` (position `i` takes group
    /// `order[i]`), composing with any earlier permutation.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            keypoints: order.iter().map(|&i| self.keypoints[i]).collect(),
            groups: order.iter().map(|&i| self.groups[i].clone()).collect(),
            neighbors: order.iter().map(|&i| self.neighbors[i].clone()).collect(),
            perm: order.iter().map(|&i| self.perm[i]).collect(),
        }
    }
}

/// Groups the `k` nearest points (keypoint included) around each keypoint,
/// re-centered on it. Distance ties go to the lowest index.
pub fn knn_group(cloud: &PointCloud, keypoint_indices: &[usize], k: usize) -> Result<GroupedCloud> {
    let pts = cloud.points();
    if k > pts.len() || k == 0 {
        return Err(Error::Argument(format!(
            "group size {k} invalid for {} points",
            pts.len()
        )));
    }
    let mut keypoints = Vec::with_capacity(keypoint_indices.len());
    let mut groups = Vec::with_capacity(keypoint_indices.len());
    let mut neighbors = Vec::with_capacity(keypoint_indices.len());
    for &ki in keypoint_indices {
        let kp = *pts
            .get(ki)
            .ok_or_else(|| Error::Argument(format!("keypoint index {ki} out of range")))?;
        let mut cand: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dist2(p, &kp), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        let idx: Vec<usize> = cand.iter().map(|c| c.1).collect();
        groups.push(
            idx.iter()
                .map(|&i| [pts[i][0] - kp[0], pts[i][1] - kp[1], pts[i][2] - kp[2]])
                .collect(),
        );
        neighbors.push(idx);
        keypoints.push(kp);
    }
    let perm = (0..keypoints.len()).collect();
    Ok(GroupedCloud {
        keypoints,
        groups,
        neighbors,
        perm,
    })
}
