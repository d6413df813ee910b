//! Point-cloud geometry: canonical representation, unit-diagonal normalization,
//! farthest point sampling, exact nearest-neighbor queries, centroids.
//!
//! All operations are pure functions on immutable inputs and deterministic:
//! every tie (FPS selection, neighbor ordering) is broken by lowest index.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from geometric operations.
#[derive(Debug, Error)]
pub enum GeomError {
    /// Cloud has zero bounding-box diagonal (all points identical or empty).
    #[error("degenerate extent: bounding-box diagonal is zero")]
    DegenerateExtent,
    /// An operation that needs points got an empty cloud.
    #[error("empty point cloud")]
    EmptyCloud,
    /// Requested more samples than the cloud holds.
    #[error("sample count {requested} exceeds cloud size {available}")]
    SampleCountExceedsCloud { requested: usize, available: usize },
    /// FPS start index out of range.
    #[error("start index {start} out of range for cloud of size {size}")]
    StartOutOfRange { start: usize, size: usize },
    /// kNN needs k strictly below the cloud size.
    #[error("neighbor count {k} must be below cloud size {size}")]
    NeighborCountTooLarge { k: usize, size: usize },
    /// Sample count must be at least one.
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

/// A 3D point. Coordinates are dimensionless after normalization; raw
/// inputs may carry millimeters or any other unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn sub(&self, other: &Point3) -> Point3 {
        Point3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn add(&self, other: &Point3) -> Point3 {
        Point3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Squared Euclidean distance.
    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    /// Euclidean distance.
    pub fn dist(&self, other: &Point3) -> f64 {
        self.dist2(other).sqrt()
    }

    /// L1 (Manhattan) distance.
    pub fn dist_l1(&self, other: &Point3) -> f64 {
        (self.x - other.x).abs() + (self.y - other.y).abs() + (self.z - other.z).abs()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Inverse record of a unit-diagonal normalization: `(p - center) / scale`
/// maps original coordinates into the normalized frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Bounding-box center of the original cloud.
    pub center: Point3,
    /// Bounding-box diagonal length of the original cloud. Always positive.
    pub scale: f64,
}

impl NormalizationRecord {
    /// The identity transform.
    pub fn identity() -> Self {
        NormalizationRecord { center: Point3::ZERO, scale: 1.0 }
    }

    /// Maps a point from the original frame into the normalized frame.
    pub fn to_normalized(&self, p: &Point3) -> Point3 {
        p.sub(&self.center).scale(1.0 / self.scale)
    }

    /// Maps a point from the normalized frame back to the original frame.
    pub fn to_original(&self, p: &Point3) -> Point3 {
        p.scale(self.scale).add(&self.center)
    }
}

/// An ordered list of 3D points with an optional record of the
/// normalization that produced it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub norm: Option<NormalizationRecord>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points, norm: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// True when every coordinate is finite.
    pub fn all_finite(&self) -> bool {
        self.points.iter().all(Point3::is_finite)
    }

    /// Component-wise bounding box, `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = self.points.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in &self.points[1..] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            lo.z = lo.z.min(p.z);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
            hi.z = hi.z.max(p.z);
        }
        Some((lo, hi))
    }

    /// Bounding-box diagonal length; 0 for empty clouds.
    pub fn bbox_diagonal(&self) -> f64 {
        match self.bounding_box() {
            Some((lo, hi)) => hi.dist(&lo),
            None => 0.0,
        }
    }

    /// Applies a normalization record to every point.
    pub fn map_to_normalized(&self, rec: &NormalizationRecord) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| rec.to_normalized(p)).collect(),
            norm: Some(*rec),
        }
    }

    /// Maps every point back to the original frame of the record.
    pub fn map_to_original(&self, rec: &NormalizationRecord) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| rec.to_original(p)).collect(),
            norm: None,
        }
    }
}

/// Per-point lists of the k nearest neighbors (excluding the point itself),
/// ordered by ascending distance, ties broken by lowest index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub k: usize,
    /// `lists[i]` holds exactly `k` neighbor indices of point `i`.
    pub lists: Vec<Vec<usize>>,
}

/// Triangle mesh used by the renderer; faces index into `vertices`.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone())
    }
}

/// Rescales a cloud so its bounding box is centered at the origin with
/// diagonal length exactly 1, returning the transform record.
///
/// Fails with [`GeomError::DegenerateExtent`] when the diagonal is zero.
pub fn normalize_unit(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord), GeomError> {
    let (lo, hi) = cloud.bounding_box().ok_or(GeomError::EmptyCloud)?;
    let diag = hi.dist(&lo);
    if diag == 0.0 {
        return Err(GeomError::DegenerateExtent);
    }
    let center = lo.add(&hi).scale(0.5);
    let rec = NormalizationRecord { center, scale: diag };
    Ok((cloud.map_to_normalized(&rec), rec))
}

/// Farthest point sampling: greedily selects `k` points starting from
/// `cloud[start]`, each time taking the point whose distance to the
/// already-selected set is largest. Ties go to the lowest index.
pub fn fps_downsample(cloud: &PointCloud, k: usize, start: usize) -> Result<PointCloud, GeomError> {
    let n = cloud.len();
    if k == 0 {
        return Err(GeomError::ZeroSamples);
    }
    if k > n {
        return Err(GeomError::SampleCountExceedsCloud { requested: k, available: n });
    }
    if start >= n {
        return Err(GeomError::StartOutOfRange { start, size: n });
    }
    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(k);
    selected.push(start);
    // min squared distance from each point to the selected set
    let mut best = vec![f64::INFINITY; n];
    let mut last = start;
    for _ in 1..k {
        let lp = pts[last];
        let mut far_idx = 0usize;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = p.dist2(&lp);
            if d < best[i] {
                best[i] = d;
            }
            // strict > keeps the lowest index on ties
            if best[i] > far_d {
                far_d = best[i];
                far_idx = i;
            }
        }
        selected.push(far_idx);
        last = far_idx;
    }
    Ok(PointCloud {
        points: selected.iter().map(|&i| pts[i]).collect(),
        norm: cloud.norm,
    })
}

/// Indices selected by FPS, in selection order. Same contract as
/// [`fps_downsample`] but returning indices into the input cloud.
pub fn fps_indices(cloud: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>, GeomError> {
    let n = cloud.len();
    if k == 0 {
        return Err(GeomError::ZeroSamples);
    }
    if k > n {
        return Err(GeomError::SampleCountExceedsCloud { requested: k, available: n });
    }
    if start >= n {
        return Err(GeomError::StartOutOfRange { start, size: n });
    }
    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(k);
    selected.push(start);
    let mut best = vec![f64::INFINITY; n];
    let mut last = start;
    for _ in 1..k {
        let lp = pts[last];
        let mut far_idx = 0usize;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = p.dist2(&lp);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > far_d {
                far_d = best[i];
                far_idx = i;
            }
        }
        selected.push(far_idx);
        last = far_idx;
    }
    Ok(selected)
}

/// Exact k-nearest-neighbor index over a cloud, Euclidean metric,
/// neighbors ordered by ascending distance with lowest-index tie-break.
pub fn knn(cloud: &PointCloud, k: usize) -> Result<NeighborIndex, GeomError> {
    let n = cloud.len();
    if k >= n {
        return Err(GeomError::NeighborCountTooLarge { k, size: n });
    }
    let pts = &cloud.points;
    let lists = knn_lists(|i, j| pts[i].dist2(&pts[j]), n, k);
    Ok(NeighborIndex { k, lists })
}

/// kNN on arbitrary pairwise squared distances; shared by the coordinate
/// and feature-space graph builds.
pub(crate) fn knn_lists(dist2: impl Fn(usize, usize) -> f64, n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (dist2(i, j), j)).collect();
            cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Index of the nearest point of `cloud` to `q`, lowest index on ties.
pub fn nearest_index(q: &Point3, cloud: &PointCloud) -> Result<usize, GeomError> {
    if cloud.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, p) in cloud.points.iter().enumerate() {
        let d = q.dist2(p);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    Ok(best)
}

/// Arithmetic mean of the cloud per coordinate.
pub fn centroid(cloud: &PointCloud) -> Result<Point3, GeomError> {
    if cloud.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let n = cloud.len() as f64;
    let mut sum = Point3::ZERO;
    for p in &cloud.points {
        sum = sum.add(p);
    }
    Ok(sum.scale(1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect())
    }

    #[test]
    fn normalize_two_point_segment() {
        let c = cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        let (out, rec) = normalize_unit(&c).unwrap();
        assert_eq!(out.points[0], Point3::new(-0.5, 0.0, 0.0));
        assert_eq!(out.points[1], Point3::new(0.5, 0.0, 0.0));
        assert_eq!(rec.center, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(rec.scale, 2.0);
    }

    #[test]
    fn normalize_is_idempotent_on_normalized_cloud() {
        let c = cloud(&[(-0.5, 0.0, 0.0), (0.5, 0.0, 0.0)]);
        let (out, rec) = normalize_unit(&c).unwrap();
        assert_eq!(out.points, c.points);
        assert_eq!(rec.center, Point3::ZERO);
        assert_eq!(rec.scale, 1.0);
    }

    #[test]
    fn normalize_degenerate_cloud_fails() {
        let c = cloud(&[(1.0, 1.0, 1.0); 5]);
        let err = normalize_unit(&c).unwrap_err();
        assert!(matches!(err, GeomError::DegenerateExtent));
        assert!(err.to_string().contains("degenerate extent"));
    }

    #[test]
    fn normalize_diagonal_exact_and_centered() {
        let c = cloud(&[(3.0, -1.0, 2.0), (7.0, 5.0, 4.0), (4.0, 2.0, 9.0)]);
        let (out, rec) = normalize_unit(&c).unwrap();
        let diag = out.bbox_diagonal();
        assert!((diag - 1.0).abs() < 1e-12);
        let (lo, hi) = out.bounding_box().unwrap();
        let center = lo.add(&hi).scale(0.5);
        assert!(center.norm() < 1e-12);
        // record inverts the transform
        for (orig, mapped) in c.points.iter().zip(out.points.iter()) {
            let back = rec.to_original(mapped);
            assert!(back.dist(orig) < 1e-10);
        }
    }

    #[test]
    fn fps_picks_extremes_on_line() {
        let c = cloud(&[(0.0, 0.0, 0.0), (5.0, 0.0, 0.0), (10.0, 0.0, 0.0)]);
        let out = fps_downsample(&c, 2, 0).unwrap();
        assert_eq!(out.points, vec![Point3::new(0.0, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0)]);
    }

    #[test]
    fn fps_exhaustion_returns_all_points() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.5, 2.0, 0.0), (3.0, 1.0, 0.5)]);
        let out = fps_downsample(&c, 4, 0).unwrap();
        let mut got: Vec<_> = out.points.clone();
        let mut want = c.points.clone();
        let key = |p: &Point3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }

    #[test]
    fn fps_tie_break_lowest_index() {
        // (1,0,0) and (0,1,0) are both at distance 1 from the start; the
        // lower index wins the second slot.
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]);
        let out = fps_downsample(&c, 3, 0).unwrap();
        assert_eq!(out.points[0], Point3::new(0.0, 0.0, 0.0));
        assert_eq!(out.points[1], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(out.points[2], Point3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert!(fps_downsample(&c, 3, 0).is_err());
        assert!(fps_downsample(&c, 0, 0).is_err());
        assert!(fps_downsample(&c, 2, 2).is_err());
    }

    /// FPS coverage invariant: after selecting k points every input point
    /// lies within r_k of the selected set, and r_k is non-increasing in k.
    #[test]
    fn fps_coverage_radius_non_increasing() {
        let mut rng_state = 0x243F6A8885A308D3u64;
        let mut next = move || {
            // splitmix64
            rng_state = rng_state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = rng_state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let pts: Vec<Point3> = (0..60).map(|_| Point3::new(next(), next(), next())).collect();
        let c = PointCloud::new(pts);
        let mut prev_rk = f64::INFINITY;
        for k in 1..=20 {
            let idx = fps_indices(&c, k, 0).unwrap();
            // r_k = max over points of distance to selected set
            let rk = c
                .points
                .iter()
                .map(|p| idx.iter().map(|&i| p.dist(&c.points[i])).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            assert!(rk <= prev_rk + 1e-12, "r_k increased at k={k}: {rk} > {prev_rk}");
            prev_rk = rk;
        }
    }

    #[test]
    fn fps_deterministic() {
        let c = cloud(&[(0.1, 0.2, 0.3), (0.9, 0.1, 0.4), (0.5, 0.5, 0.5), (0.0, 1.0, 0.0)]);
        let a = fps_downsample(&c, 3, 1).unwrap();
        let b = fps_downsample(&c, 3, 1).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.points[0], c.points[1]);
    }

    #[test]
    fn knn_collinear_tie_goes_to_lower_index() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        let idx = knn(&c, 1).unwrap();
        // middle point is equidistant from both ends; index 0 wins
        assert_eq!(idx.lists[1], vec![0]);
        assert_eq!(idx.lists[0], vec![1]);
        assert_eq!(idx.lists[2], vec![1]);
    }

    #[test]
    fn knn_full_neighborhood_sorted() {
        let c = cloud(&[(0.0, 0.0, 0.0), (3.0, 0.0, 0.0), (1.0, 0.0, 0.0), (6.0, 0.0, 0.0)]);
        let idx = knn(&c, 3).unwrap();
        assert_eq!(idx.lists[0], vec![2, 1, 3]);
        assert_eq!(idx.lists[3], vec![1, 2, 0]);
    }

    #[test]
    fn knn_rejects_k_not_below_size() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert!(knn(&c, 2).is_err());
    }

    /// Brute-force oracle: for every point, sort all others by (distance,
    /// index) and compare the prefix.
    #[test]
    fn knn_matches_brute_force_on_random_cloud() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let pts: Vec<Point3> = (0..20).map(|_| Point3::new(next(), next(), next())).collect();
        let c = PointCloud::new(pts);
        let k = 4;
        let idx = knn(&c, k).unwrap();
        for i in 0..c.len() {
            let mut all: Vec<(f64, usize)> = (0..c.len())
                .filter(|&j| j != i)
                .map(|j| (c.points[i].dist(&c.points[j]), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all.iter().take(k).map(|&(_, j)| j).collect();
            assert_eq!(idx.lists[i], expect, "mismatch at point {i}");
        }
    }

    #[test]
    fn centroid_cases() {
        let c = cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        assert_eq!(centroid(&c).unwrap(), Point3::new(1.0, 0.0, 0.0));

        let single = cloud(&[(0.3, -0.2, 0.9)]);
        assert_eq!(centroid(&single).unwrap(), Point3::new(0.3, -0.2, 0.9));

        let corners: Vec<(f64, f64, f64)> = (0..8)
            .map(|i| (((i >> 2) & 1) as f64, ((i >> 1) & 1) as f64, (i & 1) as f64))
            .collect();
        let cube = cloud(&corners);
        assert_eq!(centroid(&cube).unwrap(), Point3::new(0.5, 0.5, 0.5));

        assert!(centroid(&PointCloud::default()).is_err());
    }

    #[test]
    fn denormalize_round_trips() {
        let c = cloud(&[(12.5, -3.0, 8.0), (4.0, 9.5, -2.0), (0.0, 0.0, 100.0)]);
        let (norm, rec) = normalize_unit(&c).unwrap();
        let back = norm.map_to_original(&rec);
        for (a, b) in c.points.iter().zip(back.points.iter()) {
            assert!((a.x - b.x).abs() < 1e-10);
            assert!((a.y - b.y).abs() < 1e-10);
            assert!((a.z - b.z).abs() < 1e-10);
        }
    }
}
