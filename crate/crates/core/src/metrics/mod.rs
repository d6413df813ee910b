//! Geometric evaluation suite: surface coverage (precision/recall/F-score at
//! a distance threshold), Chamfer distances in L1 and squared-L2 form, earth
//! mover's distance over bijections, and centroid difference. Distance
//! metrics are reported both raw and scaled by 1000.

pub mod assignment;

use crate::geom::{self, fps_downsample, GeomError, PointCloud};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty point cloud in metric computation")]
    EmptyCloud,
    #[error("exact EMD limited to 512 points, got {0}")]
    ExactEmdTooLarge(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Coverage distance threshold; strict `< d` per the coverage definitions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Threshold(pub f64);

impl Default for Threshold {
    fn default() -> Self {
        Threshold(0.01)
    }
}

/// Norm selector for the Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferNorm {
    /// Mean nearest L1 distance, both directions summed.
    L1,
    /// Mean nearest squared Euclidean distance, both directions summed.
    L2,
}

/// EMD solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmdMode {
    /// Hungarian method; requires at most 512 points.
    Exact,
    /// Epsilon-scaling auction certified within 1% of the optimum.
    Approximate,
}

/// Fraction of points of `pred` within `d` of `gt` and vice versa.
pub fn precision_recall(
    pred: &PointCloud,
    gt: &PointCloud,
    d: Threshold,
) -> Result<(f64, f64), MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let d2 = d.0 * d.0;
    let hits_pred = pred
        .points
        .par_iter()
        .filter(|p| gt.points.iter().map(|g| p.dist2(g)).fold(f64::INFINITY, f64::min) < d2)
        .count();
    let hits_gt = gt
        .points
        .par_iter()
        .filter(|g| pred.points.iter().map(|p| g.dist2(p)).fold(f64::INFINITY, f64::min) < d2)
        .count();
    Ok((hits_pred as f64 / pred.len() as f64, hits_gt as f64 / gt.len() as f64))
}

/// Harmonic combination 2PR/(P+R), defined as 0 when both inputs are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Chamfer distance: per-direction mean nearest-neighbor distance, both
/// directions summed. The L1 form uses Manhattan distances; the L2 form
/// uses squared Euclidean distances (no square root).
pub fn chamfer(p: &PointCloud, g: &PointCloud, norm: ChamferNorm) -> Result<f64, MetricError> {
    if p.is_empty() || g.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let dir = |from: &PointCloud, to: &PointCloud| -> f64 {
        let sum: f64 = from
            .points
            .par_iter()
            .map(|a| {
                to.points
                    .iter()
                    .map(|b| match norm {
                        ChamferNorm::L1 => a.dist_l1(b),
                        ChamferNorm::L2 => a.dist2(b),
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        sum / from.len() as f64
    };
    Ok(dir(p, g) + dir(g, p))
}

/// Earth mover's distance: minimum mean Euclidean displacement over
/// bijections. Unequal cardinalities are reconciled by FPS-resampling the
/// larger cloud to the smaller size (start index 0).
pub fn emd(p: &PointCloud, g: &PointCloud, mode: EmdMode) -> Result<f64, MetricError> {
    if p.is_empty() || g.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let n = p.len().min(g.len());
    let p_r;
    let g_r;
    let (pp, gg) = if p.len() == g.len() {
        (p, g)
    } else if p.len() > g.len() {
        p_r = fps_downsample(p, n, 0)?;
        (&p_r, g)
    } else {
        g_r = fps_downsample(g, n, 0)?;
        (p, &g_r)
    };
    if mode == EmdMode::Exact && n > 512 {
        return Err(MetricError::ExactEmdTooLarge(n));
    }
    let cost = assignment::CostMatrix::from_distances(&pp.points, &gg.points);
    let total = match mode {
        EmdMode::Exact => cost.assignment_cost(&assignment::solve_exact(&cost)),
        EmdMode::Approximate => assignment::solve_auction(&cost, 0.01).cost,
    };
    Ok(total / n as f64)
}

/// Euclidean distance between the two cloud centroids.
pub fn centroid_diff(p: &PointCloud, g: &PointCloud) -> Result<f64, MetricError> {
    let cp = geom::centroid(p).map_err(|_| MetricError::EmptyCloud)?;
    let cg = geom::centroid(g).map_err(|_| MetricError::EmptyCloud)?;
    Ok(cp.dist(&cg))
}

/// Full metric set for one (prediction, ground truth) pair, raw and scaled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub emd: f64,
    pub centroid_diff: f64,
    pub cd_l1_x1000: f64,
    pub cd_l2_x1000: f64,
    pub emd_x1000: f64,
    pub centroid_diff_x1000: f64,
}

/// Computes every metric for a pair of clouds in the same normalized frame.
/// EMD mode is exact up to 512 points, auction-approximate above.
pub fn evaluate_pair(
    pred: &PointCloud,
    gt: &PointCloud,
    d: Threshold,
) -> Result<MetricReport, MetricError> {
    let (precision, recall) = precision_recall(pred, gt, d)?;
    let f = f_score(precision, recall);
    let cd_l1 = chamfer(pred, gt, ChamferNorm::L1)?;
    let cd_l2 = chamfer(pred, gt, ChamferNorm::L2)?;
    let mode = if pred.len().min(gt.len()) <= 512 { EmdMode::Exact } else { EmdMode::Approximate };
    let emd_v = emd(pred, gt, mode)?;
    let cdiff = centroid_diff(pred, gt)?;
    Ok(MetricReport {
        precision,
        recall,
        f_score: f,
        cd_l1,
        cd_l2,
        emd: emd_v,
        centroid_diff: cdiff,
        cd_l1_x1000: cd_l1 * 1000.0,
        cd_l2_x1000: cd_l2 * 1000.0,
        emd_x1000: emd_v * 1000.0,
        centroid_diff_x1000: cdiff * 1000.0,
    })
}

/// Fixed CSV header for batch report emission.
pub const CSV_HEADER: &str =
    "id, precision, recall, fscore, cdl1_x1000, cdl2_x1000, emd_x1000, centroid_x1000";

/// One CSV row matching [`CSV_HEADER`].
pub fn csv_row(id: &str, r: &MetricReport) -> String {
    format!(
        "{}, {}, {}, {}, {}, {}, {}, {}",
        id,
        r.precision,
        r.recall,
        r.f_score,
        r.cd_l1_x1000,
        r.cd_l2_x1000,
        r.emd_x1000,
        r.centroid_diff_x1000
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect())
    }

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        (z ^ (z >> 31)) as f64 / u64::MAX as f64
    }

    fn random_cloud(n: usize, state: &mut u64) -> PointCloud {
        PointCloud::new(
            (0..n).map(|_| Point3::new(splitmix(state), splitmix(state), splitmix(state))).collect(),
        )
    }

    #[test]
    fn identical_clouds_score_perfectly() {
        let mut state = 3u64;
        let c = random_cloud(30, &mut state);
        let r = evaluate_pair(&c, &c, Threshold::default()).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.f_score, 1.0);
        assert_eq!(r.cd_l1, 0.0);
        assert_eq!(r.cd_l2, 0.0);
        assert!(r.emd.abs() < 1e-9);
        assert_eq!(r.centroid_diff, 0.0);
    }

    #[test]
    fn threshold_case_half_precision_full_recall() {
        let p = cloud(&[(0.0, 0.0, 0.0), (0.0, 0.0, 0.02)]);
        let g = cloud(&[(0.0, 0.0, 0.0)]);
        let (precision, recall) = precision_recall(&p, &g, Threshold(0.01)).unwrap();
        assert_eq!(precision, 0.5);
        assert_eq!(recall, 1.0);
        assert!((f_score(precision, recall) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_strict() {
        // a point at exactly d must not count
        let p = cloud(&[(0.01, 0.0, 0.0)]);
        let g = cloud(&[(0.0, 0.0, 0.0)]);
        let (precision, _) = precision_recall(&p, &g, Threshold(0.01)).unwrap();
        assert_eq!(precision, 0.0);
    }

    #[test]
    fn disjoint_clouds_score_zero() {
        let p = cloud(&[(0.0, 0.0, 0.0)]);
        let g = cloud(&[(5.0, 0.0, 0.0)]);
        let (precision, recall) = precision_recall(&p, &g, Threshold(0.01)).unwrap();
        assert_eq!((precision, recall), (0.0, 0.0));
        assert_eq!(f_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn chamfer_single_point_hand_case() {
        let p = cloud(&[(0.0, 0.0, 0.0)]);
        let g = cloud(&[(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&p, &g, ChamferNorm::L1).unwrap(), 2.0);
        assert_eq!(chamfer(&p, &g, ChamferNorm::L2).unwrap(), 2.0);
    }

    /// Independent O(N^2) re-derivation used as the brute-force oracle.
    fn chamfer_brute(p: &PointCloud, g: &PointCloud, norm: ChamferNorm) -> f64 {
        let term = |from: &PointCloud, to: &PointCloud| {
            let mut acc = 0.0;
            for a in &from.points {
                let mut best = f64::INFINITY;
                for b in &to.points {
                    let d = match norm {
                        ChamferNorm::L1 => {
                            (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()
                        }
                        ChamferNorm::L2 => {
                            (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)
                        }
                    };
                    if d < best {
                        best = d;
                    }
                }
                acc += best;
            }
            acc / from.len() as f64
        };
        term(p, g) + term(g, p)
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut state = 11u64;
        for _ in 0..20 {
            let p = random_cloud(1 + (splitmix(&mut state) * 49.0) as usize, &mut state);
            let g = random_cloud(1 + (splitmix(&mut state) * 49.0) as usize, &mut state);
            for norm in [ChamferNorm::L1, ChamferNorm::L2] {
                let fast = chamfer(&p, &g, norm).unwrap();
                let slow = chamfer_brute(&p, &g, norm);
                assert!((fast - slow).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn emd_two_point_hand_case() {
        let p = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let g = cloud(&[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let v = emd(&p, &g, EmdMode::Exact).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    /// Factorial enumeration oracle for exact EMD.
    fn emd_brute(p: &PointCloud, g: &PointCloud) -> f64 {
        assert_eq!(p.len(), g.len());
        let n = p.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        fn permute(arr: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
            if k == arr.len() {
                visit(arr);
                return;
            }
            for i in k..arr.len() {
                arr.swap(k, i);
                permute(arr, k + 1, visit);
                arr.swap(k, i);
            }
        }
        permute(&mut perm, 0, &mut |assign| {
            let c: f64 =
                assign.iter().enumerate().map(|(i, &j)| p.points[i].dist(&g.points[j])).sum();
            if c < best {
                best = c;
            }
        });
        best / n as f64
    }

    #[test]
    fn emd_exact_matches_enumeration() {
        let mut state = 17u64;
        for trial in 0..30 {
            let n = 2 + trial % 7;
            let p = random_cloud(n, &mut state);
            let g = random_cloud(n, &mut state);
            let fast = emd(&p, &g, EmdMode::Exact).unwrap();
            let slow = emd_brute(&p, &g);
            assert!((fast - slow).abs() < 1e-9, "n={n} fast {fast} slow {slow}");
        }
    }

    #[test]
    fn emd_resamples_unequal_sizes() {
        let mut state = 23u64;
        let p = random_cloud(10, &mut state);
        let g = random_cloud(6, &mut state);
        let v = emd(&p, &g, EmdMode::Exact).unwrap();
        let p_resampled = fps_downsample(&p, 6, 0).unwrap();
        let direct = emd(&p_resampled, &g, EmdMode::Exact).unwrap();
        assert_eq!(v, direct);
    }

    #[test]
    fn emd_exact_rejects_large_clouds() {
        let mut state = 31u64;
        let p = random_cloud(513, &mut state);
        let g = random_cloud(513, &mut state);
        assert!(matches!(emd(&p, &g, EmdMode::Exact), Err(MetricError::ExactEmdTooLarge(513))));
    }

    #[test]
    fn emd_symmetry_and_triangle_spot_checks() {
        let mut state = 41u64;
        for _ in 0..5 {
            let a = random_cloud(6, &mut state);
            let b = random_cloud(6, &mut state);
            let c = random_cloud(6, &mut state);
            let ab = emd(&a, &b, EmdMode::Exact).unwrap();
            let ba = emd(&b, &a, EmdMode::Exact).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let ac = emd(&a, &c, EmdMode::Exact).unwrap();
            let bc = emd(&b, &c, EmdMode::Exact).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn approximate_emd_brackets_exact() {
        let mut state = 53u64;
        for _ in 0..5 {
            let p = random_cloud(40, &mut state);
            let g = random_cloud(40, &mut state);
            let exact = emd(&p, &g, EmdMode::Exact).unwrap();
            let approx = emd(&p, &g, EmdMode::Approximate).unwrap();
            assert!(approx >= exact - 1e-9);
            assert!(approx <= 1.01 * exact + 1e-9);
        }
    }

    #[test]
    fn centroid_diff_translation() {
        let mut state = 61u64;
        let p = random_cloud(25, &mut state);
        let shifted = PointCloud::new(
            p.points.iter().map(|q| Point3::new(q.x + 0.3, q.y, q.z)).collect(),
        );
        let v = centroid_diff(&shifted, &p).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn centroid_diff_unequal_sizes_hand_case() {
        let p = cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]); // centroid (1,0,0)
        let g = cloud(&[(0.0, 0.0, 0.0), (0.0, 3.0, 0.0), (0.0, 0.0, 0.0)]); // centroid (0,1,0)
        let v = centroid_diff(&p, &g).unwrap();
        assert!((v - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_scaled_fields_exact() {
        let mut state = 71u64;
        let p = random_cloud(20, &mut state);
        let g = random_cloud(25, &mut state);
        let r = evaluate_pair(&p, &g, Threshold::default()).unwrap();
        assert_eq!(r.cd_l1_x1000, r.cd_l1 * 1000.0);
        assert_eq!(r.cd_l2_x1000, r.cd_l2 * 1000.0);
        assert_eq!(r.emd_x1000, r.emd * 1000.0);
        assert_eq!(r.centroid_diff_x1000, r.centroid_diff * 1000.0);
        assert!(r.f_score <= 2.0 * r.precision.min(r.recall) + 1e-15);
    }

    #[test]
    fn report_consistent_with_individual_kernels() {
        let p = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let g = cloud(&[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let r = evaluate_pair(&p, &g, Threshold::default()).unwrap();
        assert!((r.emd - 1.0).abs() < 1e-12);
        assert_eq!(r.cd_l1, chamfer(&p, &g, ChamferNorm::L1).unwrap());
        assert_eq!(r.cd_l2, chamfer(&p, &g, ChamferNorm::L2).unwrap());
        assert_eq!(r.centroid_diff, centroid_diff(&p, &g).unwrap());
    }

    #[test]
    fn csv_row_shape() {
        let r = MetricReport {
            precision: 1.0,
            recall: 0.5,
            f_score: 2.0 / 3.0,
            cd_l1: 0.001,
            cd_l2: 0.000004,
            emd: 0.002,
            centroid_diff: 0.0005,
            cd_l1_x1000: 1.0,
            cd_l2_x1000: 0.004,
            emd_x1000: 2.0,
            centroid_diff_x1000: 0.5,
        };
        let row = csv_row("sample_007", &r);
        assert_eq!(row.split(", ").count(), CSV_HEADER.split(", ").count());
        assert!(row.starts_with("sample_007, 1, 0.5,"));
    }
}
