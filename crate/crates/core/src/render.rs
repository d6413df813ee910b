//! Deterministic orthographic depth rasterizer producing three grayscale
//! views along the +X, +Y and +Z axes.
//!
//! Geometry must live in the unit-box frame (all coordinates within
//! [-0.5, 0.5], as produced by unit-diagonal normalization). For a view
//! along axis `a`, the remaining two axes map to (column, row) in cyclic
//! order (+X sees (y, z), +Y sees (z, x), +Z sees (x, y)); columns grow
//! with the first axis, rows grow downward against the second. Pixel
//! intensity is `1 - depth` where depth 0 is the near face of the unit box,
//! so nearer geometry is brighter; empty pixels are 0. Point clouds splat a
//! filled pixel disc and every write keeps the per-pixel minimum depth, so
//! rasterization order never changes the output.

use crate::geom::{Mesh, Point3, PointCloud};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("resolution must be positive")]
    ZeroResolution,
    #[error(
        "unnormalized input: coordinate magnitude {max_coord} exceeds the unit box (expected within 0.5 + 1e-6)"
    )]
    Unnormalized { max_coord: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Row-major intensity grid with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayscaleImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayscaleImage { width, height, pixels: vec![0.0; width * height] }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Binary PGM (P5, maxval 255), intensity rounded half-up.
    pub fn pgm_bytes(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = header.into_bytes();
        out.extend(self.pixels.iter().map(|&v| {
            let clamped = v.clamp(0.0, 1.0);
            (clamped * 255.0 + 0.5).floor() as u8
        }));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), RenderError> {
        fs::write(path, self.pgm_bytes())
            .map_err(|e| RenderError::Io { path: path.display().to_string(), source: e })
    }

    /// Reads a binary PGM written by [`GrayscaleImage::write_pgm`];
    /// intensities come back quantized to the 255 levels of the file.
    pub fn read_pgm(path: &Path) -> Result<GrayscaleImage, RenderError> {
        let io_err = |msg: String| RenderError::Io {
            path: path.display().to_string(),
            source: io::Error::new(io::ErrorKind::InvalidData, msg),
        };
        let bytes = fs::read(path)
            .map_err(|e| RenderError::Io { path: path.display().to_string(), source: e })?;
        // header: P5\n<w> <h>\n<maxval>\n
        let mut fields = Vec::new();
        let mut pos = 0usize;
        while fields.len() < 4 && pos < bytes.len() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields.len() < 4 || fields[0] != "P5" {
            return Err(io_err("not a binary PGM".to_string()));
        }
        let width: usize = fields[1].parse().map_err(|_| io_err("bad width".into()))?;
        let height: usize = fields[2].parse().map_err(|_| io_err("bad height".into()))?;
        if fields[3] != "255" {
            return Err(io_err(format!("unsupported maxval {}", fields[3])));
        }
        pos += 1; // single whitespace after maxval
        if bytes.len() < pos + width * height {
            return Err(io_err("pixel data truncated".into()));
        }
        let pixels = bytes[pos..pos + width * height].iter().map(|&b| b as f64 / 255.0).collect();
        Ok(GrayscaleImage { width, height, pixels })
    }
}

/// View axis tags in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewAxis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 3] = [ViewAxis::X, ViewAxis::Y, ViewAxis::Z];

    /// (column axis, row axis) seen by this view, cyclic order.
    fn plane(self) -> (usize, usize) {
        match self {
            ViewAxis::X => (1, 2),
            ViewAxis::Y => (2, 0),
            ViewAxis::Z => (0, 1),
        }
    }

    pub fn file_tag(self) -> &'static str {
        match self {
            ViewAxis::X => "x",
            ViewAxis::Y => "y",
            ViewAxis::Z => "z",
        }
    }
}

/// The three per-axis views, always ordered +X, +Y, +Z.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: [GrayscaleImage; 3],
}

impl ViewSet {
    pub fn view(&self, axis: ViewAxis) -> &GrayscaleImage {
        &self.views[axis as usize]
    }
}

const CONTAINMENT_TOL: f64 = 1e-6;

fn check_contained(points: &[Point3]) -> Result<(), RenderError> {
    let mut max_coord = 0.0f64;
    for p in points {
        max_coord = max_coord.max(p.x.abs()).max(p.y.abs()).max(p.z.abs());
    }
    if max_coord > 0.5 + CONTAINMENT_TOL {
        return Err(RenderError::Unnormalized { max_coord });
    }
    Ok(())
}

struct DepthBuffer {
    res: usize,
    depth: Vec<f64>,
}

impl DepthBuffer {
    fn new(res: usize) -> Self {
        DepthBuffer { res, depth: vec![f64::INFINITY; res * res] }
    }

    #[inline]
    fn plot(&mut self, row: i64, col: i64, d: f64) {
        if row < 0 || col < 0 || row >= self.res as i64 || col >= self.res as i64 {
            return;
        }
        let idx = row as usize * self.res + col as usize;
        if d < self.depth[idx] {
            self.depth[idx] = d;
        }
    }

    fn into_image(self) -> GrayscaleImage {
        let pixels = self
            .depth
            .into_iter()
            .map(|d| if d.is_finite() { (1.0 - d).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        GrayscaleImage { width: self.res, height: self.res, pixels }
    }
}

#[inline]
fn to_col(u: f64, res: usize) -> i64 {
    ((u + 0.5) * res as f64).floor() as i64
}

#[inline]
fn to_row(v: f64, res: usize) -> i64 {
    ((0.5 - v) * res as f64).floor() as i64
}

/// Renders the three axis views of a point cloud. Each point is splatted as
/// a filled disc of `splat_radius` pixels around its pixel; overlapping
/// splats keep the minimum depth.
pub fn render_views(
    cloud: &PointCloud,
    resolution: usize,
    splat_radius: usize,
) -> Result<ViewSet, RenderError> {
    if resolution == 0 {
        return Err(RenderError::ZeroResolution);
    }
    check_contained(&cloud.points)?;
    let r = splat_radius as i64;
    let views = ViewAxis::ALL.map(|axis| {
        let (u_axis, v_axis) = axis.plane();
        let mut buf = DepthBuffer::new(resolution);
        for p in &cloud.points {
            let depth = 0.5 - p.coord(axis as usize);
            let c0 = to_col(p.coord(u_axis), resolution);
            let r0 = to_row(p.coord(v_axis), resolution);
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy <= r * r {
                        buf.plot(r0 + dy, c0 + dx, depth);
                    }
                }
            }
        }
        buf.into_image()
    });
    Ok(ViewSet { views })
}

/// Renders the three axis views of a triangle mesh with barycentric depth
/// interpolation, sampling at pixel centers.
pub fn render_views_mesh(mesh: &Mesh, resolution: usize) -> Result<ViewSet, RenderError> {
    if resolution == 0 {
        return Err(RenderError::ZeroResolution);
    }
    check_contained(&mesh.vertices)?;
    let res = resolution;
    let views = ViewAxis::ALL.map(|axis| {
        let (u_axis, v_axis) = axis.plane();
        let mut buf = DepthBuffer::new(res);
        for tri in &mesh.triangles {
            let verts = tri.map(|i| mesh.vertices[i]);
            // continuous pixel coordinates of the three corners
            let px = verts.map(|p| {
                (
                    (p.coord(u_axis) + 0.5) * res as f64,
                    (0.5 - p.coord(v_axis)) * res as f64,
                    0.5 - p.coord(axis as usize),
                )
            });
            let (min_x, max_x) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
                (a.0.min(p.0), a.1.max(p.0))
            });
            let (min_y, max_y) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
                (a.0.min(p.1), a.1.max(p.1))
            });
            let col_lo = (min_x.floor() as i64).max(0);
            let col_hi = (max_x.ceil() as i64).min(res as i64 - 1);
            let row_lo = (min_y.floor() as i64).max(0);
            let row_hi = (max_y.ceil() as i64).min(res as i64 - 1);
            let (x0, y0, d0) = px[0];
            let (x1, y1, d1) = px[1];
            let (x2, y2, d2) = px[2];
            let area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
            if area == 0.0 {
                continue; // degenerate in this projection
            }
            for row in row_lo..=row_hi {
                for col in col_lo..=col_hi {
                    let cx = col as f64 + 0.5;
                    let cy = row as f64 + 0.5;
                    let w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) / area;
                    let w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) / area;
                    let w2 = 1.0 - w0 - w1;
                    if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                        let depth = w0 * d0 + w1 * d1 + w2 * d2;
                        buf.plot(row, col, depth);
                    }
                }
            }
        }
        buf.into_image()
    });
    Ok(ViewSet { views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect())
    }

    #[test]
    fn empty_cloud_renders_black() {
        let vs = render_views(&PointCloud::default(), 64, 2).unwrap();
        for axis in ViewAxis::ALL {
            assert!(vs.view(axis).pixels.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn origin_point_renders_half_intensity_center_block() {
        let vs = render_views(&cloud(&[(0.0, 0.0, 0.0)]), 256, 2).unwrap();
        for axis in ViewAxis::ALL {
            let img = vs.view(axis);
            assert_eq!(img.at(128, 128), 0.5, "axis {:?}", axis);
            // disc of radius 2 around the center is also 0.5
            assert_eq!(img.at(126, 128), 0.5);
            assert_eq!(img.at(128, 126), 0.5);
            // far corner stays empty
            assert_eq!(img.at(0, 0), 0.0);
        }
    }

    #[test]
    fn min_depth_wins_on_overlap() {
        let vs = render_views(&cloud(&[(0.0, 0.0, -0.4), (0.0, 0.0, 0.4)]), 256, 2).unwrap();
        let img = vs.view(ViewAxis::Z);
        // +Z view keeps the nearer point (z = 0.4, depth 0.1)
        assert!((img.at(128, 128) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_resolution_and_unnormalized() {
        let c = cloud(&[(0.0, 0.0, 0.0)]);
        assert!(matches!(render_views(&c, 0, 2), Err(RenderError::ZeroResolution)));
        let big = cloud(&[(3.0, 0.0, 0.0)]);
        let err = render_views(&big, 64, 2).unwrap_err();
        assert!(err.to_string().contains("unnormalized"), "{err}");
    }

    #[test]
    fn byte_determinism() {
        let pts: Vec<(f64, f64, f64)> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.618_033_988_749_894_9;
                (0.45 * (t.sin()), 0.45 * (t * 1.3).cos(), 0.45 * ((t * 0.7).sin()))
            })
            .collect();
        let c = cloud(&pts);
        let a = render_views(&c, 128, 2).unwrap();
        let b = render_views(&c, 128, 2).unwrap();
        for axis in ViewAxis::ALL {
            assert_eq!(a.view(axis).pgm_bytes(), b.view(axis).pgm_bytes());
        }
    }

    #[test]
    fn monotone_occlusion_adding_points_never_darkens() {
        let base: Vec<(f64, f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.37;
                (0.4 * t.sin(), 0.4 * t.cos(), 0.3 * (t * 2.1).sin())
            })
            .collect();
        let mut extended = base.clone();
        extended.push((0.123, -0.217, 0.311));
        let a = render_views(&cloud(&base), 96, 2).unwrap();
        let b = render_views(&cloud(&extended), 96, 2).unwrap();
        for axis in ViewAxis::ALL {
            for (pa, pb) in a.view(axis).pixels.iter().zip(b.view(axis).pixels.iter()) {
                assert!(pb >= pa, "intensity decreased after adding a point");
            }
        }
    }

    #[test]
    fn reflection_mirrors_view() {
        // reflect across the x = 0 plane; the +Z view mirrors its columns
        let pts: Vec<(f64, f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.71 + 0.05;
                (0.43 * t.sin(), 0.41 * (t * 1.7).cos(), 0.39 * (t * 0.9).sin())
            })
            .collect();
        let mirrored: Vec<(f64, f64, f64)> = pts.iter().map(|&(x, y, z)| (-x, y, z)).collect();
        let a = render_views(&cloud(&pts), 128, 0).unwrap();
        let b = render_views(&cloud(&mirrored), 128, 0).unwrap();
        let (ia, ib) = (a.view(ViewAxis::Z), b.view(ViewAxis::Z));
        for row in 0..128 {
            for col in 0..128 {
                assert_eq!(ia.at(row, col), ib.at(row, 127 - col));
            }
        }
    }

    #[test]
    fn pgm_bytes_well_formed() {
        let mut img = GrayscaleImage::zeros(4, 2);
        img.pixels[0] = 1.0;
        img.pixels[1] = 0.5;
        let bytes = img.pgm_bytes();
        assert!(bytes.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n4 2\n255\n".len() + 8);
        let data = &bytes[bytes.len() - 8..];
        assert_eq!(data[0], 255);
        assert_eq!(data[1], 128); // 0.5*255 + 0.5 = 128.0 rounds half-up to 128
    }

    #[test]
    fn mesh_quad_renders_solid_block() {
        // unit-box front face as two triangles at z = 0.25
        let mesh = Mesh {
            vertices: vec![
                Point3::new(-0.4, -0.4, 0.25),
                Point3::new(0.4, -0.4, 0.25),
                Point3::new(0.4, 0.4, 0.25),
                Point3::new(-0.4, 0.4, 0.25),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        };
        let vs = render_views_mesh(&mesh, 64).unwrap();
        let img = vs.view(ViewAxis::Z);
        // interior pixels carry intensity 1 - (0.5 - 0.25) = 0.75
        assert!((img.at(32, 32) - 0.75).abs() < 1e-12);
        assert!((img.at(20, 40) - 0.75).abs() < 1e-12);
        // outside the quad is empty
        assert_eq!(img.at(1, 1), 0.0);
    }

    #[test]
    fn mesh_depth_interpolates() {
        // triangle sloping in z: depth varies across the surface
        let mesh = Mesh {
            vertices: vec![
                Point3::new(-0.4, -0.4, -0.4),
                Point3::new(0.4, -0.4, 0.4),
                Point3::new(0.0, 0.4, 0.0),
            ],
            triangles: vec![[0, 1, 2]],
        };
        let vs = render_views_mesh(&mesh, 128).unwrap();
        let img = vs.view(ViewAxis::Z);
        // near the bottom edge intensity rises left to right
        let row = 110;
        let left = img.at(row, 20);
        let right = img.at(row, 107);
        assert!(left > 0.0 && right > 0.0);
        assert!(right > left + 0.3, "left {left} right {right}");
    }
}
