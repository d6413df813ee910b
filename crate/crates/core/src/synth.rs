//! Synthetic shape corpus with controlled defect ablation.
//!
//! Shape sampling is a pure function of (family parameters, count, seed):
//! stratified or low-discrepancy parameterizations with seeded jitter,
//! normalized to the unit-diagonal frame. Ablation removes a spatially
//! contiguous region sized to an exact point count. The cube_bump family
//! exists to make cross-view fusion falsifiable: pairs of samples share an
//! identical partial cloud while their clean targets differ by a pocket
//! sunk into the top face, visible only in the +Z view; for that family
//! alone the views are rendered from the clean geometry, since views of the
//! shared partial could not distinguish the pair.

use crate::geom::{self, GeomError, Point3, PointCloud};
use crate::render::{self, GrayscaleImage, RenderError, ViewAxis, ViewSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid shape parameters: {0}")]
    BadShape(String),
    #[error("severity {severity} would remove {removed} of {total} points and empty the cloud")]
    SeverityEmptiesCloud { severity: f64, removed: usize, total: usize },
    #[error("invalid corpus config: {0}")]
    BadConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    CloudIo(#[from] geom::io::IoError),
}

fn io_err(path: &Path, source: io::Error) -> SynthError {
    SynthError::Io { path: path.display().to_string(), source }
}

/// Deterministic per-sample seed derivation.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Shape family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ShapeFamily {
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
    Superellipsoid { a: f64, b: f64, c: f64, exponent: f64 },
    HeightField { amplitude: f64, waves: usize },
    ArchComposite { arch_radius: f64, tube: f64, leg_height: f64 },
    CubeBump { bump: bool, bump_depth: f64, bump_radius: f64 },
}

impl ShapeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Sphere { .. } => "sphere",
            ShapeFamily::Torus { .. } => "torus",
            ShapeFamily::Superellipsoid { .. } => "superellipsoid",
            ShapeFamily::HeightField { .. } => "height_field",
            ShapeFamily::ArchComposite { .. } => "arch_composite",
            ShapeFamily::CubeBump { .. } => "cube_bump",
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadShape(m));
        match *self {
            ShapeFamily::Sphere { radius } => {
                if radius <= 0.0 {
                    return bad(format!("sphere radius {radius} must be positive"));
                }
            }
            ShapeFamily::Torus { major, minor } => {
                if major <= 0.0 || minor <= 0.0 || minor >= major {
                    return bad(format!("torus needs 0 < minor < major, got {major}/{minor}"));
                }
            }
            ShapeFamily::Superellipsoid { a, b, c, exponent } => {
                if a <= 0.0 || b <= 0.0 || c <= 0.0 || exponent <= 0.0 {
                    return bad("superellipsoid parameters must be positive".to_string());
                }
            }
            ShapeFamily::HeightField { amplitude, waves } => {
                if amplitude <= 0.0 || waves == 0 {
                    return bad("height field needs positive amplitude and waves".to_string());
                }
            }
            ShapeFamily::ArchComposite { arch_radius, tube, leg_height } => {
                if arch_radius <= 0.0 || tube <= 0.0 || leg_height <= 0.0 || tube >= arch_radius {
                    return bad("arch needs 0 < tube < arch_radius and positive legs".to_string());
                }
            }
            ShapeFamily::CubeBump { bump_depth, bump_radius, .. } => {
                if !(0.0..0.45).contains(&bump_radius) || !(0.0..0.45).contains(&bump_depth) {
                    return bad(format!(
                        "cube bump radius {bump_radius} and depth {bump_depth} must stay inside the face"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Full sampling request: family, target count, seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub family: ShapeFamily,
    pub count: usize,
    pub seed: u64,
}

/// Deterministic quasi-uniform surface sampling followed by unit-diagonal
/// normalization.
pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud, SynthError> {
    spec.family.validate()?;
    if spec.count < 8 {
        return Err(SynthError::BadShape(format!("count {} too small", spec.count)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = match spec.family {
        ShapeFamily::Sphere { radius } => sample_sphere(radius, spec.count, &mut rng),
        ShapeFamily::Torus { major, minor } => sample_torus(major, minor, spec.count, &mut rng),
        ShapeFamily::Superellipsoid { a, b, c, exponent } => {
            sample_superellipsoid(a, b, c, exponent, spec.count, &mut rng)
        }
        ShapeFamily::HeightField { amplitude, waves } => {
            sample_height_field(amplitude, waves, spec.count, &mut rng)
        }
        ShapeFamily::ArchComposite { arch_radius, tube, leg_height } => {
            sample_arch(arch_radius, tube, leg_height, spec.count, &mut rng)
        }
        ShapeFamily::CubeBump { bump, bump_depth, bump_radius } => {
            sample_cube_bump(bump, bump_depth, bump_radius, spec.count, &mut rng)
        }
    };
    let (normalized, _) = geom::normalize_unit(&raw)?;
    Ok(normalized)
}

const GOLDEN: f64 = 1.618_033_988_749_894_8;

fn sample_sphere(radius: f64, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut pts = Vec::with_capacity(count);
    // axis poles pin the bounding box symmetrically around the center
    for a in 0..3 {
        for s in [-1.0, 1.0] {
            let mut p = [0.0; 3];
            p[a] = radius * s;
            pts.push(Point3::new(p[0], p[1], p[2]));
        }
    }
    let rest = count.saturating_sub(pts.len());
    for i in 0..rest {
        let jitter: f64 = rng.gen_range(-0.25..0.25);
        let z = (1.0 - 2.0 * (i as f64 + 0.5 + jitter) / rest as f64).clamp(-1.0, 1.0);
        let theta = 2.0 * PI * ((i as f64 * GOLDEN) + rng.gen_range(-0.01..0.01)).fract();
        let r_xy = (1.0 - z * z).sqrt();
        pts.push(Point3::new(
            radius * r_xy * theta.cos(),
            radius * r_xy * theta.sin(),
            radius * z,
        ));
    }
    pts.truncate(count);
    PointCloud::new(pts)
}

fn sample_torus(major: f64, minor: f64, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut pts = Vec::with_capacity(count);
    // pin the bounding-box extremes so the normalized frame is centered on
    // the torus axis exactly
    let outer = major + minor;
    pts.push(Point3::new(outer, 0.0, 0.0));
    pts.push(Point3::new(-outer, 0.0, 0.0));
    pts.push(Point3::new(0.0, outer, 0.0));
    pts.push(Point3::new(0.0, -outer, 0.0));
    pts.push(Point3::new(major, 0.0, minor));
    pts.push(Point3::new(major, 0.0, -minor));
    let rest = count.saturating_sub(pts.len());
    for i in 0..rest {
        let theta = 2.0 * PI * ((i as f64 + rng.gen_range(0.0..1.0)) / rest as f64);
        // invert the CDF of density ~ (R + r cos(phi)) by Newton iteration
        let v = ((i as f64 * GOLDEN).fract() + rng.gen_range(0.0..0.05)).fract();
        let target = v * 2.0 * PI * major;
        let mut phi = v * 2.0 * PI;
        for _ in 0..20 {
            let f = major * phi + minor * phi.sin() - target;
            let fp = major + minor * phi.cos();
            phi -= f / fp;
        }
        let ring = major + minor * phi.cos();
        pts.push(Point3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin()));
    }
    pts.truncate(count);
    PointCloud::new(pts)
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

fn sample_superellipsoid(a: f64, b: f64, c: f64, exponent: f64, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let e = 2.0 / exponent;
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let u = (i as f64 + rng.gen_range(0.0..1.0)) / count as f64;
        let v = ((i as f64 * GOLDEN).fract() + rng.gen_range(0.0..0.03)).fract();
        let omega = 2.0 * PI * u - PI;
        let eta = PI * v - PI / 2.0;
        let (ce, se) = (eta.cos(), eta.sin());
        let (co, so) = (omega.cos(), omega.sin());
        pts.push(Point3::new(
            a * signed_pow(ce, e) * signed_pow(co, e),
            b * signed_pow(ce, e) * signed_pow(so, e),
            c * signed_pow(se, e),
        ));
    }
    PointCloud::new(pts)
}

fn sample_height_field(amplitude: f64, waves: usize, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    // seeded wave bank
    let bank: Vec<(f64, f64, f64, f64)> = (0..waves)
        .map(|_| {
            (
                rng.gen_range(1.0..4.0) * PI,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(1.0..4.0) * PI,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let side = (count as f64).sqrt().ceil() as usize;
    let cells = side * side;
    let mut pts = Vec::with_capacity(count);
    for cell in 0..cells {
        if (cell + 1) * count / cells == cell * count / cells {
            continue;
        }
        let (gx, gy) = (cell % side, cell / side);
        let x = -1.0 + 2.0 * (gx as f64 + rng.gen_range(0.1..0.9)) / side as f64;
        let y = -1.0 + 2.0 * (gy as f64 + rng.gen_range(0.1..0.9)) / side as f64;
        let mut z = 0.0;
        for (k, &(wx, px, wy, py)) in bank.iter().enumerate() {
            z += amplitude * ((wx * x + px).sin() * (wy * y + py).sin()) / (k + 1) as f64;
        }
        pts.push(Point3::new(x, y, z));
    }
    PointCloud::new(pts)
}

fn sample_arch(arch_radius: f64, tube: f64, leg_height: f64, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let arch_len = PI * arch_radius;
    let total_len = arch_len + 2.0 * leg_height;
    let arch_frac = arch_len / total_len;
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let t = (i as f64 + rng.gen_range(0.0..1.0)) / count as f64;
        let psi = 2.0 * PI * ((i as f64 * GOLDEN).fract() + rng.gen_range(0.0..0.05)).fract();
        if t < arch_frac {
            // tube around the half-circle center line in the xz plane
            let theta = PI * t / arch_frac;
            let ring = arch_radius + tube * psi.cos();
            pts.push(Point3::new(ring * theta.cos(), tube * psi.sin(), ring * theta.sin()));
        } else {
            // two legs descending from the arch ends
            let s = (t - arch_frac) / (1.0 - arch_frac);
            let (leg, s) = if s < 0.5 { (-1.0, s * 2.0) } else { (1.0, (s - 0.5) * 2.0) };
            pts.push(Point3::new(
                leg * arch_radius + tube * psi.cos(),
                tube * psi.sin(),
                -s * leg_height,
            ));
        }
    }
    PointCloud::new(pts)
}

/// Cube surface sampling; when `bump` is set, top-face points inside the
/// pocket footprint sink by `depth`. The base sampling consumes the RNG
/// identically with and without the bump, so a flat/pocket pair built from
/// one seed shares every base coordinate.
fn sample_cube_bump(bump: bool, depth: f64, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let per_face = count / 6;
    let mut pts = Vec::with_capacity(count);
    // faces: (fixed axis, sign); top face (z, +) comes last so the pocket
    // indices are stable
    let faces = [(0usize, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)];
    for (fi, &(axis, sign)) in faces.iter().enumerate() {
        let face_count = if fi == 5 { count - pts.len() } else { per_face };
        let side = (face_count as f64).sqrt().ceil() as usize;
        let cells = side * side;
        // stratified: spread face_count placements evenly over the cell grid
        for cell in 0..cells {
            let quota_next = (cell + 1) * face_count / cells;
            let quota_prev = cell * face_count / cells;
            if quota_next == quota_prev {
                continue;
            }
            let (gx, gy) = (cell % side, cell / side);
            let u = -0.5 + (gx as f64 + rng.gen_range(0.05..0.95)) / side as f64;
            let v = -0.5 + (gy as f64 + rng.gen_range(0.05..0.95)) / side as f64;
            let mut c = [0.0f64; 3];
            c[axis] = 0.5 * sign;
            c[(axis + 1) % 3] = u;
            c[(axis + 2) % 3] = v;
            let mut p = Point3::new(c[0], c[1], c[2]);
            if bump && fi == 5 && u * u + v * v <= radius * radius {
                p.z -= depth;
            }
            pts.push(p);
        }
    }
    PointCloud::new(pts)
}

/// Contiguous-region ablation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    SphereCut,
    AxisSlab,
    Patch,
}

/// The three defect severities and their removal fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub fn fraction(self) -> f64 {
        match self {
            Severity::Mild => 0.10,
            Severity::Moderate => 0.25,
            Severity::Severe => 0.40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub mode: AblationMode,
    pub severity: Severity,
}

/// Removes a contiguous region holding `fraction` of the points. The region
/// center is seeded; the cut size is resolved by distance rank so the
/// removed count is exact.
pub fn ablate_fraction(
    clean: &PointCloud,
    mode: AblationMode,
    fraction: f64,
    seed: u64,
) -> Result<PointCloud, SynthError> {
    let n = clean.len();
    let target = (n as f64 * fraction).round() as usize;
    if target == 0 {
        return Ok(clean.clone());
    }
    if target >= n {
        return Err(SynthError::SeverityEmptiesCloud { severity: fraction, removed: target, total: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<f64> = match mode {
        AblationMode::SphereCut => {
            // surface point extremal along a seeded direction
            let dir = loop {
                let d = Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if d.norm() > 1e-6 {
                    break d.scale(1.0 / d.norm());
                }
            };
            let center_idx = (0..n)
                .max_by(|&a, &b| {
                    let da = clean.points[a].x * dir.x + clean.points[a].y * dir.y + clean.points[a].z * dir.z;
                    let db = clean.points[b].x * dir.x + clean.points[b].y * dir.y + clean.points[b].z * dir.z;
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            let c = clean.points[center_idx];
            clean.points.iter().map(|p| p.dist2(&c)).collect()
        }
        AblationMode::AxisSlab => {
            let axis = rng.gen_range(0..3usize);
            let anchor = rng.gen_range(0..n);
            let c = clean.points[anchor].coord(axis);
            clean.points.iter().map(|p| (p.coord(axis) - c).abs()).collect()
        }
        AblationMode::Patch => {
            let anchor = rng.gen_range(0..n);
            let c = clean.points[anchor];
            clean.points.iter().map(|p| p.dist2(&c)).collect()
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap().then(a.cmp(&b)));
    let mut removed = vec![false; n];
    for &i in order.iter().take(target) {
        removed[i] = true;
    }
    let points: Vec<Point3> =
        clean.points.iter().enumerate().filter(|(i, _)| !removed[*i]).map(|(_, p)| *p).collect();
    Ok(PointCloud { points, norm: clean.norm })
}

pub fn ablate(clean: &PointCloud, defect: &DefectSpec, seed: u64) -> Result<PointCloud, SynthError> {
    ablate_fraction(clean, defect.mode, defect.severity.fraction(), seed)
}

/// Corpus build configuration; a pure function of this struct (seeds
/// included) determines every emitted byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub total_samples: usize,
    pub points_per_cloud: usize,
    pub families: Vec<ShapeFamily>,
    pub defect: DefectSpec,
    pub train_fraction: f64,
    pub seed: u64,
    pub view_resolution: usize,
    pub splat_radius: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            total_samples: 200,
            points_per_cloud: 1024,
            families: vec![
                ShapeFamily::Sphere { radius: 1.0 },
                ShapeFamily::Torus { major: 1.0, minor: 0.45 },
                ShapeFamily::Superellipsoid { a: 1.0, b: 0.8, c: 0.65, exponent: 3.5 },
                ShapeFamily::HeightField { amplitude: 0.35, waves: 3 },
            ],
            defect: DefectSpec { mode: AblationMode::SphereCut, severity: Severity::Moderate },
            train_fraction: 0.9,
            seed: 7,
            view_resolution: 64,
            splat_radius: 2,
        }
    }
}

impl CorpusConfig {
    /// All cube_bump pairs: the fusion ambiguity corpus.
    pub fn cube_bump_ambiguity(total_samples: usize, seed: u64) -> Self {
        CorpusConfig {
            total_samples,
            points_per_cloud: 768,
            families: vec![ShapeFamily::CubeBump { bump: false, bump_depth: 0.22, bump_radius: 0.3 }],
            defect: DefectSpec { mode: AblationMode::Patch, severity: Severity::Mild },
            train_fraction: 0.9,
            seed,
            view_resolution: 64,
            splat_radius: 3,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.total_samples == 0 {
            return Err(SynthError::BadConfig("total_samples must be positive".into()));
        }
        if self.families.is_empty() {
            return Err(SynthError::BadConfig("at least one shape family required".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(SynthError::BadConfig(format!(
                "train_fraction {} out of [0,1]",
                self.train_fraction
            )));
        }
        for f in &self.families {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub family: String,
    pub spec: ShapeSpec,
    pub ablation_seed: u64,
    pub split: Split,
    pub clean_points: usize,
    pub partial_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub samples: Vec<SampleEntry>,
}

/// One generated sample held in memory.
pub struct CorpusSample {
    pub entry: SampleEntry,
    pub clean: PointCloud,
    pub partial: PointCloud,
    pub views: ViewSet,
}

fn plan_specs(cfg: &CorpusConfig) -> Vec<(ShapeFamily, u64, u64)> {
    // (family instance, shape seed, ablation seed); cube_bump samples pair
    // up: consecutive members share a base seed and alternate the bump
    let mut cube_ordinal = 0usize;
    (0..cfg.total_samples)
        .map(|i| {
            let fam = cfg.families[i % cfg.families.len()];
            match fam {
                ShapeFamily::CubeBump { bump_depth, bump_radius, .. } => {
                    let pair = cube_ordinal / 2;
                    let member = cube_ordinal % 2;
                    cube_ordinal += 1;
                    let seed = derive_seed(cfg.seed, 0xC0BE_0000 + pair as u64);
                    (
                        ShapeFamily::CubeBump { bump: member == 1, bump_depth, bump_radius },
                        seed,
                        derive_seed(seed, 0xAB1A7E),
                    )
                }
                other => {
                    let seed = derive_seed(cfg.seed, i as u64);
                    (other, seed, derive_seed(seed, 0xAB1A7E))
                }
            }
        })
        .collect()
}

/// Generates one sample fully in memory.
pub fn generate_sample(
    cfg: &CorpusConfig,
    family: ShapeFamily,
    shape_seed: u64,
    ablation_seed: u64,
) -> Result<(ShapeSpec, PointCloud, PointCloud, ViewSet), SynthError> {
    let spec = ShapeSpec { family, count: cfg.points_per_cloud, seed: shape_seed };
    let clean = generate_shape(&spec)?;
    let partial = match family {
        ShapeFamily::CubeBump { bump_radius, .. } => {
            // remove the pocket footprint from the top face using base (x, y)
            // positions, identical for both pair members
            let points: Vec<Point3> = clean
                .points
                .iter()
                .filter(|p| {
                    // top-face points sit at the maximum z band before
                    // pocket displacement; cut by xy footprint instead of z
                    !(p.x * p.x + p.y * p.y <= bump_radius * bump_radius * normalized_face_scale(&clean)
                        && p.z > 0.0)
                })
                .cloned()
                .collect();
            PointCloud { points, norm: clean.norm }
        }
        _ => ablate(&clean, &cfg.defect, ablation_seed)?,
    };
    let render_source = match family {
        // ambiguity family: views must carry what the partial cannot
        ShapeFamily::CubeBump { .. } => &clean,
        _ => &partial,
    };
    let views = render::render_views(render_source, cfg.view_resolution, cfg.splat_radius)?;
    Ok((spec, clean, partial, views))
}

/// Squared scale factor translating cube-face footprint radii into the
/// normalized frame (the unit cube normalizes by its diagonal sqrt(3)).
fn normalized_face_scale(_normalized: &PointCloud) -> f64 {
    1.0 / 3.0
}

/// Builds the corpus directory tree and index; returns the loaded samples.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusIndex, SynthError> {
    cfg.validate()?;
    let specs = plan_specs(cfg);

    // seeded split
    let train_count = (cfg.total_samples as f64 * cfg.train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cfg.total_samples).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5B117));
    for i in (1..order.len()).rev() {
        let j = split_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut split = vec![Split::Test; cfg.total_samples];
    for &i in order.iter().take(train_count) {
        split[i] = Split::Train;
    }

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut samples = Vec::with_capacity(cfg.total_samples);
    for (i, &(family, shape_seed, ablation_seed)) in specs.iter().enumerate() {
        let (spec, clean, partial, views) = generate_sample(cfg, family, shape_seed, ablation_seed)?;
        let id = format!("s{i:04}");
        let dir = out_dir.join(split[i].dir()).join(&id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        geom::io::write_xyz(&dir.join("clean.xyz"), &clean)?;
        geom::io::write_xyz(&dir.join("partial.xyz"), &partial)?;
        for axis in ViewAxis::ALL {
            views.view(axis).write_pgm(&dir.join(format!("view_{}.pgm", axis.file_tag())))?;
        }
        samples.push(SampleEntry {
            id,
            family: family.name().to_string(),
            spec,
            ablation_seed,
            split: split[i],
            clean_points: clean.len(),
            partial_points: partial.len(),
        });
    }
    let index = CorpusIndex { version: 1, seed: cfg.seed, config: cfg.clone(), samples };
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| SynthError::BadConfig(format!("index serialization: {e}")))?;
    fs::write(out_dir.join("index.json"), json).map_err(|e| io_err(out_dir, e))?;
    Ok(index)
}

/// Reads an emitted corpus back into memory.
pub fn load_corpus(root: &Path) -> Result<(CorpusIndex, Vec<CorpusSample>), SynthError> {
    let index_path = root.join("index.json");
    let text = fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
    let index: CorpusIndex = serde_json::from_str(&text)
        .map_err(|e| SynthError::BadConfig(format!("{}: {e}", index_path.display())))?;
    let mut out = Vec::with_capacity(index.samples.len());
    for entry in &index.samples {
        let dir = root.join(entry.split.dir()).join(&entry.id);
        let clean = geom::io::read_xyz(&dir.join("clean.xyz"))?;
        let partial = geom::io::read_xyz(&dir.join("partial.xyz"))?;
        let views = ViewSet {
            views: [
                GrayscaleImage::read_pgm(&dir.join("view_x.pgm"))?,
                GrayscaleImage::read_pgm(&dir.join("view_y.pgm"))?,
                GrayscaleImage::read_pgm(&dir.join("view_z.pgm"))?,
            ],
        };
        out.push(CorpusSample { entry: entry.clone(), clean, partial, views });
    }
    Ok((index, out))
}

/// Convenience path helper for one sample file.
pub fn sample_dir(root: &Path, entry: &SampleEntry) -> PathBuf {
    root.join(entry.split.dir()).join(&entry.id)
}
