//! Point-cloud and mesh file formats.
//!
//! Ingestion: ASCII XYZ (one `x y z` per line), ASCII PLY (vertex elements
//! only), OBJ (`v` lines for clouds; `f` lines kept for meshes).
//! Emission: ASCII XYZ. Floats are written with shortest-round-trip
//! formatting so a write/read cycle reproduces bit-identical values.

use super::{GeomError, Mesh, Point3, PointCloud};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected three coordinates, got {got:?}")]
    BadRow { path: String, line: usize, got: String },
    #[error("{path}:{line}: {msg}")]
    BadFormat { path: String, line: usize, msg: String },
    #[error("{path}: non-finite coordinate at line {line}")]
    NonFinite { path: String, line: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

fn file_err(path: &Path, source: io::Error) -> IoError {
    IoError::File { path: path.display().to_string(), source }
}

fn parse_triplet(path: &Path, lineno: usize, fields: &[&str]) -> Result<Point3, IoError> {
    if fields.len() < 3 {
        return Err(IoError::BadRow {
            path: path.display().to_string(),
            line: lineno,
            got: fields.join(" "),
        });
    }
    let mut c = [0.0f64; 3];
    for (slot, tok) in c.iter_mut().zip(fields.iter()) {
        *slot = tok.parse::<f64>().map_err(|_| IoError::BadRow {
            path: path.display().to_string(),
            line: lineno,
            got: fields.join(" "),
        })?;
    }
    let p = Point3::new(c[0], c[1], c[2]);
    if !p.is_finite() {
        return Err(IoError::NonFinite { path: path.display().to_string(), line: lineno });
    }
    Ok(p)
}

/// Reads an ASCII XYZ file: one `x y z` per line, blank lines and lines
/// starting with `#` skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        points.push(parse_triplet(path, i + 1, &fields)?);
    }
    Ok(PointCloud::new(points))
}

/// Serializes a cloud as ASCII XYZ text.
pub fn xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 24);
    for p in &cloud.points {
        // `{}` prints the shortest string that parses back to the same f64
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// Writes a cloud as ASCII XYZ.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    fs::write(path, xyz_string(cloud)).map_err(|e| file_err(path, e))
}

/// Reads an ASCII PLY file, extracting only the vertex element's x/y/z
/// properties. Other elements (faces, edges) are skipped.
pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let bad = |line: usize, msg: &str| IoError::BadFormat {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing `ply` magic")),
    }

    // header scan: element declarations in order, properties of each
    struct Elem {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elems: Vec<Elem> = Vec::new();
    let mut header_end = 0usize;
    let mut saw_format = false;
    for (i, raw) in &mut lines {
        let l = raw.trim();
        if l == "end_header" {
            header_end = i + 1;
            break;
        }
        let mut tok = l.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad(i + 1, "only ascii PLY is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad(i + 1, "element without name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(i + 1, "element without count"))?;
                elems.push(Elem { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let elem = elems.last_mut().ok_or_else(|| bad(i + 1, "property before element"))?;
                let toks: Vec<&str> = tok.collect();
                if toks.first() == Some(&"list") {
                    elem.props.push("__list__".to_string());
                } else {
                    let name = toks.last().ok_or_else(|| bad(i + 1, "property without name"))?;
                    elem.props.push(name.to_string());
                }
            }
            Some(_) => {}
        }
    }
    if !saw_format || header_end == 0 {
        return Err(bad(1, "incomplete PLY header"));
    }

    let body: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .skip(header_end)
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let mut cursor = 0usize;
    let mut points = Vec::new();
    for elem in &elems {
        if elem.name == "vertex" {
            let xi = elem.props.iter().position(|p| p == "x");
            let yi = elem.props.iter().position(|p| p == "y");
            let zi = elem.props.iter().position(|p| p == "z");
            let (xi, yi, zi) = match (xi, yi, zi) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(bad(header_end, "vertex element lacks x/y/z properties")),
            };
            for row in 0..elem.count {
                let (lineno, l) = body
                    .get(cursor + row)
                    .ok_or_else(|| bad(header_end, "vertex data truncated"))?;
                let fields: Vec<&str> = l.split_whitespace().collect();
                let pick = |idx: usize| -> Result<f64, IoError> {
                    fields
                        .get(idx)
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| IoError::BadRow {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            got: l.to_string(),
                        })
                };
                let p = Point3::new(pick(xi)?, pick(yi)?, pick(zi)?);
                if !p.is_finite() {
                    return Err(IoError::NonFinite {
                        path: path.display().to_string(),
                        line: lineno + 1,
                    });
                }
                points.push(p);
            }
        }
        cursor += elem.count;
    }
    Ok(PointCloud::new(points))
}

/// Reads only the `v` lines of an OBJ file as a point cloud.
pub fn read_obj_cloud(path: &Path) -> Result<PointCloud, IoError> {
    Ok(read_obj_mesh(path)?.vertex_cloud())
}

/// Reads an OBJ file keeping vertices and triangulated faces (fan
/// triangulation for polygons). Texture/normal indices are ignored.
pub fn read_obj_mesh(path: &Path) -> Result<Mesh, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut mesh = Mesh::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with("v ") || line.starts_with("v\t") {
            let fields: Vec<&str> = line[1..].split_whitespace().collect();
            mesh.vertices.push(parse_triplet(path, i + 1, &fields)?);
        } else if line.starts_with("f ") || line.starts_with("f\t") {
            let idx: Result<Vec<usize>, IoError> = line[1..]
                .split_whitespace()
                .map(|tok| {
                    let head = tok.split('/').next().unwrap_or("");
                    let v: i64 = head.parse().map_err(|_| IoError::BadFormat {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    let n = mesh.vertices.len() as i64;
                    let resolved = if v < 0 { n + v } else { v - 1 };
                    if resolved < 0 || resolved >= n {
                        return Err(IoError::BadFormat {
                            path: path.display().to_string(),
                            line: i + 1,
                            msg: format!("face index {v} out of range"),
                        });
                    }
                    Ok(resolved as usize)
                })
                .collect();
            let idx = idx?;
            if idx.len() < 3 {
                return Err(IoError::BadFormat {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "face with fewer than 3 vertices".to_string(),
                });
            }
            for t in 1..idx.len() - 1 {
                mesh.triangles.push([idx[0], idx[t], idx[t + 1]]);
            }
        }
    }
    Ok(mesh)
}

/// Reads a cloud by extension: `.xyz`, `.ply`, or `.obj`.
pub fn read_cloud_auto(path: &Path) -> Result<PointCloud, IoError> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "ply" => read_ply(path),
        Some(ext) if ext == "obj" => read_obj_cloud(path),
        _ => read_xyz(path),
    }
}
