//! ASCII PLY / PCD point-cloud IO and PLY / OBJ mesh loading.
//!
//! Binary encodings are rejected: every file this crate reads or writes is
//! plain text so fixtures can be diffed and checked byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// 8-bit RGB color attached to an exported vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const RED: Rgb = Rgb(255, 0, 0);
    pub const GREEN: Rgb = Rgb(0, 255, 0);
    pub const BLUE: Rgb = Rgb(0, 0, 255);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ply,
    Pcd,
    Obj,
}

fn detect_format(path: &Path, text: &str) -> Option<Format> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ply") => return Some(Format::Ply),
        Some("pcd") => return Some(Format::Pcd),
        Some("obj") => return Some(Format::Obj),
        _ => {}
    }
    let first = text.lines().next().unwrap_or("").trim();
    if first == "ply" {
        Some(Format::Ply)
    } else if first.starts_with('#') || first.starts_with("VERSION") || first.starts_with("FIELDS")
    {
        Some(Format::Pcd)
    } else {
        None
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "file is not ASCII text (binary encodings are not supported)".into(),
    })
}

/// Reads an ASCII PLY or PCD file. Point order follows the file.
pub fn load_point_cloud<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let points = match detect_format(path, &text) {
        Some(Format::Ply) => parse_ply(path, &text)?.vertices,
        Some(Format::Pcd) => parse_pcd(path, &text)?,
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "unrecognised point cloud format (expected .ply or .pcd)".into(),
            })
        }
    };
    if points.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "file contains zero points".into(),
        });
    }
    let points = points
        .into_iter()
        .map(|p| Vector3::new(lit(p[0]), lit(p[1]), lit(p[2])))
        .collect();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    Ok(PointCloud::new(points)?.with_frame(stem))
}

/// Writes an ASCII PLY with `double` coordinates and optional per-vertex
/// colors.
pub fn save_point_cloud<T: Real>(
    cloud: &PointCloud<T>,
    path: impl AsRef<Path>,
    colors: Option<&[Rgb]>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::invalid(format!(
                "{} colors given for {} points",
                c.len(),
                cloud.len()
            )));
        }
    }
    let mut out = String::with_capacity(64 * cloud.len() + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    if !cloud.frame_id().is_empty() {
        let _ = writeln!(out, "comment frame_id {}", cloud.frame_id());
    }
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.iter().enumerate() {
        let _ = write!(out, "{} {} {}", to_f64(p.x), to_f64(p.y), to_f64(p.z));
        if let Some(c) = colors {
            let Rgb(r, g, b) = c[i];
            let _ = write!(out, " {r} {g} {b}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads an ASCII PLY (with a face element) or OBJ mesh. Polygons are fan
/// triangulated.
pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (vertices, faces) = match detect_format(path, &text) {
        Some(Format::Ply) => {
            let ply = parse_ply(path, &text)?;
            (ply.vertices, ply.faces)
        }
        Some(Format::Obj) => parse_obj(path, &text)?,
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "unrecognised mesh format (expected .ply or .obj)".into(),
            })
        }
    };
    let vertices = vertices
        .into_iter()
        .map(|p| Vector3::new(lit(p[0]), lit(p[1]), lit(p[2])))
        .collect();
    TriangleMesh::new(vertices, faces)
}

pub fn save_mesh<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices().len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element face {}", mesh.faces().len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for p in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", to_f64(p.x), to_f64(p.y), to_f64(p.z));
    }
    for [a, b, c] in mesh.faces() {
        let _ = writeln!(out, "3 {a} {b} {c}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct PlyData {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

enum PlyProperty {
    Scalar(String),
    List(String),
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

const PLY_SCALARS: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

fn parse_ply(path: &Path, text: &str) -> Result<PlyData> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(fail(1, "missing `ply` magic line".into())),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((no, line)) = lines.next() else {
            return Err(fail(0, "header has no `end_header`".into()));
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(fail(
                    no,
                    format!("unsupported PLY format `{other}` (ASCII only)"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| fail(no, format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| fail(no, "property before any element".into()))?
                .properties
                .push(PlyProperty::List(name.to_string())),
            ["property", ty, name] if PLY_SCALARS.contains(ty) => elements
                .last_mut()
                .ok_or_else(|| fail(no, "property before any element".into()))?
                .properties
                .push(PlyProperty::Scalar(name.to_string())),
            ["end_header"] => break,
            _ => return Err(fail(no, format!("unrecognised header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(fail(1, "header has no `format` line".into()));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for element in &elements {
        let axis = |name: &str| {
            element
                .properties
                .iter()
                .position(|p| matches!(p, PlyProperty::Scalar(n) if n == name))
        };
        let xyz = if element.name == "vertex" {
            match (axis("x"), axis("y"), axis("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(fail(0, "vertex element lacks x/y/z properties".into())),
            }
        } else {
            None
        };
        for _ in 0..element.count {
            let Some((no, line)) = lines.next() else {
                return Err(fail(
                    0,
                    format!("unexpected end of file in `{}` data", element.name),
                ));
            };
            let mut tokens = line.split_whitespace();
            let mut scalars: Vec<f64> = Vec::with_capacity(element.properties.len());
            let mut lists: Vec<Vec<usize>> = Vec::new();
            for prop in &element.properties {
                match prop {
                    PlyProperty::Scalar(name) => {
                        let tok = tokens
                            .next()
                            .ok_or_else(|| fail(no, format!("missing value for `{name}`")))?;
                        let value: f64 = tok
                            .parse()
                            .map_err(|_| fail(no, format!("bad number `{tok}` for `{name}`")))?;
                        scalars.push(value);
                    }
                    PlyProperty::List(name) => {
                        let n: usize = tokens
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| fail(no, format!("bad list length for `{name}`")))?;
                        let items = (0..n)
                            .map(|_| tokens.next().and_then(|t| t.parse().ok()))
                            .collect::<Option<Vec<usize>>>()
                            .ok_or_else(|| fail(no, format!("bad list entries for `{name}`")))?;
                        scalars.push(f64::NAN);
                        lists.push(items);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(fail(no, "trailing values in record".into()));
            }
            if let Some([x, y, z]) = xyz {
                let p = [scalars[x], scalars[y], scalars[z]];
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(fail(
                        no,
                        format!("vertex {} has a non-finite coordinate", vertices.len()),
                    ));
                }
                vertices.push(p);
            } else if element.name == "face" {
                let Some(poly) = lists.first() else {
                    return Err(fail(no, "face element has no index list".into()));
                };
                if poly.len() < 3 {
                    return Err(fail(no, "face with fewer than 3 vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
        }
    }
    Ok(PlyData { vertices, faces })
}

fn parse_pcd(path: &Path, text: &str) -> Result<Vec<[f64; 3]>> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut points: Option<usize> = None;
    let mut width_height = (None, None);
    loop {
        let Some((no, line)) = lines.next() else {
            return Err(fail(0, "header has no DATA line".into()));
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or("");
        let rest: Vec<&str> = tokens.collect();
        let parse_usize = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| fail(no, format!("bad integer `{t}` in {key}")))
        };
        match key {
            "VERSION" | "SIZE" | "TYPE" | "VIEWPOINT" => {}
            "FIELDS" => fields = rest.iter().map(|s| s.to_string()).collect(),
            "COUNT" => counts = rest.iter().map(|t| parse_usize(t)).collect::<Result<_>>()?,
            "WIDTH" => width_height.0 = Some(parse_usize(rest.first().unwrap_or(&""))?),
            "HEIGHT" => width_height.1 = Some(parse_usize(rest.first().unwrap_or(&""))?),
            "POINTS" => points = Some(parse_usize(rest.first().unwrap_or(&""))?),
            "DATA" => match rest.first() {
                Some(&"ascii") => break,
                Some(other) => {
                    return Err(fail(
                        no,
                        format!("unsupported PCD DATA `{other}` (ASCII only)"),
                    ))
                }
                None => return Err(fail(no, "DATA line missing encoding".into())),
            },
            other => return Err(fail(no, format!("unrecognised PCD header key `{other}`"))),
        }
    }
    if counts.is_empty() {
        counts = vec![1; fields.len()];
    }
    if counts.len() != fields.len() {
        return Err(fail(0, "COUNT and FIELDS have different lengths".into()));
    }
    let mut columns = Vec::with_capacity(fields.len());
    let mut col = 0;
    for (name, &count) in fields.iter().zip(&counts) {
        columns.push((name.as_str(), col));
        col += count;
    }
    let width = col;
    let find = |axis: &str| {
        columns
            .iter()
            .find(|(n, _)| *n == axis)
            .map(|(_, c)| *c)
            .ok_or_else(|| fail(0, format!("PCD FIELDS lacks `{axis}`")))
    };
    let (cx, cy, cz) = (find("x")?, find("y")?, find("z")?);
    let expected = points.or(match width_height {
        (Some(w), Some(h)) => Some(w * h),
        _ => None,
    });

    let mut out = Vec::with_capacity(expected.unwrap_or(0));
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let record = out.len();
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| fail(no, format!("record {record}: bad number `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(fail(
                no,
                format!(
                    "record {record}: expected {width} values, found {}",
                    values.len()
                ),
            ));
        }
        let p = [values[cx], values[cy], values[cz]];
        if !p.iter().all(|c| c.is_finite()) {
            return Err(fail(
                no,
                format!("record {record} has a non-finite coordinate"),
            ));
        }
        out.push(p);
    }
    if let Some(n) = expected {
        if n != out.len() {
            return Err(fail(
                0,
                format!("header declares {n} points, found {}", out.len()),
            ));
        }
    }
    Ok(out)
}

type ObjData = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn parse_obj(path: &Path, text: &str) -> Result<ObjData> {
    let fail = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let p = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().ok())
                    .collect::<Option<Vec<_>>>()
                    .filter(|p| p.len() == 3 && p.iter().all(|c| c.is_finite()))
                    .ok_or_else(|| fail(no, "malformed vertex".into()))?;
                vertices.push([p[0], p[1], p[2]]);
            }
            Some("f") => {
                let poly = tokens
                    .map(|t| {
                        let idx: i64 = t.split('/').next()?.parse().ok()?;
                        let resolved = if idx < 0 {
                            vertices.len() as i64 + idx
                        } else {
                            idx - 1
                        };
                        usize::try_from(resolved).ok()
                    })
                    .collect::<Option<Vec<usize>>>()
                    .filter(|p| p.len() >= 3)
                    .ok_or_else(|| fail(no, "malformed face".into()))?;
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}
