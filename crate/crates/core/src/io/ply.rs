//! PLY point clouds and the Gaussian map interchange format.
//!
//! Clouds load from ASCII PLY, binary-little-endian PLY, or bare
//! whitespace-separated XYZ text. Gaussian maps use the de-facto splatting
//! vertex layout (x,y,z, f_dc_0..2, f_rest_0..23, opacity, scale_0..2,
//! rot_0..3 as float32, binary-LE) so exported maps open in third-party
//! viewers. SH rest coefficients are channel-major: f_rest_{c*8 + (j-1)}
//! holds coefficient j of channel c.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::cloud::PointCloud;
use crate::gaussian::{SurfaceGaussian, SH_COEFFS};
use crate::tolerances::QUAT_NORM_REJECT;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("vertex {index}: {message}")]
    Vertex { index: usize, message: String },
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("truncated payload: vertex {index} ends past the file")]
    Truncated { index: usize },
    #[error("gaussian layout: {0}")]
    GaussianLayout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PropType {
    F32,
    F64,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::F64 => 8,
        }
    }
}

struct PlyHeader {
    format: PlyFormat,
    vertex_count: usize,
    names: Vec<String>,
    types: Vec<PropType>,
    /// Byte offset of the first payload byte.
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<PlyHeader, PlyError> {
    let err = |line: usize, message: String| PlyError::Header { line, message };
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let take_line = |pos: &mut usize, line_no: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|b| *b == b'\n')
            .map(|i| start + i)
            .unwrap_or(bytes.len());
        *pos = end + 1;
        *line_no += 1;
        Some(
            String::from_utf8_lossy(&bytes[start..end])
                .trim_end_matches('\r')
                .to_string(),
        )
    };

    let Some(magic) = take_line(&mut pos, &mut line_no) else {
        return Err(err(1, "empty file".into()));
    };
    if magic.trim() != "ply" {
        return Err(err(line_no, format!("expected 'ply' magic, found '{magic}'")));
    }

    let mut format = None;
    let mut vertex_count = None;
    let mut names = Vec::new();
    let mut types = Vec::new();
    let mut in_vertex_element = false;
    loop {
        let Some(line) = take_line(&mut pos, &mut line_no) else {
            return Err(err(line_no, "header ends without end_header".into()));
        };
        let l = line_no;
        let line = line.trim();
        if line.is_empty() || line.starts_with("comment") || line.starts_with("obj_info") {
            continue;
        }
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    other => {
                        return Err(err(
                            l,
                            format!("unsupported format '{}'", other.unwrap_or("")),
                        ))
                    }
                });
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(err(l, "duplicate vertex element".into()));
                    }
                    let count: usize = tok
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| err(l, "bad vertex count".into()))?;
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else if vertex_count.is_none() {
                    // Elements ahead of vertex would shift the payload by an
                    // amount this reader cannot compute.
                    return Err(err(l, format!("element '{name}' precedes vertex")));
                } else {
                    // Trailing elements are ignored; reading stops after the
                    // vertex rows.
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = tok.next().unwrap_or("");
                let prop_ty = match ty {
                    "float" | "float32" => PropType::F32,
                    "double" | "float64" => PropType::F64,
                    "list" => {
                        return Err(err(l, "list properties are not supported".into()))
                    }
                    other => {
                        return Err(err(
                            l,
                            format!("unsupported property type '{other}' (float/double only)"),
                        ))
                    }
                };
                let name = tok
                    .next()
                    .ok_or_else(|| err(l, "property without a name".into()))?;
                names.push(name.to_string());
                types.push(prop_ty);
            }
            Some(other) => {
                return Err(err(l, format!("unrecognized header keyword '{other}'")));
            }
            None => {}
        }
    }

    Ok(PlyHeader {
        format: format.ok_or_else(|| err(line_no, "missing format line".into()))?,
        vertex_count: vertex_count
            .ok_or_else(|| err(line_no, "missing vertex element".into()))?,
        names,
        types,
        payload_start: pos,
    })
}

/// Reads every vertex row as a dense f64 property matrix.
fn read_rows(bytes: &[u8], header: &PlyHeader) -> Result<Vec<Vec<f64>>, PlyError> {
    let ncols = header.names.len();
    let mut rows = Vec::with_capacity(header.vertex_count);
    match header.format {
        PlyFormat::Ascii => {
            let text = String::from_utf8_lossy(&bytes[header.payload_start..]);
            let mut lines = text.lines();
            for index in 0..header.vertex_count {
                let line = lines
                    .next()
                    .ok_or(PlyError::Truncated { index })?;
                let mut row = Vec::with_capacity(ncols);
                for (c, tok) in line.split_whitespace().enumerate() {
                    if c >= ncols {
                        return Err(PlyError::Vertex {
                            index,
                            message: format!("more than {ncols} values"),
                        });
                    }
                    let v: f64 = tok.parse().map_err(|_| PlyError::Vertex {
                        index,
                        message: format!("bad float '{tok}'"),
                    })?;
                    row.push(v);
                }
                if row.len() != ncols {
                    return Err(PlyError::Vertex {
                        index,
                        message: format!("expected {ncols} values, found {}", row.len()),
                    });
                }
                rows.push(row);
            }
        }
        PlyFormat::BinaryLe => {
            let stride: usize = header.types.iter().map(|t| t.size()).sum();
            let payload = &bytes[header.payload_start..];
            if payload.len() < stride * header.vertex_count {
                return Err(PlyError::Truncated {
                    index: payload.len() / stride.max(1),
                });
            }
            let mut cursor = payload;
            for _ in 0..header.vertex_count {
                let mut row = Vec::with_capacity(ncols);
                for ty in &header.types {
                    let v = match ty {
                        PropType::F32 => cursor.read_f32::<LittleEndian>()? as f64,
                        PropType::F64 => cursor.read_f64::<LittleEndian>()?,
                    };
                    row.push(v);
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn xyz_columns(header: &PlyHeader) -> Result<[usize; 3], PlyError> {
    let find = |name: &str| {
        header
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PlyError::Header {
                line: 0,
                message: format!("vertex element has no '{name}' property"),
            })
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

/// Loads a cloud from PLY (ASCII or binary-LE) or whitespace XYZ text,
/// keyed off the `ply` magic.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud<f64>, PlyError> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.starts_with(b"ply") {
        let header = parse_header(&bytes)?;
        let [ix, iy, iz] = xyz_columns(&header)?;
        let rows = read_rows(&bytes, &header)?;
        let mut points = Vec::with_capacity(rows.len());
        for (index, row) in rows.iter().enumerate() {
            let p = Vector3::new(row[ix], row[iy], row[iz]);
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(PlyError::Vertex {
                    index,
                    message: "non-finite coordinate".into(),
                });
            }
            points.push(p);
        }
        Ok(PointCloud::from_points(points))
    } else {
        load_xyz_text(&bytes)
    }
}

fn load_xyz_text(bytes: &[u8]) -> Result<PointCloud<f64>, PlyError> {
    let text = String::from_utf8_lossy(bytes);
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| PlyError::Text {
                line: i + 1,
                message: format!("bad float: {e}"),
            })?;
        if vals.len() != 3 {
            return Err(PlyError::Text {
                line: i + 1,
                message: format!("expected 3 values, found {}", vals.len()),
            });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(PlyError::Text {
                line: i + 1,
                message: "non-finite coordinate".into(),
            });
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(PointCloud::from_points(points))
}

/// Writes a cloud as binary-LE PLY with float32 x,y,z.
pub fn save_point_cloud(cloud: &PointCloud<f64>, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )?;
    for p in &cloud.points {
        w.write_f32::<LittleEndian>(p.x as f32)?;
        w.write_f32::<LittleEndian>(p.y as f32)?;
        w.write_f32::<LittleEndian>(p.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

const SH_REST: usize = SH_COEFFS - 1;

fn gaussian_property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    for i in 0..3 {
        names.push(format!("f_dc_{i}"));
    }
    for i in 0..3 * SH_REST {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    for i in 0..3 {
        names.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

/// Binary-LE PLY, one float32 vertex per Gaussian. Rotation stores the unit
/// quaternion as (w, x, y, z); opacity and scales stay in their optimized
/// (logit / log) domains.
pub fn export_gaussians(
    gaussians: &[SurfaceGaussian<f64>],
    path: impl AsRef<Path>,
) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        gaussians.len()
    )?;
    for name in gaussian_property_names() {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for g in gaussians {
        for v in [g.mean.x, g.mean.y, g.mean.z] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for ch in 0..3 {
            w.write_f32::<LittleEndian>(g.sh[0][ch] as f32)?;
        }
        for ch in 0..3 {
            for j in 1..SH_COEFFS {
                w.write_f32::<LittleEndian>(g.sh[j][ch] as f32)?;
            }
        }
        w.write_f32::<LittleEndian>(g.opacity_logit as f32)?;
        for k in 0..3 {
            w.write_f32::<LittleEndian>(g.log_scale[k] as f32)?;
        }
        let q = g.rotation.as_ref();
        for v in [q.w, q.i, q.j, q.k] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`export_gaussians`], bit-exact on the float32 payload.
/// Quaternions are taken as stored (unit norm is the writer's contract,
/// checked loosely) so a load/export cycle reproduces the file.
pub fn load_gaussians(path: impl AsRef<Path>) -> Result<Vec<SurfaceGaussian<f64>>, PlyError> {
    let bytes = std::fs::read(path.as_ref())?;
    if !bytes.starts_with(b"ply") {
        return Err(PlyError::GaussianLayout("not a PLY file".into()));
    }
    let header = parse_header(&bytes)?;
    if header.format != PlyFormat::BinaryLe {
        return Err(PlyError::GaussianLayout(
            "gaussian maps are binary_little_endian".into(),
        ));
    }
    let expected = gaussian_property_names();
    for (i, want) in expected.iter().enumerate() {
        match header.names.get(i) {
            Some(found) if found == want => {}
            Some(found) => {
                return Err(PlyError::GaussianLayout(format!(
                    "expected property '{want}' at position {i}, found '{found}'"
                )))
            }
            None => {
                return Err(PlyError::GaussianLayout(format!(
                    "missing property '{want}' at position {i}"
                )))
            }
        }
    }
    if header.names.len() > expected.len() {
        return Err(PlyError::GaussianLayout(format!(
            "unexpected property '{}' after '{}'",
            header.names[expected.len()],
            expected.last().unwrap()
        )));
    }
    if header.types.iter().any(|t| *t != PropType::F32) {
        return Err(PlyError::GaussianLayout(
            "all gaussian properties must be float32".into(),
        ));
    }

    let rows = read_rows(&bytes, &header)?;
    let mut out = Vec::with_capacity(rows.len());
    for (index, row) in rows.iter().enumerate() {
        let mut sh = [Vector3::zeros(); SH_COEFFS];
        sh[0] = Vector3::new(row[3], row[4], row[5]);
        for ch in 0..3 {
            for j in 1..SH_COEFFS {
                sh[j][ch] = row[6 + ch * SH_REST + (j - 1)];
            }
        }
        let o = 6 + 3 * SH_REST;
        let q = Quaternion::new(row[o + 4], row[o + 5], row[o + 6], row[o + 7]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_NORM_REJECT {
            return Err(PlyError::Vertex {
                index,
                message: format!("rotation norm {norm} far from unit"),
            });
        }
        out.push(SurfaceGaussian {
            mean: Vector3::new(row[0], row[1], row[2]),
            log_scale: Vector3::new(row[o + 1], row[o + 2], row[o + 3]),
            rotation: UnitQuaternion::new_unchecked(q),
            opacity_logit: row[o],
            sh,
        });
    }
    Ok(out)
}
