//! OBJ and PLY readers producing triangle meshes or point clouds.

use std::path::Path;

use volsplat_core::{PointCloud, TriangleMesh, Vec3, VertexAttributes};

use crate::atomic::read_bytes;
use crate::error::{Error, Result};

/// Geometry read from a file: faces make a mesh, no faces a point cloud.
#[derive(Clone, Debug)]
pub enum Geometry {
    Mesh(TriangleMesh),
    Points(PointCloud),
}

impl Geometry {
    pub fn vertex_count(&self) -> usize {
        match self {
            Geometry::Mesh(m) => m.vertices().len(),
            Geometry::Points(p) => p.points().len(),
        }
    }
}

fn build(
    path: &Path,
    verts: Vec<Vec3>,
    colors: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
) -> Result<Geometry> {
    let core = |e: volsplat_core::Error| Error::parse(path, e.to_string());
    let colors = if colors.is_empty() {
        None
    } else if colors.len() == verts.len() {
        Some(VertexAttributes::new(3, colors.into_iter().flatten().collect()).map_err(core)?)
    } else {
        return Err(Error::parse(path, "only some vertices carry colours"));
    };
    if faces.is_empty() {
        return Ok(Geometry::Points(
            PointCloud::new(verts, colors).map_err(core)?,
        ));
    }
    Ok(Geometry::Mesh(
        TriangleMesh::new(verts, faces, colors).map_err(core)?,
    ))
}

/// Parse OBJ text. Vertex colours may follow the position on `v` lines
/// (`v x y z r g b`); polygons are fan-triangulated.
pub fn parse_obj(path: &Path, text: &str) -> Result<Geometry> {
    let mut verts = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", ln + 1));
        let line = line.split('#').next().unwrap_or("");
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                match vals.len() {
                    3 | 4 => {}
                    6 | 7 => colors.push([vals[3], vals[4], vals[5]]),
                    _ => return Err(bad("vertex needs 3 coordinates")),
                }
                verts.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let n = verts.len() as i64;
                        let abs = if i < 0 { n + i } else { i - 1 };
                        if abs < 0 || abs >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(abs as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    build(path, verts, colors, faces)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    LittleEndian,
    BigEndian,
}

/// Pulls scalar values out of the PLY body.
enum Body<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary {
        data: &'a [u8],
        pos: usize,
        big: bool,
    },
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Option<f64> {
        match self {
            Body::Ascii(it) => it.next()?.parse().ok(),
            Body::Binary { data, pos, big } => {
                let n = ty.size();
                let b = data.get(*pos..*pos + n)?;
                *pos += n;
                let mut a = [0u8; 8];
                a[..n].copy_from_slice(b);
                if *big {
                    a[..n].reverse();
                }
                Some(match ty {
                    Scalar::I8 => a[0] as i8 as f64,
                    Scalar::U8 => a[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([a[0], a[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([a[0], a[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
                    Scalar::U32 => u32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
                    Scalar::F32 => f32::from_le_bytes([a[0], a[1], a[2], a[3]]) as f64,
                    Scalar::F64 => f64::from_le_bytes(a),
                })
            }
        }
    }
}

fn split_header(path: &Path, bytes: &[u8]) -> Result<(String, usize)> {
    let marker = b"end_header";
    let at = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, "ply: missing end_header"))?;
    let mut end = at + marker.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    let header = std::str::from_utf8(&bytes[..at])
        .map_err(|_| Error::parse(path, "ply: header is not text"))?;
    Ok((header.to_string(), end))
}

/// Parse an ASCII or binary PLY with a `vertex` element (x, y, z and
/// optional red/green/blue) and an optional `face` element.
pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Geometry> {
    let bad = |m: String| Error::parse(path, format!("ply: {m}"));
    let (header, body_start) = split_header(path, bytes)?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(bad("missing magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                encoding = Some(match t.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::LittleEndian,
                    Some("binary_big_endian") => Encoding::BigEndian,
                    other => return Err(bad(format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let (name, count) = match t.as_slice() {
                    [_, name, count] => (name, count),
                    _ => return Err(bad(format!("bad element line '{line}'"))),
                };
                elements.push(Element {
                    name: name.to_string(),
                    count: count
                        .parse()
                        .map_err(|_| bad(format!("bad element count '{count}'")))?,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?;
                let ty =
                    |s: &str| Scalar::parse(s).ok_or_else(|| bad(format!("unknown type '{s}'")));
                let prop = match t.as_slice() {
                    [_, "list", ct, it, name] => Property::List(ty(ct)?, ty(it)?, name.to_string()),
                    [_, st, name] => Property::Scalar(ty(st)?, name.to_string()),
                    _ => return Err(bad(format!("bad property line '{line}'"))),
                };
                el.props.push(prop);
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(bad(format!("unexpected header keyword '{other}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line".into()))?;
    let body_bytes = &bytes[body_start..];
    let mut body = match encoding {
        Encoding::Ascii => Body::Ascii(
            std::str::from_utf8(body_bytes)
                .map_err(|_| bad("ascii body is not text".into()))?
                .split_ascii_whitespace(),
        ),
        e => Body::Binary {
            data: body_bytes,
            pos: 0,
            big: e == Encoding::BigEndian,
        },
    };

    let mut verts = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let find = |n: &str| {
            el.props
                .iter()
                .position(|p| matches!(p, Property::Scalar(_, name) if name == n))
        };
        let xyz = [find("x"), find("y"), find("z")];
        let rgb = [find("red"), find("green"), find("blue")];
        let face_list = el.props.iter().position(
            |p| matches!(p, Property::List(_, _, n) if n == "vertex_indices" || n == "vertex_index"),
        );
        if el.name == "vertex" && xyz.iter().any(Option::is_none) {
            return Err(bad("vertex element lacks x, y or z".into()));
        }
        let mut scalars = vec![0.0; el.props.len()];
        let mut list = Vec::new();
        for row in 0..el.count {
            let short = || bad(format!("{} {row} is truncated", el.name));
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(ty, _) => scalars[pi] = body.next(*ty).ok_or_else(short)?,
                    Property::List(ct, it, _) => {
                        let n = body.next(*ct).ok_or_else(short)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(bad(format!("bad list length in {} {row}", el.name)));
                        }
                        let items = (0..n as usize)
                            .map(|_| body.next(*it).ok_or_else(short))
                            .collect::<Result<Vec<_>>>()?;
                        if Some(pi) == face_list {
                            list = items;
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let c = |k: usize| scalars[xyz[k].unwrap_or(0)];
                verts.push(Vec3::new(c(0), c(1), c(2)));
                if rgb.iter().all(Option::is_some) {
                    let mut col = [0.0; 3];
                    for (k, slot) in rgb.iter().enumerate() {
                        let pi = slot.unwrap_or(0);
                        let v = scalars[pi];
                        col[k] = match &el.props[pi] {
                            Property::Scalar(ty, _) if ty.is_integer() => v / 255.0,
                            _ => v,
                        };
                    }
                    colors.push(col);
                }
            } else if el.name == "face" && face_list.is_some() {
                if list.len() < 3 {
                    return Err(bad(format!("face {row} has fewer than 3 vertices")));
                }
                let idx: Vec<usize> = list
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(bad(format!("bad index in face {row}")))
                        }
                    })
                    .collect::<Result<_>>()?;
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }
    build(path, verts, colors, faces)
}

/// Read by extension: `.obj` or `.ply`.
pub fn read_geometry(path: &Path) -> Result<Geometry> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => {
            let bytes = read_bytes(path)?;
            let text =
                String::from_utf8(bytes).map_err(|_| Error::parse(path, "not UTF-8 text"))?;
            parse_obj(path, &text)
        }
        Some("ply") => parse_ply(path, &read_bytes(path)?),
        _ => Err(Error::Config(format!(
            "{}: unrecognised geometry format (expected .obj or .ply)",
            path.display()
        ))),
    }
}
