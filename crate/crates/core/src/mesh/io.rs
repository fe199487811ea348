//! OBJ and PLY reading and writing.
//!
//! OBJ per-vertex colors use the common `v x y z r g b` extension. PLY is read
//! in ASCII and binary little-endian encodings; colors are accepted either as
//! `uchar` (scaled to `[0, 1]`) or floating point.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::TriMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::parse(
                path,
                "file name",
                "unknown mesh extension (expected .obj or .ply)",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

/// Loads a mesh; `format = None` infers it from the file extension.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<TriMesh> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (v, f, c) = match format {
        MeshFormat::Obj => parse_obj(path, &bytes)?,
        MeshFormat::Ply => parse_ply(path, &bytes)?,
    };
    TriMesh::new(v, f, c).map_err(|e| match e {
        Error::InvalidMesh(msg) | Error::Empty(msg) => Error::parse(path, "mesh validation", msg),
        other => other,
    })
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<()> {
    save_mesh_with(mesh, path, format, PlyEncoding::default())
}

pub fn save_mesh_with(
    mesh: &TriMesh,
    path: impl AsRef<Path>,
    format: Option<MeshFormat>,
    encoding: PlyEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::Obj => write_obj(mesh, &mut w),
        MeshFormat::Ply => write_ply(mesh, &mut w, encoding),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

type Parsed = (Vec<Vector3<f64>>, Vec<[usize; 3]>, Option<Vec<Vector3<f64>>>);

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, "file", e.to_string()))?;
    let mut verts = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut raw_faces: Vec<([i64; 3], usize)> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let loc = || format!("line {}", lineno + 1);
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let nums: Vec<f64> = tok
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, loc(), format!("bad vertex: {e}")))?;
                match nums.len() {
                    3 | 4 => verts.push(Vector3::new(nums[0], nums[1], nums[2])),
                    6 => {
                        verts.push(Vector3::new(nums[0], nums[1], nums[2]));
                        colors.push(Vector3::new(nums[3], nums[4], nums[5]));
                    }
                    k => {
                        return Err(Error::parse(
                            path,
                            loc(),
                            format!("vertex has {k} components"),
                        ))
                    }
                }
            }
            Some("f") => {
                let idx: Vec<i64> = tok
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, loc(), format!("bad face index: {e}")))?;
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        loc(),
                        format!("only triangles are supported, face has {} corners", idx.len()),
                    ));
                }
                raw_faces.push(([idx[0], idx[1], idx[2]], lineno + 1));
            }
            _ => {}
        }
    }

    let n = verts.len() as i64;
    for (idx, lineno) in raw_faces {
        let mut f = [0usize; 3];
        for k in 0..3 {
            let i = idx[k];
            let resolved = if i > 0 { i - 1 } else { n + i };
            if i == 0 || resolved < 0 || resolved >= n {
                return Err(Error::parse(
                    path,
                    format!("line {lineno}"),
                    format!("face index {i} out of range for {n} vertices"),
                ));
            }
            f[k] = resolved as usize;
        }
        faces.push(f);
    }

    let colors = if colors.is_empty() {
        None
    } else if colors.len() == verts.len() {
        Some(colors)
    } else {
        return Err(Error::parse(
            path,
            "vertices",
            "only some vertices carry colors",
        ));
    };
    Ok((verts, faces, colors))
}

fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    let colors = mesh.colors();
    for (i, v) in mesh.vertices().iter().enumerate() {
        match colors {
            Some(c) => writeln!(
                w,
                "v {:e} {:e} {:e} {:e} {:e} {:e}",
                v.x, v.y, v.z, c[i].x, c[i].y, c[i].z
            )?,
            None => writeln!(w, "v {:e} {:e} {:e}", v.x, v.y, v.z)?,
        }
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Parsed> {
    // header is ASCII and terminated by "end_header\n"
    let marker = b"end_header";
    let hpos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, "header", "missing end_header"))?;
    let mut body = hpos + marker.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..hpos])
        .map_err(|e| Error::parse(path, "header", e.to_string()))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(path, "header line 1", "missing 'ply' magic"));
    }
    let mut ascii = None;
    let mut elements: Vec<Element> = Vec::new();
    for (k, line) in lines.enumerate() {
        let loc = format!("header line {}", k + 2);
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                ascii = Some(match t.get(1).copied() {
                    Some("ascii") => true,
                    Some("binary_little_endian") => false,
                    other => {
                        return Err(Error::parse(
                            path,
                            loc,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                })
            }
            Some("element") => {
                let count = t
                    .get(2)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(path, &loc, "bad element count"))?;
                elements.push(Element {
                    name: t.get(1).unwrap_or(&"").to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, &loc, "property before element"))?;
                let prop = if t.get(1) == Some(&"list") {
                    let (Some(ct), Some(it), Some(name)) = (
                        t.get(2).and_then(|s| Scalar::parse(s)),
                        t.get(3).and_then(|s| Scalar::parse(s)),
                        t.get(4),
                    ) else {
                        return Err(Error::parse(path, loc, "bad list property"));
                    };
                    Property::List(name.to_string(), ct, it)
                } else {
                    let (Some(ty), Some(name)) = (t.get(1).and_then(|s| Scalar::parse(s)), t.get(2))
                    else {
                        return Err(Error::parse(path, loc, "bad property"));
                    };
                    Property::Scalar(name.to_string(), ty)
                };
                el.props.push(prop);
            }
            _ => {}
        }
    }
    let ascii = ascii.ok_or_else(|| Error::parse(path, "header", "missing format line"))?;

    let mut reader = PlyReader {
        path,
        bytes: &bytes[body..],
        pos: 0,
        ascii,
        tokens: None,
        line: 0,
    };
    if ascii {
        reader.tokens = Some(
            std::str::from_utf8(&bytes[body..])
                .map_err(|e| Error::parse(path, "body", e.to_string()))?
                .lines()
                .enumerate()
                .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t.to_string())))
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect(),
        );
    }

    let mut verts = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for item in 0..el.count {
            let mut pos = [0.0; 3];
            let mut col = [f64::NAN; 3];
            let mut col_scale = 1.0;
            let mut face: Option<Vec<f64>> = None;
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = reader.scalar(*ty, &el.name, item)?;
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            "red" | "r" => {
                                col[0] = v;
                                if *ty == Scalar::U8 {
                                    col_scale = 1.0 / 255.0;
                                }
                            }
                            "green" | "g" => col[1] = v,
                            "blue" | "b" => col[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let count = reader.scalar(*ct, &el.name, item)? as usize;
                        let mut vals = Vec::with_capacity(count);
                        for _ in 0..count {
                            vals.push(reader.scalar(*it, &el.name, item)?);
                        }
                        if (name == "vertex_indices" || name == "vertex_index") && it.is_integer() {
                            face = Some(vals);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    verts.push(Vector3::new(pos[0], pos[1], pos[2]));
                    if col.iter().all(|c| c.is_finite()) {
                        colors.push(Vector3::new(col[0], col[1], col[2]) * col_scale);
                    }
                }
                "face" => {
                    let f = face.ok_or_else(|| {
                        Error::parse(path, format!("face {item}"), "missing vertex_indices")
                    })?;
                    if f.len() != 3 {
                        return Err(Error::parse(
                            path,
                            format!("face {item}"),
                            format!("only triangles are supported, face has {} corners", f.len()),
                        ));
                    }
                    let mut tri = [0usize; 3];
                    for k in 0..3 {
                        if f[k] < 0.0 {
                            return Err(Error::parse(
                                path,
                                format!("face {item}"),
                                format!("negative vertex index {}", f[k]),
                            ));
                        }
                        tri[k] = f[k] as usize;
                    }
                    faces.push(tri);
                }
                _ => {}
            }
        }
    }
    let n = verts.len();
    for (fi, f) in faces.iter().enumerate() {
        if let Some(bad) = f.iter().find(|&&i| i >= n) {
            return Err(Error::parse(
                path,
                format!("face {fi}"),
                format!("face index {bad} out of range for {n} vertices"),
            ));
        }
    }
    let colors = if colors.len() == n && n > 0 {
        Some(colors)
    } else {
        None
    };
    Ok((verts, faces, colors))
}

struct PlyReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    ascii: bool,
    tokens: Option<Vec<(usize, String)>>,
    line: usize,
}

impl PlyReader<'_> {
    fn scalar(&mut self, ty: Scalar, element: &str, item: usize) -> Result<f64> {
        if self.ascii {
            let (line, tok) = self.tokens.as_mut().and_then(Vec::pop).ok_or_else(|| {
                Error::parse(
                    self.path,
                    format!("{element} {item}"),
                    "unexpected end of data",
                )
            })?;
            self.line = line;
            tok.parse::<f64>().map_err(|e| {
                Error::parse(self.path, format!("body line {line}"), format!("{tok:?}: {e}"))
            })
        } else {
            let sz = ty.size();
            if self.pos + sz > self.bytes.len() {
                return Err(Error::parse(
                    self.path,
                    format!("byte offset {} ({element} {item})", self.pos),
                    "unexpected end of data",
                ));
            }
            let v = ty.read_le(&self.bytes[self.pos..self.pos + sz]);
            self.pos += sz;
            Ok(v)
        }
    }
}

fn write_ply(mesh: &TriMesh, w: &mut impl Write, enc: PlyEncoding) -> std::io::Result<()> {
    let colors = mesh.colors();
    writeln!(w, "ply")?;
    match enc {
        PlyEncoding::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyEncoding::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {}", mesh.n_vertices())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    if colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property double {c}")?;
        }
    }
    writeln!(w, "element face {}", mesh.n_faces())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        let mut vals = vec![v.x, v.y, v.z];
        if let Some(c) = colors {
            vals.extend([c[i].x, c[i].y, c[i].z]);
        }
        match enc {
            PlyEncoding::Ascii => {
                let s: Vec<String> = vals.iter().map(|x| format!("{x:e}")).collect();
                writeln!(w, "{}", s.join(" "))?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for x in vals {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    for f in mesh.faces() {
        match enc {
            PlyEncoding::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyEncoding::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}
