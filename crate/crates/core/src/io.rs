//! OBJ, PLY and PGM readers and writers.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{vec3, Vec3};
use crate::mesh::{ScanCloud, TriMesh};
use crate::tensor::Real;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- OBJ

pub fn obj_to_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.n_vertices() * 40 + mesh.n_faces() * 20);
    for v in &mesh.vertices {
        // `{}` prints the shortest representation that parses back exactly.
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ctx = || format!("OBJ line {}", ln + 1);
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<Real> = it
                    .take(3)
                    .map(|t| t.parse::<Real>().map_err(|e| Error::parse(ctx(), e)))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::parse(ctx(), "vertex needs three coordinates"));
                }
                vertices.push(vec3(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        // Accept `i`, `i/t`, `i/t/n`, `i//n`.
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|e| Error::parse(ctx(), e))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(Error::parse(ctx(), format!("bad vertex index {i}")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(ctx(), "face needs at least three vertices"));
                }
                // Fan-triangulate polygons.
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    write_bytes(path, obj_to_string(mesh).as_bytes())
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
    parse_obj(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::parse(format!("{}: {context}", path.display()), message),
        other => other,
    })
}

// ---------------------------------------------------------------- PLY

#[derive(Clone, Copy, Debug, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug)]
enum PlyProp {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

/// Geometry read from a PLY file. Faces are present only when the file has
/// a face element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let err = |m: String| Error::parse("PLY", m);
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .map(|p| p + 11)
        .or_else(|| bytes.windows(12).position(|w| w == b"end_header\r\n").map(|p| p + 12))
        .ok_or_else(|| err("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| err(e.to_string()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing ply magic".into()));
    }
    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(err(format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let ct = PlyType::parse(ct).ok_or_else(|| err(format!("bad type {ct}")))?;
                let it = PlyType::parse(it).ok_or_else(|| err(format!("bad type {it}")))?;
                el.props.push(PlyProp::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before element".into()))?;
                let ty = PlyType::parse(ty).ok_or_else(|| err(format!("bad type {ty}")))?;
                el.props.push(PlyProp::Scalar(name.to_string(), ty));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| err("missing format line".into()))?;
    let body = &bytes[header_end..];
    let mut data = PlyData::default();

    // A uniform cursor over ASCII tokens or binary values.
    let text_body;
    let mut tokens = if binary {
        None
    } else {
        text_body = std::str::from_utf8(body).map_err(|e| err(e.to_string()))?;
        Some(text_body.split_ascii_whitespace())
    };
    let mut pos = 0usize;
    let mut next = |ty: PlyType| -> Result<f64> {
        match tokens.as_mut() {
            Some(toks) => toks
                .next()
                .ok_or_else(|| err("unexpected end of data".into()))?
                .parse::<f64>()
                .map_err(|e| err(e.to_string())),
            None => {
                let n = ty.size();
                if pos + n > body.len() {
                    return Err(err("unexpected end of binary data".into()));
                }
                let v = ty.read_le(&body[pos..pos + n]);
                pos += n;
                Ok(v)
            }
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let has_color = is_vertex
            && el
                .props
                .iter()
                .any(|p| matches!(p, PlyProp::Scalar(n, _) if n == "red"));
        if has_color {
            data.colors = Some(Vec::with_capacity(el.count));
        }
        for _ in 0..el.count {
            let mut xyz = [0.0f64; 3];
            let mut rgb = [0u8; 3];
            for prop in &el.props {
                match prop {
                    PlyProp::Scalar(name, ty) => {
                        let v = next(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = v as u8,
                            "green" => rgb[1] = v as u8,
                            "blue" => rgb[2] = v as u8,
                            _ => {}
                        }
                    }
                    PlyProp::List(name, ct, it) => {
                        let n = next(*ct)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(next(*it)? as usize);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if idx.len() < 3 {
                                return Err(err("face with fewer than three vertices".into()));
                            }
                            for k in 1..idx.len() - 1 {
                                data.faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                data.vertices.push(vec3(xyz[0] as Real, xyz[1] as Real, xyz[2] as Real));
                if let Some(c) = data.colors.as_mut() {
                    c.push(rgb);
                }
            }
        }
    }
    Ok(data)
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    parse_ply(&read_bytes(path)?)
}

pub fn read_scan(path: &Path) -> Result<ScanCloud> {
    Ok(ScanCloud::new(read_ply(path)?.vertices))
}

/// Binary little-endian point cloud with `double` coordinates.
pub fn scan_to_ply(scan: &ScanCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        scan.len()
    )
    .into_bytes();
    for p in &scan.points {
        for c in p.to_array() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: &Path, scan: &ScanCloud) -> Result<()> {
    write_bytes(path, &scan_to_ply(scan))
}

/// ASCII mesh with per-vertex colors.
pub fn colored_mesh_to_ply(mesh: &TriMesh, colors: &[[u8; 3]]) -> String {
    assert_eq!(colors.len(), mesh.n_vertices(), "one color per vertex");
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        mesh.n_vertices(),
        mesh.n_faces()
    );
    for (v, c) in mesh.vertices.iter().zip(colors) {
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// ASCII point cloud with per-point colors.
pub fn colored_points_to_ply(points: &[Vec3], colors: &[[u8; 3]]) -> String {
    assert_eq!(colors.len(), points.len(), "one color per point");
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    for (v, c) in points.iter().zip(colors) {
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
    }
    s
}

// ---------------------------------------------------------------- PGM

/// 8-bit gray image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<GrayImage> {
        let err = |m: &str| Error::parse("PGM", m);
        // Header: magic, width, height, maxval, separated by whitespace
        // (comments allowed), then exactly one whitespace byte.
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
                if bytes[i] == b'#' {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                } else {
                    i += 1;
                }
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(err("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| err("bad header"))?);
        }
        if fields[0] != "P5" {
            return Err(err("only binary P5 images are supported"));
        }
        let width: usize = fields[1].parse().map_err(|_| err("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| err("bad height"))?;
        if fields[3] != "255" {
            return Err(err("only 8-bit images are supported"));
        }
        i += 1;
        let n = width * height;
        if bytes.len() < i + n {
            return Err(err("truncated pixel data"));
        }
        Ok(GrayImage {
            width,
            height,
            pixels: bytes[i..i + n].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_pgm())
    }

    pub fn load(path: &Path) -> Result<GrayImage> {
        GrayImage::from_pgm(&read_bytes(path)?).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Box-filter downsampling by an integer factor (partial blocks averaged
    /// over the pixels they hold).
    pub fn downsample(&self, factor: usize) -> GrayImage {
        assert!(factor >= 1, "downsample factor must be >= 1");
        if factor == 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut out = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut n) = (0u32, 0u32);
                for yy in y * factor..((y + 1) * factor).min(self.height) {
                    for xx in x * factor..((x + 1) * factor).min(self.width) {
                        acc += self.get(xx, yy) as u32;
                        n += 1;
                    }
                }
                out.pixels[y * w + x] = ((acc + n / 2) / n) as u8;
            }
        }
        out
    }
}
