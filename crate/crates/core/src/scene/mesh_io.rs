//! Wavefront OBJ and binary PLY mesh readers/writers (positions, optional
//! normals, triangle faces).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use super::{SceneError, TriangleMesh, Vec3};

pub fn load_mesh(path: &Path) -> Result<TriangleMesh, SceneError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| SceneError::Io {
        path: name.clone(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("obj") => parse_obj(&bytes, &name)?,
        Some("ply") => parse_ply(&bytes, &name)?,
        _ => {
            return Err(SceneError::MeshFormat {
                path: name,
                reason: "expected .obj or .ply".into(),
            })
        }
    };
    if mesh.faces.is_empty() {
        return Err(SceneError::EmptyMesh { path: name });
    }
    Ok(mesh)
}

fn parse_obj(bytes: &[u8], name: &str) -> Result<TriangleMesh, SceneError> {
    let text = std::str::from_utf8(bytes).map_err(|_| SceneError::MeshFormat {
        path: name.into(),
        reason: "OBJ is not UTF-8 text".into(),
    })?;
    let bad = |line: usize, reason: &str| SceneError::MeshFormat {
        path: name.into(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut positions: Vec<Point3<f64>> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    // corner = (position index, optional normal index)
    let mut corners: Vec<[(usize, Option<usize>); 3]> = Vec::new();

    let resolve = |raw: &str, len: usize, line: usize| -> Result<usize, SceneError> {
        let i: i64 = raw.parse().map_err(|_| bad(line, "bad index"))?;
        let idx = if i < 0 { len as i64 + i } else { i - 1 };
        if idx < 0 || idx as usize >= len {
            return Err(bad(line, "index out of range"));
        }
        Ok(idx as usize)
    };

    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad(ln, "bad vertex"))).collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                positions.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("vn") => {
                let c: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad(ln, "bad normal"))).collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(bad(ln, "normal needs 3 components"));
                }
                normals.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(bad(ln, "only triangle faces are supported"));
                }
                let mut face = [(0, None); 3];
                for (k, r) in refs.iter().enumerate() {
                    let mut parts = r.split('/');
                    let v = resolve(parts.next().unwrap_or(""), positions.len(), ln)?;
                    let _tex = parts.next();
                    let n = match parts.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, normals.len(), ln)?),
                        _ => None,
                    };
                    face[k] = (v, n);
                }
                corners.push(face);
            }
            _ => {}
        }
    }

    let all_have_normals = !corners.is_empty() && corners.iter().flatten().all(|c| c.1.is_some());
    if !all_have_normals {
        let faces = corners
            .iter()
            .map(|f| f.map(|(v, _)| v as u32))
            .collect();
        return TriangleMesh::new(positions, faces, None);
    }
    if normals.len() == positions.len() && corners.iter().flatten().all(|c| c.1 == Some(c.0)) {
        let faces = corners.iter().map(|f| f.map(|(v, _)| v as u32)).collect();
        return TriangleMesh::new(positions, faces, Some(normals));
    }
    // OBJ indexes normals separately; split vertices per distinct pair.
    let mut remap: HashMap<(usize, usize), u32> = HashMap::new();
    let mut verts = Vec::new();
    let mut vnormals = Vec::new();
    let mut faces = Vec::with_capacity(corners.len());
    for f in &corners {
        let mut tri = [0u32; 3];
        for (k, &(v, n)) in f.iter().enumerate() {
            let n = n.expect("checked above");
            tri[k] = *remap.entry((v, n)).or_insert_with(|| {
                verts.push(positions[v]);
                vnormals.push(normals[n]);
                (verts.len() - 1) as u32
            });
        }
        faces.push(tri);
    }
    TriangleMesh::new(verts, faces, Some(vnormals))
}

#[derive(Clone, Copy)]
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8], le: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if le { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }
}

enum PlyProp {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

fn parse_ply(bytes: &[u8], name: &str) -> Result<TriangleMesh, SceneError> {
    let bad = |reason: String| SceneError::MeshFormat {
        path: name.into(),
        reason,
    };
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text".into()))?;
    let mut body = &bytes[end + 11..];

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut little_endian = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => little_endian = Some(true),
            ["format", "binary_big_endian", _] => little_endian = Some(false),
            ["format", other, _] => return Err(bad(format!("only binary PLY is supported, found {other}"))),
            ["element", n, c] => elements.push(PlyElement {
                name: n.to_string(),
                count: c.parse().map_err(|_| bad("bad element count".into()))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, n] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ct = PlyType::parse(ct).ok_or_else(|| bad(format!("unknown type {ct}")))?;
                let it = PlyType::parse(it).ok_or_else(|| bad(format!("unknown type {it}")))?;
                el.props.push(PlyProp::List(n.to_string(), ct, it));
            }
            ["property", ty, n] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ty = PlyType::parse(ty).ok_or_else(|| bad(format!("unknown type {ty}")))?;
                el.props.push(PlyProp::Scalar(n.to_string(), ty));
            }
            _ => {}
        }
    }
    let le = little_endian.ok_or_else(|| bad("missing format line".into()))?;

    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let truncated = || bad("truncated body".into());
    for el in &elements {
        for _ in 0..el.count {
            let mut scalars: HashMap<&str, f64> = HashMap::new();
            let mut list: Option<Vec<u32>> = None;
            for p in &el.props {
                match p {
                    PlyProp::Scalar(n, ty) => {
                        if body.len() < ty.size() {
                            return Err(truncated());
                        }
                        scalars.insert(n.as_str(), ty.read(body, le));
                        body = &body[ty.size()..];
                    }
                    PlyProp::List(n, ct, it) => {
                        if body.len() < ct.size() {
                            return Err(truncated());
                        }
                        let count = ct.read(body, le) as usize;
                        body = &body[ct.size()..];
                        if body.len() < count * it.size() {
                            return Err(truncated());
                        }
                        let vals: Vec<u32> = (0..count)
                            .map(|k| it.read(&body[k * it.size()..], le) as u32)
                            .collect();
                        body = &body[count * it.size()..];
                        if n == "vertex_indices" || n == "vertex_index" {
                            list = Some(vals);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let get = |k: &str| scalars.get(k).copied();
                    let (x, y, z) = match (get("x"), get("y"), get("z")) {
                        (Some(x), Some(y), Some(z)) => (x, y, z),
                        _ => return Err(bad("vertex without x/y/z".into())),
                    };
                    positions.push(Point3::new(x, y, z));
                    if let (Some(nx), Some(ny), Some(nz)) = (get("nx"), get("ny"), get("nz")) {
                        normals.push(Vec3::new(nx, ny, nz));
                    }
                }
                "face" => {
                    let idx = list.ok_or_else(|| bad("face without vertex_indices".into()))?;
                    if idx.len() != 3 {
                        return Err(bad("only triangle faces are supported".into()));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
    }
    let normals = (normals.len() == positions.len() && !normals.is_empty()).then_some(normals);
    TriangleMesh::new(positions, faces, normals)
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), SceneError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    for n in &mesh.vertex_normals {
        out.push_str(&format!("vn {:?} {:?} {:?}\n", n.x, n.y, n.z));
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        out.push_str(&format!("f {a}//{a} {b}//{b} {c}//{c}\n"));
    }
    fs::write(path, out).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Binary little-endian PLY with double positions and normals.
pub fn write_ply(mesh: &TriangleMesh, path: &Path, with_normals: bool) -> Result<(), SceneError> {
    let mut out = Vec::new();
    let _ = write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    );
    if with_normals {
        out.extend_from_slice(b"property double nx\nproperty double ny\nproperty double nz\n");
    }
    let _ = write!(
        out,
        "element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.faces.len()
    );
    for (v, n) in mesh.vertices.iter().zip(&mesh.vertex_normals) {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if with_normals {
            for c in [n.x, n.y, n.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for i in f {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}
