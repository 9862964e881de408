//! Minimal PLY point-cloud reader/writer.
//!
//! Reads ASCII and binary (little/big endian) PLY files, picking up the
//! `x`/`y`/`z` vertex properties plus the optional `intensity`, `semantic`
//! and `instance` properties used by this crate. Unknown scalar properties
//! are skipped. Writing always emits binary little-endian, the canonical
//! on-disk form for every cloud this crate produces.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Null instance id in PLY output.
pub const NULL_INSTANCE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! de {
            ($ty:ty) => {{
                let arr: [u8; std::mem::size_of::<$ty>()] = bytes.try_into().unwrap();
                if big_endian {
                    <$ty>::from_be_bytes(arr) as f64
                } else {
                    <$ty>::from_le_bytes(arr) as f64
                }
            }};
        }
        match self {
            Scalar::I8 => de!(i8),
            Scalar::U8 => de!(u8),
            Scalar::I16 => de!(i16),
            Scalar::U16 => de!(u16),
            Scalar::I32 => de!(i32),
            Scalar::U32 => de!(u32),
            Scalar::F32 => de!(f32),
            Scalar::F64 => de!(f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

struct Property {
    name: String,
    scalar: Scalar,
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
    has_list: bool,
}

/// In-memory cloud as stored in a PLY file. Field vectors, when present,
/// match `positions` in length.
#[derive(Debug, Clone, Default)]
pub struct PlyCloud {
    pub positions: Vec<Vector3<f64>>,
    pub intensity: Option<Vec<f32>>,
    pub semantic: Option<Vec<u16>>,
    pub instance: Option<Vec<i32>>,
}

impl PlyCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {}", path.display(), msg))
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    let mut read_line = |reader: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(format_err(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut reader)?.trim() != "ply" {
        return Err(format_err(path, "missing `ply` magic"));
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = read_line(&mut reader)?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match tokens.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some("binary_big_endian") => Format::BinaryBe,
                    other => {
                        return Err(format_err(path, format!("unknown format {other:?}")))
                    }
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| format_err(path, "element without name"))?;
                let count: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| format_err(path, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| format_err(path, "property before element"))?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| format_err(path, "property without type"))?;
                if ty == "list" {
                    element.has_list = true;
                    continue;
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| format_err(path, format!("unknown property type `{ty}`")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| format_err(path, "property without name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    scalar,
                });
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(format_err(path, format!("unknown header keyword `{other}`")));
            }
        }
    }
    let format = format.ok_or_else(|| format_err(path, "missing format line"))?;

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| format_err(path, "missing `vertex` element"))?;
    if elements[..vertex_pos].iter().any(|e| e.count > 0) {
        return Err(format_err(path, "non-empty element precedes `vertex`"));
    }
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(format_err(path, "list property on `vertex` is unsupported"));
    }

    let col = |name: &str| vertex.properties.iter().position(|p| p.name == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(format_err(path, "missing field: vertex needs x, y, z"));
    };
    let i_int = col("intensity");
    let i_sem = col("semantic");
    let i_inst = col("instance");

    let n = vertex.count;
    let mut cloud = PlyCloud {
        positions: Vec::with_capacity(n),
        intensity: i_int.map(|_| Vec::with_capacity(n)),
        semantic: i_sem.map(|_| Vec::with_capacity(n)),
        instance: i_inst.map(|_| Vec::with_capacity(n)),
    };

    let mut row = vec![0.0f64; vertex.properties.len()];
    let push_row = |cloud: &mut PlyCloud, row: &[f64]| {
        cloud
            .positions
            .push(Vector3::new(row[ix], row[iy], row[iz]));
        if let (Some(c), Some(v)) = (i_int, cloud.intensity.as_mut()) {
            v.push(row[c] as f32);
        }
        if let (Some(c), Some(v)) = (i_sem, cloud.semantic.as_mut()) {
            v.push(row[c] as u16);
        }
        if let (Some(c), Some(v)) = (i_inst, cloud.instance.as_mut()) {
            v.push(row[c] as i32);
        }
    };

    match format {
        Format::Ascii => {
            let mut line = String::new();
            let mut loaded = 0;
            while loaded < n {
                line.clear();
                let read = reader
                    .read_line(&mut line)
                    .map_err(|e| Error::io(path, e))?;
                if read == 0 {
                    return Err(format_err(path, "unexpected end of vertex data"));
                }
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let mut tokens = trimmed.split_whitespace();
                for (slot, _prop) in row.iter_mut().zip(&vertex.properties) {
                    *slot = tokens
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| format_err(path, "bad ascii vertex row"))?;
                }
                push_row(&mut cloud, &row);
                loaded += 1;
            }
        }
        Format::BinaryLe | Format::BinaryBe => {
            let big = format == Format::BinaryBe;
            let stride: usize = vertex.properties.iter().map(|p| p.scalar.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..n {
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| Error::io(path, e))?;
                let mut offset = 0;
                for (slot, prop) in row.iter_mut().zip(&vertex.properties) {
                    let size = prop.scalar.size();
                    *slot = prop.scalar.decode(&buf[offset..offset + size], big);
                    offset += size;
                }
                push_row(&mut cloud, &row);
            }
        }
    }

    for (len, name) in [
        (cloud.intensity.as_ref().map(Vec::len), "intensity"),
        (cloud.semantic.as_ref().map(Vec::len), "semantic"),
        (cloud.instance.as_ref().map(Vec::len), "instance"),
    ] {
        if let Some(len) = len {
            debug_assert_eq!(len, cloud.positions.len(), "{name} length");
        }
    }
    Ok(cloud)
}

/// Writes a binary little-endian PLY. `comments` land in the header verbatim.
pub fn write_ply(path: &Path, cloud: &PlyCloud, comments: &[String]) -> Result<()> {
    for (field, name) in [
        (cloud.intensity.as_ref().map(Vec::len), "intensity"),
        (cloud.semantic.as_ref().map(Vec::len), "semantic"),
        (cloud.instance.as_ref().map(Vec::len), "instance"),
    ] {
        if let Some(len) = field {
            if len != cloud.positions.len() {
                return Err(Error::Format(format!(
                    "{name} length {len} does not match {} positions",
                    cloud.positions.len()
                )));
            }
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    writeln!(w, "ply").map_err(io)?;
    writeln!(w, "format binary_little_endian 1.0").map_err(io)?;
    for comment in comments {
        writeln!(w, "comment {comment}").map_err(io)?;
    }
    writeln!(w, "element vertex {}", cloud.positions.len()).map_err(io)?;
    writeln!(w, "property float x").map_err(io)?;
    writeln!(w, "property float y").map_err(io)?;
    writeln!(w, "property float z").map_err(io)?;
    if cloud.intensity.is_some() {
        writeln!(w, "property float intensity").map_err(io)?;
    }
    if cloud.semantic.is_some() {
        writeln!(w, "property ushort semantic").map_err(io)?;
    }
    if cloud.instance.is_some() {
        writeln!(w, "property int instance").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;

    for (i, p) in cloud.positions.iter().enumerate() {
        w.write_all(&(p.x as f32).to_le_bytes()).map_err(io)?;
        w.write_all(&(p.y as f32).to_le_bytes()).map_err(io)?;
        w.write_all(&(p.z as f32).to_le_bytes()).map_err(io)?;
        if let Some(v) = &cloud.intensity {
            w.write_all(&v[i].to_le_bytes()).map_err(io)?;
        }
        if let Some(v) = &cloud.semantic {
            w.write_all(&v[i].to_le_bytes()).map_err(io)?;
        }
        if let Some(v) = &cloud.instance {
            w.write_all(&v[i].to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
