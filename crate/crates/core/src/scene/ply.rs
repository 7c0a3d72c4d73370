//! Binary little-endian PLY in the de-facto 3DGS vertex layout.
//!
//! On load, scales are exponentiated, opacity goes through a logistic sigmoid and
//! quaternions are normalized. [`write_ply`] applies the inverse transforms.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{normalize_quat, Gaussian, Scene, SH_COEFFS};
use crate::error::{Error, Result};

const REST_PER_CHANNEL: usize = SH_COEFFS - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
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

    fn read(self, b: &[u8]) -> f32 {
        match self {
            Scalar::I8 => b[0] as i8 as f32,
            Scalar::U8 => b[0] as f32,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|(_, s)| s.size()).sum()
    }

    fn offset_of(&self, name: &str) -> Result<(usize, Scalar)> {
        let mut offset = 0;
        for (prop, ty) in &self.properties {
            if prop == name {
                return Ok((offset, *ty));
            }
            offset += ty.size();
        }
        Err(Error::MissingProperty(name.to_string()))
    }
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Vec<Element>> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        Ok(reader.read_line(line)? > 0)
    };

    if !next_line(reader, &mut line)? || line.trim_end() != "ply" {
        return Err(Error::parse("header", "missing `ply` magic line"));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        if !next_line(reader, &mut line)? {
            return Err(Error::parse("header", "unexpected end of file before `end_header`"));
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                let fmt = words.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(Error::parse("format", format!("unsupported encoding `{fmt}`")));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse("element", "missing element name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(name, "missing or invalid element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse("property", "property declared before any element"))?;
                let ty = words.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::parse(
                        element.name.clone(),
                        "list properties are not supported",
                    ));
                }
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(element.name.clone(), format!("unknown property type `{ty}`")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(element.name.clone(), "property without a name"))?;
                element.properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse("header", format!("unexpected keyword `{other}`")));
            }
        }
    }
    if !saw_format {
        return Err(Error::parse("format", "missing format line"));
    }
    Ok(elements)
}

fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

fn logit(p: f32) -> f32 {
    let p = p as f64;
    (p / (1.0 - p)).ln() as f32
}

/// Reads a 3DGS point cloud. Ids follow file order.
pub fn read_ply<R: BufRead>(mut reader: R) -> Result<Scene> {
    let elements = parse_header(&mut reader)?;

    let mut gaussians = Vec::new();
    let mut found_vertex = false;
    for element in &elements {
        let stride = element.stride();
        if element.name != "vertex" {
            // Elements after the vertex block are ignored; ones before it are skipped.
            if found_vertex {
                break;
            }
            let mut skip = vec![0u8; stride * element.count];
            reader.read_exact(&mut skip).map_err(|e| {
                Error::parse(element.name.clone(), format!("truncated element data: {e}"))
            })?;
            continue;
        }
        found_vertex = true;

        let field = |name: &str| element.offset_of(name);
        let pos = [field("x")?, field("y")?, field("z")?];
        let dc = [field("f_dc_0")?, field("f_dc_1")?, field("f_dc_2")?];
        let rest: Vec<_> = (0..3 * REST_PER_CHANNEL)
            .map(|i| field(&format!("f_rest_{i}")))
            .collect::<Result<_>>()?;
        let opacity = field("opacity")?;
        let scale = [field("scale_0")?, field("scale_1")?, field("scale_2")?];
        let rot = [field("rot_0")?, field("rot_1")?, field("rot_2")?, field("rot_3")?];

        let mut row = vec![0u8; stride];
        gaussians.reserve(element.count);
        for i in 0..element.count {
            reader.read_exact(&mut row).map_err(|e| {
                Error::parse("vertex", format!("truncated at vertex {i} of {}: {e}", element.count))
            })?;
            let get = |(off, ty): (usize, Scalar)| ty.read(&row[off..]);

            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            for c in 0..3 {
                sh[0][c] = get(dc[c]);
                for k in 0..REST_PER_CHANNEL {
                    sh[k + 1][c] = get(rest[c * REST_PER_CHANNEL + k]);
                }
            }
            gaussians.push(Gaussian {
                id: i as u32,
                position: pos.map(get),
                scale: scale.map(|f| get(f).exp()),
                rotation: normalize_quat(rot.map(get)),
                opacity: sigmoid(get(opacity)),
                sh,
            });
        }
    }
    if !found_vertex {
        return Err(Error::parse("vertex", "file has no vertex element"));
    }
    Ok(Scene::new(gaussians))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene> {
    read_ply(BufReader::new(File::open(path)?))
}

/// Property names in the order [`write_ply`] emits them.
pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).into();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * REST_PER_CHANNEL).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Stored (pre-activation) values of one Gaussian in [`property_names`] order.
pub fn raw_values(g: &Gaussian) -> Vec<f32> {
    let mut v = Vec::with_capacity(62);
    v.extend_from_slice(&g.position);
    v.extend_from_slice(&[0.0; 3]);
    v.extend(g.sh[0]);
    for c in 0..3 {
        v.extend((1..SH_COEFFS).map(|k| g.sh[k][c]));
    }
    v.push(logit(g.opacity));
    v.extend(g.scale.map(|s| s.ln()));
    v.extend(g.rotation);
    v
}

pub fn write_ply<W: Write>(mut w: W, scene: &Scene) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.gaussians.len())?;
    for name in property_names() {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for g in &scene.gaussians {
        for v in raw_values(g) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_ply(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    write_ply(BufWriter::new(File::create(path)?), scene)
}
