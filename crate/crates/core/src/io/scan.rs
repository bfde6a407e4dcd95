//! Scan geometry loading: polygon-format files (ASCII or binary
//! little-endian) and plain whitespace-separated XYZ text. Only vertex
//! positions are extracted; faces and other elements are skipped.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use nalgebra::Vector3;

use crate::registration::ScanGeometry;

use super::IoError;

fn parse_error(file: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { file: file.to_path_buf(), line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<ScalarType> {
        Some(match token {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 => 4,
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            ScalarType::I8 => r.read_i8()? as f64,
            ScalarType::U8 => r.read_u8()? as f64,
            ScalarType::I16 => r.read_i16::<LittleEndian>()? as f64,
            ScalarType::U16 => r.read_u16::<LittleEndian>()? as f64,
            ScalarType::I32 => r.read_i32::<LittleEndian>()? as f64,
            ScalarType::U32 => r.read_u32::<LittleEndian>()? as f64,
            ScalarType::F32 => r.read_f32::<LittleEndian>()? as f64,
            ScalarType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { ty: ScalarType, name: String },
    List { count_ty: ScalarType, elem_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

struct PlyHeader {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Number of header lines, including `end_header`.
    line_count: usize,
}

fn parse_header(path: &Path, text: &str) -> Result<PlyHeader, IoError> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_count = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        line_count = line_no;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("ply") if line_no == 1 => {}
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match fields.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(parse_error(
                            path,
                            line_no,
                            format!("unsupported format '{}'", other.unwrap_or("")),
                        ));
                    }
                });
            }
            Some("element") => {
                if fields.len() != 3 {
                    return Err(parse_error(path, line_no, "element line needs name and count"));
                }
                let count: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_error(path, line_no, format!("invalid count '{}'", fields[2])))?;
                elements.push(Element { name: fields[1].to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, line_no, "property before any element"))?;
                if fields.get(1).copied() == Some("list") {
                    if fields.len() != 5 {
                        return Err(parse_error(path, line_no, "list property needs 4 arguments"));
                    }
                    let count_ty = ScalarType::parse(fields[2])
                        .ok_or_else(|| parse_error(path, line_no, format!("unknown type '{}'", fields[2])))?;
                    let elem_ty = ScalarType::parse(fields[3])
                        .ok_or_else(|| parse_error(path, line_no, format!("unknown type '{}'", fields[3])))?;
                    element.properties.push(Property::List { count_ty, elem_ty });
                } else {
                    if fields.len() != 3 {
                        return Err(parse_error(path, line_no, "property needs type and name"));
                    }
                    let ty = ScalarType::parse(fields[1])
                        .ok_or_else(|| parse_error(path, line_no, format!("unknown type '{}'", fields[1])))?;
                    element.properties.push(Property::Scalar { ty, name: fields[2].to_string() });
                }
            }
            Some("end_header") => {
                let format = format
                    .ok_or_else(|| parse_error(path, line_no, "missing format line"))?;
                return Ok(PlyHeader { format, elements, line_count });
            }
            Some(other) => {
                return Err(parse_error(path, line_no, format!("unknown header keyword '{other}'")));
            }
        }
    }
    Err(parse_error(path, line_count, "missing end_header"))
}

/// Byte positions of x, y, z within a vertex element.
fn xyz_indices(path: &Path, element: &Element) -> Result<[usize; 3], IoError> {
    let find = |axis: &str| -> Result<usize, IoError> {
        element
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, ty }
                if name == axis && matches!(ty, ScalarType::F32 | ScalarType::F64)))
            .ok_or_else(|| {
                parse_error(path, 0, format!("vertex element lacks a float '{axis}' property"))
            })
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

fn load_ply(path: &Path, bytes: &[u8]) -> Result<Vec<Vector3<f64>>, IoError> {
    // The header is ASCII even for binary bodies; find end_header first.
    let needle = b"end_header";
    let header_end = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .ok_or_else(|| parse_error(path, 0, "missing end_header"))?;
    let body_start = bytes[header_end..]
        .iter()
        .position(|b| *b == b'\n')
        .map(|i| header_end + i + 1)
        .ok_or_else(|| parse_error(path, 0, "no data after end_header"))?;
    let header_text = std::str::from_utf8(&bytes[..body_start])
        .map_err(|_| parse_error(path, 0, "header is not valid ASCII"))?;
    let header = parse_header(path, header_text)?;

    let mut vertices = Vec::new();
    match header.format {
        PlyFormat::Ascii => {
            let body = std::str::from_utf8(&bytes[body_start..])
                .map_err(|_| parse_error(path, 0, "ascii body contains invalid bytes"))?;
            let mut lines = body.lines().enumerate();
            for element in &header.elements {
                let is_vertex = element.name == "vertex";
                let xyz = if is_vertex { Some(xyz_indices(path, element)?) } else { None };
                for _ in 0..element.count {
                    let (idx, line) = lines
                        .next()
                        .ok_or_else(|| parse_error(path, 0, "unexpected end of data"))?;
                    let line_no = header.line_count + idx + 1;
                    let mut values = Vec::new();
                    let mut tokens = line.split_whitespace();
                    for property in &element.properties {
                        match property {
                            Property::Scalar { .. } => {
                                let token = tokens.next().ok_or_else(|| {
                                    parse_error(path, line_no, "missing property value")
                                })?;
                                let v: f64 = token.parse().map_err(|_| {
                                    parse_error(path, line_no, format!("invalid value '{token}'"))
                                })?;
                                values.push(v);
                            }
                            Property::List { .. } => {
                                let token = tokens.next().ok_or_else(|| {
                                    parse_error(path, line_no, "missing list count")
                                })?;
                                let n: usize = token.parse().map_err(|_| {
                                    parse_error(path, line_no, format!("invalid list count '{token}'"))
                                })?;
                                for _ in 0..n {
                                    tokens.next().ok_or_else(|| {
                                        parse_error(path, line_no, "truncated list")
                                    })?;
                                }
                                values.push(f64::NAN); // placeholder, lists are skipped
                            }
                        }
                    }
                    if let Some(xyz) = xyz {
                        let v = Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]);
                        if v.iter().any(|c| !c.is_finite()) {
                            return Err(parse_error(path, line_no, "non-finite vertex"));
                        }
                        vertices.push(v);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut cursor = std::io::Cursor::new(&bytes[body_start..]);
            let truncated = |_| parse_error(path, 0, "truncated binary body");
            for element in &header.elements {
                let is_vertex = element.name == "vertex";
                let xyz = if is_vertex { Some(xyz_indices(path, element)?) } else { None };
                for _ in 0..element.count {
                    let mut values = vec![f64::NAN; element.properties.len()];
                    for (pi, property) in element.properties.iter().enumerate() {
                        match property {
                            Property::Scalar { ty, .. } => {
                                values[pi] = ty.read_le(&mut cursor).map_err(truncated)?;
                            }
                            Property::List { count_ty, elem_ty } => {
                                let n = count_ty.read_le(&mut cursor).map_err(truncated)?;
                                if !(0.0..=1e9).contains(&n) {
                                    return Err(parse_error(path, 0, "implausible list count"));
                                }
                                let skip = (n as usize) * elem_ty.size();
                                let mut sink = vec![0u8; skip];
                                cursor.read_exact(&mut sink).map_err(truncated)?;
                            }
                        }
                    }
                    if let Some(xyz) = xyz {
                        let v = Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]);
                        if v.iter().any(|c| !c.is_finite()) {
                            return Err(parse_error(path, 0, "non-finite vertex"));
                        }
                        vertices.push(v);
                    }
                }
            }
        }
    }
    Ok(vertices)
}

fn load_xyz(path: &Path, text: &str) -> Result<Vec<Vector3<f64>>, IoError> {
    let mut vertices = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(path, line_no, format!("expected 3 coordinates, got {}", fields.len())));
        }
        let mut coords = [0.0f64; 3];
        for (i, token) in fields.iter().enumerate() {
            coords[i] = token
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("invalid coordinate '{token}'")))?;
            if !coords[i].is_finite() {
                return Err(parse_error(path, line_no, "non-finite coordinate"));
            }
        }
        vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    Ok(vertices)
}

/// Loads a scan from a polygon-format file or XYZ text; the scan id is the
/// file stem.
pub fn load_scan(path: &Path) -> Result<ScanGeometry, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let vertices = if bytes.starts_with(b"ply\n") || bytes.starts_with(b"ply\r\n") {
        load_ply(path, &bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| parse_error(path, 0, "file is neither a polygon file nor text"))?;
        load_xyz(path, text)?
    };
    if vertices.is_empty() {
        return Err(IoError::EmptyScan { file: path.to_path_buf() });
    }
    let scan_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan").to_string();
    ScanGeometry::new(scan_id, vertices)
        .map_err(|_| IoError::EmptyScan { file: path.to_path_buf() })
}

pub fn write_scan_ply_ascii(path: &Path, scan: &ScanGeometry) -> Result<(), IoError> {
    let mut text = String::new();
    text.push_str("ply\nformat ascii 1.0\n");
    text.push_str(&format!("element vertex {}\n", scan.vertices.len()));
    text.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for v in &scan.vertices {
        text.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn write_scan_ply_binary(path: &Path, scan: &ScanGeometry) -> Result<(), IoError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    bytes.extend_from_slice(format!("element vertex {}\n", scan.vertices.len()).as_bytes());
    bytes.extend_from_slice(b"property double x\nproperty double y\nproperty double z\nend_header\n");
    for v in &scan.vertices {
        bytes.extend_from_slice(&v.x.to_le_bytes());
        bytes.extend_from_slice(&v.y.to_le_bytes());
        bytes.extend_from_slice(&v.z.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn write_scan_xyz(path: &Path, scan: &ScanGeometry) -> Result<(), IoError> {
    let mut text = String::new();
    for v in &scan.vertices {
        text.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}
