//! PLY reading and writing, restricted to what the codec needs: float32
//! positions plus either uchar red/green/blue or float32 scalar attribute
//! channels, in ASCII or binary-little-endian form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pcac_core::cloud::PointCloud;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed header: {detail}")]
    Header {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{0}: unsupported format: {1}")]
    Unsupported(String, String),
    #[error("{path}:{line}: bad vertex data: {detail}")]
    Data {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("cannot save an empty point cloud")]
    Empty,
}

fn io_err(path: &Path, source: std::io::Error) -> PlyError {
    PlyError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PropKind {
    F32,
    U8,
}

#[derive(Debug, Clone)]
struct Prop {
    kind: PropKind,
    name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: PlyFormat,
    vertex_count: usize,
    props: Vec<Prop>,
    data_start_line: usize,
}

fn parse_header(path: &Path, reader: &mut impl BufRead) -> Result<Header, PlyError> {
    let p = || path.display().to_string();
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut read_line = |line: &mut String, lineno: &mut usize| -> Result<(), PlyError> {
        line.clear();
        *lineno += 1;
        let n = reader.read_line(line).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Err(PlyError::Header {
                path: path.display().to_string(),
                line: *lineno,
                detail: "unexpected end of file".into(),
            });
        }
        Ok(())
    };

    read_line(&mut line, &mut lineno)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::Header {
            path: p(),
            line: lineno,
            detail: format!("expected 'ply', got '{}'", line.trim_end()),
        });
    }
    read_line(&mut line, &mut lineno)?;
    let format = match line.trim_end() {
        "format ascii 1.0" => PlyFormat::Ascii,
        "format binary_little_endian 1.0" => PlyFormat::BinaryLittleEndian,
        other => {
            return Err(PlyError::Header {
                path: p(),
                line: lineno,
                detail: format!("unsupported format line '{other}'"),
            })
        }
    };

    let mut vertex_count = None;
    let mut props: Vec<Prop> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        read_line(&mut line, &mut lineno)?;
        let trimmed = line.trim_end();
        if trimmed == "end_header" {
            break;
        }
        let mut words = trimmed.split_whitespace();
        match words.next() {
            Some("comment") | Some("obj_info") => continue,
            Some("element") => {
                let name = words.next().unwrap_or_default();
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| PlyError::Header {
                        path: p(),
                        line: lineno,
                        detail: format!("bad element line '{trimmed}'"),
                    })?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(PlyError::Header {
                            path: p(),
                            line: lineno,
                            detail: "duplicate vertex element".into(),
                        });
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() {
                        return Err(PlyError::Unsupported(
                            p(),
                            format!("element '{name}' precedes the vertex element"),
                        ));
                    }
                    // Trailing elements (faces etc.) are ignored; we stop
                    // reading after the vertex block.
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err(PlyError::Unsupported(
                        p(),
                        "list property on vertex element".into(),
                    ));
                }
                let name = words.next().unwrap_or_default().to_string();
                if name.is_empty() {
                    return Err(PlyError::Header {
                        path: p(),
                        line: lineno,
                        detail: format!("bad property line '{trimmed}'"),
                    });
                }
                let kind = match ty {
                    "float" | "float32" => PropKind::F32,
                    "uchar" | "uint8" => PropKind::U8,
                    other => {
                        return Err(PlyError::Unsupported(
                            p(),
                            format!("property type '{other}' for '{name}'"),
                        ))
                    }
                };
                props.push(Prop { kind, name });
            }
            Some(other) => {
                return Err(PlyError::Header {
                    path: p(),
                    line: lineno,
                    detail: format!("unrecognized keyword '{other}'"),
                })
            }
            None => continue,
        }
    }
    let vertex_count = vertex_count.ok_or_else(|| {
        PlyError::Unsupported(p(), "no vertex element".into())
    })?;
    Ok(Header {
        format,
        vertex_count,
        props,
        data_start_line: lineno,
    })
}

fn read_vertex_values(
    path: &Path,
    header: &Header,
    reader: &mut impl BufRead,
) -> Result<Vec<f64>, PlyError> {
    let p = || path.display().to_string();
    let stride = header.props.len();
    let mut values = Vec::with_capacity(header.vertex_count * stride);
    match header.format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for row in 0..header.vertex_count {
                line.clear();
                let lineno = header.data_start_line + row + 1;
                let n = reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
                if n == 0 {
                    return Err(PlyError::Data {
                        path: p(),
                        line: lineno,
                        detail: "unexpected end of file".into(),
                    });
                }
                let mut count = 0;
                for word in line.split_whitespace() {
                    let v: f64 = word.parse().map_err(|_| PlyError::Data {
                        path: p(),
                        line: lineno,
                        detail: format!("bad number '{word}'"),
                    })?;
                    values.push(v);
                    count += 1;
                }
                if count != stride {
                    return Err(PlyError::Data {
                        path: p(),
                        line: lineno,
                        detail: format!("expected {stride} values, found {count}"),
                    });
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let row_bytes: usize = header
                .props
                .iter()
                .map(|pr| match pr.kind {
                    PropKind::F32 => 4,
                    PropKind::U8 => 1,
                })
                .sum();
            let mut buf = vec![0u8; row_bytes];
            for row in 0..header.vertex_count {
                reader.read_exact(&mut buf).map_err(|_| PlyError::Data {
                    path: p(),
                    line: header.data_start_line + 1,
                    detail: format!("binary payload truncated at vertex {row}"),
                })?;
                let mut offset = 0;
                for pr in &header.props {
                    match pr.kind {
                        PropKind::F32 => {
                            let v = f32::from_le_bytes(
                                buf[offset..offset + 4].try_into().unwrap(),
                            );
                            values.push(v as f64);
                            offset += 4;
                        }
                        PropKind::U8 => {
                            values.push(buf[offset] as f64);
                            offset += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(values)
}

fn parsed_to_cloud(path: &Path, header: &Header, values: Vec<f64>) -> Result<PointCloud, PlyError> {
    let p = || path.display().to_string();
    let stride = header.props.len();
    let find = |name: &str| header.props.iter().position(|pr| pr.name == name);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(PlyError::Unsupported(
                p(),
                "missing x/y/z position properties".into(),
            ))
        }
    };

    // Channel layout: full uchar RGB when present, otherwise every float
    // property besides the positions becomes a scalar channel.
    let rgb = [find("red"), find("green"), find("blue")];
    let (channel_indices, channel_names): (Vec<usize>, Vec<String>) =
        if let [Some(r), Some(g), Some(b)] = rgb {
            (vec![r, g, b], vec!["R".into(), "G".into(), "B".into()])
        } else {
            let scalars: Vec<usize> = (0..stride)
                .filter(|&i| i != xi && i != yi && i != zi)
                .filter(|&i| header.props[i].kind == PropKind::F32)
                .collect();
            let names = scalars.iter().map(|&i| header.props[i].name.clone()).collect();
            (scalars, names)
        };
    if channel_indices.is_empty() {
        return Err(PlyError::Unsupported(
            p(),
            "no attribute properties (positions only)".into(),
        ));
    }

    let mut positions = Vec::with_capacity(header.vertex_count);
    let mut attributes = Vec::with_capacity(header.vertex_count * channel_indices.len());
    for row in 0..header.vertex_count {
        let r = &values[row * stride..(row + 1) * stride];
        positions.push([r[xi], r[yi], r[zi]]);
        for &ci in &channel_indices {
            attributes.push(r[ci]);
        }
    }
    PointCloud::new(positions, attributes, channel_names)
        .map_err(|e| PlyError::Unsupported(p(), e.to_string()))
}

/// Loads a point cloud; the file must carry positions plus attributes
/// (RGB or scalar channels).
pub fn load_ply(path: &Path) -> Result<PointCloud, PlyError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let header = parse_header(path, &mut reader)?;
    let values = read_vertex_values(path, &header, &mut reader)?;
    parsed_to_cloud(path, &header, values)
}

/// Loads positions only, ignoring any attribute properties; used for the
/// out-of-band geometry file.
pub fn load_ply_positions(path: &Path) -> Result<Vec<[f64; 3]>, PlyError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let header = parse_header(path, &mut reader)?;
    let values = read_vertex_values(path, &header, &mut reader)?;
    let stride = header.props.len();
    let find = |name: &str| header.props.iter().position(|pr| pr.name == name);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(PlyError::Unsupported(
                path.display().to_string(),
                "missing x/y/z position properties".into(),
            ))
        }
    };
    Ok((0..header.vertex_count)
        .map(|row| {
            let r = &values[row * stride..(row + 1) * stride];
            [r[xi], r[yi], r[zi]]
        })
        .collect())
}

/// Color channels are written as uchar (rounded and clamped); scalar
/// channels as float32. Positions are float32 either way, so values must
/// be f32-representable to roundtrip bit-identically.
pub fn save_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<(), PlyError> {
    if cloud.is_empty() {
        return Err(PlyError::Empty);
    }
    let color = cloud.channel_names == ["R", "G", "B"];
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let fmt_line = match format {
        PlyFormat::Ascii => "format ascii 1.0",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0",
    };
    write!(w, "ply\n{fmt_line}\nelement vertex {}\n", cloud.len()).map_err(|e| io_err(path, e))?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}").map_err(|e| io_err(path, e))?;
    }
    if color {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}").map_err(|e| io_err(path, e))?;
        }
    } else {
        for name in &cloud.channel_names {
            writeln!(w, "property float {name}").map_err(|e| io_err(path, e))?;
        }
    }
    writeln!(w, "end_header").map_err(|e| io_err(path, e))?;

    let quantize_u8 = |v: f64| -> u8 { v.round().clamp(0.0, 255.0) as u8 };
    match format {
        PlyFormat::Ascii => {
            for (i, pos) in cloud.positions.iter().enumerate() {
                write!(w, "{} {} {}", pos[0] as f32, pos[1] as f32, pos[2] as f32)
                    .map_err(|e| io_err(path, e))?;
                for v in cloud.attr(i) {
                    if color {
                        write!(w, " {}", quantize_u8(*v)).map_err(|e| io_err(path, e))?;
                    } else {
                        write!(w, " {}", *v as f32).map_err(|e| io_err(path, e))?;
                    }
                }
                writeln!(w).map_err(|e| io_err(path, e))?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, pos) in cloud.positions.iter().enumerate() {
                for a in pos {
                    w.write_all(&(*a as f32).to_le_bytes())
                        .map_err(|e| io_err(path, e))?;
                }
                for v in cloud.attr(i) {
                    if color {
                        w.write_all(&[quantize_u8(*v)]).map_err(|e| io_err(path, e))?;
                    } else {
                        w.write_all(&(*v as f32).to_le_bytes())
                            .map_err(|e| io_err(path, e))?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a positions-only PLY (the geometry side channel).
pub fn save_ply_positions(positions: &[[f64; 3]], path: &Path) -> Result<(), PlyError> {
    if positions.is_empty() {
        return Err(PlyError::Empty);
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        positions.len()
    )
    .map_err(|e| io_err(path, e))?;
    for pos in positions {
        for a in pos {
            w.write_all(&(*a as f32).to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pcac-ply-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn ascii_rgb_roundtrip() {
        let path = tmp("ascii_rgb.ply");
        let mut f = File::create(&path).unwrap();
        writeln!(
            f,
            "ply\nformat ascii 1.0\ncomment three points\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255"
        )
        .unwrap();
        drop(f);
        let cloud = load_ply(&path).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.channel_count(), 3);
        assert_eq!(cloud.attr(1), &[0.0, 255.0, 0.0]);
    }

    #[test]
    fn positions_only_is_unsupported_for_attributes() {
        let path = tmp("positions_only.ply");
        let mut f = File::create(&path).unwrap();
        writeln!(
            f,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3"
        )
        .unwrap();
        drop(f);
        assert!(matches!(load_ply(&path), Err(PlyError::Unsupported(_, _))));
        // But the geometry loader accepts it.
        let pos = load_ply_positions(&path).unwrap();
        assert_eq!(pos, vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn malformed_header_names_the_line() {
        let path = tmp("broken.ply");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "ply\nformat ascii 1.0\nelephant vertex 3\nend_header").unwrap();
        drop(f);
        match load_ply(&path) {
            Err(PlyError::Header { line, detail, .. }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("elephant"));
            }
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn binary_roundtrip_is_bit_identical() {
        use pcac_core::cloud::PointCloud;
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = 10_000;
        let positions: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                [
                    rng.random_range(-100i32..100) as f64 * 0.5,
                    rng.random_range(-100i32..100) as f64 * 0.25,
                    rng.random_range(0i32..64) as f64,
                ]
            })
            .collect();
        let attrs: Vec<f64> = (0..m * 3).map(|_| rng.random_range(0u32..256) as f64).collect();
        let cloud = PointCloud::new(
            positions,
            attrs,
            vec!["R".into(), "G".into(), "B".into()],
        )
        .unwrap();
        let path = tmp("binary_roundtrip.ply");
        save_ply(&cloud, &path, PlyFormat::BinaryLittleEndian).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.attributes, cloud.attributes);

        // Scalar channel files roundtrip too (f32-representable values).
        let scalar = PointCloud::new(
            cloud.positions.clone(),
            (0..m).map(|i| (i % 97) as f64).collect(),
            vec!["reflectance".into()],
        )
        .unwrap();
        let spath = tmp("binary_scalar.ply");
        save_ply(&scalar, &spath, PlyFormat::BinaryLittleEndian).unwrap();
        let sback = load_ply(&spath).unwrap();
        assert_eq!(sback.attributes, scalar.attributes);
        assert_eq!(sback.channel_names, vec!["reflectance".to_string()]);
    }

    #[test]
    fn ascii_save_load_single_point() {
        use pcac_core::cloud::PointCloud;
        let cloud = PointCloud::new(
            vec![[1.0, 2.0, 3.0]],
            vec![9.0, 8.0, 7.0],
            vec!["R".into(), "G".into(), "B".into()],
        )
        .unwrap();
        let path = tmp("one.ply");
        save_ply(&cloud, &path, PlyFormat::Ascii).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.attributes, cloud.attributes);
    }

    #[test]
    fn empty_cloud_is_rejected_on_save() {
        let empty = pcac_core::cloud::PointCloud {
            positions: vec![],
            attributes: vec![],
            channel_names: vec!["R".into()],
        };
        assert!(matches!(
            save_ply(&empty, &tmp("never.ply"), PlyFormat::Ascii),
            Err(PlyError::Empty)
        ));
    }

    #[test]
    fn truncated_binary_payload_errors() {
        let path = tmp("truncated.ply");
        let mut f = File::create(&path).unwrap();
        write!(
            f,
            "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
        )
        .unwrap();
        f.write_all(&[0u8; 15]).unwrap(); // one full vertex and a bit
        drop(f);
        assert!(matches!(load_ply(&path), Err(PlyError::Data { .. })));
    }
}
