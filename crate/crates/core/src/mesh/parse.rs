//! ASCII OFF and OBJ readers.
//!
//! Only geometry is consumed: OFF colour columns and OBJ texture/normal
//! indices are ignored. Polygons with more than three corners are split into
//! a fan around their first vertex.

use alloc::string::String;
use alloc::vec::Vec;

use super::{MeshError, TriangleMesh};
use crate::geometry::Vec3;

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_vertex<'a>(mut tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3, MeshError> {
    let mut c = [0.0f64; 3];
    for slot in &mut c {
        *slot = tokens
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or(MeshError::MalformedVertex { line })?;
    }
    Ok(Vec3::from(c))
}

fn fan(corners: &[u32], faces: &mut Vec<[u32; 3]>) {
    for k in 1..corners.len() - 1 {
        faces.push([corners[0], corners[k], corners[k + 1]]);
    }
}

fn check_index(index: i64, vertex_count: usize, line: usize) -> Result<u32, MeshError> {
    if index < 0 || index as usize >= vertex_count {
        return Err(MeshError::IndexOutOfRange { line, index, vertex_count });
    }
    Ok(index as u32)
}

fn decode(bytes: &[u8]) -> Result<&str, MeshError> {
    core::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        MeshError::MalformedHeader { line }
    })
}

/// Reads an ASCII OFF file.
///
/// Accepts the ModelNet variant where the counts share the header line,
/// e.g. `OFF490 518 0`.
pub fn parse_off(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = decode(bytes)?;
    let mut lines = content_lines(text);

    let (header_line, header) = lines.next().ok_or(MeshError::MalformedHeader { line: 1 })?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or(MeshError::MalformedHeader { line: header_line })?
        .trim();
    let (count_line, counts) = if rest.is_empty() {
        lines.next().ok_or(MeshError::MalformedHeader { line: header_line })?
    } else {
        (header_line, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .take(2)
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| MeshError::MalformedHeader { line: count_line })?;
    let [n_vertices, n_faces] = counts[..] else {
        return Err(MeshError::MalformedHeader { line: count_line });
    };
    if n_vertices == 0 || n_faces == 0 {
        return Err(MeshError::EmptyMesh { line: count_line });
    }

    let mut last_line = count_line;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (line, body) = lines.next().ok_or(MeshError::EmptyMesh { line: last_line + 1 })?;
        vertices.push(parse_vertex(body.split_whitespace(), line)?);
        last_line = line;
    }

    let mut faces = Vec::with_capacity(n_faces);
    let mut corners = Vec::new();
    for _ in 0..n_faces {
        let (line, body) = lines.next().ok_or(MeshError::MalformedFace { line: last_line + 1 })?;
        last_line = line;
        let mut tokens = body.split_whitespace();
        let arity: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(MeshError::MalformedFace { line })?;
        if arity < 3 {
            return Err(MeshError::MalformedFace { line });
        }
        corners.clear();
        for _ in 0..arity {
            let raw: i64 = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(MeshError::MalformedFace { line })?;
            corners.push(check_index(raw, n_vertices, line)?);
        }
        fan(&corners, &mut faces);
    }

    TriangleMesh::new(String::new(), vertices, faces)
}

/// Reads the `v` and `f` records of an ASCII OBJ file.
///
/// Negative face indices count back from the most recent vertex.
pub fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = decode(bytes)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut corners = Vec::new();
    let mut last_line = 0;

    for (line, body) in content_lines(text) {
        last_line = line;
        let mut tokens = body.split_whitespace();
        match tokens.next() {
            Some("v") => vertices.push(parse_vertex(tokens, line)?),
            Some("f") => {
                corners.clear();
                for tok in tokens {
                    let raw: i64 = tok
                        .split('/')
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or(MeshError::MalformedFace { line })?;
                    let resolved = match raw {
                        0 => {
                            return Err(MeshError::IndexOutOfRange {
                                line,
                                index: 0,
                                vertex_count: vertices.len(),
                            })
                        }
                        r if r > 0 => r - 1,
                        r => vertices.len() as i64 + r,
                    };
                    corners.push(check_index(resolved, vertices.len(), line)?);
                }
                if corners.len() < 3 {
                    return Err(MeshError::MalformedFace { line });
                }
                fan(&corners, &mut faces);
            }
            _ => {}
        }
    }

    if vertices.is_empty() || faces.is_empty() {
        return Err(MeshError::EmptyMesh { line: last_line });
    }
    TriangleMesh::new(String::new(), vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_minimal_triangle() {
        let m = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn off_quad_is_fan_split() {
        let src = b"OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n3 0 1 3\n";
        let m = parse_off(src).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
    }

    #[test]
    fn off_counts_on_header_line() {
        let src = b"OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 255 0 0\n";
        assert_eq!(parse_off(src).unwrap().faces().len(), 1);
    }

    #[test]
    fn off_comments_and_blank_lines() {
        let src = b"# exported\nOFF\n\n3 1 0 # counts\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_off(src).unwrap().vertices().len(), 3);
    }

    #[test]
    fn off_index_out_of_range_names_line() {
        let src = b"OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 99\n";
        assert_eq!(
            parse_off(src).unwrap_err(),
            MeshError::IndexOutOfRange { line: 7, index: 99, vertex_count: 4 }
        );
    }

    #[test]
    fn off_errors() {
        assert_eq!(parse_off(b"PLY\n").unwrap_err(), MeshError::MalformedHeader { line: 1 });
        assert_eq!(parse_off(b"OFF\nx y z\n").unwrap_err(), MeshError::MalformedHeader { line: 2 });
        assert_eq!(parse_off(b"OFF\n0 0 0\n").unwrap_err(), MeshError::EmptyMesh { line: 2 });
        assert_eq!(
            parse_off(b"OFF\n3 1 0\n0 0 0\n1 0\n").unwrap_err(),
            MeshError::MalformedVertex { line: 4 }
        );
        assert_eq!(
            parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n").unwrap_err(),
            MeshError::MalformedFace { line: 6 }
        );
    }

    #[test]
    fn obj_triangle() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_negative_indices() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -1 -2 -3\n").unwrap();
        assert_eq!(m.faces(), &[[2, 1, 0]]);
    }

    #[test]
    fn obj_slash_records_and_quads() {
        let src = b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3//1 4\n";
        assert_eq!(parse_obj(src).unwrap().faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_errors() {
        assert_eq!(
            parse_obj(b"v 0 0 0\nv 1 0 0\nf 1 2").unwrap_err(),
            MeshError::MalformedFace { line: 3 }
        );
        assert_eq!(
            parse_obj(b"v 0 0 0\nf 1 1 5\n").unwrap_err(),
            MeshError::IndexOutOfRange { line: 2, index: 4, vertex_count: 1 }
        );
        assert_eq!(parse_obj(b"v 0 0 0\n").unwrap_err(), MeshError::EmptyMesh { line: 1 });
    }
}
