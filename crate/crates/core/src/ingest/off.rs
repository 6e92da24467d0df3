//! OFF triangle meshes, including the ModelNet40 variant where the counts
//! are glued onto the header (`OFF490 518 0`).

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Point3, RotationMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unexpected end of file: {0}")]
    Truncated(String),
    #[error("mesh has no non-degenerate faces")]
    NoFaces,
}

fn parse_err(line: usize, message: impl Into<String>) -> OffError {
    OffError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, dropping faces with repeated indices or zero area.
    /// Panics on out-of-range indices.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self, OffError> {
        for f in &faces {
            assert!(
                f.iter().all(|&i| i < vertices.len()),
                "face index out of range"
            );
        }
        let mut mesh = Self { vertices, faces };
        mesh.faces.retain(|f| {
            f[0] != f[1] && f[1] != f[2] && f[0] != f[2] && triangle_area(&mesh.vertices, f) > 0.0
        });
        if mesh.faces.is_empty() {
            return Err(OffError::NoFaces);
        }
        Ok(mesh)
    }

    pub fn face_area(&self, i: usize) -> f64 {
        triangle_area(&self.vertices, &self.faces[i])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    pub fn rotated(&self, r: &RotationMatrix) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| r.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Standard OFF text with a split header.
    pub fn to_off(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "OFF");
        let _ = writeln!(out, "{} {} 0", self.vertices.len(), self.faces.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
        }
        out
    }
}

pub(crate) fn triangle_area(vertices: &[Point3], f: &[usize; 3]) -> f64 {
    let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, OffError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_off(text: &str) -> Result<TriangleMesh, OffError> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| OffError::Truncated("missing header".into()))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hline, format!("expected OFF header, found '{header}'")))?
        .trim();

    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| OffError::Truncated("missing element counts".into()))?
    } else {
        (hline, rest)
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 || toks.len() > 3 {
        return Err(parse_err(
            cline,
            format!("expected 'vertices faces [edges]', found '{counts}'"),
        ));
    }
    let nv: usize = parse_num(toks[0], cline, "vertex count")?;
    let nf: usize = parse_num(toks[1], cline, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or_else(|| {
            OffError::Truncated(format!("expected {nv} vertices, got {}", vertices.len()))
        })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(line, "vertex needs three coordinates"));
        }
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = parse_num::<f64>(toks[k], line, "coordinate")?;
            if !c[k].is_finite() {
                return Err(parse_err(line, "non-finite coordinate"));
            }
        }
        vertices.push(Point3::new(c[0], c[1], c[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for read in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| OffError::Truncated(format!("expected {nf} faces, got {read}")))?;
        let mut toks = l.split_whitespace();
        let k: usize = parse_num(toks.next().unwrap_or(""), line, "face size")?;
        if k < 3 {
            return Err(parse_err(line, format!("face with {k} vertices")));
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            let tok = toks.next().ok_or_else(|| {
                parse_err(line, format!("face declares {k} vertices but lists fewer"))
            })?;
            let i: usize = parse_num(tok, line, "vertex index")?;
            if i >= nv {
                return Err(parse_err(
                    line,
                    format!("vertex index {i} out of range (mesh has {nv})"),
                ));
            }
            idx.push(i);
        }
        // fan triangulation
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str =
        "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn tetrahedron() {
        let m = parse_off(TETRA).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert!((m.total_area() - (1.5 + 3f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn fused_header_matches_split_header() {
        let fused = "OFF4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
        let a = parse_off(fused).unwrap();
        assert_eq!(a, parse_off(TETRA).unwrap());
        let again = parse_off(&a.to_off()).unwrap();
        assert_eq!(again, a);
        assert_eq!(parse_off(&again.to_off()).unwrap(), again);
    }

    #[test]
    fn header_with_counts_on_same_line_and_comments() {
        let text =
            "# made by hand\nOFF 4 1 0\n\n0 0 0 # origin\n2 0 0\n0 2 0\n9 9 9\n4 0 1 3 2 255 0 0\n";
        let m = parse_off(text).unwrap();
        // quad fanned into two triangles, colors ignored
        assert_eq!(m.faces, vec![[0, 1, 3], [0, 3, 2]]);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 99\n";
        match parse_off(text) {
            Err(OffError::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            parse_off("PLY\n"),
            Err(OffError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_off("OFF\nfour 4 0\n"),
            Err(OffError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n1 x 0\n"),
            Err(OffError::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n"),
            Err(OffError::Truncated(_))
        ));
        assert!(matches!(parse_off(""), Err(OffError::Truncated(_))));
    }

    #[test]
    fn degenerate_faces_dropped() {
        let text = "OFF\n4 3 0\n0 0 0\n1 0 0\n2 0 0\n0 1 0\n3 0 1 2\n3 0 0 3\n3 0 1 3\n";
        let m = parse_off(text).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 3]]);
        let all_bad = "OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n";
        assert_eq!(parse_off(all_bad), Err(OffError::NoFaces));
    }
}
