//! ASCII OBJ subset: `v` and triangular `f` records. Everything else is
//! skipped and counted.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::{HalfEdgeMesh, MeshError, Result, Vec3};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObjStats {
    pub ignored_records: usize,
}

pub fn read_obj(reader: impl Read) -> Result<(HalfEdgeMesh, ObjStats)> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    let mut stats = ObjStats::default();

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line: lineno,
                        message: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::Parse {
                        line: lineno,
                        message: format!("bad coordinate {tok:?}"),
                    })?;
                }
                positions.push(Vec3::from(xyz));
            }
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(MeshError::NonTriangularFace {
                        line: lineno,
                        count: idx.len(),
                    });
                }
                let mut face = [0usize; 3];
                for (slot, tok) in face.iter_mut().zip(&idx) {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
                        line: lineno,
                        message: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = if raw > 0 {
                        raw - 1
                    } else if raw < 0 {
                        positions.len() as i64 + raw
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(MeshError::Parse {
                            line: lineno,
                            message: format!("face index {raw} out of range"),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
            }
            Some(_) => stats.ignored_records += 1,
            None => {}
        }
    }
    Ok((HalfEdgeMesh::new(positions, faces)?, stats))
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<HalfEdgeMesh> {
    let path = path.as_ref();
    let (mesh, stats) = read_obj(fs::File::open(path)?)?;
    if stats.ignored_records > 0 {
        log::warn!(
            "{}: ignored {} unsupported records",
            path.display(),
            stats.ignored_records
        );
    }
    Ok(mesh)
}

pub fn write_obj_string(mesh: &HalfEdgeMesh) -> Result<String> {
    if mesh.num_vertices() == 0 || mesh.num_faces() == 0 {
        return Err(MeshError::EmptyMesh);
    }
    let mut s = String::with_capacity(mesh.num_vertices() * 48 + mesh.num_faces() * 24);
    for p in mesh.positions() {
        let _ = writeln!(s, "v {} {} {}", fmt_g9(p.x), fmt_g9(p.y), fmt_g9(p.z));
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    Ok(s)
}

pub fn save_obj(mesh: &HalfEdgeMesh, path: impl AsRef<Path>) -> Result<()> {
    let s = write_obj_string(mesh)?;
    fs::write(path, s)?;
    Ok(())
}

/// Nine significant digits, `%.9g` style.
pub fn fmt_g9(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let mantissa = trim_zeros(mantissa.to_string());
        format!("{mantissa}e{exp}")
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn loads_cube() {
        let text = write_obj_string(&shapes::cube()).unwrap();
        let (m, stats) = read_obj(text.as_bytes()).unwrap();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_faces(), 12);
        assert_eq!(stats.ignored_records, 0);
    }

    #[test]
    fn quad_face_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let err = read_obj(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-triangular face"));
        assert!(matches!(err, MeshError::NonTriangularFace { line: 5, count: 4 }));
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "v 0 0 0\nv 1 zero 0\n";
        match read_obj(text.as_bytes()).unwrap_err() {
            MeshError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn out_of_range_face_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 4\n";
        assert!(matches!(
            read_obj(text.as_bytes()).unwrap_err(),
            MeshError::IndexOutOfRange { .. }
        ));
    }

    #[test]
    fn other_records_counted() {
        let text = "# c\nvn 0 0 1\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\ng x\nf 1/1/1 2/2/2 3/3/3\n";
        let (m, stats) = read_obj(text.as_bytes()).unwrap();
        assert_eq!(m.num_faces(), 1);
        assert_eq!(stats.ignored_records, 3);
    }

    #[test]
    fn single_triangle_lines() {
        let m = HalfEdgeMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let text = write_obj_string(&m).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "v 1 0 0");
        assert_eq!(lines[3], "f 1 2 3");
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = HalfEdgeMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(write_obj_string(&m), Err(MeshError::EmptyMesh)));
    }

    #[test]
    fn g9_formatting() {
        assert_eq!(fmt_g9(0.5), "0.5");
        assert_eq!(fmt_g9(-1.0), "-1");
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(123456789.4), "123456789");
        assert_eq!(fmt_g9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_g9(2.0e12), "2e12");
        assert_eq!(fmt_g9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn save_load_save_is_byte_stable_on_corpus() {
        // Byte oracle: text written once must be reproduced exactly after a reload.
        for seed in 0..100u64 {
            let m = shapes::corpus_mesh(seed, 1);
            let first = write_obj_string(&m).unwrap();
            let (reloaded, _) = read_obj(first.as_bytes()).unwrap();
            let second = write_obj_string(&reloaded).unwrap();
            assert_eq!(first, second, "seed {seed}");
            assert_eq!(reloaded.faces(), m.faces());
        }
    }

    #[test]
    fn positions_round_trip_to_1e7() {
        let m = shapes::bumpy_sphere(3, 11).transformed(|p| p * 123.4);
        let text = write_obj_string(&m).unwrap();
        let (a, _) = read_obj(text.as_bytes()).unwrap();
        let (b, _) = read_obj(write_obj_string(&a).unwrap().as_bytes()).unwrap();
        for ((p, q), r) in m.positions().iter().zip(a.positions()).zip(b.positions()) {
            assert!((p - q).norm() <= 1e-7 * p.norm().max(1e-300));
            assert_eq!(q, r);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        save_obj(&shapes::cube(), &path).unwrap();
        let m = load_obj(&path).unwrap();
        assert_eq!(m.num_faces(), 12);
    }
}
