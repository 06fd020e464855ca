//! On-disk artifact formats: tuple and trajectory CSVs, row-major grid CSVs,
//! barcode files, PGM occupancy maps and flat key=value reports.  All floats
//! are written with 9 significant digits; writers emit LF line endings only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Point2, Vector2};

use crate::domain::{BinaryMap, GridSpec};
use crate::ekf::DataTuple;
use crate::error::{Error, Result};
use crate::grid::ProbabilityGrid;
use crate::sim::TrackRecord;
use crate::tda::{Barcode, Interval};

/// Scientific notation with 9 significant digits.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.8e}")
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| {
        Error::Parse(format!("{}:{line}: invalid number {s:?}", path.display()))
    })
}

fn parse_usize(s: &str, path: &Path, line: usize) -> Result<usize> {
    s.parse::<usize>().map_err(|_| {
        Error::Parse(format!("{}:{line}: invalid index {s:?}", path.display()))
    })
}

fn split_fields<'a>(
    text: &'a str,
    path: &Path,
    expect_header: &str,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == expect_header => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: expected header {expect_header:?}, got {:?}",
                path.display(),
                other.map(|(_, h)| h).unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        rows.push((i + 1, line.split(',').collect()));
    }
    Ok(rows)
}

const TUPLE_HEADER: &str = "j,t,mu_x,mu_y,s_xx,s_xy,s_yy";

/// Write recorded estimates as CSV.
pub fn write_tuples(path: &Path, tuples: &[DataTuple]) -> Result<()> {
    let mut out = String::with_capacity(64 * (tuples.len() + 1));
    out.push_str(TUPLE_HEADER);
    out.push('\n');
    for d in tuples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.robot,
            fmt_sig(d.t),
            fmt_sig(d.mu.x),
            fmt_sig(d.mu.y),
            fmt_sig(d.sigma[(0, 0)]),
            fmt_sig(d.sigma[(0, 1)]),
            fmt_sig(d.sigma[(1, 1)])
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read recorded estimates written by [`write_tuples`].
pub fn read_tuples(path: &Path) -> Result<Vec<DataTuple>> {
    let text = fs::read_to_string(path)?;
    let mut tuples = Vec::new();
    for (line, fields) in split_fields(&text, path, TUPLE_HEADER)? {
        if fields.len() != 7 {
            return Err(Error::Parse(format!(
                "{}:{line}: expected 7 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let robot = parse_usize(fields[0], path, line)?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|s| parse_f64(s, path, line))
            .collect::<Result<_>>()?;
        tuples.push(DataTuple {
            robot,
            t: v[0],
            mu: Vector2::new(v[1], v[2]),
            sigma: Matrix2::new(v[3], v[4], v[4], v[5]),
        });
    }
    Ok(tuples)
}

const TRACK_HEADER: &str = "t,j,x_true,y_true,x_est,y_est";

/// Write truth/estimate pairs at the record ticks as CSV.
pub fn write_trajectories(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACK_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig(r.t),
            r.robot,
            fmt_sig(r.true_pos.x),
            fmt_sig(r.true_pos.y),
            fmt_sig(r.est_pos.x),
            fmt_sig(r.est_pos.y)
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read truth/estimate pairs written by [`write_trajectories`].
pub fn read_trajectories(path: &Path) -> Result<Vec<TrackRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (line, fields) in split_fields(&text, path, TRACK_HEADER)? {
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "{}:{line}: expected 6 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        records.push(TrackRecord {
            t: parse_f64(fields[0], path, line)?,
            robot: parse_usize(fields[1], path, line)?,
            true_pos: Point2::new(
                parse_f64(fields[2], path, line)?,
                parse_f64(fields[3], path, line)?,
            ),
            est_pos: Point2::new(
                parse_f64(fields[4], path, line)?,
                parse_f64(fields[5], path, line)?,
            ),
        });
    }
    Ok(records)
}

/// Write a probability field as a row-major CSV grid (row 0 first).
pub fn write_probability_csv(path: &Path, pg: &ProbabilityGrid) -> Result<()> {
    write_float_grid(path, pg.spec, &pg.p)
}

fn write_float_grid(path: &Path, spec: GridSpec, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(16 * values.len());
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_sig(values[spec.index(r, c)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a probability field written by [`write_probability_csv`].
pub fn read_probability_csv(path: &Path, spec: GridSpec) -> Result<ProbabilityGrid> {
    let text = fs::read_to_string(path)?;
    let mut p = vec![0.0; spec.len()];
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if rows >= spec.rows {
            return Err(Error::Parse(format!(
                "{}: more than {} rows",
                path.display(),
                spec.rows
            )));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != spec.cols {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                i + 1,
                spec.cols,
                fields.len()
            )));
        }
        for (c, s) in fields.iter().enumerate() {
            p[spec.index(rows, c)] = parse_f64(s, path, i + 1)?;
        }
        rows += 1;
    }
    if rows != spec.rows {
        return Err(Error::Parse(format!(
            "{}: expected {} rows, got {rows}",
            path.display(),
            spec.rows
        )));
    }
    Ok(ProbabilityGrid { spec, p })
}

/// Write per-cell integer tallies as a row-major CSV grid.
pub fn write_counts_csv(path: &Path, spec: GridSpec, counts: &[u32]) -> Result<()> {
    let mut out = String::with_capacity(4 * counts.len());
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", counts[spec.index(r, c)]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

const BARCODE_HEADER: &str = "dim,birth,death";

/// Write a barcode, one `dim,birth,death` interval per line, sorted.
pub fn write_barcode(path: &Path, barcode: &Barcode) -> Result<()> {
    let mut sorted = barcode.intervals.clone();
    sorted.sort_by(|a, b| {
        (a.dim, a.birth, a.death)
            .partial_cmp(&(b.dim, b.birth, b.death))
            .expect("intervals must not contain NaN")
    });
    let mut out = String::with_capacity(32 * (sorted.len() + 1));
    out.push_str(BARCODE_HEADER);
    out.push('\n');
    for iv in &sorted {
        let death =
            if iv.death.is_infinite() { "inf".to_string() } else { fmt_sig(iv.death) };
        let _ = writeln!(out, "{},{},{}", iv.dim, fmt_sig(iv.birth), death);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a barcode written by [`write_barcode`].
pub fn read_barcode(path: &Path) -> Result<Barcode> {
    let text = fs::read_to_string(path)?;
    let mut intervals = Vec::new();
    for (line, fields) in split_fields(&text, path, BARCODE_HEADER)? {
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "{}:{line}: expected 3 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let dim = parse_usize(fields[0], path, line)? as u8;
        let birth = parse_f64(fields[1], path, line)?;
        let death = if fields[2] == "inf" {
            f64::INFINITY
        } else {
            parse_f64(fields[2], path, line)?
        };
        intervals.push(Interval { dim, birth, death });
    }
    Ok(Barcode { intervals })
}

/// Write a binary map as plain PGM (P2): 0 = occupied, 255 = free, top row
/// of the image is the grid's highest row.
pub fn write_pgm(path: &Path, map: &BinaryMap) -> Result<()> {
    let g = map.grid;
    let mut out = String::with_capacity(4 * g.len() + 32);
    let _ = writeln!(out, "P2\n{} {}\n255", g.cols, g.rows);
    for r in (0..g.rows).rev() {
        for c in 0..g.cols {
            if c > 0 {
                out.push(' ');
            }
            out.push_str(if map.occupied[g.index(r, c)] { "0" } else { "255" });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a binary map written by [`write_pgm`]; the grid spec supplies the
/// geometry the pixel raster is checked against.
pub fn read_pgm(path: &Path, spec: GridSpec) -> Result<BinaryMap> {
    let text = fs::read_to_string(path)?;
    let mut tokens = text.split_ascii_whitespace();
    let bad = |what: &str| Error::Parse(format!("{}: {what}", path.display()));
    if tokens.next() != Some("P2") {
        return Err(bad("not a plain PGM (P2) file"));
    }
    let cols: usize =
        tokens.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad width"))?;
    let rows: usize =
        tokens.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad height"))?;
    if tokens.next() != Some("255") {
        return Err(bad("maximum gray value must be 255"));
    }
    if rows != spec.rows || cols != spec.cols {
        return Err(bad(&format!(
            "raster {cols}x{rows} does not match the {}x{} grid",
            spec.cols, spec.rows
        )));
    }
    let mut occupied = vec![false; spec.len()];
    for r in (0..rows).rev() {
        for c in 0..cols {
            match tokens.next() {
                Some("0") => occupied[spec.index(r, c)] = true,
                Some("255") => {}
                other => {
                    return Err(bad(&format!(
                        "pixel ({r},{c}) must be 0 or 255, got {other:?}"
                    )))
                }
            }
        }
    }
    if tokens.next().is_some() {
        return Err(bad("trailing data after the pixel raster"));
    }
    Ok(BinaryMap { grid: spec, occupied })
}

/// Write an ordered list of `key=value` lines.
pub fn write_kv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Rect;
    use tempfile::tempdir;

    fn spec3() -> GridSpec {
        GridSpec::tile(&Rect::new(0.0, 0.0, 0.12, 0.12), 3, 3).unwrap()
    }

    #[test]
    fn significant_digit_format_is_stable() {
        assert_eq!(fmt_sig(300.0), "3.00000000e2");
        assert_eq!(fmt_sig(0.0507), "5.07000000e-2");
        assert_eq!(fmt_sig(-1.0), "-1.00000000e0");
        assert_eq!(fmt_sig(0.0), "0.00000000e0");
    }

    #[test]
    fn tuples_roundtrip_preserves_nine_digits() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tuples.csv");
        let tuples = vec![
            DataTuple {
                robot: 3,
                t: 17.0,
                mu: Vector2::new(1.23456789, -0.000012345),
                sigma: Matrix2::new(4e-4, -1.5e-5, -1.5e-5, 2.5e-4),
            },
            DataTuple {
                robot: 0,
                t: 1.0,
                mu: Vector2::new(0.5, 0.25),
                sigma: Matrix2::new(1e-6, 0.0, 0.0, 1e-6),
            },
        ];
        write_tuples(&path, &tuples).unwrap();
        let back = read_tuples(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in tuples.iter().zip(&back) {
            assert_eq!(a.robot, b.robot);
            assert!((a.t - b.t).abs() <= 1e-8 * a.t.abs().max(1.0));
            assert!((a.mu - b.mu).norm() <= 1e-8 * a.mu.norm().max(1.0));
            assert!((a.sigma - b.sigma).norm() <= 1e-8 * a.sigma.norm().max(1e-12));
            assert_eq!(b.sigma[(0, 1)], b.sigma[(1, 0)], "covariance stays symmetric");
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("j,t,mu_x,mu_y,s_xx,s_xy,s_yy\n"));
        assert!(text.contains("3,1.70000000e1,1.23456789e0,"));
    }

    #[test]
    fn malformed_tuple_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(read_tuples(&path), Err(Error::Parse(_))));
        std::fs::write(&path, format!("{TUPLE_HEADER}\n1,2,3\n")).unwrap();
        assert!(matches!(read_tuples(&path), Err(Error::Parse(_))));
        std::fs::write(&path, format!("{TUPLE_HEADER}\n1,x,3,4,5,6,7\n")).unwrap();
        assert!(matches!(read_tuples(&path), Err(Error::Parse(_))));
        assert!(matches!(read_tuples(&dir.path().join("absent.csv")), Err(Error::Io(_))));
    }

    #[test]
    fn trajectories_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tracks.csv");
        let records = vec![TrackRecord {
            t: 2.0,
            robot: 7,
            true_pos: Point2::new(0.1, 0.9),
            est_pos: Point2::new(0.11, 0.88),
        }];
        write_trajectories(&path, &records).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].robot, 7);
        assert!((back[0].est_pos.x - 0.11).abs() < 1e-9);
    }

    #[test]
    fn probability_grid_roundtrip_and_shape_checks() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let spec = spec3();
        let p: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        write_probability_csv(&path, &ProbabilityGrid { spec, p: p.clone() }).unwrap();
        let back = read_probability_csv(&path, spec).unwrap();
        for (a, b) in p.iter().zip(&back.p) {
            assert!((a - b).abs() < 1e-9);
        }
        // Row 0 is written first.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("0.00000000e0,1.00000000e-1,2.00000000e-1\n"));

        std::fs::write(&path, "1.0,2.0\n").unwrap();
        assert!(matches!(read_probability_csv(&path, spec), Err(Error::Parse(_))));
        std::fs::write(&path, "1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(read_probability_csv(&path, spec), Err(Error::Parse(_))));
    }

    #[test]
    fn counts_grid_is_plain_integers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        let mut counts = vec![0u32; 9];
        counts[1] = 42;
        write_counts_csv(&path, spec3(), &counts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "0,42,0");
    }

    #[test]
    fn barcode_roundtrip_with_infinite_deaths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("barcode.csv");
        let bc = Barcode {
            intervals: vec![
                Interval { dim: 1, birth: 0.2, death: 0.6 },
                Interval { dim: 0, birth: 0.1, death: f64::INFINITY },
            ],
        };
        write_barcode(&path, &bc).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "dim,birth,death\n0,1.00000000e-1,inf\n1,2.00000000e-1,6.00000000e-1\n"
        );
        let back = read_barcode(&path).unwrap();
        assert_eq!(back.intervals.len(), 2);
        assert!(back.intervals[0].death.is_infinite());
        assert_eq!(back.intervals[1].death, 0.6);
    }

    #[test]
    fn pgm_roundtrip_and_orientation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let spec = spec3();
        // Occupy the top-left grid corner: row 2, column 0.
        let mut occupied = vec![false; 9];
        occupied[spec.index(2, 0)] = true;
        let map = BinaryMap { grid: spec, occupied };
        write_pgm(&path, &map).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // The highest row comes first in the raster.
        assert_eq!(text, "P2\n3 3\n255\n0 255 255\n255 255 255\n255 255 255\n");
        let back = read_pgm(&path, spec).unwrap();
        assert_eq!(back, map);

        std::fs::write(&path, "P5\n3 3\n255\n").unwrap();
        assert!(matches!(read_pgm(&path, spec), Err(Error::Parse(_))));
        std::fs::write(&path, "P2\n2 2\n255\n0 0 0 0\n").unwrap();
        assert!(matches!(read_pgm(&path, spec), Err(Error::Parse(_))));
        std::fs::write(&path, "P2\n3 3\n255\n0 0 0 0 0 0 0 0 7\n").unwrap();
        assert!(matches!(read_pgm(&path, spec), Err(Error::Parse(_))));
    }

    #[test]
    fn kv_report_format() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.txt");
        write_kv(&path, &[("mae", fmt_sig(0.05)), ("success", "true".into())]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "mae=5.00000000e-2\nsuccess=true\n");
    }
}
