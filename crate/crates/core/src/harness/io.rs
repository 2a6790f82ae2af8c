//! CSV and VTK writers and readers for run outputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Orientation};
use crate::state::{ScalarField, StateVector};

/// C-style `%.10e`: ten fractional digits, signed two-digit exponent.
pub fn fmt_e10(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.10e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

/// One line of `rmse.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    pub step: usize,
    pub time: f64,
    pub s: f64,
    pub p: f64,
    pub u: f64,
}

pub const RMSE_HEADER: &str = "step,time,rmse_s,rmse_p,rmse_u";

pub fn write_rmse_csv(path: &Path, rows: &[RmseRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RMSE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            fmt_e10(r.time),
            fmt_e10(r.s),
            fmt_e10(r.p),
            fmt_e10(r.u)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn read_rmse_csv(path: &Path) -> Result<Vec<RmseRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != RMSE_HEADER {
                return Err(parse_err(path, 1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 5 {
            return Err(parse_err(path, n + 1, format!("expected 5 columns, got {}", c.len())));
        }
        let num = |i: usize| {
            c[i].parse::<f64>()
                .map_err(|e| parse_err(path, n + 1, format!("column {}: {e}", i + 1)))
        };
        rows.push(RmseRow {
            step: c[0]
                .parse()
                .map_err(|e| parse_err(path, n + 1, format!("step: {e}")))?,
            time: num(1)?,
            s: num(2)?,
            p: num(3)?,
            u: num(4)?,
        });
    }
    Ok(rows)
}

/// Time-averaged RMSE over rows with `step > burn_in`, as `(s, p, u)`.
pub fn time_average(rows: &[RmseRow], burn_in: usize) -> Option<(f64, f64, f64)> {
    let kept: Vec<_> = rows.iter().filter(|r| r.step > burn_in).collect();
    if kept.is_empty() {
        return None;
    }
    let n = kept.len() as f64;
    Some((
        kept.iter().map(|r| r.s).sum::<f64>() / n,
        kept.iter().map(|r| r.p).sum::<f64>() / n,
        kept.iter().map(|r| r.u).sum::<f64>() / n,
    ))
}

/// `i,j,s,p` per cell.
pub fn write_cell_snapshot(path: &Path, grid: &Grid<f64>, st: &StateVector<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i,j,s,p")?;
    for c in 0..grid.n_cells() {
        let (i, j) = grid.cell_ij(c);
        writeln!(
            w,
            "{i},{j},{},{}",
            fmt_e10(st.s.values[c]),
            fmt_e10(st.p.values[c])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `orientation,i,j,flux` per face.
pub fn write_faces(path: &Path, grid: &Grid<f64>, st: &StateVector<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "orientation,i,j,flux")?;
    for f in 0..grid.n_faces() {
        let r = grid.face_ref(f)?;
        let o = match r.orientation {
            Orientation::X => "x",
            Orientation::Y => "y",
        };
        writeln!(w, "{o},{},{},{}", r.i, r.j, fmt_e10(st.u.values[f]))?;
    }
    w.flush()?;
    Ok(())
}

/// `i,j,k` per cell, written with round-trip precision.
pub fn write_permeability(path: &Path, grid: &Grid<f64>, k: &ScalarField<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i,j,k")?;
    for c in 0..grid.n_cells() {
        let (i, j) = grid.cell_ij(c);
        writeln!(w, "{i},{j},{:e}", k.values[c])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_permeability(path: &Path, grid: &Grid<f64>) -> Result<ScalarField<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = vec![f64::NAN; grid.n_cells()];
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != "i,j,k" {
                return Err(parse_err(path, 1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 3 {
            return Err(parse_err(path, n + 1, "expected 3 columns"));
        }
        let i: usize = c[0].parse().map_err(|e| parse_err(path, n + 1, format!("i: {e}")))?;
        let j: usize = c[1].parse().map_err(|e| parse_err(path, n + 1, format!("j: {e}")))?;
        let v: f64 = c[2].parse().map_err(|e| parse_err(path, n + 1, format!("k: {e}")))?;
        if i >= grid.nx() || j >= grid.ny() {
            return Err(parse_err(path, n + 1, format!("cell ({i}, {j}) outside grid")));
        }
        values[grid.cell_index(i, j)] = v;
    }
    if let Some(c) = values.iter().position(|v| v.is_nan()) {
        let (i, j) = grid.cell_ij(c);
        return Err(parse_err(path, 0, format!("missing cell ({i}, {j})")));
    }
    ScalarField::from_values(grid, values)
}

/// Legacy ASCII VTK, `STRUCTURED_POINTS` with cell data `s` and `p`.
pub fn write_vtk(path: &Path, grid: &Grid<f64>, st: &StateVector<f64>, title: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", grid.nx() + 1, grid.ny() + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {:e} {:e} 1", grid.hx(), grid.hy())?;
    writeln!(w, "CELL_DATA {}", grid.n_cells())?;
    for (name, field) in [("saturation", &st.s), ("pressure", &st.p)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &field.values {
            writeln!(w, "{}", fmt_e10(*v))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_style_exponent_format() {
        assert_eq!(fmt_e10(0.0), "0.0000000000e+00");
        assert_eq!(fmt_e10(0.012345), "1.2345000000e-02");
        assert_eq!(fmt_e10(-1234.5), "-1.2345000000e+03");
        assert_eq!(fmt_e10(1e-120), "1.0000000000e-120");
    }

    #[test]
    fn rmse_round_trip_and_average() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        let rows: Vec<_> = (1..=4)
            .map(|s| RmseRow {
                step: s,
                time: s as f64 * 0.001,
                s: s as f64,
                p: 0.5,
                u: 0.25,
            })
            .collect();
        write_rmse_csv(&p, &rows).unwrap();
        let back = read_rmse_csv(&p).unwrap();
        assert_eq!(back, rows);
        let (s, pp, u) = time_average(&back, 2).unwrap();
        assert_eq!((s, pp, u), (3.5, 0.5, 0.25));
        assert!(time_average(&back, 4).is_none());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,time,rmse_s,rmse_p,rmse_u\n1,1.0000000000e-03,"));
    }

    #[test]
    fn snapshot_shapes() {
        let g = Grid::<f64>::new(3, 2).unwrap();
        let st = StateVector::zeros(&g);
        let dir = tempfile::tempdir().unwrap();
        let cells = dir.path().join("c.csv");
        let faces = dir.path().join("f.csv");
        write_cell_snapshot(&cells, &g, &st).unwrap();
        write_faces(&faces, &g, &st).unwrap();
        assert_eq!(std::fs::read_to_string(&cells).unwrap().lines().count(), 1 + 6);
        assert_eq!(std::fs::read_to_string(&faces).unwrap().lines().count(), 1 + 17);
        let vtk = dir.path().join("s.vtk");
        write_vtk(&vtk, &g, &st, "t").unwrap();
        let text = std::fs::read_to_string(&vtk).unwrap();
        assert!(text.contains("DIMENSIONS 4 3 1") && text.contains("CELL_DATA 6"));
    }

    #[test]
    fn permeability_round_trip_and_errors() {
        let g = Grid::<f64>::new(4, 3).unwrap();
        let k = ScalarField::from_fn(&g, |x| 0.01 + x[0] * x[1] / 3.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        write_permeability(&p, &g, &k).unwrap();
        assert_eq!(read_permeability(&p, &g).unwrap(), k);
        std::fs::write(&p, "i,j,k\n0,0,1.0\n").unwrap();
        assert!(read_permeability(&p, &g).is_err());
        std::fs::write(&p, "i,j,k\n0,x,1.0\n").unwrap();
        assert!(matches!(
            read_permeability(&p, &g),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
