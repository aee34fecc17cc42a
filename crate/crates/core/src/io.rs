//! CSV and JSON formats.
//!
//! * Measures: header `x1,…,xn,weight`, one atom per row.
//! * Pairs: header `x1,…,xn,y1,…,yn`, optionally followed by `mass`.
//! * Density grids: header `x1,…,xn,density`, one cell centre per row.
//! * Plans: `{"source_file", "target_file", "entries": [[i, j, mass], …]}`
//!   with 0-based indices; file names resolve against the plan's directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::GridDensity;
use crate::measure::{DiscreteMeasure, SupportSample, TransportPlan};
use crate::scalar::Scalar;
use crate::solver::DualPotentials;

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!(
                        "{}: row {} has non-numeric field `{f}`",
                        path.display(),
                        line + 2
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidInput(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

fn lit_vec<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

pub fn read_measure_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<DiscreteMeasure<T>> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    if header.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: need at least x1,weight",
            path.display()
        )));
    }
    let n = header.len() - 1;
    let mut expected = numbered("x", n);
    expected.push("weight".into());
    expect_header(path, &header, &expected)?;
    let points = rows.iter().map(|r| lit_vec(&r[..n])).collect();
    let weights = rows.iter().map(|r| T::lit(r[n])).collect();
    DiscreteMeasure::new(points, weights)
}

pub fn write_measure_csv<T: Scalar>(
    path: impl AsRef<Path>,
    measure: &DiscreteMeasure<T>,
) -> Result<()> {
    let mut header = numbered("x", measure.dim());
    header.push("weight".into());
    let rows = measure
        .points()
        .iter()
        .zip(measure.weights())
        .map(|(p, w)| {
            p.iter()
                .chain(std::iter::once(w))
                .map(|v| v.to_f64_lossy())
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    write_rows(path, &header, &rows)
}

pub fn read_pairs_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<SupportSample<T>> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    let with_mass = header.last().is_some_and(|h| h == "mass");
    let coords = header.len() - usize::from(with_mass);
    if coords == 0 || coords % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "{}: expected x1..xn,y1..yn[,mass] columns",
            path.display()
        )));
    }
    let n = coords / 2;
    let mut expected = numbered("x", n);
    expected.extend(numbered("y", n));
    if with_mass {
        expected.push("mass".into());
    }
    expect_header(path, &header, &expected)?;
    let pairs = rows
        .iter()
        .map(|r| (lit_vec(&r[..n]), lit_vec(&r[n..2 * n])))
        .collect();
    if with_mass {
        SupportSample::with_masses(pairs, rows.iter().map(|r| T::lit(r[2 * n])).collect())
    } else {
        SupportSample::new(pairs)
    }
}

pub fn write_pairs_csv<T: Scalar>(path: impl AsRef<Path>, pairs: &SupportSample<T>) -> Result<()> {
    let n = pairs.dim();
    let mut header = numbered("x", n);
    header.extend(numbered("y", n));
    if pairs.masses.is_some() {
        header.push("mass".into());
    }
    let rows: Vec<Vec<f64>> = pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let mut row: Vec<f64> = x.iter().chain(y).map(|v| v.to_f64_lossy()).collect();
            if let Some(m) = &pairs.masses {
                row.push(m[k].to_f64_lossy());
            }
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// Reads a cell-constant density grid.
pub fn read_density_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<GridDensity<T>> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    if header.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: need at least x1,density",
            path.display()
        )));
    }
    let n = header.len() - 1;
    let mut expected = numbered("x", n);
    expected.push("density".into());
    expect_header(path, &header, &expected)?;
    let centres: Vec<Vec<T>> = rows.iter().map(|r| lit_vec(&r[..n])).collect();
    let values: Vec<T> = rows.iter().map(|r| T::lit(r[n])).collect();
    GridDensity::from_cell_centres(&centres, &values)
}

/// Writes a numeric table with the given header.
pub fn write_rows(path: impl AsRef<Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub source_file: String,
    pub target_file: String,
    pub entries: Vec<(usize, usize, f64)>,
}

impl PlanFile {
    pub fn from_plan<T: Scalar>(
        plan: &TransportPlan<T>,
        source_file: &str,
        target_file: &str,
    ) -> Self {
        Self {
            source_file: source_file.into(),
            target_file: target_file.into(),
            entries: plan
                .entries()
                .iter()
                .map(|e| (e.i, e.j, e.mass.to_f64_lossy()))
                .collect(),
        }
    }
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads a plan and the two measure files it names.
pub fn read_plan<T: Scalar>(path: impl AsRef<Path>) -> Result<TransportPlan<T>> {
    let path = path.as_ref();
    let file: PlanFile = serde_json::from_reader(File::open(path)?)?;
    let source = read_measure_csv(resolve(path, &file.source_file))?;
    let target = read_measure_csv(resolve(path, &file.target_file))?;
    TransportPlan::new(
        Arc::new(source),
        Arc::new(target),
        file.entries.into_iter().map(|(i, j, m)| (i, j, T::lit(m))),
    )
}

pub fn write_plan<T: Scalar>(
    path: impl AsRef<Path>,
    plan: &TransportPlan<T>,
    source_file: &str,
    target_file: &str,
) -> Result<()> {
    write_json(path, &PlanFile::from_plan(plan, source_file, target_file))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualFile {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

pub fn write_duals<T: Scalar>(path: impl AsRef<Path>, duals: &DualPotentials<T>) -> Result<()> {
    write_json(
        path,
        &DualFile {
            phi: crate::scalar::to_f64_vec(&duals.phi),
            psi: crate::scalar::to_f64_vec(&duals.psi),
        },
    )
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DiscreteMeasure::new(
            vec![vec![0.1, 0.2], vec![1.0 / 3.0, -4.0]],
            vec![0.25, 0.75],
        )
        .unwrap();
        write_measure_csv(&p, &m).unwrap();
        let back: DiscreteMeasure<f64> = read_measure_csv(&p).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a,b\n1,1\n").unwrap();
        assert!(matches!(
            read_measure_csv::<f64>(&p),
            Err(Error::InvalidInput(_))
        ));
        std::fs::write(&p, "x1,weight\n1,zzz\n").unwrap();
        assert!(matches!(
            read_measure_csv::<f64>(&p),
            Err(Error::InvalidInput(_))
        ));
        std::fs::write(&p, "x1,weight\n").unwrap();
        assert!(read_measure_csv::<f64>(&p).is_err());
    }

    #[test]
    fn pairs_roundtrip_with_mass() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let s = SupportSample::with_masses(
            vec![(vec![0.0], vec![1.0]), (vec![1.0], vec![0.5])],
            vec![0.5, 0.5],
        )
        .unwrap();
        write_pairs_csv(&p, &s).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap().lines().next(),
            Some("x1,y1,mass")
        );
        assert_eq!(read_pairs_csv::<f64>(&p).unwrap(), s);
        std::fs::write(&p, "x1,y1,y2\n0,0,0\n").unwrap();
        assert!(read_pairs_csv::<f64>(&p).is_err());
    }

    #[test]
    fn plan_resolves_relative_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        write_measure_csv(dir.path().join("a.csv"), &m).unwrap();
        let a = Arc::new(m);
        let plan = TransportPlan::new(a.clone(), a, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let p = dir.path().join("plan.json");
        write_plan(&p, &plan, "a.csv", "a.csv").unwrap();
        let back: TransportPlan<f64> = read_plan(&p).unwrap();
        assert_eq!(back.entries(), plan.entries());
        let raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(raw["entries"][0], serde_json::json!([0, 1, 0.5]));
    }

    #[test]
    fn density_grid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x1,density\n0.25,0.5\n0.75,1.5\n").unwrap();
        let g: GridDensity<f64> = read_density_csv(&p).unwrap();
        assert_eq!(g.density(&[0.1]), 0.5);
        assert_eq!(g.density(&[0.9]), 1.5);
    }
}
