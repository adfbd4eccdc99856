use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use super::run::SimulationLog;
use super::HarnessError;

/// Column names of the log CSV. Artificial-setpoint columns only appear for
/// controllers that have one.
pub fn csv_header(m: usize, p: usize, nx: usize, artificial: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=p).map(|i| format!("y{i}")));
    h.extend((1..=nx).map(|i| format!("x{i}")));
    h.extend(["objective", "alpha_norm", "sigma_norm"].map(String::from));
    if artificial {
        h.extend((1..=m).map(|i| format!("us{i}")));
        h.extend((1..=p).map(|i| format!("ys{i}")));
    }
    h.extend(["pe_min_sv", "qp_iters"].map(String::from));
    h
}

/// Writes one row per step. Numbers use the shortest representation that
/// parses back to the same `f64`; missing diagnostics are empty fields.
pub fn write_csv<W: Write>(log: &SimulationLog, out: W) -> Result<(), HarnessError> {
    let first = log.records.first();
    let (m, p, nx) = first.map_or((0, 0, 0), |r| (r.u.len(), r.y.len(), r.x.len()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(m, p, nx, log.has_artificial_setpoint))?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in &log.records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.u.iter().chain(r.y.iter()).chain(r.x.iter()).map(f64::to_string));
        row.extend([opt(r.objective), opt(r.alpha_norm), opt(r.sigma_norm)]);
        if log.has_artificial_setpoint {
            for (v, dim) in [(&r.u_s_art, m), (&r.y_s_art, p)] {
                match v {
                    Some(v) => row.extend(v.iter().map(f64::to_string)),
                    None => row.extend(std::iter::repeat(String::new()).take(dim)),
                }
            }
        }
        row.push(opt(r.pe_min_sv));
        row.push(r.qp_iters.map_or_else(String::new, |k| k.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub fn export_csv(log: &SimulationLog, path: &Path) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_csv(log, f)
}

/// Input and output columns (`u1.., y1..`) of a CSV file, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct IoData {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

pub fn import_csv(path: &Path) -> Result<IoData, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_csv(f)
}

/// Reads every `uK` and `yK` column; other columns are ignored.
pub fn read_csv<R: Read>(input: R) -> Result<IoData, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let pick = |prefix: char| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, name)| {
                let rest = name.trim().strip_prefix(prefix)?;
                rest.parse::<usize>().ok().map(|k| (k, i))
            })
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let (u_cols, y_cols) = (pick('u'), pick('y'));
    if u_cols.is_empty() || y_cols.is_empty() {
        return Err(HarnessError::Csv(
            "expected columns u1.. and y1.. in the header".into(),
        ));
    }
    let mut data = IoData {
        u: Vec::new(),
        y: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |cols: &[usize]| -> Result<DVector<f64>, HarnessError> {
            let vals: Result<Vec<f64>, _> = cols
                .iter()
                .map(|&c| rec.get(c).unwrap_or("").trim().parse::<f64>())
                .collect();
            vals.map(DVector::from_vec).map_err(|e| {
                HarnessError::Csv(format!("line {}: {e}", line + 2))
            })
        };
        data.u.push(parse(&u_cols)?);
        data.y.push(parse(&y_cols)?);
    }
    if data.u.is_empty() {
        return Err(HarnessError::Csv("no data rows".into()));
    }
    Ok(data)
}
