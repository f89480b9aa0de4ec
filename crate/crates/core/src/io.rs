//! CSV dumps of observation paths and per-site statistics.
//!
//! Both formats start with a `# config: {json}` line followed by an ordinary CSV
//! table. Numbers are written with 17 significant digits.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::functionals::BlockFunctionals;
use crate::kernels::{MeasurementGrid, Side};
use crate::sim::{ObservationSet, SimulationConfig};

const CONFIG_PREFIX: &str = "# config: ";

/// `v` in scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_config_line<W: Write>(w: &mut W, config: &impl serde::Serialize) -> Result<()> {
    writeln!(w, "{CONFIG_PREFIX}{}", serde_json::to_string(config)?)?;
    Ok(())
}

/// Columns `t, X_1..X_n, XD_1..XD_n`, then `Q_1..Q_n` and `dB_1..dB_n` when present.
/// Step quantities sit on the row of the step's right end; row 0 leaves them empty.
pub fn write_observations<W: Write>(obs: &ObservationSet, mut w: W) -> Result<()> {
    write_config_line(&mut w, &obs.config)?;
    let n = obs.sites();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("X_{i}")));
    header.extend((1..=n).map(|i| format!("XD_{i}")));
    if obs.q.is_some() {
        header.extend((1..=n).map(|i| format!("Q_{i}")));
    }
    if obs.db.is_some() {
        header.extend((1..=n).map(|i| format!("dB_{i}")));
    }
    out.write_record(&header)?;
    let times = obs.times();
    let mut row = Vec::with_capacity(header.len());
    for (j, t) in times.iter().enumerate() {
        row.clear();
        row.push(fmt_num(*t));
        row.extend(obs.x.column(j).iter().map(|v| fmt_num(*v)));
        row.extend(obs.xd.column(j).iter().map(|v| fmt_num(*v)));
        for step in [&obs.q, &obs.db].into_iter().flatten() {
            if j == 0 {
                row.extend(std::iter::repeat_n(String::new(), n));
            } else {
                row.extend(step.column(j - 1).iter().map(|v| fmt_num(*v)));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn read_config_line<R: BufRead, T: serde::de::DeserializeOwned>(r: &mut R) -> Result<T> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let json = line
        .trim_end()
        .strip_prefix(CONFIG_PREFIX)
        .ok_or_else(|| Error::Format(format!("expected a '{}' line", CONFIG_PREFIX.trim_end())))?;
    Ok(serde_json::from_str(json)?)
}

fn parse_num(s: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("row {row}: '{s}' is not a number")))
}

pub fn read_observations<R: Read>(r: R) -> Result<ObservationSet> {
    let mut r = BufReader::new(r);
    let config: SimulationConfig = read_config_line(&mut r)?;
    let n = config.sites;
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers()?.clone();
    let has = |prefix: &str| header.iter().any(|h| h == format!("{prefix}_1"));
    let (has_q, has_db) = (has("Q"), has("dB"));
    let width = 1 + 2 * n + n * (has_q as usize + has_db as usize);
    if header.len() != width {
        return Err(Error::Format(format!("expected {width} columns for {n} sites, found {}", header.len())));
    }
    let mut rows = Vec::new();
    for rec in input.records() {
        rows.push(rec?);
    }
    if rows.len() < 2 {
        return Err(Error::Format("an observation dump needs at least two time points".into()));
    }
    let cols = rows.len();
    let mut x = Array2::zeros((n, cols));
    let mut xd = Array2::zeros((n, cols));
    let mut q = has_q.then(|| Array2::zeros((n, cols - 1)));
    let mut db = has_db.then(|| Array2::zeros((n, cols - 1)));
    for (j, rec) in rows.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Format(format!("row {j} has {} fields, expected {width}", rec.len())));
        }
        parse_num(&rec[0], j)?;
        for i in 0..n {
            x[[i, j]] = parse_num(&rec[1 + i], j)?;
            xd[[i, j]] = parse_num(&rec[1 + n + i], j)?;
        }
        let mut offset = 1 + 2 * n;
        for step in [&mut q, &mut db].into_iter().flatten() {
            if j > 0 {
                for i in 0..n {
                    step[[i, j - 1]] = parse_num(&rec[offset + i], j)?;
                }
            }
            offset += n;
        }
    }
    let config = SimulationConfig {
        time_steps: cols - 1,
        ..config
    };
    Ok(ObservationSet { config, x, xd, q, db })
}

/// One row per site: index, support, position relative to the jump and all statistics.
pub fn write_functionals<W: Write>(funcs: &BlockFunctionals, grid: &MeasurementGrid, tau: f64, config: &impl serde::Serialize, mut w: W) -> Result<()> {
    write_config_line(&mut w, config)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["site", "left", "right", "side", "a", "b_trapezoid", "b_left", "b_matched", "m"])?;
    let opt = |v: Option<&Vec<f64>>, i: usize| v.map(|v| fmt_num(v[i])).unwrap_or_default();
    for i in 0..funcs.sites() {
        let (l, r) = grid.support(i + 1)?;
        let side = match grid.side(i + 1, tau)? {
            Side::Left => "left",
            Side::Right => "right",
            Side::Straddles => "jump",
        };
        out.write_record([
            (i + 1).to_string(),
            fmt_num(l),
            fmt_num(r),
            side.to_string(),
            fmt_num(funcs.a[i]),
            fmt_num(funcs.b_trapezoid[i]),
            fmt_num(funcs.b_left[i]),
            opt(funcs.b_matched.as_ref(), i),
            opt(funcs.m.as_ref(), i),
        ])?;
    }
    out.flush()?;
    Ok(())
}
