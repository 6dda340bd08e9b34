//! CSV formats. Numbers are written as shortest round-trip decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use slowfast_core::averaging::{AveragedModel, Provenance};
use slowfast_core::control::SurfacePoint;
use slowfast_core::estimator::EstimatorReport;
use slowfast_core::fkpde::ValueGrid;
use slowfast_core::validate::ConvergenceRow;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    if v == 0.0 && v.is_sign_negative() {
        return "-0".into();
    }
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e16) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub const REPORT_COLUMNS: &str =
    "beta,epsilon,N,dt,I_N,varU,reU,stdErr,R_c,nClamped,seed,wallClock";

pub fn report_row(r: &EstimatorReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        num(r.beta),
        num(r.epsilon),
        r.n,
        num(r.dt),
        num(r.i_n),
        num(r.var_u),
        num(r.re_u),
        num(r.std_err),
        num(r.r_c),
        r.n_clamped,
        r.seed,
        num(r.wall_clock)
    )
}

pub fn reports_csv(header: &str, reports: &[EstimatorReport]) -> String {
    let mut out = String::from(header);
    out.push_str(REPORT_COLUMNS);
    out.push('\n');
    for r in reports {
        out.push_str(&report_row(r));
        out.push('\n');
    }
    out
}

/// Report rows as `(column, value)` maps, ignoring `#` comments.
pub fn parse_report_rows(text: &str) -> Vec<Vec<(String, f64)>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let Some(head) = lines.next() else {
        return Vec::new();
    };
    let cols: Vec<&str> = head.split(',').collect();
    lines
        .map(|l| {
            cols.iter()
                .zip(l.split(','))
                .map(|(c, v)| ((*c).to_owned(), v.parse().unwrap_or(f64::NAN)))
                .collect()
        })
        .collect()
}

pub fn surface_csv(header: &str, points: &[SurfacePoint]) -> String {
    let mut out = String::from(header);
    out.push_str("s,x,u1\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", num(p.s), num(p.x), num(p.u1));
    }
    out
}

pub fn convergence_csv(header: &str, rows: &[ConvergenceRow]) -> String {
    let mut out = String::from(header);
    out.push_str("epsilon,metric,value,stderr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            num(r.epsilon),
            r.metric,
            num(r.value),
            num(r.std_err)
        );
    }
    out
}

pub fn averaged_csv(header: &str, avg: &AveragedModel) -> String {
    let mut out = String::from(header);
    let tag = match avg.provenance {
        Provenance::Analytic => "analytic",
        Provenance::ErgodicAverage => "ergodic",
    };
    let _ = writeln!(out, "# provenance: {tag}");
    out.push_str("x,fTilde,aTilde,hTilde\n");
    for i in 0..avg.len() {
        let c = avg.node(i);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            num(avg.grid[i]),
            num(c.f),
            num(c.a),
            num(c.h)
        );
    }
    out
}

pub fn read_averaged_csv(path: &Path) -> Result<AveragedModel, IoError> {
    let text = read(path)?;
    let name = path.display().to_string();
    let provenance = if text.lines().any(|l| l.trim() == "# provenance: ergodic") {
        Provenance::ErgodicAverage
    } else {
        Provenance::Analytic
    };
    let rows = numeric_rows(&text, &name, 4, true)?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    AveragedModel::new(col(0), col(1), col(2), col(3), provenance).map_err(|e| IoError::Format {
        path: name,
        line: 0,
        message: e.to_string(),
    })
}

/// Paths of the `meta`, `phi` and `dphi` files for a value-grid stem.
pub fn grid_paths(stem: &Path) -> [PathBuf; 3] {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    [with(".meta.csv"), with(".phi.csv"), with(".dphi.csv")]
}

/// Writes the grid as three files; rows are time levels, columns space nodes.
pub fn write_value_grid(stem: &Path, header: &str, g: &ValueGrid) -> Result<[PathBuf; 3], IoError> {
    let paths = grid_paths(stem);
    let mut meta = String::from(header);
    meta.push_str("t0,horizon,m,x_lo,x_hi,n_x\n");
    let _ = writeln!(
        meta,
        "{},{},{},{},{},{}",
        num(g.t0),
        num(g.horizon),
        g.m,
        num(g.x_lo),
        num(g.x_hi),
        g.n_x
    );
    write(&paths[0], &meta)?;
    write(&paths[1], &matrix(&g.phi, g.n_x))?;
    write(&paths[2], &matrix(&g.dphi, g.n_x))?;
    Ok(paths)
}

pub fn read_value_grid(stem: &Path) -> Result<ValueGrid, IoError> {
    let paths = grid_paths(stem);
    let meta_name = paths[0].display().to_string();
    let meta = numeric_rows(&read(&paths[0])?, &meta_name, 6, true)?;
    let [t0, horizon, m, x_lo, x_hi, n_x] = meta
        .first()
        .map(|r| [r[0], r[1], r[2], r[3], r[4], r[5]])
        .ok_or_else(|| IoError::Format {
            path: meta_name.clone(),
            line: 0,
            message: "missing data row".into(),
        })?;
    let (m, n_x) = (m as usize, n_x as usize);
    let load = |p: &Path| -> Result<Vec<f64>, IoError> {
        let name = p.display().to_string();
        let rows = numeric_rows(&read(p)?, &name, n_x, false)?;
        if rows.len() != m + 1 {
            return Err(IoError::Format {
                path: name,
                line: 0,
                message: format!("expected {} rows, got {}", m + 1, rows.len()),
            });
        }
        Ok(rows.concat())
    };
    let g = ValueGrid {
        t0,
        horizon,
        m,
        x_lo,
        x_hi,
        n_x,
        phi: load(&paths[1])?,
        dphi: load(&paths[2])?,
    };
    g.validate().map_err(|e| IoError::Format {
        path: meta_name,
        line: 0,
        message: e.to_string(),
    })?;
    Ok(g)
}

fn matrix(values: &[f64], width: usize) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.chunks(width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}

fn numeric_rows(
    text: &str,
    path: &str,
    width: usize,
    has_columns: bool,
) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rows = Vec::new();
    let mut seen_columns = !has_columns;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_columns {
            seen_columns = true;
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| IoError::Format {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.len() != width {
            return Err(IoError::Format {
                path: path.into(),
                line: i + 1,
                message: format!("expected {width} fields, got {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.1 + 0.2,
            3.52e-2,
            1e-300,
            -7.25e20,
            f64::MIN_POSITIVE,
            123456.789,
            5e-5,
        ] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
            let mantissa: String = s
                .chars()
                .take_while(|c| *c != 'e')
                .filter(|c| c.is_ascii_digit())
                .collect();
            let digits = mantissa.trim_start_matches('0').len();
            assert!(digits <= 17, "{s}");
        }
    }

    #[test]
    fn report_rows_parse_back() {
        let r = EstimatorReport {
            beta: 1.0,
            epsilon: 0.1,
            dt: 1e-4,
            n: 10,
            n_failed: 0,
            i_n: 0.0352,
            log_i_n: 0.0352f64.ln(),
            var_u: 1.5e-4,
            re_u: 0.35,
            std_err: 3.9e-3,
            r_c: 0.6,
            n_clamped: 2,
            seed: 9,
            wall_clock: 0.0,
        };
        let text = reports_csv("# hello\n", &[r]);
        let rows = parse_report_rows(&text);
        assert_eq!(rows.len(), 1);
        let get = |k: &str| rows[0].iter().find(|(c, _)| c == k).unwrap().1;
        assert_eq!(
            (get("I_N"), get("reU"), get("N"), get("seed")),
            (0.0352, 0.35, 10.0, 9.0)
        );
    }
}
