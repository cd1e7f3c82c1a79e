//! CSV emission and ingestion.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::EstimationReport;
use crate::integrator::Trajectory;
use crate::model::{CellModel, CurrentProfile};
use crate::observability::ObservabilityReport;

/// Names of the seven full-state components.
pub const STATE_NAMES: [&str; 7] = ["m1", "m2", "m3", "m4", "m5", "msp", "alpha"];

/// Twelve significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `t, I, V, m1..m5, msp, alpha`.
pub fn write_trajectory<M: CellModel<f64, N>, const N: usize, W: Write>(
    out: W,
    model: &M,
    traj: &Trajectory<f64, N>,
) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["t", "I", "V"];
    header.extend(STATE_NAMES);
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let s = model.expand(&traj.states[k])?.to_vector();
        let mut row = vec![fmt_num(traj.times[k]), fmt_num(traj.current[k]), fmt_num(traj.voltage[k])];
        row.extend(s.iter().map(|&v| fmt_num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `checkpoint, variable, std_g`.
pub fn write_observability<const N: usize, W: Write>(out: W, report: &ObservabilityReport<f64, N>) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["checkpoint", "variable", "std_g"])?;
    for cp in &report.checkpoints {
        for (i, name) in STATE_NAMES.iter().take(N).enumerate() {
            w.write_record([cp.id.to_string(), name.to_string(), fmt_num(cp.fisher.std[i])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t, V_meas, V_hat, m1_true..alpha_true, m1_hat..alpha_hat, err_m1..err_alpha`.
pub fn write_estimation<W: Write>(out: W, report: &EstimationReport<f64>) -> Result<()> {
    let mut w = writer(out);
    let mut header: Vec<String> = vec!["t".into(), "V_meas".into(), "V_hat".into()];
    header.extend(STATE_NAMES.iter().map(|n| format!("{n}_true")));
    header.extend(STATE_NAMES.iter().map(|n| format!("{n}_hat")));
    header.extend(STATE_NAMES.iter().map(|n| format!("err_{n}")));
    w.write_record(&header)?;
    for k in 0..report.len() {
        let mut row = vec![
            fmt_num(report.times[k]),
            fmt_num(report.measured[k]),
            fmt_num(report.predicted[k]),
        ];
        row.extend(report.truth[k].to_vector().iter().map(|&v| fmt_num(v)));
        row.extend(report.estimate[k].to_vector().iter().map(|&v| fmt_num(v)));
        row.extend(report.errors(k).iter().map(|&v| fmt_num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file. Numeric columns parse as `f64`; other
/// cells are kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Shape(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[j].trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: k + 2,
                    column: j + 1,
                    message: format!("`{}` is not a number", r[j]),
                })
            })
            .collect()
    }
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}

/// Tabulated profile from a CSV with columns `t` and `I`.
pub fn read_profile(path: &Path) -> Result<CurrentProfile<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let table = read_table(file)?;
    CurrentProfile::tabulated(table.column("t")?, table.column("I")?)
}

/// Parses a CLI profile: `constant:<A>`, `sinusoidal:<o>,<a>,<w>` or
/// `file:<path>`.
pub fn parse_profile(spec: &str) -> Result<CurrentProfile<f64>> {
    match spec.strip_prefix("file:") {
        Some(path) => read_profile(Path::new(path)),
        None => spec.parse(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "t,I\n0,1\n10,2\n").unwrap();
        let p = parse_profile(&format!("file:{}", path.display())).unwrap();
        assert_eq!(p.at(5.0), 1.5);
        assert!(parse_profile("constant:x").is_err());
    }

    #[test]
    fn bad_number_reports_position() {
        let t = read_table("a,b\n1,2\n3,zz\n".as_bytes()).unwrap();
        assert!(matches!(t.column("b"), Err(Error::Parse { line: 3, column: 2, .. })));
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(2.535_412_345_678_9), "2.53541234568e0");
        assert_eq!(fmt_num(2.53541234568e0).parse::<f64>().unwrap(), 2.53541234568);
    }
}
