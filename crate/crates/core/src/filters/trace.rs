use std::io::Write;

use nalgebra::DVector;

/// One row of a filter trace.
#[derive(Clone, Debug)]
pub struct FilterTraceRow {
    pub step: usize,
    pub mean: DVector<f64>,
    pub cov_trace: f64,
    pub cov_norm: f64,
    pub maha_sq: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct FilterTrace {
    pub rows: Vec<FilterTraceRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl FilterTrace {
    /// Columns: `step, m_*, cov_trace, cov_norm, maha_sq, beta`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.rows.first().map_or(0, |r| r.mean.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|i| format!("m_{i}")));
        header.extend(["cov_trace", "cov_norm", "maha_sq", "beta"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut row = vec![r.step.to_string()];
            row.extend(r.mean.iter().map(|v| v.to_string()));
            row.push(r.cov_trace.to_string());
            row.push(r.cov_norm.to_string());
            row.push(opt(r.maha_sq));
            row.push(opt(r.beta));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
