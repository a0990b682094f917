//! Paired t-test, Bland-Altman agreement, ICC(2,1) and the rater-score CSV.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ImtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
}

fn check_paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(ImtError::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(ImtError::invalid("paired analysis needs at least 2 pairs"));
    }
    Ok(())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided paired t-test on `d = a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_paired(a, b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dof = d.len() - 1;
    let (mean, sd) = mean_sd(&d);
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, dof }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, p: 0.0, dof }
        });
    }
    let t = mean / (sd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| ImtError::invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, dof })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean of pair, a − b)` for each case.
    pub points: Vec<(f64, f64)>,
}

/// Mean difference and `mean ± 1.96·sd` limits of agreement.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    check_paired(a, b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&d);
    Ok(BlandAltman {
        mean_diff: mean,
        loa_low: mean - 1.96 * sd,
        loa_high: mean + 1.96 * sd,
        points: a.iter().zip(b).map(|(x, y)| (0.5 * (x + y), x - y)).collect(),
    })
}

/// Two-way random effects, absolute agreement, single measure.
///
/// `table[i]` holds the `k` ratings of case `i`.
pub fn icc_2_1(table: &[Vec<f64>]) -> Result<f64> {
    let n = table.len();
    if n < 2 {
        return Err(ImtError::invalid("ICC needs at least 2 cases"));
    }
    let k = table[0].len();
    if k < 2 || table.iter().any(|row| row.len() != k) {
        return Err(ImtError::invalid("ICC needs a complete table with at least 2 raters"));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = table.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = table.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_rows + (kf - 1.0) * ms_error + kf * (ms_cols - ms_error) / nf;
    if denom == 0.0 {
        return Err(ImtError::Degenerate("ICC undefined: no variance in the table".into()));
    }
    Ok((ms_rows - ms_error) / denom)
}

/// Conventional reading of an ICC value.
pub fn icc_label(icc: f64) -> &'static str {
    match icc {
        v if v < 0.5 => "poor",
        v if v < 0.75 => "moderate",
        v if v < 0.9 => "good",
        _ => "excellent",
    }
}

pub const CRITERIA: [&str; 4] = ["noise", "sharpness", "detail", "overall"];

/// One row of a rater CSV: `case_id,rater_id,noise,sharpness,detail,overall`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterScores {
    pub case_id: String,
    pub rater_id: String,
    pub noise: u8,
    pub sharpness: u8,
    pub detail: u8,
    pub overall: u8,
}

impl RaterScores {
    pub fn criterion(&self, name: &str) -> Option<u8> {
        match name {
            "noise" => Some(self.noise),
            "sharpness" => Some(self.sharpness),
            "detail" => Some(self.detail),
            "overall" => Some(self.overall),
            _ => None,
        }
    }
}

/// Parsing failure that names the line (1-based, header is line 1) or column.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreCsvError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
}

pub fn parse_rater_csv(reader: impl Read) -> std::result::Result<Vec<RaterScores>, ScoreCsvError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ScoreCsvError::BadRow { line: 1, reason: e.to_string() })?
        .clone();
    let mut columns = BTreeMap::new();
    for name in ["case_id", "rater_id"].into_iter().chain(CRITERIA) {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ScoreCsvError::MissingColumn(name.to_string()))?;
        columns.insert(name, idx);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| ScoreCsvError::BadRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |name: &str| record.get(columns[name]).unwrap_or("").to_string();
        let score = |name: &str| -> std::result::Result<u8, ScoreCsvError> {
            let raw = field(name);
            match raw.parse::<u8>() {
                Ok(v) if (1..=5).contains(&v) => Ok(v),
                _ => Err(ScoreCsvError::BadRow {
                    line,
                    reason: format!("{name} score `{raw}` is not an integer in 1..=5"),
                }),
            }
        };
        let case_id = field("case_id");
        if case_id.is_empty() {
            return Err(ScoreCsvError::BadRow { line, reason: "empty case_id".into() });
        }
        rows.push(RaterScores {
            case_id,
            rater_id: field("rater_id"),
            noise: score("noise")?,
            sharpness: score("sharpness")?,
            detail: score("detail")?,
            overall: score("overall")?,
        });
    }
    Ok(rows)
}

/// Aligns two score sets by case id; cases missing from either side are an error.
pub fn pair_by_case(
    a: &[RaterScores],
    b: &[RaterScores],
    criterion: &str,
) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let index: BTreeMap<&str, &RaterScores> = b.iter().map(|r| (r.case_id.as_str(), r)).collect();
    if index.len() != b.len() || a.len() != b.len() {
        return Err(ImtError::invalid("score files must list the same cases exactly once"));
    }
    let mut ids = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for row in a {
        let other = index
            .get(row.case_id.as_str())
            .ok_or_else(|| ImtError::invalid(format!("case {} missing from second file", row.case_id)))?;
        let value = |r: &RaterScores| {
            r.criterion(criterion)
                .map(f64::from)
                .ok_or_else(|| ImtError::invalid(format!("unknown criterion {criterion}")))
        };
        ids.push(row.case_id.clone());
        xs.push(value(row)?);
        ys.push(value(other)?);
    }
    Ok((ids, xs, ys))
}
