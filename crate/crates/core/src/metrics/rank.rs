//! Competition ranking of methods across the seven metrics.

use crate::error::{Error, Result};

/// Column names in table order. Higher is better for all of them.
pub const METRIC_NAMES: [&str; 7] = ["EN", "SD", "SF", "AG", "MI", "VIF", "QABF"];

/// Reference comparison tables as `method,EN,…,QABF,avg_rank` CSV, in
/// order: MSRS, M3FD, FMB, MRI-CT, MRI-PET, MRI-SPECT.
pub const REFERENCE_TABLES: [(&str, &str); 6] = [
    ("MSRS", include_str!("../../data/msrs.csv")),
    ("M3FD", include_str!("../../data/m3fd.csv")),
    ("FMB", include_str!("../../data/fmb.csv")),
    ("MRI-CT", include_str!("../../data/mri_ct.csv")),
    ("MRI-PET", include_str!("../../data/mri_pet.csv")),
    ("MRI-SPECT", include_str!("../../data/mri_spect.csv")),
];

/// Parsed reference table by dataset name.
pub fn reference_table(dataset: &str) -> Result<MetricTable> {
    let (_, text) = REFERENCE_TABLES
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(dataset))
        .ok_or_else(|| Error::Usage(format!("no reference table for {dataset}")))?;
    MetricTable::from_csv(text)
}

/// Methods × metrics, optionally with a reference Avg.Rank column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub methods: Vec<String>,
    pub values: Vec<[f64; 7]>,
    pub reference_rank: Option<Vec<f64>>,
}

impl MetricTable {
    pub fn new(methods: Vec<String>, values: Vec<[f64; 7]>) -> Result<Self> {
        if methods.len() != values.len() {
            return Err(Error::Invalid(format!(
                "{} methods but {} rows",
                methods.len(),
                values.len()
            )));
        }
        Ok(MetricTable {
            methods,
            values,
            reference_rank: None,
        })
    }

    /// Reads a CSV whose header is `method` followed by the seven metric
    /// names and an optional `avg_rank` column.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::Invalid(format!("table header: {e}")))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        let with_rank = match cols.len() {
            8 => false,
            9 if cols[8].eq_ignore_ascii_case("avg_rank") => true,
            _ => return Err(Error::Invalid(format!("unexpected table header {cols:?}"))),
        };
        for (got, want) in cols[1..8].iter().zip(METRIC_NAMES) {
            if !got.eq_ignore_ascii_case(want) {
                return Err(Error::Invalid(format!(
                    "expected column {want}, found {got}"
                )));
            }
        }
        let mut methods = Vec::new();
        let mut values = Vec::new();
        let mut reference = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Invalid(format!("table row {}: {e}", line + 2)))?;
            if rec.len() != cols.len() {
                return Err(Error::Invalid(format!(
                    "table row {} has {} cells",
                    line + 2,
                    rec.len()
                )));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Invalid(format!(
                            "table row {}: non-numeric cell {:?}",
                            line + 2,
                            &rec[i]
                        ))
                    })
            };
            methods.push(rec[0].to_string());
            let mut row = [0.0; 7];
            for (k, v) in row.iter_mut().enumerate() {
                *v = num(k + 1)?;
            }
            values.push(row);
            if with_rank {
                reference.push(num(8)?);
            }
        }
        if methods.is_empty() {
            return Err(Error::Invalid("table has no rows".into()));
        }
        Ok(MetricTable {
            methods,
            values,
            reference_rank: with_rank.then_some(reference),
        })
    }

    /// Ranks per metric (rows: methods).
    pub fn ranks(&self) -> Vec<[usize; 7]> {
        let mut out = vec![[0; 7]; self.values.len()];
        for m in 0..7 {
            let col: Vec<f64> = self.values.iter().map(|r| r[m]).collect();
            for (row, r) in out.iter_mut().zip(competition_ranks(&col)) {
                row[m] = r;
            }
        }
        out
    }

    /// CSV with per-metric ranks and the average rank.
    pub fn rank_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(METRIC_NAMES.iter().map(|m| format!("rank_{m}")));
        header.push("avg_rank".into());
        w.write_record(&header).map_err(csv_err)?;
        for ((name, ranks), avg) in self.methods.iter().zip(self.ranks()).zip(avg_rank(self)) {
            let mut rec = vec![name.clone()];
            rec.extend(ranks.iter().map(usize::to_string));
            rec.push(format!("{avg:.2}"));
            w.write_record(&rec).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?)
            .map_err(|e| Error::Invalid(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

/// Descending competition ranks: one plus the number of strictly better
/// values, so ties share the smallest rank.
pub fn competition_ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|o| *o > v).count())
        .collect()
}

/// Mean of the seven per-metric ranks of every method.
pub fn avg_rank(table: &MetricTable) -> Vec<f64> {
    table
        .ranks()
        .iter()
        .map(|r| r.iter().sum::<usize>() as f64 / 7.0)
        .collect()
}
