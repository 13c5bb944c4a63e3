//! Per-image metric rows and their CSV/JSON rendering.

use serde_json::json;

use crate::error::{Error, Result};

use super::{
    average_gradient, entropy, mutual_information, qabf, spatial_frequency, std_dev, vif_fusion,
    GrayImage, METRIC_NAMES,
};

/// The seven metrics of one fused image, in [`METRIC_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow(pub [f64; 7]);

/// Evaluates every metric of fused image `f` against sources `a` and `b`.
pub fn evaluate_triple(f: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<MetricRow> {
    Ok(MetricRow([
        entropy(f),
        std_dev(f),
        spatial_frequency(f),
        average_gradient(f),
        mutual_information(f, a, b)?,
        vif_fusion(f, a, b)?,
        qabf(f, a, b)?,
    ]))
}

/// Named rows plus their mean.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<(String, MetricRow)>,
}

impl Report {
    pub fn mean(&self) -> Option<MetricRow> {
        if self.rows.is_empty() {
            return None;
        }
        let mut m = [0.0; 7];
        for (_, r) in &self.rows {
            for (acc, v) in m.iter_mut().zip(r.0) {
                *acc += v;
            }
        }
        Some(MetricRow(m.map(|v| v / self.rows.len() as f64)))
    }

    /// One row per image followed by a `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        let mut header = vec!["image"];
        header.extend(METRIC_NAMES);
        w.write_record(&header).map_err(err)?;
        let mean = self.mean();
        for (name, row) in self
            .rows
            .iter()
            .map(|(n, r)| (n.as_str(), r))
            .chain(mean.as_ref().map(|m| ("mean", m)))
        {
            let mut rec = vec![name.to_string()];
            rec.extend(row.0.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?)
            .map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let row = |r: &MetricRow| {
            serde_json::Value::Object(
                METRIC_NAMES
                    .iter()
                    .zip(r.0)
                    .map(|(k, v)| (k.to_string(), json!(v)))
                    .collect(),
            )
        };
        let images: Vec<_> = self
            .rows
            .iter()
            .map(|(name, r)| json!({ "image": name, "metrics": row(r) }))
            .collect();
        let doc = json!({
            "images": images,
            "mean": self.mean().as_ref().map(row),
        });
        serde_json::to_string_pretty(&doc).expect("metric values serialize")
    }
}
