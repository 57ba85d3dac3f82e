use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::median;

/// Upper bound on reported SI-SDR; exact matches would otherwise be infinite.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB: the estimate is projected onto the reference
/// and the projection is compared with the residual.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let energy: f64 = reference.iter().map(|s| s * s).sum();
    if !(energy > 0.0) {
        return Err(Error::Domain("SI-SDR reference is silent".into()));
    }
    let alpha = reference.iter().zip(estimate).map(|(s, e)| s * e).sum::<f64>() / energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (&s, &e) in reference.iter().zip(estimate) {
        let t = alpha * s;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    if !(target.is_finite() && residual.is_finite()) {
        return Err(Error::NonFinite("SI-SDR energies are not finite".into()));
    }
    if residual == 0.0 {
        return Ok(if target > 0.0 { SI_SDR_CAP_DB } else { -SI_SDR_CAP_DB });
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub method: String,
    pub sdr_noisy_db: f64,
    pub sdr_enhanced_db: f64,
    pub improvement_db: f64,
}

pub struct EvalItem<'a> {
    pub id: &'a str,
    pub method: &'a str,
    pub reference: &'a [f64],
    pub estimate: &'a [f64],
    pub noisy: &'a [f64],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub count: usize,
    pub median_noisy_db: f64,
    pub median_enhanced_db: f64,
    pub median_improvement_db: f64,
}

pub fn evaluate_batch(items: &[EvalItem<'_>]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Config("no pairs to evaluate".into()));
    }
    let records = items
        .iter()
        .map(|item| {
            let noisy = si_sdr(item.reference, item.noisy)?;
            let enhanced = si_sdr(item.reference, item.estimate)?;
            Ok(EvalRecord {
                id: item.id.to_string(),
                method: item.method.to_string(),
                sdr_noisy_db: noisy,
                sdr_enhanced_db: enhanced,
                improvement_db: enhanced - noisy,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { records })
}

impl EvalReport {
    /// Medians per method, keyed by method name.
    pub fn summaries(&self) -> BTreeMap<String, MethodSummary> {
        let mut by_method: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
        for r in &self.records {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
        by_method
            .into_iter()
            .map(|(method, rs)| {
                let med = |f: fn(&EvalRecord) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap();
                let summary = MethodSummary {
                    count: rs.len(),
                    median_noisy_db: med(|r| r.sdr_noisy_db),
                    median_enhanced_db: med(|r| r.sdr_enhanced_db),
                    median_improvement_db: med(|r| r.improvement_db),
                };
                (method, summary)
            })
            .collect()
    }

    pub fn median_improvement(&self, method: &str) -> Option<f64> {
        self.summaries().get(method).map(|s| s.median_improvement_db)
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.records.extend(other.records);
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["id", "method", "sdr_noisy_db", "sdr_enhanced_db", "improvement_db"])
                .map_err(csv_err)?;
        }
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let records = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        Ok(Self { records })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}
