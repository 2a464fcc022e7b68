use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::SizeBucket;
use crate::error::{bail, Error, Result};
use crate::metrics::MetricsReport;
use crate::vae::ModelVariant;

/// Order in which Transformers are added to the base model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sequence {
    /// VAE → E-VAE → EL-VAE → ELD-VAE.
    Forward,
    /// VAE → D-VAE → LD-VAE → ELD-VAE.
    Backward,
}

impl Sequence {
    pub fn variants(self) -> [ModelVariant; 4] {
        match self {
            Sequence::Forward => [
                ModelVariant::VAE,
                ModelVariant::E_VAE,
                ModelVariant::EL_VAE,
                ModelVariant::ELD_VAE,
            ],
            Sequence::Backward => [
                ModelVariant::VAE,
                ModelVariant::D_VAE,
                ModelVariant::LD_VAE,
                ModelVariant::ELD_VAE,
            ],
        }
    }

    /// Consecutive `(before, after)` pairs.
    pub fn transitions(self) -> Vec<(ModelVariant, ModelVariant)> {
        self.variants().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sequence::Forward => "forward",
            Sequence::Backward => "backward",
        }
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(Sequence::Forward),
            "backward" => Ok(Sequence::Backward),
            _ => bail!(InvalidArgument, "unknown sequence `{}`", s),
        }
    }
}

/// Reports of several variants on one dataset.
#[derive(Clone, Debug)]
pub struct DatasetReports {
    pub dataset: String,
    pub bucket: SizeBucket,
    pub reports: BTreeMap<ModelVariant, MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub bucket: SizeBucket,
    pub from: ModelVariant,
    pub to: ModelVariant,
    pub datasets: usize,
    /// Mean `after - before` per metric, in report order.
    pub gains: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub sequence: Sequence,
    pub rows: Vec<GainRow>,
    /// Buckets without any dataset.
    pub omitted: Vec<SizeBucket>,
}

impl GainTable {
    /// One row per bucket and transition; omitted buckets follow as marker
    /// rows with empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let names: Vec<&str> = MetricsReport::METRIC_NAMES.to_vec();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sequence", "bucket", "from", "to", "datasets"];
        header.extend(&names);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                self.sequence.to_string(),
                r.bucket.as_str().to_string(),
                r.from.to_string(),
                r.to.to_string(),
                r.datasets.to_string(),
            ];
            rec.extend(r.gains.iter().map(|(_, v)| v.to_string()));
            w.write_record(&rec)?;
        }
        for b in &self.omitted {
            let mut rec = vec![
                self.sequence.to_string(),
                b.as_str().to_string(),
                String::new(),
                String::new(),
                "0".to_string(),
            ];
            rec.extend(names.iter().map(|_| String::new()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Mean per-metric change across each transition of `sequence`, grouped by
/// size bucket.
pub fn gain_aggregation(datasets: &[DatasetReports], sequence: Sequence) -> Result<GainTable> {
    for d in datasets {
        for v in sequence.variants() {
            if !d.reports.contains_key(&v) {
                bail!(InvalidArgument, "dataset `{}` has no report for {}", d.dataset, v);
            }
        }
    }
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for bucket in SizeBucket::ALL {
        let members: Vec<&DatasetReports> = datasets.iter().filter(|d| d.bucket == bucket).collect();
        if members.is_empty() {
            omitted.push(bucket);
            continue;
        }
        for (from, to) in sequence.transitions() {
            let mut sums = [0.0; 6];
            for d in &members {
                let before = d.reports[&from].scores();
                let after = d.reports[&to].scores();
                for (k, s) in sums.iter_mut().enumerate() {
                    *s += after[k].1 - before[k].1;
                }
            }
            let n = members.len() as f64;
            let gains = MetricsReport::METRIC_NAMES
                .iter()
                .zip(sums)
                .map(|(name, s)| (name.to_string(), s / n))
                .collect();
            rows.push(GainRow {
                bucket,
                from,
                to,
                datasets: members.len(),
                gains,
            });
        }
    }
    Ok(GainTable { sequence, rows, omitted })
}
