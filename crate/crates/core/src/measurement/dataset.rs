use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[serde(alias = "hom")]
    Homodyne,
    #[serde(alias = "het")]
    Heterodyne,
}

impl Scheme {
    pub fn short(&self) -> &'static str {
        match self {
            Scheme::Homodyne => "hom",
            Scheme::Heterodyne => "het",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Homodyne => "homodyne",
            Scheme::Heterodyne => "heterodyne",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hom" | "homodyne" => Ok(Scheme::Homodyne),
            "het" | "heterodyne" => Ok(Scheme::Heterodyne),
            other => Err(Error::InvalidParameter(format!("unknown scheme {other:?}"))),
        }
    }
}

/// One measurement outcome. `p` is present iff the record is heterodyne.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRecord {
    pub theta: f64,
    pub x: f64,
    pub p: Option<f64>,
}

impl QuadratureRecord {
    pub fn homodyne(theta: f64, x: f64) -> Self {
        Self { theta, x, p: None }
    }

    pub fn heterodyne(theta: f64, x: f64, p: f64) -> Self {
        Self { theta, x, p: Some(p) }
    }

    fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.x.is_finite() && self.p.is_none_or(f64::is_finite)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    #[serde(default)]
    pub source_id: String,
    /// Local-oscillator power in mW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_power_mw: Option<f64>,
    #[serde(default)]
    pub notes: String,
    /// Free-form provenance (resolved run configuration, seeds).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

/// Ordered quadrature outcomes from one detection scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDataset {
    scheme: Scheme,
    records: Vec<QuadratureRecord>,
    pub metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    scheme: Scheme,
    records: usize,
    #[serde(default)]
    metadata: DatasetMetadata,
}

impl QuadratureDataset {
    pub fn new(scheme: Scheme, records: Vec<QuadratureRecord>) -> Result<Self> {
        for (k, r) in records.iter().enumerate() {
            if r.p.is_some() != (scheme == Scheme::Heterodyne) {
                return Err(Error::SchemeMismatch(format!(
                    "record {k} does not match {scheme} scheme"
                )));
            }
            if !r.is_finite() {
                return Err(Error::InvalidParameter(format!("record {k} is not finite")));
            }
        }
        Ok(Self { scheme, records, metadata: DatasetMetadata::default() })
    }

    pub fn with_metadata(mut self, metadata: DatasetMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn records(&self) -> &[QuadratureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First `k` records (all of them if `k` exceeds the length).
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            scheme: self.scheme,
            records: self.records[..k.min(self.len())].to_vec(),
            metadata: self.metadata.clone(),
        }
    }

    /// Appends another dataset of the same scheme.
    pub fn concat(&self, other: &QuadratureDataset) -> Result<Self> {
        if self.scheme != other.scheme {
            return Err(Error::SchemeMismatch("cannot concatenate different schemes".into()));
        }
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        Ok(Self { scheme: self.scheme, records, metadata: self.metadata.clone() })
    }

    /// Homodyne view of heterodyne data, keeping only `(theta, x)`.
    pub fn x_only(&self) -> Self {
        Self {
            scheme: Scheme::Homodyne,
            records: self.records.iter().map(|r| QuadratureRecord::homodyne(r.theta, r.x)).collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match self.scheme {
            Scheme::Homodyne => w.write_record(["theta", "x"])?,
            Scheme::Heterodyne => w.write_record(["theta", "x", "p"])?,
        }
        for r in &self.records {
            match r.p {
                None => w.write_record(&[r.theta.to_string(), r.x.to_string()])?,
                Some(p) => w.write_record(&[r.theta.to_string(), r.x.to_string(), p.to_string()])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses CSV with header `theta,x` or `theta,x,p`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let scheme = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["theta", "x"] => Scheme::Homodyne,
            ["theta", "x", "p"] => Scheme::Heterodyne,
            other => {
                return Err(Error::InvalidParameter(format!("unexpected dataset header {other:?}")))
            }
        };
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .ok_or_else(|| Error::InvalidParameter("short CSV row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad number in dataset: {e}")))
            };
            records.push(match scheme {
                Scheme::Homodyne => QuadratureRecord::homodyne(num(0)?, num(1)?),
                Scheme::Heterodyne => QuadratureRecord::heterodyne(num(0)?, num(1)?, num(2)?),
            });
        }
        Self::new(scheme, records)
    }

    /// Sidecar path for a dataset CSV: same stem, `.json` extension.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(csv_path)?))?;
        let side = Sidecar { scheme: self.scheme, records: self.len(), metadata: self.metadata.clone() };
        let mut f = BufWriter::new(File::create(Self::sidecar_path(csv_path))?);
        serde_json::to_writer_pretty(&mut f, &side)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    /// Reads a CSV and, when present, its sidecar; the two must agree.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let mut ds = Self::read_csv(BufReader::new(File::open(csv_path)?))?;
        let side_path = Self::sidecar_path(csv_path);
        if side_path.exists() {
            let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(&side_path)?))?;
            if side.scheme != ds.scheme {
                return Err(Error::SchemeMismatch(format!(
                    "sidecar declares {} but CSV holds {} data",
                    side.scheme, ds.scheme
                )));
            }
            if side.records != ds.len() {
                return Err(Error::InvalidParameter(format!(
                    "sidecar declares {} records, CSV has {}",
                    side.records,
                    ds.len()
                )));
            }
            ds.metadata = side.metadata;
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_consistency() {
        assert!(QuadratureDataset::new(Scheme::Homodyne, vec![QuadratureRecord::heterodyne(0.0, 1.0, 2.0)]).is_err());
        assert!(QuadratureDataset::new(Scheme::Heterodyne, vec![QuadratureRecord::homodyne(0.0, 1.0)]).is_err());
        assert!(QuadratureDataset::new(Scheme::Homodyne, vec![QuadratureRecord::homodyne(f64::NAN, 1.0)]).is_err());
        assert!(QuadratureDataset::new(Scheme::Homodyne, vec![]).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = QuadratureDataset::new(
            Scheme::Heterodyne,
            vec![QuadratureRecord::heterodyne(0.1, -0.25, 1.5), QuadratureRecord::heterodyne(7.0, 0.0, -2.0)],
        )
        .unwrap()
        .with_metadata(DatasetMetadata { source_id: "unit".into(), lo_power_mw: Some(12.0), ..Default::default() });
        ds.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("theta,x,p\n"));
        let back = QuadratureDataset::load(&path).unwrap();
        assert_eq!(back, ds);

        let hom = ds.x_only();
        let mut buf = Vec::new();
        hom.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta,x\n"));
    }

    #[test]
    fn sidecar_scheme_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = QuadratureDataset::new(Scheme::Homodyne, vec![QuadratureRecord::homodyne(0.0, 0.5)]).unwrap();
        ds.save(&path).unwrap();
        std::fs::write(
            QuadratureDataset::sidecar_path(&path),
            r#"{"scheme":"heterodyne","records":1}"#,
        )
        .unwrap();
        assert!(matches!(QuadratureDataset::load(&path), Err(Error::SchemeMismatch(_))));
    }
}
