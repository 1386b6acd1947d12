//! Annual inflow CSV ingestion and the JSON model file.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dph::DiscretePhaseType;
use crate::emission::EmissionLaw;
use crate::error::{Error, Result};
use crate::phmodel::PhTypeHmm;

pub const INFLOW_COLUMNS: [&str; 4] = ["hydro_year_start", "inflow_hm3", "outflow_hm3", "stored_hm3"];

/// Annual records; the hydrological year starting in October of
/// `hydro_year_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowSeries {
    pub years: Vec<i32>,
    pub inflow: Vec<f64>,
    pub outflow: Option<Vec<f64>>,
    pub stored: Option<Vec<f64>>,
}

impl InflowSeries {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    /// Reject stored volumes outside `[0, capacity]`.
    pub fn check_capacity(&self, capacity: f64) -> Result<()> {
        if let Some(stored) = &self.stored {
            if let Some(k) = stored.iter().position(|v| *v > capacity) {
                return Err(Error::data(
                    Some(k + 2),
                    format!("stored_hm3 {} exceeds capacity {capacity}", stored[k]),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct InflowRecord {
    hydro_year_start: i32,
    inflow_hm3: f64,
    outflow_hm3: Option<f64>,
    stored_hm3: Option<f64>,
}

/// Parse `hydro_year_start,inflow_hm3[,outflow_hm3,stored_hm3]`. Row numbers
/// in errors are file line numbers (the header is line 1).
pub fn read_inflow_csv<R: std::io::Read>(reader: R) -> Result<InflowSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in &INFLOW_COLUMNS[..2] {
        if !headers.iter().any(|h| h == *required) {
            return Err(Error::data(Some(1), format!("missing column {required}")));
        }
    }
    if let Some(h) = headers.iter().find(|h| !INFLOW_COLUMNS.contains(h)) {
        return Err(Error::data(Some(1), format!("unexpected column {h:?}")));
    }
    let has_out = headers.iter().any(|h| h == "outflow_hm3");
    let has_stored = headers.iter().any(|h| h == "stored_hm3");

    let mut years = Vec::new();
    let mut inflow = Vec::new();
    let mut outflow = Vec::new();
    let mut stored = Vec::new();
    for (k, rec) in rdr.deserialize::<InflowRecord>().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::data(Some(line), format!("unparseable row: {e}")))?;
        if let Some(&prev) = years.last() {
            if rec.hydro_year_start == prev {
                return Err(Error::data(
                    Some(line),
                    format!("duplicated year {}", rec.hydro_year_start),
                ));
            }
            if rec.hydro_year_start < prev {
                return Err(Error::data(
                    Some(line),
                    format!("year {} follows {prev}; years must increase", rec.hydro_year_start),
                ));
            }
            if rec.hydro_year_start != prev + 1 {
                return Err(Error::data(
                    Some(line),
                    format!("gap between {prev} and {}", rec.hydro_year_start),
                ));
            }
        }
        let check = |name: &str, v: Option<f64>, required: bool| -> Result<f64> {
            match v {
                Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
                Some(x) => Err(Error::data(Some(line), format!("{name} is {x}; must be >= 0"))),
                None if required => Err(Error::data(Some(line), format!("missing {name}"))),
                None => Ok(f64::NAN),
            }
        };
        years.push(rec.hydro_year_start);
        inflow.push(check("inflow_hm3", Some(rec.inflow_hm3), true)?);
        if has_out {
            outflow.push(check("outflow_hm3", rec.outflow_hm3, true)?);
        }
        if has_stored {
            stored.push(check("stored_hm3", rec.stored_hm3, true)?);
        }
    }
    if years.is_empty() {
        return Err(Error::data(None, "empty series"));
    }
    Ok(InflowSeries {
        years,
        inflow,
        outflow: has_out.then_some(outflow),
        stored: has_stored.then_some(stored),
    })
}

pub fn load_inflow_csv(path: &Path) -> Result<InflowSeries> {
    let file = std::fs::File::open(path)?;
    read_inflow_csv(file)
}

pub const SCHEMA_VERSION: u32 = 1;

/// Optional provenance of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub loglik: String,
    pub aic: String,
    pub parameter_count: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl FitMetadata {
    pub fn new(loglik: f64, aic: f64, parameter_count: usize, iterations: usize, seed: u64) -> Self {
        Self {
            loglik: loglik.to_string(),
            aic: aic.to_string(),
            parameter_count,
            iterations,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SojournFile {
    alpha: Vec<String>,
    #[serde(rename = "T")]
    t: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum EmissionFile {
    Degenerate { value: String },
    Categorical { alphabet: Vec<String>, probs: Vec<String> },
    Poisson { lambda: String },
    Exponential { rate: String },
}

/// On-disk form of a model. Every number is a decimal string written with
/// the shortest representation that parses back to the same `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    schema_version: u32,
    labels: Vec<String>,
    beta: Vec<String>,
    jump: Vec<Vec<String>>,
    sojourns: Vec<SojournFile>,
    emissions: Vec<EmissionFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitMetadata>,
}

fn enc(v: &[f64]) -> Vec<String> {
    v.iter().map(f64::to_string).collect()
}

fn enc_mat(m: &DMatrix<f64>) -> Vec<Vec<String>> {
    m.row_iter().map(|r| r.iter().map(f64::to_string).collect()).collect()
}

fn dec(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::data(None, format!("{what}: {s:?} is not a decimal number")))?;
    if !v.is_finite() {
        return Err(Error::data(None, format!("{what}: {s:?} is not finite")));
    }
    Ok(v)
}

fn dec_vec(v: &[String], what: &str) -> Result<Vec<f64>> {
    v.iter().map(|s| dec(s, what)).collect()
}

fn dec_mat(rows: &[Vec<String>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::data(None, format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows
        .iter()
        .flatten()
        .map(|s| dec(s, what))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(n, m, &flat))
}

impl ModelFile {
    pub fn from_model(m: &PhTypeHmm, fit: Option<FitMetadata>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            labels: m.labels().to_vec(),
            beta: enc(m.beta()),
            jump: enc_mat(m.jump()),
            sojourns: m
                .sojourns()
                .iter()
                .map(|s| SojournFile {
                    alpha: enc(s.alpha()),
                    t: enc_mat(s.phase_matrix()),
                })
                .collect(),
            emissions: m
                .emissions()
                .iter()
                .map(|g| match g {
                    EmissionLaw::Degenerate { value } => EmissionFile::Degenerate {
                        value: value.to_string(),
                    },
                    EmissionLaw::Categorical { alphabet, probs } => EmissionFile::Categorical {
                        alphabet: enc(alphabet),
                        probs: enc(probs),
                    },
                    EmissionLaw::Poisson { lambda } => EmissionFile::Poisson {
                        lambda: lambda.to_string(),
                    },
                    EmissionLaw::Exponential { rate } => EmissionFile::Exponential {
                        rate: rate.to_string(),
                    },
                })
                .collect(),
            fit,
        }
    }

    pub fn fit(&self) -> Option<&FitMetadata> {
        self.fit.as_ref()
    }

    /// Rebuild and validate the model.
    pub fn to_model(&self) -> Result<PhTypeHmm> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::data(
                None,
                format!("unsupported schema_version {}", self.schema_version),
            ));
        }
        let sojourns = self
            .sojourns
            .iter()
            .enumerate()
            .map(|(i, s)| {
                DiscretePhaseType::new(
                    dec_vec(&s.alpha, "alpha")?,
                    dec_mat(&s.t, "T")?,
                )
                .map_err(|e| Error::invalid(format!("sojourn of regime {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let emissions = self
            .emissions
            .iter()
            .map(|g| {
                Ok(match g {
                    EmissionFile::Degenerate { value } => EmissionLaw::Degenerate {
                        value: dec(value, "value")?,
                    },
                    EmissionFile::Categorical { alphabet, probs } => EmissionLaw::Categorical {
                        alphabet: dec_vec(alphabet, "alphabet")?,
                        probs: dec_vec(probs, "probs")?,
                    },
                    EmissionFile::Poisson { lambda } => EmissionLaw::Poisson {
                        lambda: dec(lambda, "lambda")?,
                    },
                    EmissionFile::Exponential { rate } => EmissionLaw::Exponential {
                        rate: dec(rate, "rate")?,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PhTypeHmm::new(
            self.labels.clone(),
            dec_vec(&self.beta, "beta")?,
            dec_mat(&self.jump, "jump")?,
            sojourns,
            emissions,
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(None, format!("model file: {e}")))
    }
}

pub fn save_model(path: &Path, m: &PhTypeHmm, fit: Option<FitMetadata>) -> Result<()> {
    std::fs::write(path, ModelFile::from_model(m, fit).to_json())?;
    Ok(())
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&std::fs::read_to_string(path)?)
}

pub fn load_model(path: &Path) -> Result<PhTypeHmm> {
    load_model_file(path)?.to_model()
}
