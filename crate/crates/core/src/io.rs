//! File formats: JSON model files, CSV samples, severities and outputs.
//!
//! Model files carry a `kind` tag:
//!
//! ```json
//! {"kind": "genab0", "beta": [..], "A": [[..]], "B": [[..]]}
//! {"kind": "genab1", "p0": 0.2, "beta1": [..], "A": [[..]], "B": [[..]]}
//! {"kind": "ph-poisson", "beta": [..], "B": [[..]]}
//! {"kind": "physical", "nu": 21.05, "alpha": [..], "P": [[..]]}
//! ```
//!
//! CSV readers skip blank lines and lines starting with `#`, and accept an
//! optional header row.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compound::SeverityDensity;
use crate::em::{EMParams, EMTrace, MStepStatus};
use crate::error::{Error, Result};
use crate::genab0::{DiscreteDensity, GenAB0Rep, GenAB1Rep};
use crate::linalg::Matrix;
use crate::phpoisson::{PHPoissonRep, PhysicalRep};
use crate::simulate::SampleData;

/// Serialized form of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelFile {
    Genab0 {
        beta: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    Genab1 {
        p0: f64,
        beta1: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    PhPoisson {
        beta: Vec<f64>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    Physical {
        nu: f64,
        alpha: Vec<f64>,
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
    },
}

/// A validated model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    GenAB0(GenAB0Rep),
    GenAB1(GenAB1Rep),
    PHPoisson(PHPoissonRep),
    Physical(PhysicalRep),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::GenAB0(_) => "genab0",
            Model::GenAB1(_) => "genab1",
            Model::PHPoisson(_) => "ph-poisson",
            Model::Physical(_) => "physical",
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        Ok(match file {
            ModelFile::Genab0 { beta, a, b } => {
                Model::GenAB0(GenAB0Rep::new(beta, matrix("A", &a)?, matrix("B", &b)?)?)
            }
            ModelFile::Genab1 { p0, beta1, a, b } => {
                Model::GenAB1(GenAB1Rep::new(p0, beta1, matrix("A", &a)?, matrix("B", &b)?)?)
            }
            ModelFile::PhPoisson { beta, b } => Model::PHPoisson(PHPoissonRep::new(beta, matrix("B", &b)?)?),
            ModelFile::Physical { nu, alpha, p } => Model::Physical(PhysicalRep::new(nu, alpha, matrix("P", &p)?)?),
        })
    }

    pub fn to_file(&self) -> ModelFile {
        match self {
            Model::GenAB0(r) => ModelFile::Genab0 {
                beta: r.beta().to_vec(),
                a: r.a().to_rows(),
                b: r.b().to_rows(),
            },
            Model::GenAB1(r) => ModelFile::Genab1 {
                p0: r.p0(),
                beta1: r.beta1().to_vec(),
                a: r.a().to_rows(),
                b: r.b().to_rows(),
            },
            Model::PHPoisson(r) => ModelFile::PhPoisson {
                beta: r.beta().to_vec(),
                b: r.b().to_rows(),
            },
            Model::Physical(r) => ModelFile::Physical {
                nu: r.nu(),
                alpha: r.alpha().to_vec(),
                p: r.p().to_rows(),
            },
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::Parse(format!("matrix {name} is empty")));
    }
    Matrix::from_rows(rows).map_err(|e| Error::Parse(format!("matrix {name}: {e}")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_model(text: &str) -> Result<Model> {
    Model::from_file(serde_json::from_str(text)?)
}

pub fn read_model(path: &Path) -> Result<Model> {
    parse_model(&read_text(path)?)
}

pub fn model_to_json(model: &Model, pretty: bool) -> Result<String> {
    let file = model.to_file();
    Ok(if pretty {
        serde_json::to_string_pretty(&file)?
    } else {
        serde_json::to_string(&file)?
    })
}

/// Number formatting for CSV output.
///
/// The default prints the shortest decimal string that reads back to the
/// same `f64`, so output is lossless and reproducible. `Digits(d)` prints
/// `d` significant digits in scientific notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumberFormat {
    #[default]
    RoundTrip,
    Digits(usize),
}

impl NumberFormat {
    pub fn fmt(self, x: f64) -> String {
        match self {
            NumberFormat::RoundTrip => format!("{x:?}"),
            NumberFormat::Digits(d) => format!("{:.*e}", d.max(1) - 1, x),
        }
    }
}

/// Data rows of a CSV source, comments and blank lines removed. A first
/// row that does not parse as numbers is treated as a header.
fn csv_records(text: &str) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if let Some(first) = rows.first() {
        if first.iter().any(|f| f.parse::<f64>().is_err()) {
            rows.remove(0);
        }
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(rec: &[String], k: usize, line: usize, what: &str) -> Result<T> {
    rec.get(k)
        .ok_or_else(|| Error::Parse(format!("row {line}: missing {what}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("row {line}: bad {what} {:?}", rec[k])))
}

/// Severity CSV with rows `n,f`. Missing sizes have probability zero.
pub fn parse_severity(text: &str) -> Result<SeverityDensity> {
    let mut f: Vec<f64> = Vec::new();
    for (line, rec) in csv_records(text)?.iter().enumerate() {
        let n: usize = field(rec, 0, line + 1, "size n")?;
        let p: f64 = field(rec, 1, line + 1, "probability f")?;
        if f.len() <= n {
            f.resize(n + 1, 0.0);
        }
        f[n] += p;
    }
    if f.is_empty() {
        return Err(Error::Parse("severity file has no rows".into()));
    }
    SeverityDensity::new(f)
}

pub fn read_severity(path: &Path) -> Result<SeverityDensity> {
    parse_severity(&read_text(path)?)
}

/// Sample CSV: one value per row, or `value,count` histogram rows.
pub fn parse_sample(text: &str) -> Result<SampleData> {
    let rows = csv_records(text)?;
    if rows.is_empty() {
        return Err(Error::Parse("sample file has no observations".into()));
    }
    if rows[0].len() >= 2 {
        let pairs = rows
            .iter()
            .enumerate()
            .map(|(line, rec)| Ok((field(rec, 0, line + 1, "value")?, field(rec, 1, line + 1, "count")?)))
            .collect::<Result<Vec<(u64, u64)>>>()?;
        Ok(SampleData::from_histogram(&pairs))
    } else {
        let obs = rows
            .iter()
            .enumerate()
            .map(|(line, rec)| field(rec, 0, line + 1, "value"))
            .collect::<Result<Vec<u64>>>()?;
        Ok(SampleData::new(obs))
    }
}

pub fn read_sample(path: &Path) -> Result<SampleData> {
    parse_sample(&read_text(path)?)
}

pub fn sample_csv(data: &SampleData, histogram: bool) -> String {
    let mut out = String::new();
    if histogram {
        out.push_str("value,count\n");
        for (v, c) in data.histogram() {
            out.push_str(&format!("{v},{c}\n"));
        }
    } else {
        out.push_str("y\n");
        for v in data.observations() {
            out.push_str(&format!("{v}\n"));
        }
    }
    out
}

/// `header` then one `n,value` row per index.
pub fn series_csv(header: &str, values: &[f64], fmt: NumberFormat) -> String {
    let mut out = format!("{header}\n");
    for (n, v) in values.iter().enumerate() {
        out.push_str(&format!("{n},{}\n", fmt.fmt(*v)));
    }
    out
}

pub fn density_csv(d: &DiscreteDensity, fmt: NumberFormat) -> String {
    series_csv("n,p", d.probs(), fmt)
}

/// EM fit configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Starting point; a `physical` model with `α 1 = 1`.
    #[serde(default)]
    pub theta0: Option<ModelFile>,
    /// Order of the default mixture-of-Poissons start when `theta0` is absent.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Recorded in the trace header; fitting itself is deterministic.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Disable SQUAREM extrapolation.
    #[serde(default)]
    pub plain_em: Option<bool>,
}

impl FitConfig {
    pub fn theta0(&self) -> Result<Option<EMParams>> {
        match &self.theta0 {
            None => Ok(None),
            Some(file) => match Model::from_file(file.clone())? {
                Model::Physical(phys) => Ok(Some(EMParams::from_physical(phys)?)),
                other => Err(Error::invalid(format!(
                    "theta0 must be a physical model, got {}",
                    other.kind()
                ))),
            },
        }
    }
}

pub fn parse_fit_config(text: &str) -> Result<FitConfig> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_fit_config(path: &Path) -> Result<FitConfig> {
    parse_fit_config(&read_text(path)?)
}

fn status_name(s: Option<MStepStatus>) -> &'static str {
    match s {
        None => "start",
        Some(MStepStatus::Converged) => "converged",
        Some(MStepStatus::LineSearchFailed) => "line-search-failed",
        Some(MStepStatus::MaxIterations) => "max-iterations",
    }
}

/// `iter,loglik,nu,alpha_1..alpha_m,p_1_1..p_m_m,mstep,extrapolated,stochastic`.
pub fn trace_csv(trace: &EMTrace, fmt: NumberFormat) -> String {
    let m = trace.final_theta().order();
    let mut header = vec!["iter".to_string(), "loglik".into(), "nu".into()];
    header.extend((1..=m).map(|i| format!("alpha_{i}")));
    for i in 1..=m {
        header.extend((1..=m).map(|j| format!("p_{i}_{j}")));
    }
    header.extend(["mstep".to_string(), "extrapolated".into(), "stochastic".into()]);
    let mut out = header.join(",");
    out.push('\n');
    for r in &trace.records {
        let mut row = vec![r.iter.to_string(), fmt.fmt(r.loglik), fmt.fmt(r.theta.nu())];
        row.extend(r.theta.alpha().iter().map(|v| fmt.fmt(*v)));
        row.extend(r.theta.p().as_slice().iter().map(|v| fmt.fmt(*v)));
        row.push(status_name(r.m_step).into());
        row.push(r.extrapolated.to_string());
        row.push(r.stochastic.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
