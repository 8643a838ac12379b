//! CSV dataset formats and JSON helpers.
//!
//! Matched files have the header `pair_id,subtype,role,x1..xp` with one case
//! and one control row per pair and subtypes numbered from 1. Unmatched files
//! have the header `y,x1..xp` with categories numbered from 1 and the largest
//! label denoting controls.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use subtype_lasso::cond_logit::{MatchedDataset, Stratum};
use subtype_lasso::multinom::UnmatchedDataset;
use subtype_lasso::simgen::{GroundTruth, Setting, SimConfig};

use crate::error::{CliError, CliResult};

pub enum Dataset {
    Matched(MatchedDataset),
    Unmatched(UnmatchedDataset),
}

/// Shortest form is not used: 17 significant digits always round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn covariate_header(p: usize) -> impl Iterator<Item = String> {
    (1..=p).map(|j| format!("x{j}"))
}

pub fn write_matched<W: Write>(d: &MatchedDataset, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["pair_id".to_string(), "subtype".into(), "role".into()];
    header.extend(covariate_header(d.p()));
    w.write_record(&header).map_err(csv_err)?;
    let mut pair = 0usize;
    for (k, s) in d.strata().iter().enumerate() {
        for l in 0..s.n_pairs() {
            pair += 1;
            for (role, row) in [("case", s.cases.row(l)), ("control", s.controls.row(l))] {
                let mut rec = vec![pair.to_string(), (k + 1).to_string(), role.to_string()];
                rec.extend(row.iter().map(|&v| fmt_f64(v)));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_unmatched<W: Write>(d: &UnmatchedDataset, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend(covariate_header(d.p()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in d.x().rows().into_iter().enumerate() {
        let mut rec = vec![(d.y()[i] + 1).to_string()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    match e.position() {
        Some(pos) => CliError::Data(format!("line {}: {e}", pos.line())),
        None => CliError::Data(e.to_string()),
    }
}

fn check_covariates(header: &csv::StringRecord, skip: usize) -> CliResult<usize> {
    for (j, name) in header.iter().skip(skip).enumerate() {
        if name.trim() != format!("x{}", j + 1) {
            return Err(CliError::Data(format!(
                "line 1: expected column x{} but found '{name}'",
                j + 1
            )));
        }
    }
    let p = header.len().saturating_sub(skip);
    if p == 0 {
        return Err(CliError::Data("line 1: no covariate columns".into()));
    }
    Ok(p)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> CliResult<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec[i]
        .trim()
        .parse()
        .map_err(|_| CliError::Data(format!("line {line}: cannot parse {what} '{}'", &rec[i])))
}

fn parse_row(rec: &csv::StringRecord, skip: usize) -> CliResult<Vec<f64>> {
    let line = rec.position().map_or(0, |p| p.line());
    (skip..rec.len())
        .map(|i| {
            let v: f64 = parse_field(rec, i, "covariate")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Data(format!("line {line}: non-finite covariate")))
            }
        })
        .collect()
}

#[derive(Default)]
struct PairRows {
    subtype: usize,
    case: Option<Vec<f64>>,
    control: Option<Vec<f64>>,
    line: u64,
}

pub fn read_matched<R: Read>(input: R) -> CliResult<MatchedDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "pair_id" || &header[1] != "subtype" || &header[2] != "role" {
        return Err(CliError::Data("line 1: expected header pair_id,subtype,role,x1..xp".into()));
    }
    let p = check_covariates(&header, 3)?;
    let mut order: Vec<String> = Vec::new();
    let mut pairs: HashMap<String, PairRows> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        let subtype: usize = parse_field(&rec, 1, "subtype")?;
        if subtype == 0 {
            return Err(CliError::Data(format!("line {line}: subtypes are numbered from 1")));
        }
        let row = parse_row(&rec, 3)?;
        let entry = pairs.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            PairRows { subtype, line, ..Default::default() }
        });
        if entry.subtype != subtype {
            return Err(CliError::Data(format!(
                "line {line}: pair {id} changes subtype from {} to {subtype}",
                entry.subtype
            )));
        }
        let slot = match rec[2].trim() {
            "case" => &mut entry.case,
            "control" => &mut entry.control,
            other => {
                return Err(CliError::Data(format!(
                    "line {line}: role must be case or control, found '{other}'"
                )))
            }
        };
        if slot.replace(row).is_some() {
            return Err(CliError::Data(format!("line {line}: pair {id} has two {} rows", &rec[2])));
        }
    }
    let n_strata = pairs.values().map(|r| r.subtype).max().unwrap_or(0);
    if n_strata == 0 {
        return Err(CliError::Data("no pairs found".into()));
    }
    let mut per_stratum: Vec<Vec<(Vec<f64>, Vec<f64>)>> = vec![Vec::new(); n_strata];
    for id in &order {
        let r = pairs.remove(id).expect("recorded pair");
        match (r.case, r.control) {
            (Some(c), Some(d)) => per_stratum[r.subtype - 1].push((c, d)),
            _ => {
                return Err(CliError::Data(format!(
                    "line {}: pair {id} needs exactly one case and one control",
                    r.line
                )))
            }
        }
    }
    let mut strata = Vec::with_capacity(n_strata);
    for (k, list) in per_stratum.into_iter().enumerate() {
        if list.is_empty() {
            return Err(CliError::Data(format!("subtype {} has no pairs", k + 1)));
        }
        let rows = list;
        let m = rows.len();
        let flat = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            Array2::from_shape_vec((m, p), rows.iter().flat_map(|r| pick(r).iter().copied()).collect())
                .expect("rows have p entries")
        };
        strata.push(Stratum { cases: flat(|r| &r.0), controls: flat(|r| &r.1) });
    }
    Ok(MatchedDataset::new(p, strata)?)
}

pub fn read_unmatched<R: Read>(input: R, with_intercept: bool) -> CliResult<UnmatchedDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() || &header[0] != "y" {
        return Err(CliError::Data("line 1: expected header y,x1..xp".into()));
    }
    let p = check_covariates(&header, 1)?;
    let mut y = Vec::new();
    let mut flat = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let label: usize = parse_field(&rec, 0, "category")?;
        if label == 0 {
            return Err(CliError::Data(format!("line {line}: categories are numbered from 1")));
        }
        y.push(label - 1);
        flat.extend(parse_row(&rec, 1)?);
    }
    let k = y.iter().max().map_or(0, |m| m + 1);
    let x = Array2::from_shape_vec((y.len(), p), flat).expect("rows have p entries");
    Ok(UnmatchedDataset::new(x, y, k, with_intercept)?)
}

/// Reads either format, recognized by the first header column.
pub fn read_dataset(path: &Path, with_intercept: bool) -> CliResult<Dataset> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    match text.split([',', '\n']).next().map(str::trim) {
        Some("pair_id") => Ok(Dataset::Matched(read_matched(text.as_bytes())?)),
        Some("y") => Ok(Dataset::Unmatched(read_unmatched(text.as_bytes(), with_intercept)?)),
        _ => Err(CliError::Data(format!(
            "{}: line 1: unrecognized header",
            path.display()
        ))),
    }
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        CliError::Data(format!("{}: {e}", path.display()))
    })?))
}

pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Simulation truth; covariate indices are 1-based like the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthJson {
    pub setting: String,
    pub config: u8,
    pub delta: f64,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub j1: Vec<usize>,
    pub delta_star: Vec<Vec<f64>>,
    pub heterogeneous: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<f64>>,
}

impl TruthJson {
    pub fn new(cfg: &SimConfig, truth: &GroundTruth) -> Self {
        Self {
            setting: match cfg.setting {
                Setting::Matched => "matched".into(),
                Setting::Unmatched => "unmatched".into(),
            },
            config: cfg.config,
            delta: cfg.delta,
            seed: cfg.seed,
            n: cfg.n,
            p: cfg.p,
            k: cfg.k,
            j1: truth.j1.iter().map(|j| j + 1).collect(),
            delta_star: matrix_rows(&truth.delta_star),
            heterogeneous: truth.heterogeneous.clone(),
            intercepts: truth.intercepts.as_ref().map(|v| v.to_vec()),
        }
    }
}
