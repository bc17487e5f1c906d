//! CSV ingestion, chain persistence and delimited result tables.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{ChainOutput, ModelKind, CHAIN_FORMAT_VERSION};
use crate::config::SamplerConfig;
use crate::data::Dataset;
use crate::diagnostics::Curves;
use crate::error::{Error, Result};
use crate::metrics::{equal_tailed, posterior_intervals};
use crate::sim::MetricRow;
use crate::tree::Design;

pub const EXPORT_SCHEMA_VERSION: u32 = 1;
const CHAIN_MAGIC: &str = "missbart-chain";

/// How a CSV file maps to covariates and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    pub responses: Vec<String>,
    /// Covariate columns; `None` takes every non-response column.
    pub covariates: Option<Vec<String>>,
    /// Token read as a missing cell in addition to the empty field.
    pub marker: String,
    /// Responses replaced by their natural log.
    pub log: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            responses: Vec::new(),
            covariates: None,
            marker: "NA".into(),
            log: Vec::new(),
        }
    }
}

/// Run settings read from a TOML file; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub load: LoadOptions,
    pub sampler: SamplerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Usage(format!("column {name} not found in header")))
}

/// Parses CSV text with a header row.
pub fn parse_csv<R: Read>(reader: R, opts: &LoadOptions) -> Result<Dataset> {
    if opts.responses.is_empty() {
        return Err(Error::Usage("no response columns named".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let y_idx: Vec<usize> = opts.responses.iter().map(|n| column_index(&header, n)).collect::<Result<_>>()?;
    let x_names: Vec<String> = match &opts.covariates {
        Some(c) => c.clone(),
        None => header.iter().filter(|h| !opts.responses.contains(h)).cloned().collect(),
    };
    let x_idx: Vec<usize> = x_names.iter().map(|n| column_index(&header, n)).collect::<Result<_>>()?;
    for l in &opts.log {
        if !opts.responses.contains(l) {
            return Err(Error::Usage(format!("log flag on {l}, which is not a response")));
        }
    }
    let logged: Vec<bool> = opts.responses.iter().map(|r| opts.log.contains(r)).collect();
    let mut xcols = vec![Vec::new(); x_idx.len()];
    let mut yrows: Vec<f64> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("csv record {}: {e}", r + 1)))?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            if s.is_empty() || s == opts.marker {
                return Ok(f64::NAN);
            }
            s.parse::<f64>().map_err(|_| Error::Parse {
                row: r + 1,
                column: header[c].clone(),
                message: format!("cannot parse {s:?} as a number"),
            })
        };
        for (k, &c) in x_idx.iter().enumerate() {
            xcols[k].push(cell(c)?);
        }
        for (k, &c) in y_idx.iter().enumerate() {
            let mut v = cell(c)?;
            if logged[k] && !v.is_nan() {
                if v <= 0.0 {
                    return Err(Error::Domain(format!(
                        "row {}, column {}: log of nonpositive value {v}",
                        r + 1,
                        header[c]
                    )));
                }
                v = v.ln();
            }
            yrows.push(v);
        }
    }
    let n = yrows.len() / y_idx.len();
    let y = DMatrix::from_row_slice(n, y_idx.len(), &yrows);
    let x = if x_idx.is_empty() {
        Design::empty(n)
    } else {
        Design::from_columns(xcols)?
    };
    Dataset::with_names(x, y, x_names, opts.responses.clone())
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_csv(f, opts)
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

/// Writes covariates then responses, missing cells as `NA`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<&str> = data.x_names.iter().chain(&data.y_names).map(String::as_str).collect();
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.q()).map(|j| fmt_value(data.x.value(i, j))).collect();
        row.extend((0..data.p()).map(|j| fmt_value(data.y[(i, j)])));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_csv(data, &mut buf)?;
    write_atomic(path, &buf)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    format: String,
    version: u32,
    checksum: String,
    chain: ChainOutput,
}

/// SHA-256 over the chain's serialized contents with wall time zeroed.
pub fn chain_checksum(chain: &ChainOutput) -> Result<String> {
    let mut c = chain.clone();
    c.wall_time_secs = 0.0;
    let bytes = serde_json::to_vec(&c).map_err(|e| Error::Serde(e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save_chain(path: &Path, chain: &ChainOutput) -> Result<()> {
    let file = ChainFile {
        format: CHAIN_MAGIC.into(),
        version: CHAIN_FORMAT_VERSION,
        checksum: chain_checksum(chain)?,
        chain: chain.clone(),
    };
    let bytes = serde_json::to_vec(&file).map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn load_chain(path: &Path) -> Result<ChainOutput> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let head: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: not a chain file: {e}", path.display())))?;
    if head.get("format").and_then(|v| v.as_str()) != Some(CHAIN_MAGIC) {
        return Err(Error::Data(format!("{}: not a chain file", path.display())));
    }
    let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != CHAIN_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            expected: CHAIN_FORMAT_VERSION,
            found: version as u32,
        });
    }
    let file: ChainFile = serde_json::from_value(head).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if chain_checksum(&file.chain)? != file.checksum {
        return Err(Error::Data(format!("{}: checksum mismatch", path.display())));
    }
    Ok(file.chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Imputations,
    Intervals,
    Metrics,
    Importance,
    Interactions,
    Pdp,
    Detection,
}

impl ExportKind {
    pub const ALL: [ExportKind; 7] = [
        ExportKind::Imputations,
        ExportKind::Intervals,
        ExportKind::Metrics,
        ExportKind::Importance,
        ExportKind::Interactions,
        ExportKind::Pdp,
        ExportKind::Detection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExportKind::Imputations => "imputations",
            ExportKind::Intervals => "intervals",
            ExportKind::Metrics => "metrics",
            ExportKind::Importance => "importance",
            ExportKind::Interactions => "interactions",
            ExportKind::Pdp => "pdp",
            ExportKind::Detection => "detection",
        }
    }
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown export kind {s:?}")))
    }
}

/// A delimited table preceded by a schema line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: ExportKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(kind: ExportKind, header: &[&str]) -> Self {
        Table {
            kind,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# missbart-export v{EXPORT_SCHEMA_VERSION} kind={}", self.kind.name())?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            wtr.write_record(r).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Posterior mean and 95% interval of every imputed response cell.
pub fn imputation_table(chain: &ChainOutput) -> Result<Table> {
    chain.require_draws()?;
    let mut t = Table::new(ExportKind::Imputations, &["row", "response", "mean", "lower", "upper"]);
    for (c, &(i, j)) in chain.missing_cells.iter().enumerate() {
        let draws: Vec<f64> = chain.draws.iter().map(|d| d.y_mis[c]).collect();
        let iv = equal_tailed(&draws, 0.95)?;
        t.rows.push(vec![
            i.to_string(),
            chain.y_names[j].clone(),
            fmt_value(iv.mean),
            fmt_value(iv.lower),
            fmt_value(iv.upper),
        ]);
    }
    Ok(t)
}

/// 95% intervals of every missingness coefficient, one row per
/// (predictor, response) pair.
pub fn interval_table(chain: &ChainOutput) -> Result<Table> {
    chain.require_draws()?;
    if chain.model != ModelKind::MissBart1 {
        return Err(Error::Usage("coefficient intervals need a missbart1 chain".into()));
    }
    let p = chain.p;
    let names: Vec<String> = std::iter::once("intercept".to_string())
        .chain(chain.x_names.iter().cloned())
        .chain(chain.y_names.iter().cloned())
        .collect();
    let draws: Vec<Vec<f64>> = (0..chain.b_rows() * p)
        .map(|k| chain.draws.iter().map(|d| d.b[k]).collect())
        .collect();
    let ivs = posterior_intervals(&draws, 0.95)?;
    let mut t = Table::new(
        ExportKind::Intervals,
        &["predictor", "response", "mean", "lower", "upper", "excludes_zero"],
    );
    for (k, iv) in ivs.iter().enumerate() {
        t.rows.push(vec![
            names[k / p].clone(),
            chain.y_names[k % p].clone(),
            fmt_value(iv.mean),
            fmt_value(iv.lower),
            fmt_value(iv.upper),
            iv.excludes_zero().to_string(),
        ]);
    }
    Ok(t)
}

/// Split usage per predictor, averaged over draws. Missingness-forest
/// predictors `(X, Y)` for missbart2 chains; data-forest covariates otherwise.
pub fn importance_table(chain: &ChainOutput) -> Result<Table> {
    chain.require_draws()?;
    let (names, counts): (Vec<String>, Vec<&Vec<f64>>) = if chain.model == ModelKind::MissBart2 {
        (chain.miss_predictor_names(), chain.draws.iter().map(|d| &d.miss_split_counts).collect())
    } else {
        (chain.x_names.clone(), chain.draws.iter().map(|d| &d.split_counts).collect())
    };
    let k = counts.len() as f64;
    let mean: Vec<f64> = (0..names.len())
        .map(|v| counts.iter().map(|c| c[v]).sum::<f64>() / k)
        .collect();
    let total: f64 = mean.iter().sum();
    let mut t = Table::new(ExportKind::Importance, &["predictor", "mean_splits", "share"]);
    for (name, m) in names.iter().zip(&mean) {
        let share = if total > 0.0 { m / total } else { 0.0 };
        t.rows.push(vec![name.clone(), fmt_value(*m), fmt_value(share)]);
    }
    Ok(t)
}

/// Pair counts of predictors used together along a root-to-leaf path,
/// averaged over draws; upper triangle including the diagonal.
pub fn interaction_table(chain: &ChainOutput) -> Result<Table> {
    chain.require_draws()?;
    let mut t = Table::new(ExportKind::Interactions, &["model", "var_a", "var_b", "count"]);
    let mut emit = |model: &str, names: &[String], m: &[f64]| {
        let v = names.len();
        for a in 0..v {
            for b in a..v {
                t.rows.push(vec![model.into(), names[a].clone(), names[b].clone(), fmt_value(m[a * v + b])]);
            }
        }
    };
    emit("data", &chain.x_names, &chain.interactions);
    if chain.model == ModelKind::MissBart2 {
        emit("missingness", &chain.miss_predictor_names(), &chain.miss_interactions);
    }
    Ok(t)
}

pub fn metrics_table(rows: &[MetricRow]) -> Table {
    let mut t = Table::new(ExportKind::Metrics, &["fold", "model", "split", "response", "metric", "value"]);
    for r in rows {
        t.rows.push(vec![
            r.fold.to_string(),
            r.model.clone(),
            r.split.clone(),
            r.response.map_or_else(|| "all".to_string(), |j| j.to_string()),
            r.metric.clone(),
            fmt_value(r.value),
        ]);
    }
    t
}

/// Long-format curve table: the PDP and one block per ICE row.
pub fn curve_table(curves: &Curves, detection: bool) -> Table {
    let kind = if detection { ExportKind::Detection } else { ExportKind::Pdp };
    let mut t = Table::new(kind, &["curve", "grid", "value"]);
    for (g, v) in curves.grid.iter().zip(&curves.pdp) {
        t.rows.push(vec!["pdp".into(), fmt_value(*g), fmt_value(*v)]);
    }
    for (row, ice) in curves.rows.iter().zip(&curves.ice) {
        for (g, v) in curves.grid.iter().zip(ice) {
            t.rows.push(vec![format!("ice:{row}"), fmt_value(*g), fmt_value(*v)]);
        }
    }
    t
}

/// Tables that need only the chain.
pub fn export_chain(chain: &ChainOutput, kind: ExportKind) -> Result<Table> {
    match kind {
        ExportKind::Imputations => imputation_table(chain),
        ExportKind::Intervals => interval_table(chain),
        ExportKind::Importance => importance_table(chain),
        ExportKind::Interactions => interaction_table(chain),
        ExportKind::Metrics | ExportKind::Pdp | ExportKind::Detection => Err(Error::Usage(format!(
            "{} export needs more than a chain",
            kind.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(resp: &[&str]) -> LoadOptions {
        LoadOptions {
            responses: resp.iter().map(|s| s.to_string()).collect(),
            ..LoadOptions::default()
        }
    }

    #[test]
    fn markers_and_empty_fields_are_missing() {
        let text = "a,b,y\n1,2,NA\n3,,4\n5,6,7\n";
        let d = parse_csv(text.as_bytes(), &opts(&["y"])).unwrap();
        assert_eq!(d.mask(), DMatrix::from_row_slice(3, 1, &[0u8, 1, 1]));
        assert!(d.x.value(1, 1).is_nan());
        assert_eq!(d.x_names, vec!["a", "b"]);
    }

    #[test]
    fn log_flag_uses_natural_log() {
        let mut o = opts(&["y"]);
        o.log = vec!["y".into()];
        let d = parse_csv("x,y\n1,10\n".as_bytes(), &o).unwrap();
        assert!((d.y[(0, 0)] - 2.302585).abs() < 1e-6);
        let bad = parse_csv("x,y\n1,0\n".as_bytes(), &o);
        assert!(matches!(bad, Err(Error::Domain(_))));
    }

    #[test]
    fn unparseable_cell_names_row_and_column() {
        let err = parse_csv("x,y\n1,2\nfoo,3\n".as_bytes(), &opts(&["y"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 'x'"), "{msg}");
        assert!(parse_csv("x,y\n1,2\n".as_bytes(), &opts(&["z"])).is_err());
    }

    #[test]
    fn fully_observed_file_has_full_mask() {
        let d = parse_csv("x,y1,y2\n1,2,3\n4,5,6\n".as_bytes(), &opts(&["y1", "y2"])).unwrap();
        assert!(d.mask().iter().all(|&m| m == 1));
    }

    #[test]
    fn dataset_csv_round_trip_is_idempotent() {
        let text = "a,y1,y2\n1.5,NA,3\n,2,-1e-3\n";
        let o = opts(&["y1", "y2"]);
        let d = parse_csv(text.as_bytes(), &o).unwrap();
        let mut once = Vec::new();
        write_dataset_csv(&d, &mut once).unwrap();
        let d2 = parse_csv(once.as_slice(), &o).unwrap();
        let mut twice = Vec::new();
        write_dataset_csv(&d2, &mut twice).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn run_config_reads_partial_toml() {
        let c = RunConfig::from_toml("data = \"d.csv\"\n[load]\nresponses = [\"y\"]\n[sampler]\nburn_in = 10\n").unwrap();
        assert_eq!(c.load.responses, vec!["y"]);
        assert_eq!(c.load.marker, "NA");
        assert_eq!(c.sampler.burn_in, 10);
        assert_eq!(c.sampler.k_trees, 100);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn export_kinds_parse() {
        for k in ExportKind::ALL {
            assert_eq!(k.name().parse::<ExportKind>().unwrap(), k);
        }
        assert!(matches!("plots".parse::<ExportKind>(), Err(Error::Usage(_))));
    }
}
