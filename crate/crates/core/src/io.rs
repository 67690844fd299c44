//! CSV ingestion, run configuration and plot-data files.
//!
//! Date columns hold either ISO-8601 calendar dates (`2004-03-17`) or integer
//! day numbers. The format is detected from the first parsable date of a file;
//! rows in the other format count as malformed. ISO dates become days since
//! 1970-01-01. Either way the numbers are re-anchored by the pipeline so that
//! day 0 is the day after the last sale.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::claims::{ClaimRecord, FirstMomentSource, SalesRecord};
use crate::error::{Error, Result};
use crate::model::{MeanClaimsMeasure, RebateFunction, TimeHorizon};
use crate::sales::{BassParams, LinearIntensity};
use crate::sim::{ClaimsLawSpec, Intensity, LifetimeLaw, McConfig, Policy, SalesProcessSpec, SizeLawSpec};
use crate::tail::Regime;

/// Largest tolerated share of malformed data rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    Iso,
    DayNumber,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

/// Parsed records plus the rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    /// `None` when the file has no data rows.
    pub date_format: Option<DateFormat>,
    pub skipped: Vec<RowIssue>,
}

const EPOCH: NaiveDate = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");

fn parse_date(field: &str, format: &mut Option<DateFormat>) -> std::result::Result<i64, String> {
    let (value, seen) = if let Ok(d) = field.parse::<i64>() {
        (d, DateFormat::DayNumber)
    } else if let Ok(d) = NaiveDate::parse_from_str(field, "%Y-%m-%d") {
        ((d - EPOCH).num_days(), DateFormat::Iso)
    } else {
        return Err(format!("unrecognised date '{field}'"));
    };
    match format {
        None => *format = Some(seen),
        Some(f) if *f != seen => return Err(format!("date '{field}' does not match the file's {f:?} format")),
        _ => {}
    }
    Ok(value)
}

/// ISO date of a day number produced from ISO input.
pub fn iso_date(day: i64) -> Option<String> {
    EPOCH
        .checked_add_signed(chrono::Duration::days(day))
        .map(|d| d.to_string())
}

struct Table {
    reader: csv::Reader<File>,
    columns: HashMap<String, usize>,
    path: String,
}

fn open_table(path: &Path, required: &[&str]) -> Result<Table> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| Error::Input {
        path: display.clone(),
        message: format!("unreadable header: {e}"),
    })?;
    let columns: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_ascii_lowercase(), i))
        .collect();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !columns.contains_key(*c)).collect();
    if !missing.is_empty() {
        return Err(Error::Input {
            path: display,
            message: format!("schema mismatch: missing column(s) {}", missing.join(", ")),
        });
    }
    Ok(Table {
        reader,
        columns,
        path: display,
    })
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn get(&self, name: &str) -> std::result::Result<&str, String> {
        match self.rec.get(self.columns[name]) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(format!("missing {name}")),
        }
    }
}

/// Good rows by line number, skipped rows, and the source path.
type Parsed<T> = (Vec<(u64, T)>, Vec<RowIssue>, String);

impl Table {
    /// Runs `parse` on each data row; collects failures by line number.
    fn rows<T, F>(mut self, mut parse: F) -> Result<Parsed<T>>
    where
        F: FnMut(&Row<'_>) -> std::result::Result<T, String>,
    {
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for rec in self.reader.records() {
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    bad.push(RowIssue {
                        line,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let line = rec.position().map_or(0, |p| p.line());
            let row = Row {
                rec: &rec,
                columns: &self.columns,
            };
            match parse(&row) {
                Ok(t) => good.push((line, t)),
                Err(message) => bad.push(RowIssue { line, message }),
            }
        }
        let total = good.len() + bad.len();
        if !bad.is_empty() {
            let lines: Vec<String> = bad.iter().map(|b| format!("line {}: {}", b.line, b.message)).collect();
            if bad.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
                return Err(Error::Input {
                    path: self.path,
                    message: format!(
                        "{} of {total} rows malformed (limit {}%):\n  {}",
                        bad.len(),
                        MAX_MALFORMED_FRACTION * 100.0,
                        lines.join("\n  ")
                    ),
                });
            }
            log::warn!(
                "{}: skipped {} malformed rows: {}",
                self.path,
                bad.len(),
                lines.join("; ")
            );
        }
        Ok((good, bad, self.path))
    }
}

/// Reads `vehicle_id, sale_date`; a vehicle sold twice is fatal.
pub fn load_sales(path: &Path) -> Result<Loaded<SalesRecord>> {
    let table = open_table(path, &["vehicle_id", "sale_date"])?;
    let mut format = None;
    let (rows, skipped, display) = table.rows(|row| {
        Ok(SalesRecord {
            vehicle_id: row.get("vehicle_id")?.to_string(),
            sale_date: parse_date(row.get("sale_date")?, &mut format)?,
        })
    })?;
    let mut first_line: HashMap<&str, u64> = HashMap::new();
    let mut duplicates = Vec::new();
    for (line, r) in &rows {
        if let Some(prev) = first_line.insert(&r.vehicle_id, *line) {
            duplicates.push(format!("vehicle '{}' on lines {prev} and {line}", r.vehicle_id));
            first_line.insert(&r.vehicle_id, prev);
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::Input {
            path: display,
            message: format!("duplicate sales: {}", duplicates.join("; ")),
        });
    }
    Ok(Loaded {
        records: rows.into_iter().map(|(_, r)| r).collect(),
        date_format: format,
        skipped,
    })
}

/// Reads `vehicle_id, claim_date, amount` (a `claim_id` column is allowed and ignored).
pub fn load_claims(path: &Path) -> Result<Loaded<ClaimRecord>> {
    let table = open_table(path, &["vehicle_id", "claim_date", "amount"])?;
    let mut format = None;
    let (rows, skipped, _) = table.rows(|row| {
        let amount: f64 = row
            .get("amount")?
            .parse()
            .map_err(|_| format!("amount '{}' is not a number", row.get("amount").unwrap_or_default()))?;
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(format!("amount {amount} must be finite and non-negative"));
        }
        Ok(ClaimRecord {
            vehicle_id: row.get("vehicle_id")?.to_string(),
            claim_date: parse_date(row.get("claim_date")?, &mut format)?,
            amount,
        })
    })?;
    Ok(Loaded {
        records: rows.into_iter().map(|(_, r)| r).collect(),
        date_format: format,
        skipped,
    })
}

pub fn write_sales_csv<W: Write>(out: W, sales: &[SalesRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "sale_date"]).map_err(csv_error)?;
    for s in sales {
        w.write_record([s.vehicle_id.as_str(), &s.sale_date.to_string()])
            .map_err(csv_error)?;
    }
    w.flush().map_err(|e| csv_error(e.into()))
}

pub fn write_claims_csv<W: Write>(out: W, claims: &[ClaimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "claim_date", "claim_id", "amount"])
        .map_err(csv_error)?;
    for (i, c) in claims.iter().enumerate() {
        w.write_record([
            c.vehicle_id.as_str(),
            &c.claim_date.to_string(),
            &format!("c{:07}", i + 1),
            &c.amount.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| csv_error(e.into()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Input {
        path: "<output>".into(),
        message: e.to_string(),
    }
}

/// Two-column numeric series written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotData {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotData {
    pub fn new(name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Self {
        PlotData {
            name: name.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
        }
    }

    /// Floats use the shortest representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }

    pub fn write_to(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let io = |source| Error::Io {
            path: display.clone(),
            source,
        };
        let mut lines = BufReader::new(File::open(path).map_err(io)?).lines();
        let bad = |m: String| Error::Input {
            path: display.clone(),
            message: m,
        };
        let header = lines.next().ok_or_else(|| bad("empty plot file".into()))?.map_err(io)?;
        let (xl, yl) = header
            .split_once(',')
            .ok_or_else(|| bad("header needs two columns".into()))?;
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            let parsed = line
                .split_once(',')
                .and_then(|(x, y)| Some((x.parse().ok()?, y.parse().ok()?)));
            points.push(parsed.ok_or_else(|| bad(format!("line {}: '{line}'", i + 2)))?);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PlotData::new(&name, xl, yl, points))
    }
}

/// How `n` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NPolicy {
    /// Total number of observed sales.
    #[default]
    ObservedTotal,
    Explicit(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebateShape {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyConfig {
    #[default]
    FreeReplacement,
    ProRata {
        kind: RebateShape,
        /// Unit price `c_b`.
        c_b: f64,
        /// `r(W)`.
        #[serde(default)]
        residual: f64,
    },
}

impl PolicyConfig {
    pub fn rebate(&self, warranty: u32) -> Result<RebateFunction<f64>> {
        let w = f64::from(warranty);
        match *self {
            PolicyConfig::FreeReplacement => Ok(RebateFunction::free_replacement(w)),
            PolicyConfig::ProRata {
                kind: RebateShape::Linear,
                c_b,
                residual,
            } => RebateFunction::linear(w, residual, c_b),
            PolicyConfig::ProRata {
                kind: RebateShape::Quadratic,
                c_b,
                residual,
            } => RebateFunction::quadratic(w, residual, c_b),
        }
    }

    pub fn policy(&self) -> Policy {
        match self {
            PolicyConfig::FreeReplacement => Policy::FreeReplacement,
            PolicyConfig::ProRata { .. } => Policy::ProRata,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityConfig {
    /// Constant rate over the simulated sales span.
    Uniform,
    /// Bass curve started at `-W`.
    Bass { innovation: f64, imitation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SalesConfig {
    Nhpp {
        intensity: IntensityConfig,
    },
    Renewal {
        mean: f64,
        variance: f64,
    },
    Cox {
        intensity: IntensityConfig,
        rho: f64,
        sd: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimsLawConfig {
    PoissonMeasure {
        slope: f64,
        intercept: f64,
        atom_zero: f64,
        atom_warranty: f64,
    },
    SingleLifetime {
        slope: f64,
        intercept: f64,
        atom_zero: f64,
        atom_warranty: f64,
    },
    DegenerateLifetime {
        age: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeConfig {
    Lognormal { mu: f64, sigma: f64 },
    Pareto { alpha: f64, scale: f64 },
    Empirical { values: Vec<f64> },
}

/// Synthetic model for `simulate` and `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: u64,
    pub sales: SalesConfig,
    pub claims: ClaimsLawConfig,
    pub sizes: SizeConfig,
}

fn default_ma_window() -> usize {
    15
}
fn default_poly_degree() -> usize {
    3
}
fn default_reps() -> usize {
    2000
}
fn default_bass_bin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Warranty length `W` in days.
    #[serde(alias = "W")]
    pub warranty: u32,
    /// Forecast period length `T` in days.
    #[serde(alias = "T")]
    pub period: u32,
    /// Window offsets to forecast; `[0, T]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<u32>>,
    #[serde(default)]
    pub n_policy: NPolicy,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Upper order statistics in the QQ estimator. No default.
    pub qq_k: usize,
    /// Moving-average half-width.
    #[serde(default = "default_ma_window")]
    pub ma_window: usize,
    #[serde(default = "default_poly_degree")]
    pub poly_degree: usize,
    #[serde(default)]
    pub stationary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime_override: Option<Regime>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Bin width in days for the Bass fit.
    #[serde(default = "default_bass_bin")]
    pub bass_bin: usize,
    #[serde(default)]
    pub first_moment: FirstMomentSource,
    /// Claims dated on or after this day (anchored clock) are left out of estimation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims_cutoff: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?)
    }

    /// Later tables override earlier ones key by key (nested tables merge).
    pub fn from_layers(layers: &[toml::Table]) -> Result<Self> {
        let mut merged = toml::Table::new();
        for layer in layers {
            merge_tables(&mut merged, layer);
        }
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn offsets(&self) -> Vec<u32> {
        self.offsets.clone().unwrap_or_else(|| vec![0, self.period])
    }

    pub fn horizon(&self, offset: u32, n: u64) -> Result<TimeHorizon> {
        TimeHorizon::new(self.warranty, self.period, offset, n)
    }

    pub fn rebate(&self) -> Result<RebateFunction<f64>> {
        self.policy.rebate(self.warranty)
    }

    /// Checks every precondition that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let offsets = self.offsets();
        if offsets.is_empty() {
            return Err(Error::Config("at least one forecast offset is required".into()));
        }
        for off in offsets {
            self.horizon(off, 1)?;
        }
        if self.qq_k < 2 {
            return Err(Error::Config(format!("qq_k must be at least 2, got {}", self.qq_k)));
        }
        if self.ma_window == 0 || self.bass_bin == 0 {
            return Err(Error::Config("ma_window and bass_bin must be at least 1".into()));
        }
        if self.reps < 100 {
            return Err(Error::Config(format!("reps must be at least 100, got {}", self.reps)));
        }
        if let NPolicy::Explicit(0) = self.n_policy {
            return Err(Error::Config("explicit n must be positive".into()));
        }
        self.rebate()?;
        if self.simulation.is_some() {
            self.mc_config()?.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Synthetic model over the first configured window.
    pub fn mc_config(&self) -> Result<McConfig> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("no [simulation] section".into()))?;
        let horizon = self.horizon(self.offsets()[0], sim.n)?;
        let w = f64::from(self.warranty);
        let (_, end) = horizon.window();
        let intensity = |c: IntensityConfig| -> Result<Intensity> {
            Ok(match c {
                IntensityConfig::Uniform => Intensity::Linear(LinearIntensity::uniform(-w, end as f64)?),
                IntensityConfig::Bass { innovation, imitation } => {
                    Intensity::Bass(BassParams::new(innovation, imitation, sim.n, -w)?)
                }
            })
        };
        let sales = match sim.sales {
            SalesConfig::Nhpp { intensity: i } => SalesProcessSpec::Nhpp {
                intensity: intensity(i)?,
            },
            SalesConfig::Renewal { mean, variance } => SalesProcessSpec::Renewal { mean, variance },
            SalesConfig::Cox { intensity: i, rho, sd } => SalesProcessSpec::Cox {
                intensity: intensity(i)?,
                rho,
                sd,
            },
        };
        let claims = match sim.claims {
            ClaimsLawConfig::PoissonMeasure {
                slope,
                intercept,
                atom_zero,
                atom_warranty,
            } => ClaimsLawSpec::PoissonMeasure(MeanClaimsMeasure::new(slope, intercept, atom_zero, atom_warranty, w)?),
            ClaimsLawConfig::SingleLifetime {
                slope,
                intercept,
                atom_zero,
                atom_warranty,
            } => ClaimsLawSpec::SingleLifetime(LifetimeLaw::Measure(MeanClaimsMeasure::new(
                slope,
                intercept,
                atom_zero,
                atom_warranty,
                w,
            )?)),
            ClaimsLawConfig::DegenerateLifetime { age } => ClaimsLawSpec::SingleLifetime(LifetimeLaw::Degenerate(age)),
        };
        let sizes = match &sim.sizes {
            SizeConfig::Lognormal { mu, sigma } => SizeLawSpec::LogNormal { mu: *mu, sigma: *sigma },
            SizeConfig::Pareto { alpha, scale } => SizeLawSpec::Pareto {
                alpha: *alpha,
                scale: *scale,
            },
            SizeConfig::Empirical { values } => SizeLawSpec::Empirical(values.clone()),
        };
        Ok(McConfig {
            horizon,
            sales,
            claims,
            sizes,
            rebate: self.rebate()?,
            policy: self.policy.policy(),
        })
    }
}

fn merge_tables(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge_tables(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a TOML file into a table for [`RunConfig::from_layers`].
pub fn load_table(path: &Path) -> Result<toml::Table> {
    read_to_string(path)?
        .parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Records of one synthetic replication. Days are floored to integers,
/// claims get the vehicle's integer sale day plus the rounded age.
pub fn synthetic_records(cfg: &McConfig, seed: u64) -> Result<(Vec<SalesRecord>, Vec<ClaimRecord>)> {
    use crate::sim::{replication_rng, simulate_claims_measure_with, simulate_sales_with};
    cfg.validate()?;
    let mut rng = replication_rng(seed, 0);
    let sales = simulate_sales_with(&cfg.sales, &cfg.horizon, &mut rng)?;
    let mut sales_out = Vec::with_capacity(sales.len());
    let mut claims_out = Vec::new();
    for (i, s) in sales.iter().enumerate() {
        let id = format!("v{:07}", i + 1);
        let day = s.floor() as i64;
        let m = simulate_claims_measure_with(&cfg.claims, &mut rng);
        for age in m.points() {
            let amount = match cfg.policy {
                Policy::FreeReplacement => cfg.sizes.sample(&mut rng),
                Policy::ProRata => cfg.rebate.unit_price() * cfg.rebate.eval(*age),
            };
            claims_out.push(ClaimRecord {
                vehicle_id: id.clone(),
                claim_date: day + age.round() as i64,
                amount,
            });
        }
        sales_out.push(SalesRecord {
            vehicle_id: id,
            sale_date: day,
        });
    }
    Ok((sales_out, claims_out))
}
