//! Configuration files, CSV and binary array formats, result bundles and run manifests.
//!
//! Numbers in CSV are written with 17 significant digits, which reloads `f64` exactly.
//! Binary arrays are little-endian `f64` after a 64-byte header: magic `NSMT`,
//! `u32` version, `u32` rank, `u32` reserved, then six `u64` extents.

use crate::adjoint::{AdjointMode, AdjointTrajectory};
use crate::assembly::{BudgetPolicy, FlowField, ModeSpectrum, QuasiMinimalSolution};
use crate::channel::{ChannelConfig, ConstantForm};
use crate::control::ControlTrajectory;
use crate::error::{NsmtError, Result};
use crate::grid::{Grid, GridFunction};
use crate::optimizer::{AnchorPolicy, IterRecord, OptimalModePair, PenaltyParams, StageRecord, TimeSearch};
use crate::state::ModeTrajectory;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: &str = "nsmt-1";
const MAGIC: &[u8; 4] = b"NSMT";
const BIN_VERSION: u32 = 1;
const MAX_RANK: usize = 6;

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub nu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default)]
    pub a: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "C", default = "one")]
    pub c_const: f64,
    #[serde(default)]
    pub gamma_l1: f64,
    #[serde(default)]
    pub constant_form: ConstantForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(rename = "Ny", default = "d_ny")]
    pub ny: usize,
    #[serde(rename = "Nt", default = "d_nt")]
    pub nt: usize,
    #[serde(rename = "Kmax", default = "d_kmax")]
    pub kmax: usize,
    /// Streamwise samples; `None` picks `max(16, 2 Kmax + 2)`.
    #[serde(rename = "Nx", default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "d_eps")]
    pub eps_schedule: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_terminal: Option<f64>,
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    #[serde(default = "d_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "d_t_min")]
    pub t_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default = "d_armijo")]
    pub armijo: f64,
    #[serde(default)]
    pub full_schedule: bool,
    #[serde(default = "d_prepass")]
    pub prepass_factor: f64,
    #[serde(default)]
    pub adjoint: AdjointMode,
    #[serde(default)]
    pub time_search: TimeSearch,
    #[serde(default)]
    pub anchor: AnchorPolicy,
    #[serde(default)]
    pub budget: BudgetPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn d_ny() -> usize {
    64
}
fn d_nt() -> usize {
    128
}
fn d_kmax() -> usize {
    4
}
fn d_eps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}
fn d_iters() -> usize {
    400
}
fn d_grad_tol() -> f64 {
    1e-4
}
fn d_t_min() -> f64 {
    1e-4
}
fn d_armijo() -> f64 {
    1e-4
}
fn d_prepass() -> f64 {
    0.1
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection { ny: d_ny(), nt: d_nt(), kmax: d_kmax(), nx: None }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            eps_schedule: d_eps(),
            tol_terminal: None,
            max_iters: d_iters(),
            grad_tol: d_grad_tol(),
            t_min: d_t_min(),
            t_max: None,
            armijo: d_armijo(),
            full_schedule: false,
            prepass_factor: d_prepass(),
            adjoint: AdjointMode::default(),
            time_search: TimeSearch::default(),
            anchor: AnchorPolicy::default(),
            budget: BudgetPolicy::default(),
            workers: None,
        }
    }
}

/// Parsed configuration file, defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub channel: ChannelSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

const SECTIONS: [&str; 3] = ["channel", "numerics", "optimizer"];
const NUMERICS_KEYS: [&str; 4] = ["Ny", "Nt", "Kmax", "Nx"];
const CHANNEL_KEYS: [&str; 8] = ["nu", "L", "a", "rho", "sigma", "C", "gamma_l1", "constant_form"];

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub channel: ChannelConfig<f64>,
    /// `rho_k` holds the global `rho` until a budget is allocated.
    pub params: PenaltyParams<f64>,
    pub nx: usize,
    pub budget: BudgetPolicy,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::new(self.channel.ny, self.channel.l)
    }

    /// Parameters for one mode with its own budget.
    pub fn params_for(&self, rho_k: f64) -> PenaltyParams<f64> {
        PenaltyParams { rho_k, ..self.params.clone() }
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(&self.file).expect("config serializes")
    }

    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let c = &file.channel;
        let n = &file.numerics;
        let o = &file.optimizer;
        let channel = ChannelConfig {
            nu: c.nu,
            l: c.l,
            a: c.a,
            rho: c.rho,
            sigma: c.sigma,
            c_const: c.c_const,
            gamma_l1: c.gamma_l1,
            ny: n.ny,
            nt: n.nt,
            kmax: n.kmax,
            constant_form: c.constant_form,
        };
        channel.validate()?;
        let params = PenaltyParams {
            eps_schedule: o.eps_schedule.clone(),
            rho_k: c.rho,
            tol_terminal: o.tol_terminal,
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            t_min: o.t_min,
            t_max: o.t_max,
            armijo: o.armijo,
            full_schedule: o.full_schedule,
            prepass_factor: o.prepass_factor,
            adjoint_mode: o.adjoint,
            time_search: o.time_search,
            anchor: o.anchor,
        };
        params.validate()?;
        let nx = n.nx.unwrap_or(16.max(2 * n.kmax + 2));
        if nx < 2 * n.kmax + 2 {
            return Err(NsmtError::Aliasing { nx, need: 2 * n.kmax + 2 });
        }
        if o.workers == Some(0) {
            return Err(NsmtError::Config("workers must be at least 1".into()));
        }
        Ok(RunConfig { channel, params, nx, budget: o.budget, workers: o.workers, file })
    }
}

/// Reads a configuration from TOML text. Keys may sit in `[channel]`, `[numerics]` and
/// `[optimizer]` sections, or all at top level; unknown keys are rejected.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| NsmtError::Config(e.message().to_string()))?;
    if !table.keys().any(|k| SECTIONS.contains(&k.as_str())) {
        let mut sectioned = toml::Table::new();
        for (k, v) in std::mem::take(&mut table) {
            let sec = if CHANNEL_KEYS.contains(&k.as_str()) {
                "channel"
            } else if NUMERICS_KEYS.contains(&k.as_str()) {
                "numerics"
            } else {
                "optimizer"
            };
            sectioned
                .entry(sec)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("section table")
                .insert(k, v);
        }
        table = sectioned;
    }
    let file: ConfigFile =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| NsmtError::Config(e.message().to_string()))?;
    RunConfig::from_file(file)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| NsmtError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| NsmtError::Io(format!("{}: {e}", path.display())))?))
}

/// Writes comment lines, a header row and the rows.
fn write_csv(path: &Path, comments: &[String], header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = create(path)?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| NsmtError::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

struct CsvTable {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl CsvTable {
    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NsmtError::Format(format!("missing column {name}")))
    }
}

fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| NsmtError::Io(format!("{}: {e}", path.display())))?;
    let comments = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| NsmtError::Format(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| NsmtError::Format(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| NsmtError::Format(format!("{}: row {}: not a number: {f:?}", path.display(), i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(CsvTable { comments, header, rows })
}

fn as_index(x: f64) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(NsmtError::Format(format!("bad index {x}")))
    }
}

/// `j, y, re, im`.
pub fn write_grid_function_csv(path: &Path, f: &GridFunction<f64>, grid: &Grid<f64>) -> Result<()> {
    f.check_len(grid)?;
    let rows = f.values.iter().zip(&grid.nodes).enumerate().map(|(j, (z, y))| vec![j.to_string(), fmt(*y), fmt(z.re), fmt(z.im)]);
    write_csv(path, &[], &["j", "y", "re", "im"], rows)
}

pub fn read_grid_function_csv(path: &Path) -> Result<GridFunction<f64>> {
    let t = read_csv(path)?;
    let (cj, cr, ci) = (t.col("j")?, t.col("re")?, t.col("im")?);
    let mut vals = vec![Complex64::new(0.0, 0.0); t.rows.len()];
    for r in &t.rows {
        let j = as_index(r[cj])?;
        *vals.get_mut(j).ok_or_else(|| NsmtError::Format(format!("node {j} out of range")))? = Complex64::new(r[cr], r[ci]);
    }
    Ok(GridFunction::new(vals))
}

/// Time axis of a control file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeUnit {
    /// `t` in `[0, 1]`.
    Rescaled,
    /// `t = T * s` for the stated horizon.
    Physical(f64),
}

/// `t, re_w, im_w` with the time unit declared in a comment line.
pub fn write_control_csv(path: &Path, w: &ControlTrajectory<f64>, unit: TimeUnit) -> Result<()> {
    let (comment, scale) = match unit {
        TimeUnit::Rescaled => ("time: rescaled".to_string(), 1.0),
        TimeUnit::Physical(t) => (format!("time: physical T = {}", fmt(t)), t),
    };
    let rows = w.times().into_iter().zip(&w.samples).map(|(t, z)| vec![fmt(t * scale), fmt(z.re), fmt(z.im)]);
    write_csv(path, &[comment], &["t", "re_w", "im_w"], rows)
}

pub fn read_control_csv(path: &Path) -> Result<(ControlTrajectory<f64>, TimeUnit)> {
    let t = read_csv(path)?;
    let unit = t
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("time:").map(str::trim))
        .map(|u| {
            if u == "rescaled" {
                Ok(TimeUnit::Rescaled)
            } else if let Some(v) = u.strip_prefix("physical T =") {
                v.trim().parse().map(TimeUnit::Physical).map_err(|_| NsmtError::Format(format!("bad horizon {v:?}")))
            } else {
                Err(NsmtError::Format(format!("unknown time unit {u:?}")))
            }
        })
        .unwrap_or(Ok(TimeUnit::Rescaled))?;
    let (ct, cr, ci) = (t.col("t")?, t.col("re_w")?, t.col("im_w")?);
    let n = t.rows.len();
    if n < 2 {
        return Err(NsmtError::Format("a control needs at least two samples".into()));
    }
    let end = match unit {
        TimeUnit::Rescaled => 1.0,
        TimeUnit::Physical(h) => h,
    };
    for (i, r) in t.rows.iter().enumerate() {
        let want = end * i as f64 / (n - 1) as f64;
        if (r[ct] - want).abs() > 1e-9 * end {
            return Err(NsmtError::MeshMismatch(format!("control times must be uniform on [0, {end}]")));
        }
    }
    Ok((ControlTrajectory::new(t.rows.iter().map(|r| Complex64::new(r[cr], r[ci])).collect()), unit))
}

/// `i, j, x, y, u, v`.
pub fn write_field_csv(path: &Path, f: &FlowField<f64>, grid: &Grid<f64>) -> Result<()> {
    let rows = (0..f.nx).flat_map(move |i| {
        (0..=f.ny).map(move |j| {
            let x = crate::assembly::x_node::<f64>(i, f.nx);
            vec![i.to_string(), j.to_string(), fmt(x), fmt(grid.nodes[j]), fmt(f.u[f.index(i, j)]), fmt(f.v[f.index(i, j)])]
        })
    });
    write_csv(path, &[], &["i", "j", "x", "y", "u", "v"], rows)
}

pub fn read_field_csv(path: &Path) -> Result<FlowField<f64>> {
    let t = read_csv(path)?;
    let (ci, cj, cu, cv) = (t.col("i")?, t.col("j")?, t.col("u")?, t.col("v")?);
    let mut nx = 0;
    let mut ny = 0;
    for r in &t.rows {
        nx = nx.max(as_index(r[ci])? + 1);
        ny = ny.max(as_index(r[cj])?);
    }
    if t.rows.len() != nx * (ny + 1) {
        return Err(NsmtError::Format(format!("field has {} rows, expected {}", t.rows.len(), nx * (ny + 1))));
    }
    let mut f = FlowField::zeros(nx, ny);
    for r in &t.rows {
        let idx = f.index(as_index(r[ci])?, as_index(r[cj])?);
        f.u[idx] = r[cu];
        f.v[idx] = r[cv];
    }
    Ok(f)
}

/// `k, j, y, re_u, im_u, re_v, im_v`, with the dropped mean in a comment.
pub fn write_spectrum_csv(path: &Path, s: &ModeSpectrum<f64>, grid: &Grid<f64>) -> Result<()> {
    let rows = s.entries.iter().flat_map(|(k, (u, v))| {
        (0..u.len()).map(move |j| {
            vec![k.to_string(), j.to_string(), fmt(grid.nodes[j]), fmt(u.values[j].re), fmt(u.values[j].im), fmt(v.values[j].re), fmt(v.values[j].im)]
        })
    });
    write_csv(path, &[format!("discarded mean: {}", fmt(s.discarded_mean))], &["k", "j", "y", "re_u", "im_u", "re_v", "im_v"], rows)
}

pub fn read_spectrum_csv(path: &Path) -> Result<ModeSpectrum<f64>> {
    let t = read_csv(path)?;
    let cols = ["k", "j", "re_u", "im_u", "re_v", "im_v"].map(|c| t.col(c));
    let [ck, cj, ru, iu, rv, iv] = cols;
    let (ck, cj, ru, iu, rv, iv) = (ck?, cj?, ru?, iu?, rv?, iv?);
    let mut entries: BTreeMap<i32, (Vec<Complex64>, Vec<Complex64>)> = BTreeMap::new();
    for r in &t.rows {
        let k = r[ck];
        if k.fract() != 0.0 || k == 0.0 {
            return Err(NsmtError::Format(format!("bad mode index {k}")));
        }
        let j = as_index(r[cj])?;
        let e = entries.entry(k as i32).or_default();
        if e.0.len() <= j {
            e.0.resize(j + 1, Complex64::new(0.0, 0.0));
            e.1.resize(j + 1, Complex64::new(0.0, 0.0));
        }
        e.0[j] = Complex64::new(r[ru], r[iu]);
        e.1[j] = Complex64::new(r[rv], r[iv]);
    }
    let discarded_mean = t
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("discarded mean:").and_then(|v| v.trim().parse().ok()))
        .unwrap_or(0.0);
    Ok(ModeSpectrum {
        entries: entries.into_iter().map(|(k, (u, v))| (k, (GridFunction::new(u), GridFunction::new(v)))).collect(),
        rho_alloc: BTreeMap::new(),
        discarded_mean,
    })
}

/// `k, rho_k`.
pub fn write_budget_csv(path: &Path, b: &BTreeMap<i32, f64>) -> Result<()> {
    write_csv(path, &[], &["k", "rho_k"], b.iter().map(|(k, r)| vec![k.to_string(), fmt(*r)]))
}

pub fn read_budget_csv(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let t = read_csv(path)?;
    let (ck, cr) = (t.col("k")?, t.col("rho_k")?);
    Ok(t.rows.iter().map(|r| (r[ck] as i32, r[cr])).collect())
}

/// Raw array with its extents.
#[derive(Debug, Clone, PartialEq)]
pub struct BinArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_bin(path: &Path, a: &BinArray) -> Result<()> {
    if a.dims.is_empty() || a.dims.len() > MAX_RANK {
        return Err(NsmtError::Format(format!("rank {} not in 1..={MAX_RANK}", a.dims.len())));
    }
    if a.dims.iter().product::<usize>() != a.data.len() {
        return Err(NsmtError::Format("extents do not match the data length".into()));
    }
    let mut head = [0u8; 64];
    head[..4].copy_from_slice(MAGIC);
    head[4..8].copy_from_slice(&BIN_VERSION.to_le_bytes());
    head[8..12].copy_from_slice(&(a.dims.len() as u32).to_le_bytes());
    for (i, d) in a.dims.iter().enumerate() {
        head[16 + 8 * i..24 + 8 * i].copy_from_slice(&(*d as u64).to_le_bytes());
    }
    let mut out = create(path)?;
    out.write_all(&head)?;
    for x in &a.data {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bin(path: &Path) -> Result<BinArray> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| NsmtError::Io(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 64 || &bytes[..4] != MAGIC {
        return Err(NsmtError::Format(format!("{}: not an NSMT array", path.display())));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != BIN_VERSION {
        return Err(NsmtError::Format(format!("unsupported array version {version}")));
    }
    let rank = u32_at(8) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(NsmtError::Format(format!("bad rank {rank}")));
    }
    let dims: Vec<usize> =
        (0..rank).map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().expect("8 bytes")) as usize).collect();
    let n: usize = dims.iter().product();
    if bytes.len() != 64 + 8 * n {
        return Err(NsmtError::Format(format!("{}: expected {n} values", path.display())));
    }
    let data = bytes[64..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(BinArray { dims, data })
}

/// Storage of per-time grid data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrayFormat {
    #[default]
    Csv,
    Bin,
}

impl ArrayFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ArrayFormat::Csv => "csv",
            ArrayFormat::Bin => "bin",
        }
    }
}

/// States `s[n][j]` with their times: binary `[N, J, 2]` or CSV `n, t, j, re, im`.
pub fn write_states(path: &Path, times: &[f64], states: &[GridFunction<f64>], format: ArrayFormat) -> Result<()> {
    let nj = states.first().map_or(0, |s| s.len());
    if states.iter().any(|s| s.len() != nj) || times.len() != states.len() {
        return Err(NsmtError::MeshMismatch("ragged trajectory".into()));
    }
    match format {
        ArrayFormat::Bin => {
            let data = states.iter().flat_map(|s| s.values.iter().flat_map(|z| [z.re, z.im])).collect();
            write_bin(path, &BinArray { dims: vec![states.len(), nj, 2], data })?;
            let tpath = path.with_extension("times.bin");
            write_bin(&tpath, &BinArray { dims: vec![times.len()], data: times.to_vec() })
        }
        ArrayFormat::Csv => {
            let rows = states.iter().zip(times).enumerate().flat_map(|(n, (s, t))| {
                s.values.iter().enumerate().map(move |(j, z)| vec![n.to_string(), fmt(*t), j.to_string(), fmt(z.re), fmt(z.im)])
            });
            write_csv(path, &[], &["n", "t", "j", "re", "im"], rows)
        }
    }
}

pub fn read_states(path: &Path) -> Result<(Vec<f64>, Vec<GridFunction<f64>>)> {
    if path.extension().is_some_and(|e| e == "bin") {
        let a = read_bin(path)?;
        if a.dims.len() != 3 || a.dims[2] != 2 {
            return Err(NsmtError::Format("trajectory array must be [N, J, 2]".into()));
        }
        let nj = a.dims[1];
        let states = a
            .data
            .chunks_exact(2 * nj)
            .map(|c| GridFunction::new(c.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()))
            .collect::<Vec<_>>();
        let times = read_bin(&path.with_extension("times.bin"))?.data;
        if times.len() != states.len() {
            return Err(NsmtError::Format("times and states disagree".into()));
        }
        return Ok((times, states));
    }
    let t = read_csv(path)?;
    let (cn, ct, cj, cr, ci) = (t.col("n")?, t.col("t")?, t.col("j")?, t.col("re")?, t.col("im")?);
    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<Vec<Complex64>> = Vec::new();
    for r in &t.rows {
        let (n, j) = (as_index(r[cn])?, as_index(r[cj])?);
        if states.len() <= n {
            states.resize(n + 1, Vec::new());
            times.resize(n + 1, 0.0);
        }
        times[n] = r[ct];
        if states[n].len() <= j {
            states[n].resize(j + 1, Complex64::new(0.0, 0.0));
        }
        states[n][j] = Complex64::new(r[cr], r[ci]);
    }
    Ok((times, states.into_iter().map(GridFunction::new).collect()))
}

/// Scalar part of a stored [`OptimalModePair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub format_version: String,
    pub k: i32,
    pub rho_k: f64,
    pub t_star: f64,
    pub alpha_star: f64,
    pub collinearity: f64,
    pub t_admissible: f64,
    pub eps_final: f64,
    pub horizon_derivative: f64,
    pub tol_terminal: f64,
    pub terminal_residual: f64,
    pub converged: bool,
    pub adjoint_mode: AdjointMode,
    pub states_file: String,
    pub history: Vec<StageRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub eps: f64,
    pub t: f64,
    pub terminal_residual: f64,
    pub cost: f64,
    pub converged: bool,
    pub iters: usize,
}

pub fn mode_dir(root: &Path, k: i32) -> PathBuf {
    root.join(format!("mode_{k}"))
}

/// Writes `pair.toml`, controls, the iteration log and the state and dual trajectories.
pub fn write_pair(dir: &Path, pair: &OptimalModePair<f64>, grid: &Grid<f64>, format: ArrayFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let states_file = format!("v_star.{}", format.extension());
    let rec = PairRecord {
        format_version: FORMAT_VERSION.into(),
        k: pair.k,
        rho_k: pair.rho_k,
        t_star: pair.t_star,
        alpha_star: pair.alpha_star,
        collinearity: pair.collinearity,
        t_admissible: pair.t_admissible,
        eps_final: pair.eps_final,
        horizon_derivative: pair.horizon_derivative,
        tol_terminal: pair.tol_terminal,
        terminal_residual: pair.terminal_residual(grid),
        converged: pair.converged,
        adjoint_mode: pair.p_star.mode,
        states_file: states_file.clone(),
        history: pair
            .history
            .iter()
            .map(|h| StageRow { eps: h.eps, t: h.t, terminal_residual: h.terminal_residual, cost: h.cost, converged: h.converged, iters: h.iters })
            .collect(),
    };
    let p = dir.join("pair.toml");
    fs::write(&p, toml::to_string(&rec).map_err(|e| NsmtError::Format(e.to_string()))?)?;
    files.push(p);
    let p = dir.join("w_star.csv");
    write_control_csv(&p, &pair.w_star, TimeUnit::Rescaled)?;
    files.push(p);
    let p = dir.join("w_ref.csv");
    write_control_csv(&p, &pair.w_ref_final, TimeUnit::Rescaled)?;
    files.push(p);
    let p = dir.join("iterations.csv");
    write_csv(
        &p,
        &[],
        &["eps", "iter", "J", "terminal_residual", "w_norm", "T"],
        pair.iterations.iter().map(|(e, r)| vec![fmt(*e), r.iter.to_string(), fmt(r.cost), fmt(r.terminal_residual), fmt(r.w_norm), fmt(r.t)]),
    )?;
    files.push(p);
    let times = pair.w_star.times();
    let p = dir.join(&states_file);
    write_states(&p, &times, &pair.v_star.states, format)?;
    files.push(p);
    let p = dir.join(format!("p_star.{}", format.extension()));
    write_states(&p, &times, &pair.p_star.states, format)?;
    files.push(p);
    let p = dir.join("p_flux.csv");
    let flux = ControlTrajectory::new(pair.p_star.boundary_flux.clone());
    write_control_csv(&p, &flux, TimeUnit::Rescaled)?;
    files.push(p);
    let p = dir.join("p_moment.csv");
    write_grid_function_csv(&p, &pair.p_star.terminal_moment, grid)?;
    files.push(p);
    Ok(files)
}

pub fn read_pair(dir: &Path) -> Result<OptimalModePair<f64>> {
    let text = fs::read_to_string(dir.join("pair.toml")).map_err(|e| NsmtError::Io(format!("{}: {e}", dir.display())))?;
    let rec: PairRecord = toml::from_str(&text).map_err(|e| NsmtError::Format(e.message().to_string()))?;
    if rec.format_version != FORMAT_VERSION {
        return Err(NsmtError::Format(format!("unsupported bundle version {}", rec.format_version)));
    }
    let (w_star, _) = read_control_csv(&dir.join("w_star.csv"))?;
    let (w_ref_final, _) = read_control_csv(&dir.join("w_ref.csv"))?;
    let (_, v_states) = read_states(&dir.join(&rec.states_file))?;
    let ext = Path::new(&rec.states_file).extension().and_then(|e| e.to_str()).unwrap_or("csv");
    let (_, p_states) = read_states(&dir.join(format!("p_star.{ext}")))?;
    let (flux, _) = read_control_csv(&dir.join("p_flux.csv"))?;
    let moment = read_grid_function_csv(&dir.join("p_moment.csv"))?;
    let log = read_csv(&dir.join("iterations.csv"))?;
    let iterations = log
        .rows
        .iter()
        .map(|r| {
            (r[0], IterRecord { iter: r[1] as usize, cost: r[2], terminal_residual: r[3], w_norm: r[4], t: r[5] })
        })
        .collect();
    Ok(OptimalModePair {
        k: rec.k,
        rho_k: rec.rho_k,
        t_star: rec.t_star,
        w_star,
        alpha_star: rec.alpha_star,
        collinearity: rec.collinearity,
        v_star: ModeTrajectory { k: rec.k, t_horizon: rec.t_star, states: v_states },
        p_star: AdjointTrajectory {
            k: rec.k,
            t_horizon: rec.t_star,
            eps: rec.eps_final,
            mode: rec.adjoint_mode,
            states: p_states,
            boundary_flux: flux.samples,
            terminal_moment: moment,
        },
        history: rec
            .history
            .iter()
            .map(|h| StageRecord { eps: h.eps, t: h.t, terminal_residual: h.terminal_residual, cost: h.cost, converged: h.converged, iters: h.iters })
            .collect(),
        iterations,
        t_admissible: rec.t_admissible,
        eps_final: rec.eps_final,
        w_ref_final,
        horizon_derivative: rec.horizon_derivative,
        tol_terminal: rec.tol_terminal,
        converged: rec.converged,
    })
}

/// All `mode_*` bundles below `root`, by mode.
pub fn read_pairs(root: &Path) -> Result<BTreeMap<i32, OptimalModePair<f64>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(root).map_err(|e| NsmtError::Io(format!("{}: {e}", root.display())))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(k) = name.strip_prefix("mode_").and_then(|k| k.parse::<i32>().ok()) {
            if entry.path().join("pair.toml").exists() {
                out.insert(k, read_pair(&entry.path())?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub k: i32,
    pub t_k: f64,
    pub terminal_residual: f64,
    pub tail_growth: f64,
}

/// Summary record of an assembled solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub format_version: String,
    pub t_star: f64,
    pub argmax: i32,
    pub nx: usize,
    pub s_rho: Vec<i32>,
    pub parseval_residual: f64,
    pub divergence_residual: f64,
    pub realness_residual: f64,
    pub terminal_field_norm: f64,
    pub terminal_mode_sum: f64,
    pub max_tail_growth: f64,
    pub modes: Vec<ModeSummary>,
}

impl SolutionSummary {
    pub fn of(sol: &QuasiMinimalSolution<f64>) -> Self {
        let d = &sol.diagnostics;
        SolutionSummary {
            format_version: FORMAT_VERSION.into(),
            t_star: sol.t_star,
            argmax: sol.argmax,
            nx: sol.nx,
            s_rho: sol.s_rho.clone(),
            parseval_residual: d.parseval,
            divergence_residual: d.divergence,
            realness_residual: d.realness,
            terminal_field_norm: d.terminal_field_norm,
            terminal_mode_sum: d.terminal_mode_sum,
            max_tail_growth: d.max_tail_growth,
            modes: sol
                .modes
                .values()
                .map(|m| ModeSummary { k: m.k, t_k: m.t_k, terminal_residual: m.terminal_residual, tail_growth: m.tail_growth })
                .collect(),
        }
    }
}

/// `summary.toml`, the wall control `w_star.csv` (`n, t, i, x, w`) and the terminal field.
pub fn write_solution(dir: &Path, sol: &QuasiMinimalSolution<f64>, grid: &Grid<f64>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let p = dir.join("summary.toml");
    fs::write(&p, toml::to_string(&SolutionSummary::of(sol)).map_err(|e| NsmtError::Format(e.to_string()))?)?;
    files.push(p);
    let p = dir.join("w_star.csv");
    let nx = sol.nx;
    let rows = sol.w_star.iter().zip(&sol.times).enumerate().flat_map(|(n, (row, t))| {
        row.iter().enumerate().map(move |(i, w)| {
            vec![n.to_string(), fmt(*t), i.to_string(), fmt(crate::assembly::x_node::<f64>(i, nx)), fmt(*w)]
        })
    });
    write_csv(&p, &["time: physical".into()], &["n", "t", "i", "x", "w"], rows)?;
    files.push(p);
    let p = dir.join("terminal_field.csv");
    write_field_csv(&p, &sol.field_at(sol.times.len() - 1, grid)?, grid)?;
    files.push(p);
    Ok(files)
}

pub fn read_summary(path: &Path) -> Result<SolutionSummary> {
    let text = fs::read_to_string(path).map_err(|e| NsmtError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| NsmtError::Format(e.message().to_string()))
}

/// Outcome of one mode in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub k: i32,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collinearity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: String,
    pub outcomes: Vec<ModeOutcome>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let p = dir.join("manifest.toml");
        fs::write(&p, toml::to_string(self).map_err(|e| NsmtError::Format(e.to_string()))?)?;
        Ok(p)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.toml");
        let text = fs::read_to_string(&p).map_err(|e| NsmtError::Io(format!("{}: {e}", p.display())))?;
        toml::from_str(&text).map_err(|e| NsmtError::Format(e.message().to_string()))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
