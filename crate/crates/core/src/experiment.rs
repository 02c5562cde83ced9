//! Experiment driver behind the command-line tool: configuration, execution and output.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cocycle::{cocycle_from_orbit, lyapunov_report, report_from_record, strong_exponents, LyapunovReport};
use crate::counterexample::{CounterexampleMap, CounterexampleParams};
use crate::entropy::{
    count_admissible, default_m_list, entropy_estimate_orbit, kozlovski_estimate, separated_entropy, Partition,
    DEFAULT_ENUMERATION_CUTOFF, DEFAULT_RANGE_GUARD,
};
use crate::error::{Error, Result};
use crate::measures::{
    default_checkpoints, dmetric, physical_like_estimate, pw_estimate, pw_estimate_orbit, EmpiricalMeasure, MeasureSet,
    TestFunctionFamily, DEFAULT_EPS_CLUSTER, DEFAULT_NPHI,
};
use crate::space::{PhaseSpace, Point};
use crate::systems::{iterate, lebesgue_orbit, sample_seed, MapKind, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Lyapunov,
    Entropy,
    Kozlovski,
    Separated,
    Pw,
    PhysicalLike,
    Inequality,
    Counterexample,
    Admissible,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Simulate,
        Command::Lyapunov,
        Command::Entropy,
        Command::Kozlovski,
        Command::Separated,
        Command::Pw,
        Command::PhysicalLike,
        Command::Inequality,
        Command::Counterexample,
        Command::Admissible,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lyapunov => "lyapunov",
            Command::Entropy => "entropy",
            Command::Kozlovski => "kozlovski",
            Command::Separated => "separated",
            Command::Pw => "pw",
            Command::PhysicalLike => "physical-like",
            Command::Inequality => "inequality",
            Command::Counterexample => "counterexample",
            Command::Admissible => "admissible",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Config(format!("unknown format `{s}` (json or csv)"))),
        }
    }
}

/// Every setting of a run. Unset options fall back to per-command defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    /// System id followed by `key=value` parameters, e.g. `rotation theta=0.3`.
    pub system: String,
    pub n: Option<usize>,
    pub samples: Option<usize>,
    pub seed: u64,
    /// `dyadic`, `grid:K` or `grid:K1xK2[xK3]`.
    pub partition: Option<String>,
    pub p_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub checkpoints: Vec<usize>,
    pub x: Vec<f64>,
    pub nphi: usize,
    pub eps_cluster: f64,
    pub tol: f64,
    pub alpha: f64,
    pub grid_step: f64,
    pub r: u32,
    pub lambda: f64,
    pub n0: u32,
    pub nmax: u32,
    pub certify: bool,
    pub orbit_steps: Option<u64>,
    pub blocks: Vec<f64>,
    pub threshold: f64,
    pub range_guard: i64,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        let ce = CounterexampleParams::default();
        Self {
            command,
            system: "doubling".into(),
            n: None,
            samples: None,
            seed: 0,
            partition: None,
            p_list: vec![],
            m_list: vec![],
            checkpoints: vec![],
            x: vec![],
            nphi: DEFAULT_NPHI,
            eps_cluster: DEFAULT_EPS_CLUSTER,
            tol: DEFAULT_TOLERANCE,
            alpha: 0.1,
            grid_step: 1e-4,
            r: ce.r,
            lambda: ce.lambda,
            n0: ce.n0,
            nmax: ce.n_max,
            certify: false,
            orbit_steps: None,
            blocks: vec![],
            threshold: 0.0,
            range_guard: DEFAULT_RANGE_GUARD,
            output: None,
            format: Format::Json,
        }
    }

    /// Applies one `key=value` setting; keys use `-` or `_` interchangeably.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("`{key}`: cannot parse `{value}` as {what}"));
        match key.as_str() {
            "system" => self.system = value.to_string(),
            "n" => self.n = Some(positive(&key, value.parse().map_err(|_| bad("integer"))?)?),
            "samples" => self.samples = Some(positive(&key, value.parse().map_err(|_| bad("integer"))?)?),
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "partition" => self.partition = Some(value.to_string()),
            "p-list" => self.p_list = parse_list(&key, value)?,
            "m-list" => self.m_list = parse_list(&key, value)?,
            "checkpoints" => self.checkpoints = parse_list(&key, value)?,
            "x" => self.x = parse_list(&key, value)?,
            "nphi" => self.nphi = positive(&key, value.parse().map_err(|_| bad("integer"))?)?,
            "eps-cluster" => self.eps_cluster = positive_real(&key, value)?,
            "tol" => self.tol = positive_real(&key, value)?,
            "alpha" => self.alpha = positive_real(&key, value)?,
            "grid-step" => self.grid_step = positive_real(&key, value)?,
            "r" => self.r = value.parse().map_err(|_| bad("integer"))?,
            "lambda" => self.lambda = positive_real(&key, value)?,
            "n0" => self.n0 = value.parse().map_err(|_| bad("integer"))?,
            "nmax" => self.nmax = value.parse().map_err(|_| bad("integer"))?,
            "certify" => self.certify = value.parse().map_err(|_| bad("true/false"))?,
            "orbit-steps" => self.orbit_steps = Some(value.parse().map_err(|_| bad("integer"))?),
            "blocks" => self.blocks = parse_list(&key, value)?,
            "threshold" => self.threshold = value.parse().map_err(|_| bad("real"))?,
            "range-guard" => self.range_guard = value.parse().map_err(|_| bad("integer"))?,
            "output" => self.output = Some(PathBuf::from(value)),
            "format" => self.format = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Reads a `key = value` file (blank lines and `#` comments ignored).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Config(format!("`{key}` must be positive")));
    }
    Ok(v)
}

fn positive_real(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("`{key}` must be a positive number, got `{value}`"))),
    }
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: bad list entry `{s}`")))
        })
        .collect()
}

/// Parses `dyadic`, `grid:K` or `grid:K1xK2[xK3]`.
pub fn parse_partition(spec: &str, space: PhaseSpace<f64>) -> Result<Partition<f64>> {
    if spec == "dyadic" {
        return Ok(Partition::dyadic(space));
    }
    let cells = spec
        .strip_prefix("grid:")
        .ok_or_else(|| Error::Config(format!("partition `{spec}`: expected dyadic or grid:K[xK...]")))?;
    let counts: Vec<usize> = cells
        .split('x')
        .map(|c| c.parse().map_err(|_| Error::Config(format!("partition `{spec}`: bad cell count `{c}`"))))
        .collect::<Result<_>>()?;
    if counts.len() == 1 {
        Partition::uniform(space, counts[0])
    } else {
        Partition::grid(space, &counts)
    }
}

/// Default partition: three vertical strips for the cat map, two cells per axis otherwise.
pub fn default_partition(sys: &SystemSpec<f64>) -> Partition<f64> {
    match sys.kind() {
        MapKind::Cat => Partition::grid(*sys.space(), &[3, 1]).expect("valid grid"),
        _ => Partition::dyadic(*sys.space()),
    }
}

/// Rows of a CSV table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Result of a run: the JSON document, a CSV table and the process exit code.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub json: Value,
    pub table: Table,
    pub exit_code: i32,
}

impl Outcome {
    pub fn render_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.json)?;
        s.push('\n');
        Ok(s)
    }

    pub fn emit<W: Write>(&self, format: Format, mut w: W) -> Result<()> {
        match format {
            Format::Json => w.write_all(self.render_json()?.as_bytes())?,
            Format::Csv => self.table.write_csv(w)?,
        }
        Ok(())
    }

    /// Writes to `cfg.output` or to `stdout`.
    pub fn emit_to(&self, cfg: &ExperimentConfig) -> Result<()> {
        match &cfg.output {
            Some(path) => {
                let f = std::fs::File::create(path)?;
                self.emit(cfg.format, std::io::BufWriter::new(f))
            }
            None => self.emit(cfg.format, std::io::stdout().lock()),
        }
    }
}

fn system(cfg: &ExperimentConfig) -> Result<SystemSpec<f64>> {
    let mut parts = cfg.system.split_whitespace();
    let id = parts
        .next()
        .ok_or_else(|| Error::Config("empty system specification".into()))?;
    let params: Vec<&str> = parts.collect();
    if id == "counterexample" && params.is_empty() {
        let map = CounterexampleMap::build(counterexample_params(cfg))?;
        return Ok(SystemSpec::counterexample(Arc::new(map)));
    }
    SystemSpec::from_parts(id, &params)
}

fn counterexample_params(cfg: &ExperimentConfig) -> CounterexampleParams {
    CounterexampleParams {
        r: cfg.r,
        lambda: cfg.lambda,
        n0: cfg.n0,
        n_max: cfg.nmax,
    }
}

fn start_point(cfg: &ExperimentConfig, sys: &SystemSpec<f64>) -> Result<Option<Point<f64>>> {
    if cfg.x.is_empty() {
        return Ok(None);
    }
    if cfg.x.len() != sys.dim() {
        return Err(Error::Config(format!(
            "`x` has {} coordinates, `{}` needs {}",
            cfg.x.len(),
            sys.name(),
            sys.dim()
        )));
    }
    let p = Point::new(&cfg.x);
    if !sys.space().contains(&p) {
        return Err(Error::Config(format!("`x` = {:?} lies outside the phase space", cfg.x)));
    }
    Ok(Some(p))
}

/// Orbit `[x, …, f^{len−1} x]`: from `x` when given, else from the `index`-th random point.
fn orbit_for(cfg: &ExperimentConfig, sys: &SystemSpec<f64>, len: usize, index: u64) -> Result<Vec<Point<f64>>> {
    match start_point(cfg, sys)? {
        Some(x) => iterate(sys, &x, len - 1),
        None => lebesgue_orbit(sys, len - 1, sample_seed(cfg.seed, index)),
    }
}

fn envelope(cfg: &ExperimentConfig, sys: Option<&SystemSpec<f64>>, result: Value) -> Value {
    json!({
        "schema": SCHEMA_VERSION,
        "command": cfg.command.name(),
        "system": sys.map(|s| s.descriptor().to_string()),
        "config": cfg,
        "result": result,
    })
}

/// Executes the configured experiment. Deterministic given the configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Simulate => run_simulate(cfg),
        Command::Lyapunov => run_lyapunov(cfg),
        Command::Entropy => run_entropy(cfg),
        Command::Kozlovski => run_kozlovski(cfg),
        Command::Separated => run_separated(cfg),
        Command::Pw => run_pw(cfg),
        Command::PhysicalLike => run_physical_like(cfg),
        Command::Inequality => run_inequality(cfg),
        Command::Counterexample => run_counterexample(cfg),
        Command::Admissible => run_admissible(cfg),
    }
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let n = cfg.n.unwrap_or(100);
    let orbit = orbit_for(cfg, &sys, n + 1, 0)?;
    let d = sys.dim();
    let mut header = vec!["k".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    let mut table = Table {
        header,
        rows: vec![],
    };
    for (k, p) in orbit.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(p.coords().iter().map(|&c| num(c)));
        table.push(row);
    }
    let result = json!({ "n": n, "orbit": orbit });
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), result),
        table,
        exit_code: 0,
    })
}

/// CSV layout of Lyapunov reports: `n, sigma_chi_plus, chi_1..chi_d, x_1..x_d`.
pub fn lyapunov_table(reports: &[LyapunovReport<f64>], dim: usize) -> Table {
    let mut header = vec!["n".to_string(), "sigma_chi_plus".to_string()];
    header.extend((1..=dim).map(|k| format!("chi_{k}")));
    header.extend((1..=dim).map(|k| format!("x_{k}")));
    let mut t = Table {
        header,
        rows: vec![],
    };
    for r in reports {
        let mut row = vec![r.n.to_string(), num(r.sigma_chi_plus)];
        row.extend(r.chi.iter().map(|&c| num(c)));
        row.extend(r.x.coords().iter().map(|&c| num(c)));
        t.push(row);
    }
    t
}

/// Inverse of [`lyapunov_table`] written through [`Table::write_csv`].
pub fn read_lyapunov_csv<R: std::io::Read>(r: R) -> Result<Vec<LyapunovReport<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("chi_")).count();
    if dim == 0 || header.len() != 2 + 2 * dim {
        return Err(Error::Config("not a Lyapunov CSV table".into()));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{}`", &rec[i])))
        };
        let n = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad n `{}`", &rec[0])))?;
        let chi = (0..dim).map(|k| field(2 + k)).collect::<Result<Vec<_>>>()?;
        let x = (0..dim).map(|k| field(2 + dim + k)).collect::<Result<Vec<_>>>()?;
        out.push(LyapunovReport {
            x: Point::new(&x),
            n,
            chi,
            sigma_chi_plus: field(1)?,
        });
    }
    Ok(out)
}

fn run_lyapunov(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let n = cfg.n.unwrap_or(1000);
    let samples = if cfg.x.is_empty() { cfg.samples.unwrap_or(1) } else { 1 };
    let mut reports = Vec::with_capacity(samples);
    let mut strong = Vec::new();
    for i in 0..samples {
        let x = match start_point(cfg, &sys)? {
            Some(x) => x,
            None => lebesgue_orbit(&sys, 0, sample_seed(cfg.seed, i as u64))?[0],
        };
        reports.push(lyapunov_report(&sys, &x, n)?);
        if !cfg.p_list.is_empty() {
            strong.push(strong_exponents(&sys, &x, &cfg.p_list, n)?);
        }
    }
    let table = lyapunov_table(&reports, sys.dim());
    let result = json!({ "reports": reports, "strong": strong });
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), result),
        table,
        exit_code: 0,
    })
}

fn m_list(cfg: &ExperimentConfig) -> Vec<usize> {
    if cfg.m_list.is_empty() {
        default_m_list()
    } else {
        cfg.m_list.clone()
    }
}

fn partition(cfg: &ExperimentConfig, sys: &SystemSpec<f64>) -> Result<Partition<f64>> {
    match &cfg.partition {
        Some(p) => parse_partition(p, *sys.space()),
        None => Ok(default_partition(sys)),
    }
}

fn run_entropy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let n = cfg.n.unwrap_or(100_000);
    let p = partition(cfg, &sys)?;
    let ms = m_list(cfg);
    let m_max = *ms.iter().max().unwrap_or(&1);
    let orbit = orbit_for(cfg, &sys, n + m_max - 1, 0)?;
    let est = entropy_estimate_orbit(&orbit, n, &p, &ms)?;
    let mut table = Table::new(&["m", "block_entropy", "rate", "atoms", "well_sampled"]);
    for c in &est.curve {
        table.push(vec![
            c.m.to_string(),
            num(c.block_entropy),
            num(c.rate),
            c.atoms.to_string(),
            c.well_sampled.to_string(),
        ]);
    }
    let result = json!({ "partition": p, "estimate": est });
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), result),
        table,
        exit_code: 0,
    })
}

fn run_kozlovski(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let n = cfg.n.unwrap_or(20);
    let est = kozlovski_estimate(&sys, n, cfg.samples.unwrap_or(10_000), cfg.seed)?;
    let mut table = Table::new(&["n", "samples", "estimate", "mean_sigma_chi_plus"]);
    table.push(vec![
        est.n.to_string(),
        est.samples.to_string(),
        num(est.estimate),
        num(est.mean_sigma_chi_plus),
    ]);
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), json!(est)),
        table,
        exit_code: 0,
    })
}

fn run_separated(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let n = cfg.n.unwrap_or(10);
    let est = separated_entropy(&sys, n, cfg.alpha, cfg.grid_step)?;
    let mut table = Table::new(&["n", "alpha", "grid_points", "separated", "rate"]);
    table.push(vec![
        est.n.to_string(),
        num(est.alpha),
        est.grid_points.to_string(),
        est.separated.to_string(),
        num(est.rate),
    ]);
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), json!(est)),
        table,
        exit_code: 0,
    })
}

fn checkpoints(cfg: &ExperimentConfig, default_n: usize) -> Vec<usize> {
    if cfg.checkpoints.is_empty() {
        default_checkpoints(cfg.n.unwrap_or(default_n))
    } else {
        cfg.checkpoints.clone()
    }
}

/// Table of cluster representatives with their distance to a Lebesgue grid measure.
fn measure_set_output(
    set: &MeasureSet<f64>,
    labels: &[String],
    fam: &TestFunctionFamily<f64>,
    space: &PhaseSpace<f64>,
) -> (Table, Value) {
    let lebesgue = EmpiricalMeasure::uniform_grid(space, if space.dim() == 1 { 4096 } else { 128 });
    let mut table = Table::new(&["cluster", "origin", "multiplicity", "support_size", "dmetric_to_lebesgue"]);
    let mut clusters = Vec::new();
    for (i, (m, &mult)) in set.members().iter().zip(set.multiplicities()).enumerate() {
        let d = dmetric(m, &lebesgue, fam);
        table.push(vec![i.to_string(), labels[i].clone(), mult.to_string(), m.len().to_string(), num(d)]);
        clusters.push(json!({
            "origin": labels[i],
            "multiplicity": mult,
            "support_size": m.len(),
            "dmetric_to_lebesgue": d,
        }));
    }
    (table, json!(clusters))
}

fn run_pw(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let cps = checkpoints(cfg, 100_000);
    let fam = TestFunctionFamily::fourier(*sys.space(), cfg.nphi)?;
    let x = match start_point(cfg, &sys)? {
        Some(x) => x,
        None => lebesgue_orbit(&sys, 0, sample_seed(cfg.seed, 0))?[0],
    };
    // floating-point doubling and tent orbits collapse onto 0; use the bit-refilled random orbit
    let set = if cfg.x.is_empty() && matches!(sys.kind(), MapKind::Doubling | MapKind::Tent) {
        let orbit = lebesgue_orbit(&sys, cps[cps.len() - 1] - 1, sample_seed(cfg.seed, 0))?;
        pw_estimate_orbit(&orbit, &cps, &fam, cfg.eps_cluster)?
    } else {
        pw_estimate(&sys, &x, &cps, &fam, cfg.eps_cluster)?
    };
    let labels: Vec<String> = set.members().iter().map(|m| format!("n={}", m.len())).collect();
    let (table, clusters) = measure_set_output(&set, &labels, &fam, sys.space());
    let result = json!({ "x": x, "checkpoints": cps, "clusters": clusters, "measures": set });
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), result),
        table,
        exit_code: 0,
    })
}

fn run_physical_like(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let cps = checkpoints(cfg, 100_000);
    let fam = TestFunctionFamily::fourier(*sys.space(), cfg.nphi)?;
    let samples = cfg.samples.unwrap_or(50);
    let est = physical_like_estimate(&sys, samples, &cps, cfg.seed, &fam, cfg.eps_cluster)?;
    let labels: Vec<String> = est.origins.iter().map(|(i, c)| format!("sample={i} n={c}")).collect();
    let (table, clusters) = measure_set_output(&est.set, &labels, &fam, sys.space());
    let result = json!({ "samples": samples, "checkpoints": cps, "clusters": clusters });
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), result),
        table,
        exit_code: 0,
    })
}

/// One sample of the entropy/exponent comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub x: Vec<f64>,
    pub sigma_chi_plus: f64,
    pub entropy_estimate: f64,
    pub chosen_m: usize,
    pub unreliable: bool,
    /// `entropy_estimate ≤ sigma_chi_plus + tol`.
    pub ruelle_ok: bool,
    /// `entropy_estimate ≥ sigma_chi_plus − tol`.
    pub main_theorem_ok: bool,
    /// `entropy_estimate − sigma_chi_plus`.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub n: usize,
    pub tol: f64,
    pub records: Vec<InequalityRecord>,
    pub all_ok: bool,
}

/// Plug-in entropy against `Σχ⁺` along `samples` Lebesgue-random orbits of length `n`.
pub fn inequality_report(
    sys: &SystemSpec<f64>,
    p: &Partition<f64>,
    m_list: &[usize],
    n: usize,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<InequalityReport> {
    sys.require_smooth()?;
    let m_max = *m_list
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("empty m list".into()))?;
    let records: Vec<Result<InequalityRecord>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let orbit = lebesgue_orbit(sys, n + m_max - 2, sample_seed(seed, i as u64))?;
            let chi = report_from_record(&cocycle_from_orbit(sys, &orbit[..n])?);
            let est = entropy_estimate_orbit(&orbit, n, p, m_list)?;
            let h = est.estimate;
            let s = chi.sigma_chi_plus;
            Ok(InequalityRecord {
                x: orbit[0].to_f64_vec(),
                sigma_chi_plus: s,
                entropy_estimate: h,
                chosen_m: est.chosen_m,
                unreliable: est.unreliable,
                ruelle_ok: h <= s + tol,
                main_theorem_ok: h >= s - tol,
                margin: h - s,
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let all_ok = records.iter().all(|r| r.ruelle_ok && r.main_theorem_ok);
    Ok(InequalityReport {
        n,
        tol,
        records,
        all_ok,
    })
}

fn run_inequality(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = system(cfg)?;
    let p = partition(cfg, &sys)?;
    let rep = inequality_report(
        &sys,
        &p,
        &m_list(cfg),
        cfg.n.unwrap_or(1_000_000),
        cfg.samples.unwrap_or(20),
        cfg.seed,
        cfg.tol,
    )?;
    let dim = sys.dim();
    let mut header: Vec<String> = vec!["sample".into()];
    header.extend((1..=dim).map(|k| format!("x_{k}")));
    header.extend(
        ["sigma_chi_plus", "entropy_estimate", "chosen_m", "ruelle_ok", "main_theorem_ok", "margin"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut table = Table {
        header,
        rows: vec![],
    };
    for (i, r) in rep.records.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r.x.iter().map(|&c| num(c)));
        row.extend([
            num(r.sigma_chi_plus),
            num(r.entropy_estimate),
            r.chosen_m.to_string(),
            r.ruelle_ok.to_string(),
            r.main_theorem_ok.to_string(),
            num(r.margin),
        ]);
        table.push(row);
    }
    let exit_code = if rep.all_ok { 0 } else { 2 };
    Ok(Outcome {
        json: envelope(cfg, Some(&sys), json!({ "partition": p, "report": rep })),
        table,
        exit_code,
    })
}

fn run_counterexample(cfg: &ExperimentConfig) -> Result<Outcome> {
    let map = CounterexampleMap::build(counterexample_params(cfg))?;
    let mut table = Table::new(&[
        "n",
        "log10_alpha",
        "log10_n_periods",
        "landing_residual",
        "size_residual",
        "schedule_ok",
        "exponent_after_stage",
    ]);
    let stage_count = map.params().n_max - map.params().n0 + 1;
    let curve = map.exponent_curve(stage_count)?;
    let mut stages = Vec::new();
    for (s, c) in map.stages().iter().zip(&curve) {
        let cond = map.conditions(s.n)?;
        let schedule_ok = s.n == map.params().n_max || map.verify_schedule(s.n).is_ok();
        table.push(vec![
            s.n.to_string(),
            num(s.alpha.ln(map.ln_lambda()) / std::f64::consts::LN_10),
            num(s.n_periods.log10()),
            num(cond.landing_residual),
            num(cond.size_residual),
            schedule_ok.to_string(),
            num(c.exponent),
        ]);
        stages.push(json!({ "stage": s, "conditions": cond, "schedule_ok": schedule_ok }));
    }
    let mut result = json!({
        "params": map.params(),
        "target_exponent": map.target_exponent(),
        "exponent_curve": curve,
        "stages": stages,
        "cantor": map.cantor_measure(map.params().n_max)?,
    });
    let mut exit_code = 0;
    if cfg.certify {
        let report = map.certify(cfg.orbit_steps.unwrap_or(u64::MAX))?;
        if !report.passed {
            exit_code = 2;
        }
        result["certification"] = json!(report);
    }
    Ok(Outcome {
        json: envelope(cfg, None, result),
        table,
        exit_code,
    })
}

fn run_admissible(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.blocks.is_empty() {
        return Err(Error::Config("`blocks` must list the one-block logs".into()));
    }
    let c = count_admissible(&cfg.blocks, cfg.threshold, cfg.range_guard, DEFAULT_ENUMERATION_CUTOFF)?;
    let mut table = Table::new(&[
        "m",
        "threshold",
        "lambda_k",
        "count",
        "f_argument",
        "bound",
        "within_bound",
        "ceiling_bound",
    ]);
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    table.push(vec![
        c.m.to_string(),
        num(c.threshold),
        num(c.lambda_k),
        c.count.to_string(),
        num(c.f_argument),
        opt(c.bound),
        c.within_bound().map(|b| b.to_string()).unwrap_or_default(),
        opt(c.ceiling_bound),
    ]);
    let exit_code = if c.within_bound() == Some(false) { 2 } else { 0 };
    let result = json!({
        "m": c.m,
        "threshold": c.threshold,
        "lambda_k": c.lambda_k,
        "count": c.count.to_string(),
        "f_argument": c.f_argument,
        "bound": c.bound,
        "within_bound": c.within_bound(),
        "ceiling_bound": c.ceiling_bound,
    });
    Ok(Outcome {
        json: envelope(cfg, None, result),
        table,
        exit_code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = ExperimentConfig::new(Command::Lyapunov);
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("n", "0").is_err());
        assert!(c.set("tol", "-1").is_err());
        c.set("m_list", "1,2,3").unwrap();
        assert_eq!(c.m_list, vec![1, 2, 3]);
        c.set("eps-cluster", "0.05").unwrap();
        assert_eq!(c.eps_cluster, 0.05);
    }

    #[test]
    fn partitions_parse() {
        let t2 = PhaseSpace::torus(2).unwrap();
        assert_eq!(parse_partition("grid:3x1", t2).unwrap().atom_count(), 3);
        assert_eq!(parse_partition("grid:4", t2).unwrap().atom_count(), 16);
        assert_eq!(parse_partition("dyadic", t2).unwrap().atom_count(), 4);
        assert!(parse_partition("voronoi", t2).is_err());
        assert!(parse_partition("grid:3x1x2", t2).is_err());
    }

    #[test]
    fn rotation_lyapunov_is_zero() {
        let mut c = ExperimentConfig::new(Command::Lyapunov);
        c.set("system", "rotation theta=0.3").unwrap();
        c.set("n", "1000").unwrap();
        let out = run(&c).unwrap();
        assert_eq!(out.json["result"]["reports"][0]["sigma_chi_plus"], json!(0.0));
        assert_eq!(out.json["schema"], json!(1));
    }

    #[test]
    fn csv_tables() {
        let empty = lyapunov_table(&[], 2);
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut c = ExperimentConfig::new(Command::Admissible);
        c.set("blocks", "0.6931471805599453").unwrap();
        let out = run(&c).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.table.rows[0][3], "3");
        assert_eq!(out.exit_code, 0);
    }
}
