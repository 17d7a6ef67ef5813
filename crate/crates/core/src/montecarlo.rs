//! Seeded replication engine and table rendering.
//!
//! Replication `r` draws its sample from seed `seed + r`, so results do not
//! depend on how replications are scheduled across threads.

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::gmm::JTest;
use crate::kreg::{BandwidthRule, Bandwidths};
use crate::matching::{two_step_matching, MatchingConfig, SlackMode};
use crate::nonseparable::{fit_nonseparable, SieveConfig};
use crate::numerics::{normal_critical, RngStream};
use crate::points::benchmark_points;
use crate::separable::fit_separable;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub matching: bool,
    pub separable: bool,
    pub nonseparable: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            matching: true,
            separable: true,
            nonseparable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub reps: usize,
    pub x0: f64,
    pub seed: u64,
    pub bandwidth: BandwidthRule,
    pub grid_size: usize,
    pub slack_mode: SlackMode,
    pub slack_multiplier: f64,
    pub trim_margin: f64,
    pub stages: Stages,
    pub sieve: SieveConfig,
    /// Node at which the sieve reports pointwise inference.
    pub u0: f64,
    /// Quantile levels `(a, b)` of the reported spread `g(b) - g(a)`.
    pub spread: (f64, f64),
    /// Added to `x̂_m1` before the outcome stages (power experiments).
    pub xm1_perturbation: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dgp: DgpSpec::default(),
            n: 2000,
            reps: 500,
            x0: 0.0,
            seed: 20240611,
            bandwidth: BandwidthRule::default(),
            grid_size: 500,
            slack_mode: SlackMode::Point,
            slack_multiplier: 1.0,
            trim_margin: 0.5,
            stages: Stages::default(),
            sieve: SieveConfig::default(),
            u0: 0.5,
            spread: (0.2, 0.8),
            xm1_perturbation: 0.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n < 200 {
            return Err(Error::Config(format!("n must be at least 200, got {}", self.n)));
        }
        if !self.stages.matching && !self.stages.separable && !self.stages.nonseparable {
            return Err(Error::Config("no stage selected".into()));
        }
        self.matching_config().validate()?;
        Bandwidths::from_scale(1.0, self.n, &self.bandwidth).map_err(|e| Error::Config(e.to_string()))?;
        if self.stages.nonseparable {
            self.sieve.validate()?;
            if self.sieve.node_index(self.u0).is_none() {
                return Err(Error::Config(format!(
                    "u0={} is not a sieve node for J={}",
                    self.u0, self.sieve.nodes
                )));
            }
            let (a, b) = self.spread;
            if !(a > 0.0 && a < b && b < 1.0) {
                return Err(Error::Config("spread levels must satisfy 0 < a < b < 1".into()));
            }
        }
        if !self.stages.matching && self.truths().matching.is_none() {
            return Err(Error::Config(
                "outcome stages without the matching stage need population matching points".into(),
            ));
        }
        Ok(())
    }

    fn matching_config(&self) -> MatchingConfig {
        MatchingConfig {
            x0: self.x0,
            grid_size: self.grid_size,
            slack_mode: self.slack_mode,
            slack_multiplier: self.slack_multiplier,
            trim_margin: self.trim_margin,
        }
    }

    fn truths(&self) -> Truths {
        let dgp = self.dgp.as_dgp();
        let matching = match self.dgp.true_matching_points(self.x0) {
            Ok((Some(a), Some(b))) => Some((a, b)),
            _ => None,
        };
        let g = |u: f64| dgp.true_g_nonseparable(self.x0, u).ok();
        Truths {
            matching,
            m: dgp.true_m_separable(self.x0),
            g_u0: g(self.u0),
            spread: match (g(self.spread.0), g(self.spread.1)) {
                (Some(a), Some(b)) => Some(b.iter().zip(&a).map(|(x, y)| x - y).collect()),
                _ => None,
            },
        }
    }

    /// Target names in report order with their population values.
    pub fn targets(&self) -> Vec<(String, Option<f64>)> {
        let t = self.truths();
        let k = self.dgp.as_dgp().num_levels();
        let mut out = Vec::new();
        if self.stages.matching {
            out.push(("x_m1".to_string(), t.matching.map(|m| m.0)));
            out.push(("x_m2".to_string(), t.matching.map(|m| m.1)));
        }
        if self.stages.separable {
            for d in 0..k {
                out.push((format!("m_{}", d + 1), Some(t.m[d])));
            }
        }
        if self.stages.nonseparable {
            for d in 0..k {
                out.push((format!("g_{}({})", d + 1, self.u0), t.g_u0.as_ref().map(|g| g[d])));
            }
            for d in 0..k {
                out.push((
                    format!("spread_{}({}-{})", d + 1, self.spread.0, self.spread.1),
                    t.spread.as_ref().map(|s| s[d]),
                ));
            }
        }
        out
    }

    /// J-test names in report order.
    pub fn jtests(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages.matching {
            out.extend(["J_x", "J_x1", "J_x2"].map(String::from));
        }
        if self.stages.separable {
            out.push("J_SP".into());
        }
        if self.stages.nonseparable {
            out.push("J_NSP".into());
        }
        out
    }
}

struct Truths {
    matching: Option<(f64, f64)>,
    m: Vec<f64>,
    g_u0: Option<Vec<f64>>,
    spread: Option<Vec<f64>>,
}

/// One replication's estimates, aligned with [`McConfig::targets`] and
/// [`McConfig::jtests`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub values: Vec<f64>,
    /// Standard errors; `None` for targets without one.
    pub se: Vec<Option<f64>>,
    pub jtests: Vec<JTest>,
    /// Set when the replication failed; values are then empty.
    pub error: Option<String>,
    pub error_kind: Option<String>,
}

fn run_one(cfg: &McConfig, rep: usize) -> RepRecord {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let mut rec = RepRecord {
        rep,
        seed,
        values: Vec::new(),
        se: Vec::new(),
        jtests: Vec::new(),
        error: None,
        error_kind: None,
    };
    if let Err(e) = fill(cfg, seed, &mut rec) {
        rec.values.clear();
        rec.se.clear();
        rec.jtests.clear();
        rec.error_kind = Some(e.kind().to_string());
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill(cfg: &McConfig, seed: u64, rec: &mut RepRecord) -> Result<()> {
    let dgp = cfg.dgp.as_dgp();
    let mut rng = RngStream::new(seed);
    let sample = dgp.simulate(cfg.n, &mut rng)?;
    let bw = Bandwidths::from_rule(&sample, &cfg.bandwidth)?;
    let mut js = Vec::new();
    let xm = if cfg.stages.matching {
        let fit = two_step_matching(&sample, bw.h_x, &cfg.matching_config())?;
        rec.values.extend([fit.xm1_hat, fit.xm2_hat]);
        rec.se.extend([Some(fit.se[0]), Some(fit.se[1])]);
        js.extend([fit.j_x, fit.j_x1, fit.j_x2]);
        (fit.xm1_hat, fit.xm2_hat)
    } else {
        cfg.truths().matching.expect("validated")
    };
    let xm = (xm.0 + cfg.xm1_perturbation, xm.1);
    let mut centre = None;
    if cfg.stages.separable {
        let pts = benchmark_points(cfg.x0, xm.0, xm.1);
        let fit = fit_separable(&sample, cfg.x0, &pts, &bw, true)?;
        rec.values.extend(&fit.m_hat);
        rec.se.extend(fit.se.iter().map(|s| Some(*s)));
        js.push(fit.j_sp.unwrap_or(JTest::new(0.0, 0)));
        centre = Some(fit.m_hat);
    }
    if cfg.stages.nonseparable {
        let fit = fit_nonseparable(&sample, cfg.x0, xm, &bw, &cfg.sieve, centre.as_deref(), Some(cfg.u0))?;
        let inf = fit.inference.as_ref().expect("u0 validated as a node");
        rec.values.extend(&inf.g_hat);
        rec.se.extend(inf.se.iter().map(|s| Some(*s)));
        let lo = fit.at(cfg.spread.0);
        let hi = fit.at(cfg.spread.1);
        rec.values.extend(hi.iter().zip(&lo).map(|(a, b)| a - b));
        rec.se.extend(std::iter::repeat_n(None, lo.len()));
        js.push(inf.j_nsp);
    }
    rec.jtests = js;
    Ok(())
}

/// Summary of one estimated quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub name: String,
    pub truth: Option<f64>,
    pub count: usize,
    pub average: f64,
    pub bias2: Option<f64>,
    pub variance: f64,
    pub mse: Option<f64>,
    pub median: f64,
    pub coverage90: Option<f64>,
    pub coverage95: Option<f64>,
    pub coverage99: Option<f64>,
}

/// Share of replications in which a J test does not reject at 5%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JRow {
    pub name: String,
    pub df: u32,
    pub count: usize,
    /// `None` when the test has no reference distribution.
    pub acceptance95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub targets: Vec<TargetRow>,
    pub jtests: Vec<JRow>,
    pub failures: usize,
    /// `(error kind, count)` sorted by kind.
    pub failure_kinds: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub table: McTable,
    pub records: Vec<RepRecord>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Moments over the successful replications (divisor = their count).
pub fn summarize(name: &str, truth: Option<f64>, values: &[f64], se: &[Option<f64>]) -> TargetRow {
    let count = values.len();
    let c = count as f64;
    let average = values.iter().sum::<f64>() / c;
    let variance = values.iter().map(|v| (v - average).powi(2)).sum::<f64>() / c;
    let bias2 = truth.map(|t| (average - t).powi(2));
    let mse = bias2.map(|b| b + variance);
    let coverage = |level: f64| -> Option<f64> {
        let t = truth?;
        let z = normal_critical(level).ok()?;
        let mut hit = 0usize;
        for (v, s) in values.iter().zip(se) {
            let s = (*s)?;
            if (v - t).abs() <= z * s {
                hit += 1;
            }
        }
        Some(hit as f64 / c)
    };
    let mut sorted = values.to_vec();
    TargetRow {
        name: name.to_string(),
        truth,
        count,
        average,
        bias2,
        variance,
        mse,
        median: median(&mut sorted),
        coverage90: coverage(0.90),
        coverage95: coverage(0.95),
        coverage99: coverage(0.99),
    }
}

fn aggregate(cfg: &McConfig, records: &[RepRecord]) -> McTable {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let targets = cfg
        .targets()
        .into_iter()
        .enumerate()
        .map(|(i, (name, truth))| {
            let values: Vec<f64> = ok.iter().map(|r| r.values[i]).collect();
            let se: Vec<Option<f64>> = ok.iter().map(|r| r.se[i]).collect();
            summarize(&name, truth, &values, &se)
        })
        .collect();
    let jtests = cfg
        .jtests()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let df = ok.first().map_or(0, |r| r.jtests[i].df);
            let decided: Vec<bool> = ok.iter().filter_map(|r| r.jtests[i].rejects(0.05)).collect();
            let acceptance95 = (!decided.is_empty())
                .then(|| decided.iter().filter(|rej| !**rej).count() as f64 / decided.len() as f64);
            JRow {
                name,
                df,
                count: decided.len(),
                acceptance95,
            }
        })
        .collect();
    let mut kinds: Vec<(String, usize)> = Vec::new();
    for r in records {
        if let Some(k) = &r.error_kind {
            match kinds.iter_mut().find(|(n, _)| n == k) {
                Some(slot) => slot.1 += 1,
                None => kinds.push((k.clone(), 1)),
            }
        }
    }
    kinds.sort();
    McTable {
        targets,
        jtests,
        failures: records.len() - ok.len(),
        failure_kinds: kinds,
    }
}

/// Run all replications in parallel and aggregate in replication order.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let records: Vec<RepRecord> = (0..cfg.reps).into_par_iter().map(|r| run_one(cfg, r)).collect();
    let table = aggregate(cfg, &records);
    Ok(McReport {
        config: cfg.clone(),
        table,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "N.A.".to_string();
    }
    let a = v.abs();
    if v == 0.0 || (1e-3..1e4).contains(&a) {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("N.A.".to_string(), fmt_num)
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(p) if !p.is_nan() => format!("{:.1}%", 100.0 * p),
        _ => "N.A.".to_string(),
    }
}

fn render_markdown(report: &McReport) -> String {
    let c = &report.config;
    let t = &report.table;
    let mut s = String::new();
    let _ = writeln!(s, "n = {}, replications = {}, x0 = {}, seed = {}", c.n, c.reps, c.x0, c.seed);
    s.push('\n');
    s.push_str("| Target | Truth | Average | Bias² | Variance | MSE | 90% | 95% | 99% |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in &t.targets {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.name,
            fmt_opt(r.truth),
            fmt_num(r.average),
            fmt_opt(r.bias2),
            fmt_num(r.variance),
            fmt_opt(r.mse),
            fmt_pct(r.coverage90),
            fmt_pct(r.coverage95),
            fmt_pct(r.coverage99),
        );
    }
    if !t.jtests.is_empty() {
        s.push('\n');
        s.push_str("| Over-Id test | df | Not rejected at 5% |\n");
        s.push_str("|---|---:|---:|\n");
        for j in &t.jtests {
            let _ = writeln!(s, "| {} | {} | {} |", j.name, j.df, fmt_pct(j.acceptance95));
        }
    }
    if t.failures > 0 {
        let kinds: Vec<String> = t.failure_kinds.iter().map(|(k, n)| format!("{k}: {n}")).collect();
        let _ = writeln!(s, "\nFailed replications: {} ({})", t.failures, kinds.join(", "));
    }
    s
}

const CSV_HEADER: [&str; 13] = [
    "kind", "name", "truth", "count", "average", "bias2", "variance", "mse", "median", "cov90", "cov95", "cov99", "df",
];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl McTable {
    /// Lossless CSV: one row per target, J test and failure kind.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).unwrap();
        for r in &self.targets {
            w.write_record([
                "target".to_string(),
                r.name.clone(),
                opt(r.truth),
                r.count.to_string(),
                r.average.to_string(),
                opt(r.bias2),
                r.variance.to_string(),
                opt(r.mse),
                r.median.to_string(),
                opt(r.coverage90),
                opt(r.coverage95),
                opt(r.coverage99),
                String::new(),
            ])
            .unwrap();
        }
        for j in &self.jtests {
            let mut row = vec![String::new(); CSV_HEADER.len()];
            row[0] = "jtest".into();
            row[1] = j.name.clone();
            row[3] = j.count.to_string();
            row[10] = opt(j.acceptance95);
            row[12] = j.df.to_string();
            w.write_record(&row).unwrap();
        }
        let mut row = vec![String::new(); CSV_HEADER.len()];
        row[0] = "failures".into();
        row[1] = "total".into();
        row[3] = self.failures.to_string();
        w.write_record(&row).unwrap();
        for (k, n) in &self.failure_kinds {
            row[1] = k.clone();
            row[3] = n.to_string();
            w.write_record(&row).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| schema(1, "header", &e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(schema(1, "header", "unexpected columns"));
        }
        let mut table = McTable {
            targets: Vec::new(),
            jtests: Vec::new(),
            failures: 0,
            failure_kinds: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| schema(row, "record", &e.to_string()))?;
            let f = |c: usize| -> Result<Option<f64>> {
                let s = &rec[c];
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| schema(row, CSV_HEADER[c], &format!("not a number: {s:?}")))
            };
            let req = |c: usize| -> Result<f64> { f(c)?.ok_or_else(|| schema(row, CSV_HEADER[c], "missing value")) };
            let count = |c: usize| -> Result<usize> {
                rec[c]
                    .parse::<usize>()
                    .map_err(|_| schema(row, CSV_HEADER[c], "not a count"))
            };
            match &rec[0] {
                "target" => table.targets.push(TargetRow {
                    name: rec[1].to_string(),
                    truth: f(2)?,
                    count: count(3)?,
                    average: req(4)?,
                    bias2: f(5)?,
                    variance: req(6)?,
                    mse: f(7)?,
                    median: req(8)?,
                    coverage90: f(9)?,
                    coverage95: f(10)?,
                    coverage99: f(11)?,
                }),
                "jtest" => table.jtests.push(JRow {
                    name: rec[1].to_string(),
                    df: rec[12]
                        .parse()
                        .map_err(|_| schema(row, "df", "not an integer"))?,
                    count: count(3)?,
                    acceptance95: f(10)?,
                }),
                "failures" if &rec[1] == "total" => table.failures = count(3)?,
                "failures" => table.failure_kinds.push((rec[1].to_string(), count(3)?)),
                other => return Err(schema(row, "kind", &format!("unknown row kind {other:?}"))),
            }
        }
        Ok(table)
    }
}

fn schema(row: usize, column: &str, message: &str) -> Error {
    Error::Schema {
        row,
        column: column.to_string(),
        message: message.to_string(),
    }
}

/// Render the report as a markdown table or lossless CSV.
pub fn emit_table(report: &McReport, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => render_markdown(report),
        TableFormat::Csv => report.table.to_csv(),
    }
}
