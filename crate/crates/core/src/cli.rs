//! Command-line front end: `simulate`, `match`, `fit-separable`,
//! `fit-nonseparable` and `montecarlo`.
//!
//! Exit codes: 0 on success, 2 when estimation fails with a typed error
//! (insufficient local data, singular or weakly identified systems, empty
//! trimmed support), 1 for usage, input and configuration errors.

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::io::{load_csv, save_csv};
use crate::kreg::{BandwidthRule, Bandwidths, Sample};
use crate::matching::{two_step_matching, MatchingConfig, MatchingFit, SlackMode};
use crate::montecarlo::{emit_table, run_mc, McConfig, TableFormat};
use crate::nonseparable::{fit_nonseparable, NonseparableFit, SieveConfig};
use crate::numerics::{normal_critical, RngStream};
use crate::points::{benchmark_points, origin_points};
use crate::separable::{fit_separable, SeparableFit};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Match,
    FitSeparable,
    FitNonseparable,
    Montecarlo,
}

/// Shared JSON configuration of the data and estimation subcommands.
/// Command-line flags override the corresponding fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Checked against the subcommand when present.
    pub mode: Option<Mode>,
    /// CSV file with columns `y,d,x,z`.
    pub data: Option<PathBuf>,
    /// Simulator used when no data file is given.
    pub dgp: Option<DgpSpec>,
    /// Sample size drawn from `dgp`.
    pub n: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub bandwidth: BandwidthRule,
    pub grid_size: usize,
    pub slack_mode: SlackMode,
    pub slack_multiplier: f64,
    pub trim_margin: f64,
    /// Use estimated matching points; otherwise only `(x0, z)` cells.
    pub use_matching: bool,
    /// Efficient second step in the separable fit.
    pub two_step: bool,
    pub sieve: SieveConfig,
    /// Node reported with pointwise inference by the sieve.
    pub u0: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MatchingConfig::default();
        RunConfig {
            mode: None,
            data: None,
            dgp: None,
            n: 2000,
            seed: 1,
            x0: Vec::new(),
            bandwidth: BandwidthRule::default(),
            grid_size: m.grid_size,
            slack_mode: m.slack_mode,
            slack_multiplier: m.slack_multiplier,
            trim_margin: m.trim_margin,
            use_matching: true,
            two_step: true,
            sieve: SieveConfig::default(),
            u0: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::Config(format!("config is for {m:?}, not {mode:?}")));
            }
        }
        match mode {
            Mode::Simulate => {
                if self.dgp.is_none() {
                    return Err(Error::Config("simulate needs a dgp".into()));
                }
                if self.n == 0 {
                    return Err(Error::Config("n must be positive".into()));
                }
            }
            Mode::Montecarlo => {}
            _ => {
                if self.data.is_some() == self.dgp.is_some() {
                    return Err(Error::Config("exactly one of data and dgp must be given".into()));
                }
                if self.x0.is_empty() {
                    return Err(Error::Config("at least one x0 is required".into()));
                }
                self.matching(0.0).validate()?;
                if mode == Mode::FitNonseparable {
                    self.sieve.validate()?;
                }
            }
        }
        if let Some(dgp) = &self.dgp {
            dgp.validate()?;
        }
        Ok(())
    }

    fn matching(&self, x0: f64) -> MatchingConfig {
        MatchingConfig {
            x0,
            grid_size: self.grid_size,
            slack_mode: self.slack_mode,
            slack_multiplier: self.slack_multiplier,
            trim_margin: self.trim_margin,
        }
    }

    fn sample(&self) -> Result<Sample> {
        match (&self.data, &self.dgp) {
            (Some(path), None) => load_csv(path),
            (None, Some(dgp)) => dgp.as_dgp().simulate(self.n, &mut RngStream::new(self.seed)),
            _ => Err(Error::Config("exactly one of data and dgp must be given".into())),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "matchpoint", version, about = "Matching-point estimation for triangular models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a sample from a simulator and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write sample size and population values as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimate matching points and report J_x, J_x1, J_x2.
    Match(EstimateArgs),
    /// Closed-form separable fit with the J_SP test.
    FitSeparable {
        #[command(flatten)]
        common: EstimateArgs,
        /// Use only the (x0, z) cells (no matching points).
        #[arg(long)]
        no_matching: bool,
        /// Identity weight instead of the efficient second step.
        #[arg(long)]
        one_step: bool,
    },
    /// Monotone sieve fit with pointwise inference and J_NSP.
    FitNonseparable {
        #[command(flatten)]
        common: EstimateArgs,
        /// Number of sieve nodes J.
        #[arg(long)]
        nodes: Option<usize>,
        /// Node reported with standard errors.
        #[arg(long)]
        u0: Option<f64>,
    },
    /// Replicate the simulation study.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Markdown table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Full report with per-replication draws.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV with header y,d,x,z.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluation point; repeat for several.
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    /// JSON output file; required here or in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Bandwidth constant c in h_x = c sd(X) n^{-1/4}.
    #[arg(long)]
    pub bandwidth_c: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn merged(args: &EstimateArgs, mode: Mode) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
        cfg.dgp = None;
    }
    if !args.x0.is_empty() {
        cfg.x0 = args.x0.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(g) = args.grid_size {
        cfg.grid_size = g;
    }
    if let Some(c) = args.bandwidth_c {
        cfg.bandwidth.c = c;
    }
    if cfg.out.is_none() {
        return Err(Error::Config("an --out path for the JSON results is required".into()));
    }
    cfg.validate(mode)?;
    Ok(cfg)
}

fn fmt_p(j: &crate::gmm::JTest) -> String {
    match j.p_value {
        Some(p) => format!("{:.3} (p={:.3}, df={})", j.statistic, p, j.df),
        None => "N.A.".to_string(),
    }
}

/// Result of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n: usize,
    pub seed: u64,
    pub num_levels: usize,
    pub dgp: DgpSpec,
}

/// Per-`x0` record of the estimation subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub x0: f64,
    pub bandwidths: Bandwidths,
    pub matching: Option<MatchingFit>,
    pub separable: Option<SeparableFit>,
    pub nonseparable: Option<NonseparableFit>,
    /// Error message when this `x0` failed.
    pub error: Option<String>,
}

fn estimate(cfg: &RunConfig, mode: Mode, sample: &Sample, x0: f64) -> Result<EstimateRecord> {
    let bw = Bandwidths::from_rule(sample, &cfg.bandwidth)?;
    let mut rec = EstimateRecord {
        x0,
        bandwidths: bw,
        matching: None,
        separable: None,
        nonseparable: None,
        error: None,
    };
    let need_matching = mode == Mode::Match || mode == Mode::FitNonseparable || cfg.use_matching;
    if need_matching {
        rec.matching = Some(two_step_matching(sample, bw.h_x, &cfg.matching(x0))?);
    }
    if mode == Mode::FitSeparable || mode == Mode::FitNonseparable {
        let points = match &rec.matching {
            Some(m) if cfg.use_matching => benchmark_points(x0, m.xm1_hat, m.xm2_hat),
            _ => origin_points(x0),
        };
        rec.separable = Some(fit_separable(sample, x0, &points, &bw, cfg.two_step)?);
    }
    if mode == Mode::FitNonseparable {
        let m = rec.matching.as_ref().expect("matching ran");
        let centre = rec.separable.as_ref().map(|s| s.m_hat.clone());
        rec.nonseparable = Some(fit_nonseparable(
            sample,
            x0,
            (m.xm1_hat, m.xm2_hat),
            &bw,
            &cfg.sieve,
            centre.as_deref(),
            cfg.u0,
        )?);
    }
    Ok(rec)
}

fn summary(rec: &EstimateRecord) -> String {
    let z95 = normal_critical(0.95).unwrap();
    let mut s = String::new();
    let _ = writeln!(s, "x0 = {}", rec.x0);
    if let Some(e) = &rec.error {
        let _ = writeln!(s, "  failed: {e}");
        return s;
    }
    if let Some(m) = &rec.matching {
        let _ = writeln!(
            s,
            "  matching points: x_m1 = {:.4} (se {:.4}), x_m2 = {:.4} (se {:.4})",
            m.xm1_hat, m.se[0], m.xm2_hat, m.se[1]
        );
        let _ = writeln!(s, "  J_x  = {}", fmt_p(&m.j_x));
        let _ = writeln!(s, "  J_x1 = {}", fmt_p(&m.j_x1));
        let _ = writeln!(s, "  J_x2 = {}", fmt_p(&m.j_x2));
    }
    if let Some(f) = &rec.separable {
        let ci = f.confidence_intervals(z95);
        for (d, (m, (lo, hi))) in f.m_hat.iter().zip(ci).enumerate() {
            let _ = writeln!(s, "  m_{} = {:.4}  95% CI [{:.4}, {:.4}]", d + 1, m, lo, hi);
        }
        let j = f.j_sp.as_ref().map_or("N.A.".to_string(), fmt_p);
        let _ = writeln!(s, "  Over-Id J_SP = {j}");
    }
    if let Some(f) = &rec.nonseparable {
        let _ = writeln!(s, "  sieve: J = {}, objective {:.3e}, sweeps {}", f.u_nodes.len(), f.objective, f.sweeps);
        if let Some(inf) = &f.inference {
            for (d, (g, se)) in inf.g_hat.iter().zip(&inf.se).enumerate() {
                let _ = writeln!(s, "  g_{}({}) = {:.4} (se {:.4})", d + 1, inf.u0, g, se);
            }
            let _ = writeln!(s, "  J_NSP = {}", fmt_p(&inf.j_nsp));
        }
    }
    s
}

/// Run one estimation subcommand over all `x0`. Estimation errors at an
/// `x0` are recorded and make the command exit with code 2 after the
/// remaining points have been processed.
fn run_estimate(cfg: &RunConfig, mode: Mode, stdout: &mut dyn std::io::Write) -> Result<Option<Error>> {
    let sample = cfg.sample()?;
    let mut records = Vec::new();
    let mut first_err = None;
    for &x0 in &cfg.x0 {
        match estimate(cfg, mode, &sample, x0) {
            Ok(r) => records.push(r),
            Err(e) if e.is_estimation_error() => {
                records.push(EstimateRecord {
                    x0,
                    bandwidths: Bandwidths::from_rule(&sample, &cfg.bandwidth)?,
                    matching: None,
                    separable: None,
                    nonseparable: None,
                    error: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    let _ = writeln!(stdout, "n = {}", sample.n());
    for r in &records {
        let _ = write!(stdout, "{}", summary(r));
    }
    if let Some(out) = &cfg.out {
        write_json(out, &records)?;
    }
    Ok(first_err)
}

fn dispatch(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<Option<Error>> {
    match cli.command {
        Command::Simulate { config, out, n, seed, json } => {
            let mut cfg: RunConfig = read_json(&config)?;
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate(Mode::Simulate)?;
            let dgp = cfg.dgp.clone().expect("validated");
            let sample = dgp.as_dgp().simulate(cfg.n, &mut RngStream::new(cfg.seed))?;
            save_csv(&sample, &out)?;
            let s = SimulateSummary {
                n: sample.n(),
                seed: cfg.seed,
                num_levels: sample.num_levels(),
                dgp,
            };
            let _ = writeln!(stdout, "wrote {} rows to {}", s.n, out.display());
            if let Some(j) = json {
                write_json(&j, &s)?;
            }
            Ok(None)
        }
        Command::Match(args) => {
            let cfg = merged(&args, Mode::Match)?;
            run_estimate(&cfg, Mode::Match, stdout)
        }
        Command::FitSeparable { common, no_matching, one_step } => {
            let mut cfg = merged(&common, Mode::FitSeparable)?;
            if no_matching {
                cfg.use_matching = false;
            }
            if one_step {
                cfg.two_step = false;
            }
            run_estimate(&cfg, Mode::FitSeparable, stdout)
        }
        Command::FitNonseparable { common, nodes, u0 } => {
            let mut cfg = merged(&common, Mode::FitNonseparable)?;
            if let Some(j) = nodes {
                cfg.sieve.nodes = j;
            }
            if u0.is_some() {
                cfg.u0 = u0;
            }
            cfg.validate(Mode::FitNonseparable)?;
            run_estimate(&cfg, Mode::FitNonseparable, stdout)
        }
        Command::Montecarlo { config, reps, out, csv, json } => {
            let mut cfg: McConfig = read_json(&config)?;
            if let Some(r) = reps {
                cfg.reps = r;
            }
            let report = run_mc(&cfg)?;
            let md = emit_table(&report, TableFormat::Markdown);
            let _ = write!(stdout, "{md}");
            if let Some(p) = out {
                write_text(&p, &md)?;
            }
            if let Some(p) = csv {
                write_text(&p, &emit_table(&report, TableFormat::Csv))?;
            }
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
            Ok(None)
        }
    }
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(None) => 0,
        Ok(Some(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_estimation_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("matchpoint").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fit.json");
        let (code, _, err) = run_args(&["match", "--bogus", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert!(err.contains("--bogus"));
        assert!(!out.exists());
        assert_eq!(run_args(&["frobnicate"]).0, 1);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(c.validate(Mode::Match).is_err(), "no data source");
        c.dgp = Some(DgpSpec::default());
        assert!(c.validate(Mode::Match).is_err(), "no x0");
        c.x0 = vec![0.0];
        assert!(c.validate(Mode::Match).is_ok());
        c.data = Some("a.csv".into());
        assert!(c.validate(Mode::Match).is_err(), "two data sources");
        c.data = None;
        c.mode = Some(Mode::Simulate);
        assert!(c.validate(Mode::Match).is_err(), "mode mismatch");
        assert!(c.validate(Mode::Simulate).is_ok());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"x00": [1]}"#).is_err());
    }
}
