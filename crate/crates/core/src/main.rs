use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergolab::experiment::{run, Command, ExperimentConfig};

/// Numerical experiments on entropy, Lyapunov exponents and empirical measures of maps.
#[derive(Parser, Debug)]
#[command(name = "ergolab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Print an orbit.
    Simulate,
    /// Lyapunov exponents along an orbit (and strong exponents with --p-list).
    Lyapunov,
    /// Plug-in metric entropy along a random orbit.
    Entropy,
    /// Entropy via the averaged exterior-power growth.
    Kozlovski,
    /// Growth rate of maximal (n, alpha)-separated sets.
    Separated,
    /// Limit points of the empirical measures of one orbit.
    Pw,
    /// Empirical-measure limits pooled over random initial conditions.
    PhysicalLike,
    /// Compare entropy with the sum of positive exponents on random orbits.
    Inequality,
    /// Build and optionally certify the staged counterexample map.
    Counterexample,
    /// Count admissible exponent sequences against the combinatorial bound.
    Admissible,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Simulate => Command::Simulate,
            Cmd::Lyapunov => Command::Lyapunov,
            Cmd::Entropy => Command::Entropy,
            Cmd::Kozlovski => Command::Kozlovski,
            Cmd::Separated => Command::Separated,
            Cmd::Pw => Command::Pw,
            Cmd::PhysicalLike => Command::PhysicalLike,
            Cmd::Inequality => Command::Inequality,
            Cmd::Counterexample => Command::Counterexample,
            Cmd::Admissible => Command::Admissible,
        }
    }
}

#[derive(Args, Debug)]
struct Opts {
    /// System id and parameters, e.g. `--system rotation theta=0.3`.
    #[arg(long, global = true, num_args = 1.., value_name = "ID [K=V]...")]
    system: Option<Vec<String>>,
    /// Orbit length.
    #[arg(long, global = true)]
    n: Option<String>,
    /// Number of random initial conditions.
    #[arg(long, global = true)]
    samples: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// dyadic, grid:K or grid:K1xK2.
    #[arg(long, global = true)]
    partition: Option<String>,
    /// Comma-separated p values for strong exponents.
    #[arg(long, global = true)]
    p_list: Option<String>,
    /// Comma-separated refinement depths.
    #[arg(long, global = true)]
    m_list: Option<String>,
    /// Comma-separated orbit lengths at which empirical measures are compared.
    #[arg(long, global = true)]
    checkpoints: Option<String>,
    /// Initial point, comma-separated coordinates.
    #[arg(long, global = true, allow_hyphen_values = true)]
    x: Option<String>,
    /// Number of test functions in the measure metric.
    #[arg(long, global = true)]
    nphi: Option<String>,
    #[arg(long, global = true)]
    eps_cluster: Option<String>,
    /// Tolerance of the inequality checks.
    #[arg(long, global = true)]
    tol: Option<String>,
    /// Separation scale.
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    grid_step: Option<String>,
    /// Counterexample smoothness.
    #[arg(long, global = true)]
    r: Option<String>,
    /// Counterexample expansion factor.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    n0: Option<String>,
    #[arg(long, global = true)]
    nmax: Option<String>,
    /// Certify the counterexample numerically.
    #[arg(long, global = true)]
    certify: bool,
    /// Orbit steps available to the certification.
    #[arg(long, global = true)]
    orbit_steps: Option<String>,
    /// Comma-separated one-block log norms.
    #[arg(long, global = true, allow_hyphen_values = true)]
    blocks: Option<String>,
    /// Admissibility threshold A.
    #[arg(long, global = true, allow_hyphen_values = true)]
    threshold: Option<String>,
    #[arg(long, global = true)]
    range_guard: Option<String>,
    /// json or csv.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Output file (default stdout).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// key = value settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> ergolab::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(cli.command.command());
    if let Some(path) = &cli.opts.config {
        cfg.apply_file(path)?;
    }
    let o = &cli.opts;
    let flags: [(&str, &Option<String>); 22] = [
        ("n", &o.n),
        ("samples", &o.samples),
        ("seed", &o.seed),
        ("partition", &o.partition),
        ("p-list", &o.p_list),
        ("m-list", &o.m_list),
        ("checkpoints", &o.checkpoints),
        ("x", &o.x),
        ("nphi", &o.nphi),
        ("eps-cluster", &o.eps_cluster),
        ("tol", &o.tol),
        ("alpha", &o.alpha),
        ("grid-step", &o.grid_step),
        ("r", &o.r),
        ("lambda", &o.lambda),
        ("n0", &o.n0),
        ("nmax", &o.nmax),
        ("orbit-steps", &o.orbit_steps),
        ("blocks", &o.blocks),
        ("threshold", &o.threshold),
        ("range-guard", &o.range_guard),
        ("format", &o.format),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(parts) = &o.system {
        cfg.set("system", &parts.join(" "))?;
    }
    if o.certify {
        cfg.certify = true;
    }
    if let Some(path) = &o.output {
        cfg.output = Some(path.clone());
    }
    Ok(cfg)
}

fn configure_threads() -> ergolab::Result<()> {
    if let Ok(v) = std::env::var("ERGOLAB_THREADS") {
        let threads: usize = v
            .trim()
            .parse()
            .map_err(|_| ergolab::Error::Config(format!("ERGOLAB_THREADS: bad thread count `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| ergolab::Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads()
        .and_then(|_| build_config(&cli))
        .and_then(|cfg| run(&cfg).and_then(|out| out.emit_to(&cfg).map(|_| out.exit_code)));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
