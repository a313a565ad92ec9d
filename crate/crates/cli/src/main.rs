use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use pencil_core::constructions::{cantor_set, collinear_tip_config, CantorSpec};
use pencil_core::experiments::{self, growth_fixture, reference_measures, ExperimentConfig, EXPERIMENTS};
use pencil_core::format;
use pencil_core::radial::{ball_condition_check, exponent_fit};
use pencil_core::NonConcentrationSpec;

#[derive(Parser)]
#[command(name = "pencil", version, about = "Discretized sum-product and pencil experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// Resolution exponent, δ = 2^-m.
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Non-concentration constant C.
    #[arg(long = "const")]
    constant: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a fixture in text format: cantor, ap16, gp6, random, collinear, measure.
    Gen {
        kind: String,
        /// Pencil count per family for `collinear`.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named experiment with `key=value` overrides.
    Run {
        experiment: String,
        overrides: Vec<String>,
        /// Flat key=value config file, applied before overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a grid-set file for non-concentration, or a measure file for the ball condition.
    Verify {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit log₂ of a count column against log₂(1/r) from a CSV file.
    Fit {
        file: PathBuf,
        /// Column of scales r, or of exponents j with `--exponent`.
        x: String,
        y: String,
        #[arg(long)]
        exponent: bool,
    },
}

enum Status {
    Pass,
    Fail,
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(kind: &str, n: Option<usize>, c: &Common) -> Result<Status> {
    let m = c.m.unwrap_or(8);
    let text = match kind {
        "cantor" => {
            if m % 2 != 0 {
                bail!("cantor needs even m");
            }
            format::write_grid1(&cantor_set(&CantorSpec::middle_half(m / 2))?)
        }
        "ap16" | "gp6" | "random" => format::write_grid1(&growth_fixture(kind, m, c.seed.unwrap_or(0))?),
        "collinear" => {
            let n = n.unwrap_or(1 << (m / 2).saturating_sub(2));
            let mut s = String::new();
            for p in collinear_tip_config(n, m)? {
                s.push_str(&format::write_pencil(&p)?);
            }
            s
        }
        "measure" => format::write_measure(&reference_measures()?.0),
        other => bail!("unknown fixture `{other}`"),
    };
    emit(&text, &c.out)?;
    Ok(Status::Pass)
}

fn run(experiment: &str, overrides: &[String], config: &Option<PathBuf>, c: &Common) -> Result<Status> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ExperimentConfig::default(),
    };
    cfg.name = experiment.to_string();
    if !EXPERIMENTS.contains(&experiment) {
        bail!("unknown experiment `{experiment}`; known: {}", EXPERIMENTS.join(", "));
    }
    for kv in overrides {
        cfg.set_pair(kv)?;
    }
    if let Some(m) = c.m {
        cfg.set("m", m);
    }
    if let Some(s) = c.sigma {
        cfg.set("sigma", s);
    }
    if let Some(k) = c.constant {
        cfg.set("const", k);
    }
    if let Some(s) = c.seed {
        cfg.set("seed", s);
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    let outcome = experiments::run(&cfg)?;
    print!("{}", outcome.summary);
    if let Some(dir) = &cfg.out {
        outcome.write(dir)?;
    }
    for f in outcome.failures() {
        eprintln!("assertion failed: {}", f.name);
    }
    Ok(if outcome.passed() { Status::Pass } else { Status::Fail })
}

fn verify(file: &PathBuf, c: &Common) -> Result<Status> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let head = text.lines().next().unwrap_or_default();
    let is_measure = head.starts_with("gridset 2") && text.lines().nth(1).is_some_and(|l| l.split_whitespace().count() == 3);
    if is_measure {
        let mu = format::read_measure(&text)?;
        let s = c.sigma.unwrap_or(mu.s);
        let bound = c.constant.unwrap_or(mu.c);
        let seen = ball_condition_check(&mu, s)?;
        let ok = seen <= bound;
        println!("{} ball condition s={s}: max μ(Q)/r^s = {seen} (bound {bound})", if ok { "PASS" } else { "FAIL" });
        return Ok(if ok { Status::Pass } else { Status::Fail });
    }
    let spec = NonConcentrationSpec::new(c.sigma.ok_or_else(|| anyhow!("--sigma is required"))?, c.constant.unwrap_or(1.0))?;
    let res = if head.starts_with("gridset 1") {
        format::read_grid1(&text)?.nonconcentration_check(&spec).map_err(|w| format!("start={} r_cells={} count={} bound={}", w.start, w.r_cells, w.count, w.bound))
    } else {
        format::read_grid2(&text)?
            .nonconcentration_check(&spec)
            .map_err(|w| format!("start=({},{}) r_cells={} count={} bound={}", w.start.0, w.start.1, w.r_cells, w.count, w.bound))
    };
    match res {
        Ok(()) => {
            println!("PASS non-concentration σ={} C={}", spec.sigma, spec.c);
            Ok(Status::Pass)
        }
        Err(w) => {
            println!("FAIL non-concentration σ={} C={}: {w}", spec.sigma, spec.c);
            Ok(Status::Fail)
        }
    }
}

fn fit(file: &PathBuf, x: &str, y: &str, exponent: bool) -> Result<Status> {
    let mut rdr = csv::Reader::from_path(file).with_context(|| format!("reading {}", file.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column `{name}`"));
    let (ix, iy) = (col(x)?, col(y)?);
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let xv: f64 = rec[ix].parse().with_context(|| format!("bad value `{}`", &rec[ix]))?;
        let yv: f64 = rec[iy].parse().with_context(|| format!("bad value `{}`", &rec[iy]))?;
        data.push((if exponent { 2f64.powf(-xv) } else { xv }, yv));
    }
    let r = exponent_fit(&data)?;
    println!("slope={} intercept={} max_residual={} points={}", r.slope, r.intercept, r.max_residual, r.scales.len());
    Ok(Status::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Gen { kind, n, common } => gen(kind, *n, common),
        Cmd::Run { experiment, overrides, config, common } => run(experiment, overrides, config, common),
        Cmd::Verify { file, common } => verify(file, common),
        Cmd::Fit { file, x, y, exponent } => fit(file, x, y, *exponent),
    };
    match res {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
