//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on input errors, 2 when a verification or
//! reproduction check fails.

pub mod recipes;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cover::{
    build_cover_general, build_cover_hp, canonical_caps, dyadic_exponent, hp_axis_family, verify_cover,
    FlatCover, GeneralOptions, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::flatness::flat_defect;
use crate::geometry::Parallelogram;
use crate::lattice;
use crate::norms::{decoupling_ratio, PhysBox};
use crate::poly2::BivariatePoly;
use recipes::{CoverChoice, Example};

#[derive(Debug, Parser)]
#[command(name = "flatcover", version, about = "Flat covers, decoupling sweeps and lattice counts")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "DECOUPLE_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or verify flat covers.
    #[command(subcommand)]
    Cover(CoverCmd),
    /// Flatness defects.
    #[command(subcommand)]
    Flat(FlatCmd),
    /// Decoupling ratios and sweeps.
    #[command(subcommand)]
    Decouple(DecoupleCmd),
    /// Rescaling identity and coefficient audit on a cover.
    #[command(subcommand)]
    Rescale(RescaleCmd),
    /// Lattice multiplicities and the sqrt(2) gap.
    #[command(subcommand)]
    Lattice(LatticeCmd),
    /// Run a pinned experiment and compare with its expectation.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BuildKind {
    Canonical,
    HpAxis,
    Hp,
    General,
}

#[derive(Debug, Subcommand)]
pub enum CoverCmd {
    Build {
        #[arg(long)]
        phase: PathBuf,
        /// Dyadic scale, e.g. `2^-8` or `0.00390625`.
        #[arg(long, value_parser = parse_delta)]
        delta: f64,
        #[arg(long = "A", default_value_t = 4.0)]
        a: f64,
        #[arg(long, value_enum, default_value = "hp")]
        kind: BuildKind,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify {
        #[arg(long)]
        phase: PathBuf,
        #[arg(long)]
        cover: PathBuf,
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FlatCmd {
    Defect {
        #[arg(long)]
        phase: PathBuf,
        /// `cx,cy,e1x,e1y,e2x,e2y` with half-extent edges.
        #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
        r#box: Parallelogram,
    },
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(long, value_enum)]
    pub example: Example,
    #[arg(long, value_enum, default_value = "canonical")]
    pub cover: CoverChoice,
    #[arg(long, default_value_t = 4.0)]
    pub p: f64,
    #[arg(long = "A", default_value_t = 4.0)]
    pub a: f64,
}

#[derive(Debug, Subcommand)]
pub enum DecoupleCmd {
    Ratio {
        #[command(flatten)]
        ex: ExampleArgs,
        #[arg(long, value_parser = parse_delta)]
        delta: f64,
        /// Decompose against a saved cover instead of `--cover`.
        #[arg(long)]
        cover_file: Option<PathBuf>,
    },
    Sweep {
        #[command(flatten)]
        ex: ExampleArgs,
        #[arg(long, default_value_t = 6)]
        l_min: u32,
        #[arg(long, default_value_t = 9)]
        l_max: u32,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit report destination; stderr when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RescaleCmd {
    Check {
        #[arg(long)]
        phase: PathBuf,
        #[arg(long)]
        cover: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum LatticeCmd {
    Count {
        #[arg(long)]
        phase: PathBuf,
        /// `sqrt2` or a number.
        #[arg(long, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long, value_parser = parse_delta)]
        delta: f64,
        /// Flat sets live at scale `delta^d`.
        #[arg(long, default_value_t = 3)]
        d: u32,
        #[arg(long = "A", default_value_t = 4.0)]
        a: f64,
        #[arg(long)]
        cover: Option<PathBuf>,
    },
    Pell {
        #[arg(long, default_value_t = 100_000)]
        bmax: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Recipe id; see `--list`.
    pub id: Option<String>,
    /// Recipes file replacing the built-in set.
    #[arg(long)]
    pub recipes: Option<PathBuf>,
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Accepts `2^-k`, `1/n` or a decimal.
pub fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = if let Some(e) = s.strip_prefix("2^") {
        let k: i32 = e.parse().map_err(|_| format!("bad exponent in {s:?}"))?;
        2f64.powi(k)
    } else if let Some(d) = s.strip_prefix("1/") {
        1.0 / d.parse::<f64>().map_err(|e| e.to_string())?
    } else {
        s.parse::<f64>().map_err(|e| e.to_string())?
    };
    if !(v > 0.0 && v <= 1.0) {
        return Err(format!("delta {v} outside (0, 1]"));
    }
    Ok(v)
}

pub fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "sqrt2" => Ok(std::f64::consts::SQRT_2),
        t => t.parse::<f64>().map_err(|e| e.to_string()),
    }
}

pub fn parse_box(s: &str) -> std::result::Result<Parallelogram, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != 6 {
        return Err("box needs six numbers".into());
    }
    Parallelogram::new([v[0], v[1]], [v[2], v[3]], [v[4], v[5]]).map_err(|e| e.to_string())
}

fn read_phase(p: &Path) -> Result<BivariatePoly> {
    let s = fs::read_to_string(p)?;
    BivariatePoly::from_json_str(&s).map_err(|e| Error::Input(format!("{}: {e}", p.display())))
}

fn read_cover(p: &Path) -> Result<FlatCover> {
    let s = fs::read_to_string(p)?;
    FlatCover::from_json(&s).map_err(|e| Error::Input(format!("{}: {e}", p.display())))
}

/// Serialises `value` with a top-level `schema_version`.
fn versioned<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(m) = &mut v {
        m.entry("schema_version").or_insert(SCHEMA_VERSION.into());
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                o.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn csv_text<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::NotNormalForm(_)
        | Error::Unsupported(_)
        | Error::Aliasing(_)
        | Error::Degenerate(_) => 1,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.jobs {
        // Fails only if the pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Cover(c) => cover_cmd(c),
        Command::Flat(FlatCmd::Defect { phase, r#box }) => {
            let phi = read_phase(&phase)?;
            emit(&versioned(&flat_defect(&phi, &r#box)?)?, None)?;
            Ok(0)
        }
        Command::Decouple(c) => decouple_cmd(c),
        Command::Rescale(RescaleCmd::Check {
            phase,
            cover,
            samples,
            seed,
        }) => {
            let phi = read_phase(&phase)?;
            let c = read_cover(&cover)?;
            let rep = recipes::rescale_check(&phi, &c, samples, seed)?;
            emit(&versioned(&rep)?, None)?;
            Ok(if rep.passed { 0 } else { 2 })
        }
        Command::Lattice(c) => lattice_cmd(c),
        Command::Reproduce(args) => reproduce_cmd(args),
    }
}

fn cover_cmd(c: CoverCmd) -> Result<i32> {
    match c {
        CoverCmd::Build {
            phase,
            delta,
            a,
            kind,
            eps,
            out,
        } => {
            let phi = read_phase(&phase)?;
            dyadic_exponent(delta)?;
            let cover = match kind {
                BuildKind::Canonical => canonical_caps(delta)?,
                BuildKind::HpAxis => hp_axis_family(delta)?,
                BuildKind::Hp => build_cover_hp(&phi, delta, a)?,
                BuildKind::General => build_cover_general(
                    &phi,
                    delta,
                    a,
                    GeneralOptions {
                        eps,
                        ..Default::default()
                    },
                )?,
            };
            let cover = FlatCover {
                phase_hash: phi.hash_id(),
                ..cover
            };
            emit(&cover.to_json()?, out.as_deref())?;
            Ok(0)
        }
        CoverCmd::Verify {
            phase,
            cover,
            grid,
            eps,
            out,
        } => {
            let phi = read_phase(&phase)?;
            let c = read_cover(&cover)?;
            let rep = verify_cover(&c, &phi, c.delta, c.a, eps, grid)?;
            emit(&versioned(&rep)?, out.as_deref())?;
            Ok(if rep.passed { 0 } else { 2 })
        }
    }
}

fn decouple_cmd(c: DecoupleCmd) -> Result<i32> {
    match c {
        DecoupleCmd::Ratio { ex, delta, cover_file } => {
            let f = ex.example.build(delta)?;
            let cover = match cover_file {
                Some(p) => read_cover(&p)?,
                None => ex.cover.build(&f.phase, delta, ex.a)?,
            };
            let r = decoupling_ratio(&f, &cover, ex.p, PhysBox::centered(1.0 / delta))?;
            emit(&versioned(&r)?, None)?;
            Ok(0)
        }
        DecoupleCmd::Sweep {
            ex,
            l_min,
            l_max,
            out,
            report,
        } => {
            if l_min > l_max || l_max > 30 {
                return Err(Error::Input(format!("levels {l_min}..{l_max}")));
            }
            let deltas: Vec<f64> = (l_min..=l_max).map(|l| 0.5f64.powi(l as i32)).collect();
            let (rows, rep) = recipes::sweep(ex.example, ex.cover, ex.p, &deltas, ex.a)?;
            emit(&csv_text(&rows)?, out.as_deref())?;
            let rep = versioned(&rep)?;
            match (report, out.is_some()) {
                (Some(p), _) => fs::write(p, rep)?,
                (None, true) => emit(&rep, None)?,
                (None, false) => eprintln!("{rep}"),
            }
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct PellRow {
    b: u64,
    a: i64,
    gap: f64,
    product: f64,
}

fn lattice_cmd(c: LatticeCmd) -> Result<i32> {
    match c {
        LatticeCmd::Count {
            phase,
            alpha,
            delta,
            d,
            a,
            cover,
        } => {
            let phi = read_phase(&phase)?;
            let lat = lattice::lambda_grid(delta, alpha)?;
            let c = match cover {
                Some(p) => read_cover(&p)?,
                None => lattice::lattice_cover(&phi, &lat, d, a)?,
            };
            let m = lattice::max_flat_multiplicity(&c, &lat, delta.powi(d as i32));
            emit(&versioned(&m)?, None)?;
            Ok(0)
        }
        LatticeCmd::Pell { bmax, eps, out } => {
            lattice::pell_gap(bmax, eps)?;
            let rows: Vec<PellRow> = lattice::best_approximations(bmax)
                .into_iter()
                .map(|(b, a, gap)| PellRow {
                    b,
                    a,
                    gap,
                    product: gap * (b as f64).powf(1.0 + eps),
                })
                .collect();
            emit(&csv_text(&rows)?, out.as_deref())?;
            Ok(0)
        }
    }
}

fn reproduce_cmd(args: ReproduceArgs) -> Result<i32> {
    let all = match &args.recipes {
        Some(p) => recipes::parse_recipes(&fs::read_to_string(p)?)?,
        None => recipes::builtin(),
    };
    if args.list {
        for r in &all {
            println!("{}\tcriterion {}", r.id, r.criterion);
        }
        return Ok(0);
    }
    let id = args
        .id
        .ok_or_else(|| Error::Input("missing recipe id (try --list)".into()))?;
    let recipe = recipes::find(&all, &id)?;
    let outcome = recipes::run(recipe)?;
    let bound = |b: Option<f64>, inf: &str| b.map_or_else(|| inf.to_string(), |v| format!("{v}"));
    for c in &outcome.checks {
        eprintln!(
            "{} {}: measured {:.6} (window [{}, {}])",
            if c.passed { "PASS" } else { "FAIL" },
            c.label,
            c.measured,
            bound(c.lo, "-inf"),
            bound(c.hi, "inf")
        );
    }
    emit(&versioned(&outcome)?, args.out.as_deref())?;
    Ok(if outcome.passed { 0 } else { 2 })
}
