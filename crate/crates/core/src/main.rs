use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};
use thiserror::Error;

use mss_forge::ck::{a_epsilon, fbp_pipeline, solve_point, CkError};
use mss_forge::experiments::{self as ex, CalibrationMap, ExperimentError};
use mss_forge::grid::{GridError, GridMap};
use mss_forge::hodograph::HodographError;
use mss_forge::minimize::MinimizeError;
use mss_forge::report::{Check, CheckReport, Status};
use mss_forge::scalar::{parse_rational, Field, Rational};
use mss_forge::slag::SlagConfig;

#[derive(Parser)]
#[command(
    name = "mss-forge",
    version,
    about = "Verification lab for the minimal surface system in codimension two"
)]
struct Cli {
    /// Write the JSON check report here (default: stdout).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Data output path (CSV); a whitespace-delimited .dat twin is written beside it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact coefficient identities of the point-singularity map.
    VerifyCoefficients {
        #[arg(long, default_value = "3/4")]
        epsilon: String,
        #[arg(long, default_value_t = 6)]
        degree: u32,
    },
    /// Solve the Cauchy problem; emits the jet as JSON and residual checks.
    CkSolve {
        #[arg(long, default_value = "3/4")]
        epsilon: String,
        #[arg(long, default_value_t = 6)]
        degree: u32,
        /// Solve the free-boundary pipeline with this δ instead of the point map.
        #[arg(long)]
        delta: Option<String>,
    },
    /// Positivity of the exterior continuation on the boundary of Ω0.
    Fbp {
        #[arg(long, default_value = "3/4")]
        epsilon: String,
        #[arg(long, default_value = "1/100")]
        delta: String,
        #[arg(long, default_value_t = 6)]
        degree: u32,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Randomized certification of the convexity inequality.
    Convexity {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Comass of the calibration form and exactness of its differential.
    Calibrate {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = MapArg::Point)]
        map: MapArg,
        #[arg(long, default_value = "3/4")]
        epsilon: String,
        #[arg(long, default_value = "1/100")]
        delta: String,
        #[arg(long, default_value_t = 6)]
        degree: u32,
    },
    /// Comparison chain against random competitors of the swapped point map.
    Stokes {
        #[arg(long, default_value_t = 33)]
        nodes: usize,
        #[arg(long, default_value_t = 20)]
        competitors: usize,
    },
    /// Discrete area minimization with optional monotone constraint.
    Minimize {
        #[arg(long)]
        constrained: bool,
        #[arg(long, default_value = "17x17x17", value_parser = parse_grid)]
        grid: [usize; 3],
        /// fbp, tilted-point, or a CSV written by this tool.
        #[arg(long, default_value = "tilted-point")]
        boundary: String,
        #[arg(long, default_value_t = 100)]
        variations: usize,
    },
    /// Criticality of the Lawson-Osserman cone.
    Cone {
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Radial profile minimizer for the Hopf boundary data.
    Hopf {
        #[arg(long = "R", default_value_t = 2.0)]
        r: f64,
        #[arg(long, default_value_t = 1e-3)]
        rho: f64,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Gradient graph of Φ and its first variation.
    Slag {
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long, default_value_t = 0.04)]
        eps: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Probes of the swapped map.
    Hodograph {
        #[arg(long, value_enum)]
        probe: Probe,
        #[arg(long, default_value = "3/4")]
        epsilon: String,
        #[arg(long, default_value_t = 6)]
        degree: u32,
        #[arg(long, default_value_t = 31)]
        points: usize,
    },
    /// Every experiment at its default configuration.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Point,
    Fbp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    Holder,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot parse rational {0:?} (expected p/q)")]
    Rational(String),
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("{0}")]
    Stencil(String),
    #[error("{0}")]
    Usage(String),
    #[error("failed to write {0}: {1}")]
    Write(PathBuf, std::io::Error),
    #[error(transparent)]
    Experiment(ExperimentError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Rational(_) => 3,
            CliError::MissingFile(_) => 4,
            CliError::Stencil(_) => 5,
            CliError::Write(..) | CliError::Experiment(_) => 6,
        }
    }
}

fn is_stencil(e: &ExperimentError) -> bool {
    matches!(
        e,
        ExperimentError::Grid(GridError::Stencil { .. })
            | ExperimentError::Minimize(MinimizeError::Grid(GridError::Stencil { .. }))
            | ExperimentError::Hodograph(HodographError::Grid(GridError::Stencil { .. }))
    )
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if is_stencil(&e) {
            CliError::Stencil(e.to_string())
        } else {
            CliError::Experiment(e)
        }
    }
}

macro_rules! from_via_experiment {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                ExperimentError::from(e).into()
            }
        }
    )*};
}
from_via_experiment!(CkError, MinimizeError, GridError, mss_forge::slag::SlagError);

type Result<T> = std::result::Result<T, CliError>;

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected N1xN2xN3, got {s:?}"));
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.trim().parse().map_err(|_| format!("bad grid size {p:?}"))?;
    }
    Ok(out)
}

fn rational(s: &str) -> Result<Rational> {
    parse_rational(s).ok_or_else(|| CliError::Rational(s.to_string()))
}

fn rational_json(q: &Rational) -> Json {
    json!({ "exact": q.to_string(), "decimal": q.to_f64() })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Write(path.to_path_buf(), e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Write(path.to_path_buf(), e))
}

/// Whitespace-delimited columns with a `#` header, for gnuplot.
fn write_dat(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "# {}", header.join(" "))?;
        for r in rows {
            let cols: Vec<String> = r.iter().map(|v| format!("{v:.15e}")).collect();
            writeln!(w, "{}", cols.join(" "))?;
        }
        Ok(())
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            let cols: Vec<String> = r.iter().map(|v| format!("{v:.15e}")).collect();
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    })
}

/// Table written as CSV at `out` and as .dat beside it.
fn write_table(out: &Path, header: &[&str], rows: Vec<Vec<f64>>) -> Result<()> {
    write_csv(out, header, rows.clone())?;
    write_dat(&out.with_extension("dat"), header, rows)
}

struct Run {
    checks: Vec<Check>,
    config: Json,
}

fn run(cli: &Cli) -> Result<Run> {
    let seed = cli.seed;
    let out = cli.out.as_deref();
    let run = match &cli.command {
        Command::VerifyCoefficients { epsilon, degree } => {
            let e = rational(epsilon)?;
            Run {
                checks: ex::coefficient_suite(&e, *degree)?,
                config: json!({ "command": "verify-coefficients", "epsilon": rational_json(&e), "degree": degree }),
            }
        }
        Command::CkSolve { epsilon, degree, delta } => {
            let e = rational(epsilon)?;
            let d = delta.as_deref().map(rational).transpose()?;
            let checks = ex::residual_suite(&e, d.as_ref().unwrap_or(&mss_forge::scalar::rat(1, 100)), *degree)?;
            if let Some(path) = out {
                let doc = match &d {
                    Some(d) => {
                        let p = fbp_pipeline(&e, d, *degree)?;
                        json!({ "v": p.v.to_json(), "forcing": p.forcing.to_json(), "potential": p.potential.to_json() })
                    }
                    None => json!({ "w": solve_point(&e, &a_epsilon(&e), *degree)?.to_json() }),
                };
                write_with(path, |w| {
                    writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("json"))
                })?;
            }
            Run {
                checks,
                config: json!({
                    "command": "ck-solve",
                    "epsilon": rational_json(&e),
                    "delta": d.as_ref().map(rational_json),
                    "degree": degree,
                }),
            }
        }
        Command::Fbp {
            epsilon,
            delta,
            degree,
            samples,
        } => {
            let e = rational(epsilon)?;
            let d = rational(delta)?;
            let o = ex::fbp_suite(&e, &d, *degree, *samples)?;
            if let Some(path) = out {
                let rows = o
                    .transitions
                    .off_gamma
                    .iter()
                    .chain(&o.transitions.gamma)
                    .map(|t| {
                        let margin = if t.on_gamma {
                            t.d1_nu_nu.unwrap_or(f64::NAN)
                        } else {
                            t.d1_nu
                        };
                        vec![t.point[0], t.point[1], t.point[2], margin, t.on_gamma as u8 as f64]
                    })
                    .collect();
                write_table(path, &["x1", "x2", "x3", "margin", "on_gamma"], rows)?;
            }
            Run {
                checks: o.checks,
                config: json!({
                    "command": "fbp",
                    "epsilon": rational_json(&e),
                    "delta": rational_json(&d),
                    "degree": degree,
                    "samples": samples,
                }),
            }
        }
        Command::Convexity { samples } => Run {
            checks: ex::convexity_suite(*samples, seed)?,
            config: json!({ "command": "convexity", "samples": samples }),
        },
        Command::Calibrate {
            samples,
            map,
            epsilon,
            delta,
            degree,
        } => {
            let e = rational(epsilon)?;
            let d = rational(delta)?;
            let m = match map {
                MapArg::Point => CalibrationMap::Point,
                MapArg::Fbp => CalibrationMap::Fbp,
            };
            Run {
                checks: ex::calibration_suite(m, &e, &d, *degree, *samples, seed)?.checks,
                config: json!({
                    "command": "calibrate",
                    "map": m,
                    "samples": samples,
                    "epsilon": rational_json(&e),
                    "delta": rational_json(&d),
                    "degree": degree,
                }),
            }
        }
        Command::Stokes { nodes, competitors } => {
            if *nodes < mss_forge::grid::MIN_NODES {
                return Err(CliError::Stencil(format!(
                    "{nodes} nodes per axis is below the stencil minimum"
                )));
            }
            let s = ex::stokes_chain(*nodes, *competitors, seed)?;
            if let Some(path) = out {
                let rows = s
                    .chains
                    .iter()
                    .map(|c| vec![c.area_excess(), c.omega_gap(), c.h_term(), c.bulk, c.stokes_defect])
                    .collect();
                write_table(
                    path,
                    &["area_excess", "omega_gap", "h_term", "bulk", "stokes_defect"],
                    rows,
                )?;
            }
            Run {
                checks: ex::stokes_checks(&s),
                config: json!({ "command": "stokes", "nodes": nodes, "competitors": competitors }),
            }
        }
        Command::Minimize {
            constrained,
            grid,
            boundary,
            variations,
        } => {
            let init = match boundary.as_str() {
                "tilted-point" | "fbp" => {
                    if grid[0] != grid[1] || grid[1] != grid[2] {
                        return Err(CliError::Usage(format!(
                            "generated boundary data need a cubic grid, got {grid:?}"
                        )));
                    }
                    if boundary == "fbp" {
                        ex::free_boundary_data(grid[0])?
                    } else {
                        ex::tilted_boundary(grid[0])?
                    }
                }
                file => {
                    let text = std::fs::read_to_string(file).map_err(|_| CliError::MissingFile(PathBuf::from(file)))?;
                    GridMap::read_csv(&text)?
                }
            };
            let o = ex::minimize_run(&init, *constrained, *variations, seed)?;
            if let Some(path) = out {
                let v = &o.result.map;
                let mut active = vec![false; v.len()];
                for s in &o.result.active_set {
                    for i in s.start..=s.end {
                        active[v.idx([i, s.line[0], s.line[1]])] = true;
                    }
                }
                write_with(path, |w| {
                    v.write_csv(&mut *w, &["active"], |i| vec![(active[i] as u8).to_string()])
                        .map_err(|e| std::io::Error::other(e))
                })?;
                let hist = o
                    .result
                    .energy_history
                    .iter()
                    .enumerate()
                    .map(|(i, e)| vec![i as f64, *e]);
                write_dat(&path.with_extension("energy.dat"), &["iteration", "energy"], hist)?;
            }
            Run {
                checks: o.checks,
                config: json!({
                    "command": "minimize",
                    "constrained": constrained,
                    "grid": grid,
                    "boundary": boundary,
                    "variations": variations,
                }),
            }
        }
        Command::Cone { points } => Run {
            checks: ex::lo_cone_suite(*points, seed)?,
            config: json!({ "command": "cone", "points": points }),
        },
        Command::Hopf { r, rho, nodes, samples } => {
            let o = ex::hopf_run(*r, *rho, *nodes, *samples, seed)?;
            if let Some(path) = out {
                let rows = o
                    .profile
                    .nodes
                    .iter()
                    .zip(&o.profile.values)
                    .map(|(r, f)| vec![*r, *f])
                    .collect();
                write_table(path, &["r", "f"], rows)?;
            }
            Run {
                checks: o.checks,
                config: json!({ "command": "hopf", "R": r, "rho": rho, "nodes": nodes, "samples": samples }),
            }
        }
        Command::Slag {
            lambda,
            eps,
            resolution,
        } => {
            let cfg = SlagConfig::new(*lambda, *eps, *resolution)?;
            Run {
                checks: ex::slag_suite(&cfg, seed)?,
                config: json!({ "command": "slag", "lambda": lambda, "eps": eps, "resolution": resolution }),
            }
        }
        Command::Hodograph {
            probe: Probe::Holder,
            epsilon,
            degree,
            points,
        } => {
            let e = rational(epsilon)?;
            let o = ex::holder_suite(&e, *degree, *points)?;
            if let Some(path) = out {
                let rows = o.probe.ts.iter().zip(&o.probe.u1).map(|(t, u)| vec![*t, *u]).collect();
                write_table(path, &["t", "u1"], rows)?;
            }
            Run {
                checks: o.checks,
                config: json!({
                    "command": "hodograph",
                    "probe": "holder",
                    "epsilon": rational_json(&e),
                    "degree": degree,
                    "points": points,
                }),
            }
        }
        Command::All => Run {
            checks: ex::all(seed)?,
            config: json!({ "command": "all" }),
        },
    };
    Ok(run)
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Info => "info",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut report = CheckReport::new(Some(cli.seed), Json::Null);
    let outcome = run(&cli).and_then(|r| {
        report.metadata.config = r.config;
        report.checks = r.checks;
        report.finish();
        for c in &report.checks {
            eprintln!(
                "{:4}  {}  {}",
                status_word(c.status),
                c.name,
                serde_json::to_string(&c.value).expect("json")
            );
        }
        match &cli.report {
            Some(path) => write_with(path, |w| writeln!(w, "{}", report.to_json())),
            None => {
                println!("{}", report.to_json());
                Ok(())
            }
        }
    });
    match outcome {
        Ok(()) if report.passed() => ExitCode::SUCCESS,
        Ok(()) => {
            eprintln!("{} check(s) failed", report.failures().len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
