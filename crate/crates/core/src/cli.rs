//! Command-line surface. Exit codes: 0 success, 1 user error (bad input,
//! configuration, failed validation or gradient check), 2 internal error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};

use crate::config::{hash_file, RunConfig, RunManifest, SolverOptions};
use crate::dynamics::gradient_check;
use crate::error::{FshapeError, Result};
use crate::io::{self, fmt_f64, StagedDir};
use crate::matching::{match_fshapes, shoot};
use crate::model::{validate_fshape, DiscreteFshape, Point};
use crate::shapes;
use crate::sphere::{integrate_sphere, sphere_velocity, SphereParams, SphereState};
use crate::varifold::{to_varifold, VarifoldFidelity};

#[derive(Debug, Parser)]
#[command(
    name = "fshapes",
    version,
    about = "Metamorphosis and registration of functional shapes"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, display_order = 100, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true, display_order = 101)]
    pub quiet: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, display_order = 102)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Adjoint Jacobian-transpose product (hamiltonian_fd, componentwise_fd).
    #[arg(long, default_value = "hamiltonian_fd")]
    pub adjoint: String,
    /// State reconstruction at interior backward stages (hermite, linear).
    #[arg(long, default_value = "hermite")]
    pub interpolation: String,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            adjoint: self.adjoint.clone(),
            stage_interpolation: self.interpolation.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeKind {
    Icosphere,
    Grid,
    Circle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SignalKind {
    Zero,
    X,
    Y,
    Z,
    Blob,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print every broken invariant of an fshape; exit 0 iff there is none.
    Validate { fshape: PathBuf },
    /// Print the varifold fidelity between two fshapes.
    Distance {
        src: PathBuf,
        tgt: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate the geodesic from given initial momenta and export it.
    Shoot {
        src: PathBuf,
        /// P lines of `px py pz`.
        #[arg(long)]
        p0: PathBuf,
        /// P lines with one value each.
        #[arg(long)]
        pf: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Register src onto tgt and export momenta, trajectory and manifest.
    Match {
        src: PathBuf,
        tgt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Integrate the sphere ODE and write `t,r,f,rho,pf,rdot` as CSV.
    SphereOracle {
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        #[arg(long, default_value_t = 0.0)]
        f0: f64,
        #[arg(long, allow_hyphen_values = true)]
        rho0: f64,
        #[arg(long, allow_hyphen_values = true)]
        pf: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long = "gammaV", default_value_t = 1.0)]
        gamma_v: f64,
        #[arg(long = "gammaF", default_value_t = 5.0)]
        gamma_f: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the adjoint gradient with central differences; exit 0 iff
    /// the max relative error is below 1e-4.
    Gradcheck {
        src: PathBuf,
        tgt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        directions: usize,
        /// Amplitude of the random momenta at which the gradient is checked.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Write a synthetic fshape.
    Generate {
        #[arg(value_enum)]
        kind: ShapeKind,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 10)]
        nx: usize,
        #[arg(long, default_value_t = 10)]
        ny: usize,
        #[arg(long, default_value_t = 32)]
        points: usize,
        #[arg(long, value_enum, default_value_t = SignalKind::Zero)]
        signal: SignalKind,
        /// Blob centre and width as `cx,cy,w`.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.5, 0.15])]
        blob: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(&cli);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        LevelFilter::Error
    } else {
        match cli.verbose {
            0 => LevelFilter::Warn,
            1 => LevelFilter::Info,
            _ => LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn load_valid(path: &Path) -> Result<DiscreteFshape> {
    let fs = io::read_fshape(path)?;
    if let Some(v) = validate_fshape(&fs).first() {
        return Err(FshapeError::InvalidShape(format!("{}: {v}", path.display())));
    }
    Ok(fs)
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    match &cli.command {
        Command::Validate { fshape } => {
            let fs = io::read_fshape(fshape)?;
            let violations = validate_fshape(&fs);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                say(format!(
                    "{}: valid (d={}, n={}, {} vertices, {} cells)",
                    fshape.display(),
                    fs.dim_d(),
                    fs.dim_n(),
                    fs.num_vertices(),
                    fs.num_cells()
                ));
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Distance { src, tgt, config } => {
            let cfg = RunConfig::load(config)?;
            let (a, b) = (load_valid(src)?, load_valid(tgt)?);
            let fid = VarifoldFidelity::new(to_varifold(&b)?, cfg.fidelity_kernels()?);
            let value = fid.value(&a, a.vertices(), a.signals())?.max(0.0);
            println!("{}", fmt_f64(value));
            Ok(ExitCode::SUCCESS)
        }
        Command::Shoot {
            src,
            p0,
            pf,
            config,
            out,
            solver,
        } => {
            let run_cfg = RunConfig::load(config)?;
            let options = solver.options();
            let cfg = run_cfg.match_config(&options)?;
            let fs = load_valid(src)?;
            let (p0v, pfv) = (io::read_points(p0)?, io::read_reals(pf)?);
            let mut manifest = RunManifest::new("shoot", Some(run_cfg), options);
            for p in [src, p0, pf, config] {
                manifest.inputs.push(hash_file(p)?);
            }
            let traj = manifest.time("shoot", || shoot(&fs, &p0v, &pfv, &cfg.dynamics))?;
            let staged = StagedDir::new(out)?;
            manifest.time("export", || {
                io::write_trajectory(&staged.path().join("trajectory"), &traj, &fs, &cfg.dynamics)?;
                let end = traj.last();
                io::write_fshape(
                    &staged.path().join("final.fsh"),
                    &fs.with_data(end.x.clone(), end.f.clone())?,
                )
            })?;
            std::fs::write(staged.path().join("manifest.json"), manifest.to_json()?)?;
            let dir = staged.commit()?;
            say(format!("wrote {} samples to {}", traj.states.len(), dir.display()));
            Ok(ExitCode::SUCCESS)
        }
        Command::Match {
            src,
            tgt,
            config,
            out,
            solver,
        } => {
            let run_cfg = RunConfig::load(config)?;
            let options = solver.options();
            let cfg = run_cfg.match_config(&options)?;
            let (a, b) = (load_valid(src)?, load_valid(tgt)?);
            let mut manifest = RunManifest::new("match", Some(run_cfg), options);
            for p in [src, tgt, config] {
                manifest.inputs.push(hash_file(p)?);
            }
            let res = manifest.time("match", || match_fshapes(&a, &b, &cfg))?;
            let target_norm2 = cfg.base_problem(&a, &b)?.fidelity.target_norm2();
            let staged = StagedDir::new(out)?;
            let dir = staged.path();
            manifest.time("export", || {
                io::write_points(&dir.join("p0.txt"), &res.p0)?;
                io::write_reals(&dir.join("pf.txt"), &res.pf)?;
                let mut csv = String::from("stage,iteration,objective,energy,fidelity,step\n");
                for h in &res.history {
                    writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        h.stage,
                        h.iteration,
                        fmt_f64(h.objective),
                        fmt_f64(h.energy),
                        fmt_f64(h.fidelity),
                        fmt_f64(h.step)
                    )
                    .unwrap();
                }
                std::fs::write(dir.join("history.csv"), csv)?;
                io::write_trajectory(&dir.join("trajectory"), &res.trajectory, &a, &cfg.dynamics)?;
                let end = res.trajectory.last();
                io::write_fshape(&dir.join("final.fsh"), &a.with_data(end.x.clone(), end.f.clone())?)
            })?;
            manifest.objective_history = res.history.clone();
            manifest.summary = serde_json::json!({
                "converged": res.converged,
                "reason": res.reason.as_str(),
                "initial": {"objective": res.initial_value.total, "fidelity": res.initial_value.fidelity},
                "final": {"objective": res.final_value.total, "energy": res.final_value.energy, "fidelity": res.final_value.fidelity},
                "target_norm2": target_norm2,
            });
            std::fs::write(dir.join("manifest.json"), manifest.to_json()?)?;
            let dir = staged.commit()?;
            info!("outputs in {}", dir.display());
            say(format!(
                "{} ({}): J {} -> {}, final fidelity {} ({} of <target,target>)",
                if res.converged { "converged" } else { "stopped" },
                res.reason.as_str(),
                fmt_f64(res.initial_value.total),
                fmt_f64(res.final_value.total),
                fmt_f64(res.final_value.fidelity),
                fmt_f64(res.final_value.fidelity.max(0.0) / target_norm2)
            ));
            Ok(ExitCode::SUCCESS)
        }
        Command::SphereOracle {
            r0,
            f0,
            rho0,
            pf,
            sigma,
            gamma_v,
            gamma_f,
            steps,
            out,
        } => {
            let params = SphereParams {
                gamma_v: *gamma_v,
                gamma_f: *gamma_f,
                sigma: *sigma,
            };
            let s0 = SphereState {
                r: *r0,
                f: *f0,
                rho: *rho0,
                pf: *pf,
            };
            let path = integrate_sphere(s0, params, *steps)?;
            let mut csv = String::from("t,r,f,rho,pf,rdot\n");
            for (k, s) in path.iter().enumerate() {
                let t = k as f64 / *steps as f64;
                let (rdot, _, _) = sphere_velocity(s, &params);
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    fmt_f64(t),
                    fmt_f64(s.r),
                    fmt_f64(s.f),
                    fmt_f64(s.rho),
                    fmt_f64(s.pf),
                    fmt_f64(rdot)
                )
                .unwrap();
            }
            io::write_atomic(out, csv.as_bytes())?;
            say(format!("wrote {} samples to {}", path.len(), out.display()));
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            src,
            tgt,
            config,
            directions,
            amplitude,
            step,
            seed,
            solver,
        } => {
            use rand::{Rng, SeedableRng};
            let cfg = RunConfig::load(config)?.match_config(&solver.options())?;
            let (a, b) = (load_valid(src)?, load_valid(tgt)?);
            let problem = cfg.base_problem(&a, &b)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let amp = *amplitude;
            let planar = a.dim_n() == 2;
            let mut sample = || if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            let p0: Vec<Point> = (0..a.num_vertices())
                .map(|_| {
                    let (x, y, z) = (sample(), sample(), sample());
                    Point::new(x, y, if planar { 0.0 } else { z })
                })
                .collect();
            let pf: Vec<f64> = (0..a.num_vertices()).map(|_| sample()).collect();
            let report = gradient_check(&problem, &p0, &pf, *directions, *step, seed.wrapping_add(1))?;
            if !cli.quiet {
                for (k, (an, fd)) in report.directional.iter().enumerate() {
                    println!(
                        "direction {k:>3}: adjoint {} finite difference {}",
                        fmt_f64(*an),
                        fmt_f64(*fd)
                    );
                }
            }
            println!("max relative error {:.3e}", report.max_relative_error);
            Ok(if report.max_relative_error < GRADCHECK_TOLERANCE {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Generate {
            kind,
            level,
            radius,
            nx,
            ny,
            points,
            signal,
            blob,
            out,
        } => {
            let &[cx, cy, w] = blob.as_slice() else {
                return Err(FshapeError::Config(format!(
                    "--blob takes cx,cy,w; got {} values",
                    blob.len()
                )));
            };
            let sig = |p: &Point| match signal {
                SignalKind::Zero => 0.0,
                SignalKind::X => p.x,
                SignalKind::Y => p.y,
                SignalKind::Z => p.z,
                SignalKind::Blob => (-((p.x - cx).powi(2) + (p.y - cy).powi(2)) / (2.0 * w * w)).exp(),
            };
            let fs = match kind {
                ShapeKind::Icosphere => shapes::icosphere(*level, *radius, sig)?,
                ShapeKind::Grid => {
                    if *nx < 2 || *ny < 2 {
                        return Err(FshapeError::Config("grid needs nx, ny >= 2".into()));
                    }
                    shapes::grid(*nx, *ny, *radius, *radius, sig)?
                }
                ShapeKind::Circle => {
                    if *points < 3 {
                        return Err(FshapeError::Config("circle needs at least 3 points".into()));
                    }
                    shapes::circle(*points, *radius, sig)?
                }
            };
            io::write_fshape(out, &fs)?;
            say(format!(
                "wrote {} vertices, {} cells to {}",
                fs.num_vertices(),
                fs.num_cells(),
                out.display()
            ));
            Ok(ExitCode::SUCCESS)
        }
    }
}
