use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pulsefront_cli::config::{BarrierChoice, ExperimentConfig, InitialDatum, Task};
use pulsefront_cli::output::{output_root, write_artifacts};
use pulsefront_cli::{run, CliError, SpeedChoice};
use pulsefront_core::ModelConfig;

#[derive(Parser)]
#[command(name = "pulsefront", version, about = "Spreading speeds and pulsating fronts of periodic cooperative systems")]
struct Cli {
    /// Output root; falls back to the config's `output`, then PULSEFRONT_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Principal eigenvalue k(lambda, e) of the weighted operator.
    Eigen {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
    },
    /// k(lambda, e) sampled on a uniform lambda grid.
    Dispersion {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda_min: f64,
        #[arg(long, default_value_t = 3.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 31)]
        samples: usize,
    },
    /// Minimal wave speed c*(e).
    Speed {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
    },
    /// Pulsating travelling wave along an integer direction.
    Wave {
        #[command(flatten)]
        model: ModelArgs,
        /// Integer direction p1,...,pN.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
        /// A number or `critical`.
        #[arg(long, default_value = "critical")]
        speed: String,
        #[arg(long, allow_negative_numbers = true)]
        a: Option<f64>,
        #[arg(long)]
        rmax: Option<f64>,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Cauchy problem from a bump or from eta_hat.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lo: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        hi: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.1)]
        h: f64,
        /// Periodic torus of this many cells per axis instead of a box.
        #[arg(long, value_delimiter = ',')]
        cells: Option<Vec<usize>>,
        #[arg(long, default_value_t = 30.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Start from eta_hat everywhere instead of a bump.
        #[arg(long)]
        constant: bool,
        #[arg(long, default_value_t = 1.0)]
        height: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        component: usize,
        #[arg(long, default_value_t = 500)]
        snapshot_every: usize,
        #[arg(long, default_value_t = 0.1)]
        theta: f64,
    },
    /// Every applicable claim for one model, with PASS/FAIL lines.
    VerifyAll {
        #[command(flatten)]
        model: ModelArgs,
        /// Integer direction for the wave claims.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
    },
    /// Barrier construction and verification.
    Barrier {
        #[command(subcommand)]
        action: BarrierAction,
    },
    /// Runs a TOML experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum BarrierAction {
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// super_h, sub_omega, sub_omega_star or super_h_star.
        #[arg(long, default_value = "super_h")]
        kind: String,
        #[arg(long, default_value = "critical")]
        speed: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Builtin model name.
    #[arg(long, default_value = "scalar_kpp")]
    model: String,
    /// TOML file holding a model table; overrides --model.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Growth rate of scalar_kpp.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Extra builtin parameter, `key=value` with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Unit-cell nodes per axis.
    #[arg(long, default_value_t = 16)]
    points: usize,
}

impl ModelArgs {
    fn model(&self) -> Result<ModelConfig, CliError> {
        if let Some(path) = &self.model_file {
            let text = std::fs::read_to_string(path)?;
            return Ok(ModelConfig::parse_str(&text)?);
        }
        let mut t = toml::Table::new();
        t.insert("builtin".into(), self.model.clone().into());
        if let Some(r) = self.r {
            t.insert("r".into(), r.into());
        }
        if let Some(d) = self.dim {
            t.insert("dim".into(), (d as i64).into());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::config("set", format!("expected key=value, got `{kv}`")))?;
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| v.to_string().into());
            t.insert(k.trim().to_string(), value);
        }
        Ok(ModelConfig::from_toml(&toml::Value::Table(t), "model")?)
    }

    fn config(&self, task: Task) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::new(task, self.model()?);
        cfg.numerics.points = self.points;
        Ok(cfg)
    }
}

fn barrier_kind(s: &str) -> Result<BarrierChoice, CliError> {
    Ok(match s {
        "super_h" => BarrierChoice::SuperH,
        "sub_omega" => BarrierChoice::SubOmega,
        "sub_omega_star" => BarrierChoice::SubOmegaStar,
        "super_h_star" => BarrierChoice::SuperHStar,
        other => return Err(CliError::config("barrier.kind", format!("unknown kind `{other}`"))),
    })
}

fn build(cmd: Command) -> Result<ExperimentConfig, CliError> {
    Ok(match cmd {
        Command::Eigen {
            model,
            lambda,
            direction,
        } => {
            let mut cfg = model.config(Task::Eigen)?;
            cfg.eigen.lambda = lambda;
            cfg.eigen.direction = direction;
            cfg
        }
        Command::Dispersion {
            model,
            direction,
            lambda_min,
            lambda_max,
            samples,
        } => {
            let mut cfg = model.config(Task::Dispersion)?;
            cfg.dispersion.direction = direction;
            cfg.dispersion.lambda_min = lambda_min;
            cfg.dispersion.lambda_max = lambda_max;
            cfg.dispersion.samples = samples;
            cfg
        }
        Command::Speed { model, direction } => {
            let mut cfg = model.config(Task::Speed)?;
            cfg.speed.direction = direction;
            cfg
        }
        Command::Wave {
            model,
            direction,
            speed,
            a,
            rmax,
            tol,
            max_iter,
        } => {
            let mut cfg = model.config(Task::Wave)?;
            cfg.wave.direction = direction;
            cfg.wave.speed = SpeedChoice::parse(&speed).map_err(|_| CliError::config("wave.speed", "expected a number or `critical`"))?;
            cfg.wave.a = a;
            cfg.wave.r_max = rmax;
            cfg.wave.tol = tol;
            cfg.wave.max_iter = max_iter;
            cfg
        }
        Command::Simulate {
            model,
            lo,
            hi,
            h,
            cells,
            horizon,
            dt,
            constant,
            height,
            radius,
            component,
            snapshot_every,
            theta,
        } => {
            let mut cfg = model.config(Task::Simulate)?;
            let s = &mut cfg.simulate;
            s.lo = lo;
            s.hi = hi;
            s.h = h;
            s.cells = cells;
            s.horizon = horizon;
            s.dt = dt;
            s.initial = if constant {
                InitialDatum::Constant
            } else {
                InitialDatum::Bump
            };
            s.height = height;
            s.radius = radius;
            s.component = component;
            s.snapshot_every = snapshot_every;
            s.theta = theta;
            cfg
        }
        Command::VerifyAll { model, direction } => {
            let mut cfg = model.config(Task::VerifyAll)?;
            cfg.wave.direction = direction;
            cfg
        }
        Command::Barrier {
            action:
                BarrierAction::Verify {
                    model,
                    kind,
                    speed,
                    direction,
                },
        } => {
            let mut cfg = model.config(Task::Barrier)?;
            cfg.barrier.kind = barrier_kind(&kind)?;
            cfg.barrier.speed = SpeedChoice::parse(&speed).map_err(|_| CliError::config("barrier.speed", "expected a number or `critical`"))?;
            cfg.barrier.direction = direction;
            cfg
        }
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::config("config", format!("{}: {e}", config.display())))?;
            ExperimentConfig::parse(&text)?
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli.command).and_then(|cfg| {
        let outcome = run(&cfg)?;
        for line in &outcome.lines {
            println!("{line}");
        }
        if let Some(dir) = output_root(cli.out.as_deref(), &cfg) {
            write_artifacts(&dir, &cfg, &outcome)?;
        }
        Ok(outcome.passed)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
