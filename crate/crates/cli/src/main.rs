use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ver_core::dynamics::{
    add_observation_noise, default_pde_run, initial_field, integrate_ode, render_pixel_video, simulate_pde,
    FrameSequence, SystemKind, SystemSpec, Trajectory, WorldMap,
};
use ver_core::pipeline::{
    discover_trajectory, evaluate_equation, make_advisor, run_pipeline, EvalReport, LocatorChoice, RunConfig,
};
use ver_core::pixel_detect::{detect_sequence, AdvisorLocator, DetectOptions, Locator, OracleLocator};
use ver_core::sindy::Equation;
use ver_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ver", version, about = "Find state variables and governing equations in videos of dynamical systems")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a system and write its trajectory and frames.
    Simulate(Common),
    /// Locate the object in rendered frames and write the coordinate trajectory.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Frame tensor file to read instead of simulating.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Frame interval of `--input`.
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
    },
    /// Discover an equation from a coordinate trajectory.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV (`t,z1,...`); defaults to the simulated ground truth.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score an equation file against a system's ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Equation JSON as written by `discover`.
        #[arg(long)]
        equation: PathBuf,
    },
    /// Run the full pipeline and write a report.
    Pipeline(Common),
    /// Run the pipeline over a list of noise levels (default 0,0.1,0.2,0.3).
    Sweep(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// System name (Linear, Cubic, Circular, VDP, Glider, Exp, LO, Bruss, Water).
    #[arg(long)]
    system: Option<String>,
    /// pixel, latent or auto.
    #[arg(long)]
    mode: Option<String>,
    /// Seeds: `3`, `0,1,2` or `0..10`.
    #[arg(long)]
    seed: Option<String>,
    /// Noise levels, comma separated.
    #[arg(long)]
    noise: Option<String>,
    /// auto, live, replay:<file> or record:<file>.
    #[arg(long)]
    advisor: Option<String>,
    /// oracle:<sigma_px> or advisor.
    #[arg(long)]
    locator: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra config entries, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.system) {
            (Some(path), _) => RunConfig::from_kv(&std::fs::read_to_string(path)?)?,
            (None, Some(name)) => RunConfig::new(name.parse()?),
            (None, None) => return Err(Error::Config("give --system or --config".into())),
        };
        if let (Some(_), Some(name)) = (&self.config, &self.system) {
            cfg.set("system", name)?;
            if self.mode.is_none() {
                cfg.set("mode", "auto")?;
            }
        }
        let flags = [
            ("mode", &self.mode),
            ("seeds", &self.seed),
            ("noise", &self.noise),
            ("advisor", &self.advisor),
            ("locator", &self.locator),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        for entry in &self.set {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {entry}`: expected key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<Option<&Path>> {
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    traj.write_csv(BufWriter::new(File::create(path)?))
}

fn write_frames(frames: &FrameSequence, path: &Path) -> Result<()> {
    frames.write_vert(BufWriter::new(File::create(path)?))
}

fn ground_truth(spec: &SystemSpec, cfg: &RunConfig) -> Result<Trajectory> {
    let setup = spec
        .pixel_setup()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not an ODE system", spec.name)))?;
    integrate_ode(spec, &setup.z0, setup.dt, cfg.pixel.frames.unwrap_or(setup.frames))
}

fn pixel_video(spec: &SystemSpec, cfg: &RunConfig, truth: &Trajectory) -> Result<FrameSequence> {
    let bounds = spec.pixel_setup().expect("checked by ground_truth").bounds;
    let res = cfg.pixel.resolution;
    render_pixel_video(truth, (res, res), cfg.pixel.radius, bounds)
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.seeds.first().copied().unwrap_or(0)
}

fn first_noise(cfg: &RunConfig) -> f64 {
    cfg.noise.first().copied().unwrap_or(0.0)
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let spec = SystemSpec::new(cfg.system);
    let dir = out_dir(cfg)?;
    match spec.kind {
        SystemKind::Ode => {
            let truth = ground_truth(&spec, cfg)?;
            let video = pixel_video(&spec, cfg, &truth)?;
            println!("{}: {} states, dt {}", spec.name, truth.len(), truth.dt);
            if let Some(dir) = dir {
                write_trajectory(&truth, &dir.join("truth.csv"))?;
                write_frames(&video, &dir.join("frames.vert"))?;
            }
        }
        SystemKind::Pde => {
            let mut run = default_pde_run(spec.name)?;
            run.frames = cfg.latent.frames;
            let initial = initial_field(&spec, run.grid, first_seed(cfg))?;
            let video = simulate_pde(&spec, &run, &initial)?;
            println!("{}: {} frames of {}x{}, dt {}", spec.name, video.len(), run.grid.size, run.grid.size, video.dt());
            if let Some(dir) = dir {
                write_frames(&video, &dir.join("frames.vert"))?;
            }
        }
    }
    Ok(())
}

fn detect(cfg: &RunConfig, input: Option<&Path>, dt: f64) -> Result<()> {
    let seed = first_seed(cfg);
    let frames = match input {
        Some(path) => {
            let mut frames = FrameSequence::read_vert(BufReader::new(File::open(path)?), dt)?;
            // the file holds pixels only; the system's view box maps them back
            let bounds = SystemSpec::new(cfg.system)
                .pixel_setup()
                .ok_or_else(|| Error::InvalidArgument(format!("{} is not an ODE system", cfg.system)))?
                .bounds;
            frames.meta.world = Some(WorldMap::new(bounds, frames.width, frames.height));
            frames
        }
        None => {
            let spec = SystemSpec::new(cfg.system);
            pixel_video(&spec, cfg, &ground_truth(&spec, cfg)?)?
        }
    };
    let frames = add_observation_noise(&frames, first_noise(cfg), seed)?;
    let advisor = make_advisor(&cfg.advisor)?;
    let mut locator: Box<dyn Locator> = match (cfg.locator, advisor) {
        (LocatorChoice::Oracle { sigma_px }, _) => Box::new(OracleLocator::new(sigma_px, seed)),
        (LocatorChoice::Advisor, Some(a)) => Box::new(AdvisorLocator::new(a)),
        (LocatorChoice::Advisor, None) => {
            return Err(Error::Config("the advisor locator needs --advisor live, replay or record".into()))
        }
    };
    let detection = detect_sequence(&frames, locator.as_mut(), &DetectOptions::default())?;
    let traj = detection.to_trajectory()?;
    println!("detected {} of {} frames", traj.len(), frames.len());
    if let Some(dir) = out_dir(cfg)? {
        write_trajectory(&traj, &dir.join("detected.csv"))?;
        std::fs::write(dir.join("detection.jsonl"), detection.transcript_jsonl())?;
    }
    Ok(())
}

fn discover(cfg: &RunConfig, input: Option<&Path>) -> Result<()> {
    let raw = match input {
        Some(path) => Trajectory::read_csv(BufReader::new(File::open(path)?))?,
        None => ground_truth(&SystemSpec::new(cfg.system), cfg)?,
    };
    let advisor = make_advisor(&cfg.advisor)?;
    let found = discover_trajectory(&raw, cfg, first_seed(cfg), advisor)?;
    let eq = &found.discovery.equation;
    print!("{eq}");
    if let Some(m) = eq.metrics {
        println!("r2 {:.4}, length {}, fitness {:.4}", m.r2, m.length, m.fitness);
    }
    if let Some(dir) = out_dir(cfg)? {
        std::fs::write(dir.join("equation.json"), serde_json::to_string_pretty(eq)?)?;
        std::fs::write(dir.join("discovery.jsonl"), found.discovery.transcript_jsonl())?;
        write_trajectory(&found.smoothed, &dir.join("smoothed.csv"))?;
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig, equation: &Path) -> Result<()> {
    let eq: Equation = serde_json::from_str(&std::fs::read_to_string(equation)?)?;
    let spec = SystemSpec::new(cfg.system);
    let setup = spec
        .pixel_setup()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no ground-truth equation", spec.name)))?;
    let score = evaluate_equation(&eq, &spec, &setup.z0, setup.dt)?;
    println!("{}", serde_json::to_string_pretty(&score)?);
    Ok(())
}

fn report(cfg: &RunConfig) -> Result<EvalReport> {
    let report = run_pipeline(cfg)?;
    print!("{}", report.summary());
    Ok(report)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(c) => simulate(&c.config()?)?,
        Command::Detect { common, input, dt } => detect(&common.config()?, input.as_deref(), dt)?,
        Command::Discover { common, input } => discover(&common.config()?, input.as_deref())?,
        Command::Evaluate { common, equation } => evaluate(&common.config()?, &equation)?,
        Command::Pipeline(c) => return Ok(ExitCode::from(report(&c.config()?)?.exit_code() as u8)),
        Command::Sweep(mut c) => {
            if c.noise.is_none() {
                c.noise = Some("0,0.1,0.2,0.3".into());
            }
            return Ok(ExitCode::from(report(&c.config()?)?.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
