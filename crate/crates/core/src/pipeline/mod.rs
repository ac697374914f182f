//! End-to-end runs: simulate, extract coordinates, discover, score against
//! ground truth and write reports.

mod config;
mod eval;
mod plots;
mod report;

pub use config::{AdvisorMode, LatentOptions, LocatorChoice, Mode, PixelOptions, RunConfig};
pub use eval::{evaluate_at, evaluate_equation, EquationScore, HORIZONS};
pub use plots::{emit_plots, RunArtifacts};
pub use report::{aggregate, Aggregate, EvalEntry, EvalReport, StageFailure, Stat, SCHEMA_VERSION};

use std::borrow::Cow;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::dynamics::{
    add_observation_noise, default_pde_run, initial_field, integrate_ode, render_pixel_video, simulate_pde,
    FrameSequence, SystemSpec, Trajectory,
};
use crate::error::{Error, Result};
use crate::latent::{
    dimension_search, frame_derivatives, frame_shape, frames_to_matrix, train_autoencoder, AdvisorDimensionAdvisor,
    AeSindyHyper, DimensionAdvisor, ElbowAdvisor, LatentAssessor, TrainHyper,
};
use crate::llm::{Advisor, ChatClient, HttpBackend};
use crate::pixel_detect::{
    detect_sequence, smooth_with_feedback, AdvisorJudge, AdvisorLocator, DetectOptions, DeterministicJudge, Locator,
    OracleLocator, SmoothingAdvisor,
};
use crate::reason::{
    run_discovery, AdvisorProposer, AdvisorSelector, Assessor, DefaultSelector, Discovery, DiscoveryConfig,
    MutationProposer, PixelAssessor, Proposer, Selector,
};
use crate::sindy::{predict_trajectory, DerivMethod};
use crate::smoothing::FilterParams;

/// Report plus the plot inputs and text artifacts of every run.
pub struct PipelineOutput {
    pub report: EvalReport,
    pub artifacts: Vec<RunArtifacts>,
    /// `(file name, contents)` written next to the report.
    pub files: Vec<(String, String)>,
}

/// Builds the chat advisor named by the config; `None` for the
/// deterministic stack.
pub fn make_advisor(mode: &AdvisorMode) -> Result<Option<Arc<Advisor>>> {
    let client = match mode {
        AdvisorMode::Auto => return Ok(None),
        AdvisorMode::Live => ChatClient::live(Box::new(HttpBackend::from_env()?)),
        AdvisorMode::Replay(path) => ChatClient::replay_file(path)?,
        AdvisorMode::Record(path) => ChatClient::record(Box::new(HttpBackend::from_env()?), Some(path))?,
    };
    Ok(Some(Arc::new(Advisor::new(client))))
}

/// Validates the config, runs every (noise, seed) pair and writes the
/// outputs when `config.out` is set.
pub fn run_pipeline(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let advisor = make_advisor(&config.advisor)?;
    Ok(run_pipeline_with(config, advisor)?.report)
}

struct StageError {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

struct RunOutcome {
    entry: EvalEntry,
    artifacts: RunArtifacts,
    files: Vec<(String, String)>,
}

fn label(seed: u64, noise: f64) -> String {
    format!("seed{seed}_noise{noise}")
}

/// Like [`run_pipeline`] with an explicit advisor (which overrides the
/// config's advisor mode). A replay mismatch aborts the whole run; every
/// other error becomes a stage-failure record.
pub fn run_pipeline_with(config: &RunConfig, advisor: Option<Arc<Advisor>>) -> Result<PipelineOutput> {
    config.validate()?;
    if config.locator == LocatorChoice::Advisor && advisor.is_none() {
        return Err(Error::Config("the advisor locator needs an advisor".into()));
    }
    let started = Instant::now();
    let spec = SystemSpec::new(config.system);
    let mut outcomes: Vec<std::result::Result<RunOutcome, (u64, f64, StageError)>> = Vec::new();
    match config.mode {
        Mode::Pixel => {
            let shared = prepare_pixel(&spec, config);
            for &noise in &config.noise {
                for &seed in &config.seeds {
                    let r = match &shared {
                        Ok((truth, video)) => pixel_run(&spec, config, truth, video, seed, noise, advisor.clone()),
                        Err(e) => Err(StageError {
                            stage: "simulate",
                            error: Error::InvalidArgument(e.to_string()),
                        }),
                    };
                    outcomes.push(r.map_err(|e| (seed, noise, e)));
                }
            }
        }
        Mode::Latent => {
            for &seed in &config.seeds {
                let video = prepare_latent(&spec, config, seed);
                for &noise in &config.noise {
                    let r = match &video {
                        Ok(v) => latent_run(config, v, seed, noise, advisor.clone()),
                        Err(e) => Err(StageError {
                            stage: "simulate",
                            error: Error::InvalidArgument(e.to_string()),
                        }),
                    };
                    outcomes.push(r.map_err(|e| (seed, noise, e)));
                }
            }
        }
    }
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut artifacts = Vec::new();
    let mut files = Vec::new();
    for o in outcomes {
        match o {
            Ok(run) => {
                entries.push(run.entry);
                artifacts.push(run.artifacts);
                files.extend(run.files);
            }
            Err((seed, noise, StageError { stage, error })) => {
                if let Error::ReplayMismatch { .. } = error {
                    return Err(error);
                }
                log::error!("seed {seed}, noise {noise}: {stage} failed: {error}");
                failures.push(StageFailure {
                    seed,
                    noise,
                    stage: stage.to_string(),
                    error: error.to_string(),
                });
            }
        }
    }
    entries.sort_by(|a, b| a.noise.total_cmp(&b.noise).then(a.seed.cmp(&b.seed)));
    let report = EvalReport::new(config.clone(), entries, failures, started.elapsed().as_secs_f64());
    let out = PipelineOutput {
        report,
        artifacts,
        files,
    };
    if let Some(dir) = &config.out {
        write_outputs(dir, &out)?;
    }
    Ok(out)
}

pub fn write_outputs(dir: &Path, out: &PipelineOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report.to_json()?)?;
    std::fs::write(dir.join("summary.txt"), out.report.summary())?;
    std::fs::write(dir.join("config.txt"), out.report.config.to_kv())?;
    for (name, text) in &out.files {
        std::fs::write(dir.join(name), text)?;
    }
    emit_plots(&out.artifacts, dir);
    Ok(())
}

fn csv(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn prepare_pixel(spec: &SystemSpec, config: &RunConfig) -> Result<(Trajectory, FrameSequence)> {
    let setup = spec
        .pixel_setup()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no pixel rendering", spec.name)))?;
    let frames = config.pixel.frames.unwrap_or(setup.frames);
    let truth = integrate_ode(spec, &setup.z0, setup.dt, frames)?;
    let res = config.pixel.resolution;
    let video = render_pixel_video(&truth, (res, res), config.pixel.radius, setup.bounds)?;
    Ok((truth, video))
}

fn prepare_latent(spec: &SystemSpec, config: &RunConfig, seed: u64) -> Result<FrameSequence> {
    let mut run = default_pde_run(spec.name)?;
    run.frames = config.latent.frames;
    let initial = initial_field(spec, run.grid, seed)?;
    simulate_pde(spec, &run, &initial)
}

fn discovery_parts(
    config: &RunConfig,
    seed: u64,
    advisor: &Option<Arc<Advisor>>,
) -> (DiscoveryConfig, Box<dyn Proposer>, Box<dyn Selector>) {
    let dcfg = DiscoveryConfig {
        seed,
        ..config.discovery
    };
    match advisor {
        None => (dcfg, Box::new(MutationProposer::new(seed)), Box::new(DefaultSelector)),
        Some(a) => {
            let mut p = AdvisorProposer::new(a.clone());
            if dcfg.adaptive_eta {
                p = p.with_eta();
            }
            (dcfg, Box::new(p), Box::new(AdvisorSelector::new(a.clone())))
        }
    }
}

fn discover(
    assessor: &mut dyn Assessor,
    config: &RunConfig,
    seed: u64,
    advisor: &Option<Arc<Advisor>>,
) -> std::result::Result<Discovery, StageError> {
    let (dcfg, mut proposer, mut selector) = discovery_parts(config, seed, advisor);
    run_discovery(assessor, proposer.as_mut(), selector.as_mut(), &dcfg).at("discover")
}

/// Smoothing and discovery results for one coordinate trajectory.
pub struct TrajectoryDiscovery {
    pub smoothed: Trajectory,
    pub filter: FilterParams,
    /// One JSON value per smoothing round.
    pub smoothing_log: Vec<serde_json::Value>,
    pub discovery: Discovery,
}

fn smooth_and_discover(
    raw: &Trajectory,
    config: &RunConfig,
    seed: u64,
    advisor: &Option<Arc<Advisor>>,
) -> std::result::Result<TrajectoryDiscovery, StageError> {
    let mut judge: Box<dyn SmoothingAdvisor> = match advisor {
        None => Box::new(DeterministicJudge::new()),
        Some(a) => Box::new(AdvisorJudge::new(a.clone())),
    };
    let (smoothed, filter, smoothing_log) =
        smooth_with_feedback(raw, judge.as_mut(), config.pixel.smoothing_iters).at("smooth")?;
    let derivs = crate::sindy::estimate_derivatives(raw, DerivMethod::Sg(filter)).at("smooth")?;
    let mut assessor = PixelAssessor::new(smoothed.states.clone(), derivs.values).at("discover")?;
    let discovery = discover(&mut assessor, config, seed, advisor)?;
    Ok(TrajectoryDiscovery {
        smoothed,
        filter,
        smoothing_log,
        discovery,
    })
}

/// Smooths a detected coordinate trajectory with the feedback filter and
/// runs equation discovery on it, as the pixel pipeline does after
/// detection.
pub fn discover_trajectory(
    raw: &Trajectory,
    config: &RunConfig,
    seed: u64,
    advisor: Option<Arc<Advisor>>,
) -> Result<TrajectoryDiscovery> {
    smooth_and_discover(raw, config, seed, &advisor).map_err(|e| e.error)
}

fn fitness_points(d: &Discovery) -> Vec<(usize, f64)> {
    d.pool.records().iter().map(|r| (r.iteration, r.fitness)).collect()
}

fn pixel_run(
    spec: &SystemSpec,
    config: &RunConfig,
    truth: &Trajectory,
    video: &FrameSequence,
    seed: u64,
    noise: f64,
    advisor: Option<Arc<Advisor>>,
) -> std::result::Result<RunOutcome, StageError> {
    let frames: Cow<FrameSequence> = if noise > 0.0 {
        Cow::Owned(add_observation_noise(video, noise, seed).at("noise")?)
    } else {
        Cow::Borrowed(video)
    };
    let mut locator: Box<dyn Locator> = match (config.locator, &advisor) {
        (LocatorChoice::Oracle { sigma_px }, _) => Box::new(OracleLocator::new(sigma_px, seed)),
        (LocatorChoice::Advisor, Some(a)) => Box::new(AdvisorLocator::new(a.clone())),
        (LocatorChoice::Advisor, None) => unreachable!("checked before the runs start"),
    };
    let detection = detect_sequence(&frames, locator.as_mut(), &DetectOptions::default()).at("detect")?;
    drop(frames);
    let raw = detection.to_trajectory().at("detect")?;
    let TrajectoryDiscovery {
        smoothed,
        filter,
        smoothing_log,
        discovery,
    } = smooth_and_discover(&raw, config, seed, &advisor)?;
    let eq = &discovery.equation;
    let z0 = truth.state(0);
    let score = evaluate_equation(eq, spec, &z0, truth.dt).at("evaluate")?;
    let predicted = predict_trajectory(eq, &z0, truth.dt, truth.len()).ok();
    let name = label(seed, noise);
    let entry = EvalEntry {
        seed,
        noise,
        equation: eq.clone(),
        terms_found: Some(score.terms_found),
        false_positives: Some(score.false_positives),
        r2_fit: eq.metrics.map_or(f64::NAN, |m| m.r2),
        r2_at: score.r2_at,
        diverged: score.diverged,
        best_iteration: discovery.best_iteration,
        iterations: discovery.steps.len(),
        stopped_at: discovery.stopped_at,
        filter: Some(filter),
        latent_dim: None,
    };
    let smoothing_text: String = smoothing_log.iter().map(|v| format!("{v}\n")).collect();
    let files = vec![
        (format!("{name}_truth.csv"), csv(truth)),
        (format!("{name}_detected.csv"), csv(&raw)),
        (format!("{name}_smoothed.csv"), csv(&smoothed)),
        (format!("{name}_detection.jsonl"), detection.transcript_jsonl()),
        (format!("{name}_smoothing.jsonl"), smoothing_text),
        (format!("{name}_discovery.jsonl"), discovery.transcript_jsonl()),
        (format!("{name}_equation.txt"), format!("{eq}\n")),
    ];
    let artifacts = RunArtifacts {
        label: name,
        reference: Some(truth.clone()),
        predicted,
        observed: Some(smoothed),
        fitness: fitness_points(&discovery),
    };
    Ok(RunOutcome { entry, artifacts, files })
}

fn latent_run(
    config: &RunConfig,
    video: &FrameSequence,
    seed: u64,
    noise: f64,
    advisor: Option<Arc<Advisor>>,
) -> std::result::Result<RunOutcome, StageError> {
    let opts = &config.latent;
    // noise goes on the frames the model sees
    let small = add_observation_noise(&video.downscale(opts.downscale), noise, seed).at("noise")?;
    let dt = small.dt();
    let x = frames_to_matrix(&small);
    let hyper = TrainHyper {
        epochs: opts.ae_epochs,
        batch_size: opts.batch_size,
        lr: opts.lr,
        seed,
        hidden: opts.hidden.clone(),
        activation: opts.activation,
        holdout: 0.1,
    };
    let (model, search_log) = match opts.dim {
        Some(d) => (train_autoencoder(&x, d, &hyper).at("autoencoder")?.0, None),
        None => {
            let mut dim_advisor: Box<dyn DimensionAdvisor> = match &advisor {
                None => Box::new(ElbowAdvisor::default()),
                Some(a) => Box::new(AdvisorDimensionAdvisor::new(a.clone())),
            };
            let s = dimension_search(
                &x,
                Some(frame_shape(&small)),
                dim_advisor.as_mut(),
                1..=opts.d_max,
                opts.max_trials,
                &hyper,
            )
            .at("dimension search")?;
            (s.model, Some(s.log))
        }
    };
    let d = model.latent_dim();
    let xdot = frame_derivatives(&x, dt).at("autoencoder")?;
    let ae_hyper = AeSindyHyper {
        epochs: opts.finetune_epochs,
        batch_size: opts.batch_size,
        lr: opts.lr,
        seed,
        threshold: config.discovery.threshold,
        threshold_every: opts.threshold_every,
        ..AeSindyHyper::default()
    };
    let mut assessor = LatentAssessor::new(model, x.clone(), xdot, ae_hyper).at("discover")?;
    let discovery = discover(&mut assessor, config, seed, &advisor)?;
    let eq = &discovery.equation;
    let best = discovery
        .pool
        .records()
        .iter()
        .position(|r| r.iteration == discovery.best_iteration)
        .and_then(|i| assessor.models().get(i))
        .unwrap_or(assessor.base());
    let latents = Trajectory::new(small.times[0], dt, best.encode(&x)).at("evaluate")?;
    let predicted = predict_trajectory(eq, &latents.state(0), dt, latents.len())
        .ok()
        .map(|p| Trajectory { t0: latents.t0, ..p });
    let name = label(seed, noise);
    let entry = EvalEntry {
        seed,
        noise,
        equation: eq.clone(),
        terms_found: None,
        false_positives: None,
        r2_fit: eq.metrics.map_or(f64::NAN, |m| m.r2),
        r2_at: Default::default(),
        diverged: predicted.is_none(),
        best_iteration: discovery.best_iteration,
        iterations: discovery.steps.len(),
        stopped_at: discovery.stopped_at,
        filter: None,
        latent_dim: Some(d),
    };
    let mut files = vec![
        (format!("{name}_latent.csv"), csv(&latents)),
        (format!("{name}_discovery.jsonl"), discovery.transcript_jsonl()),
        (format!("{name}_equation.txt"), format!("{eq}\n")),
    ];
    if let Some(log) = search_log {
        files.push((
            format!("{name}_dimension_search.json"),
            serde_json::to_string_pretty(&log).map_err(Error::from).at("dimension search")?,
        ));
    }
    let artifacts = RunArtifacts {
        label: name,
        reference: Some(latents),
        predicted,
        observed: None,
        fitness: fitness_points(&discovery),
    };
    Ok(RunOutcome { entry, artifacts, files })
}
