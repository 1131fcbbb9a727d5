//! Command-line front end: figure presets, flat config files and free-form runs.
//!
//! Settings are resolved in order defaults < preset < config file < flags.
//! Config files hold `key = value` lines whose keys are the long flag names
//! without dashes (`lambda = 5`, `emd-every = 20`); `#` starts a comment.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{write_points_csv, Dataset, Rng};
use crate::error::Error;
use crate::nets::Activation;
use crate::penalty::{PenaltyConfig, PenaltyKind, Sampling};
use crate::trainer::{train, TrainConfig, TrainOutput};
use crate::viz::write_run_artifacts;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "lipgan", version, about = "Train 2-D Wasserstein GANs with clipping, GP or LP critics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train one configuration or every run of a preset.
    Run(RunArgs),
    /// Print the preset roster.
    ListPresets,
    /// Write samples of a toy distribution as CSV to stdout.
    Sample {
        #[arg(long, default_value = "swissroll")]
        dataset: Dataset,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags of `run`. Unset flags fall back to the config file, then the preset,
/// then the defaults shown.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Preset name or `<preset>-<run>` (see list-presets).
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 8gaussians | 25gaussians | swissroll [default: swissroll]
    #[arg(long)]
    pub dataset: Option<Dataset>,
    /// none | clip | gp | lp [default: lp]
    #[arg(long)]
    pub penalty: Option<PenaltyKind>,
    /// interpolate | perturb_real | perturb_both [default: interpolate]
    #[arg(long)]
    pub sampling: Option<Sampling>,
    /// Penalty weight, gp/lp only [default: 5]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Weight clipping bound, clip only [default: 0.01]
    #[arg(long = "clip-c", allow_negative_numbers = true)]
    pub clip_c: Option<f64>,
    /// Perturbation scale for perturb_* sampling [default: 0.5]
    #[arg(long = "dragan-C", allow_negative_numbers = true)]
    pub dragan_c: Option<f64>,
    /// [default: 256]
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Critic updates per generator update [default: 5]
    #[arg(long = "n-critic")]
    pub n_critic: Option<usize>,
    /// Generator iterations [default: 10000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// RMSProp learning rate [default: 5e-5]
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate EMD every k iterations, 0 = never [default: 20]
    #[arg(long = "emd-every")]
    pub emd_every: Option<usize>,
    /// Points per side of the EMD matching [default: 256]
    #[arg(long = "emd-batch")]
    pub emd_batch: Option<usize>,
    /// Comma-separated snapshot iterations [default: 500,2500,5000,10000]
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<usize>>,
    /// Hidden layer width of both networks [default: 512]
    #[arg(long = "hidden-width")]
    pub hidden_width: Option<usize>,
    /// relu | tanh [default: relu]
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Level-set figure size in pixels per side [default: 128]
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Record elapsed milliseconds in the log (makes logs non-reproducible).
    #[arg(long = "wall-clock")]
    pub wall_clock: bool,
    /// Output root; runs go to <out>/<run>/<seed>/ [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

/// One labeled training run of a preset.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetRun {
    pub label: &'static str,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub runs: Vec<PresetRun>,
}

impl Preset {
    pub fn run_name(&self, run: &PresetRun) -> String {
        format!("{}-{}", self.name, run.label)
    }
}

fn level_sets(dataset: Dataset) -> Vec<PresetRun> {
    let base = TrainConfig { dataset, iterations: 10000, emd_every: 0, ..Default::default() };
    vec![
        PresetRun { label: "top", config: TrainConfig { penalty: PenaltyConfig::gp(10.0), ..base.clone() } },
        PresetRun { label: "middle", config: TrainConfig { penalty: PenaltyConfig::gp(1.0), ..base.clone() } },
        PresetRun { label: "bottom", config: TrainConfig { penalty: PenaltyConfig::lp(10.0), ..base } },
    ]
}

fn curve(penalty: PenaltyConfig, iterations: usize, emd_every: usize) -> TrainConfig {
    TrainConfig {
        dataset: Dataset::SwissRoll,
        penalty,
        iterations,
        emd_every,
        snapshot_iters: vec![iterations],
        ..Default::default()
    }
}

/// Every figure of the reproduction, one preset each.
pub fn presets() -> Vec<Preset> {
    let both = Sampling::PerturbBoth;
    vec![
        Preset {
            name: "fig1",
            description: "swissroll critic level sets at 500/2500/5000/10000: GP l=10, GP l=1, LP l=10",
            runs: level_sets(Dataset::SwissRoll),
        },
        Preset {
            name: "fig2",
            description: "critic negative loss over 20k iterations, GP vs LP, l=5",
            runs: vec![
                PresetRun { label: "gp", config: curve(PenaltyConfig::gp(5.0), 20000, 0) },
                PresetRun { label: "lp", config: curve(PenaltyConfig::lp(5.0), 20000, 0) },
            ],
        },
        Preset {
            name: "fig3",
            description: "EMD over 2k iterations, GP vs LP, l=5",
            runs: vec![
                PresetRun { label: "gp", config: curve(PenaltyConfig::gp(5.0), 2000, 20) },
                PresetRun { label: "lp", config: curve(PenaltyConfig::lp(5.0), 2000, 20) },
            ],
        },
        Preset {
            name: "fig4",
            description: "8gaussians critic level sets: GP l=10, GP l=1, LP l=10",
            runs: level_sets(Dataset::EightGaussians),
        },
        Preset {
            name: "fig5",
            description: "25gaussians critic level sets: GP l=10, GP l=1, LP l=10",
            runs: level_sets(Dataset::TwentyFiveGaussians),
        },
        Preset {
            name: "fig6",
            description: "critic negative loss over 20k iterations, GP l=1",
            runs: vec![PresetRun { label: "gp", config: curve(PenaltyConfig::gp(1.0), 20000, 0) }],
        },
        Preset {
            name: "fig7",
            description: "EMD over 2k iterations, GP l=1",
            runs: vec![PresetRun { label: "gp", config: curve(PenaltyConfig::gp(1.0), 2000, 20) }],
        },
        Preset {
            name: "fig8",
            description: "critic negative loss with local perturbation (l=5 for all runs): \
                          GP perturbing real only, GP perturbing both, LP perturbing both",
            runs: vec![
                PresetRun {
                    label: "top",
                    config: curve(PenaltyConfig::gp(5.0).with_sampling(Sampling::PerturbReal), 20000, 0),
                },
                PresetRun { label: "middle", config: curve(PenaltyConfig::gp(5.0).with_sampling(both), 20000, 0) },
                PresetRun { label: "bottom", config: curve(PenaltyConfig::lp(5.0).with_sampling(both), 20000, 0) },
            ],
        },
        Preset {
            name: "fig9",
            description: "EMD with local perturbation of both batches, GP vs LP, l=5",
            runs: vec![
                PresetRun { label: "gp", config: curve(PenaltyConfig::gp(5.0).with_sampling(both), 2000, 20) },
                PresetRun { label: "lp", config: curve(PenaltyConfig::lp(5.0).with_sampling(both), 2000, 20) },
            ],
        },
    ]
}

/// Runs selected by `name`: a whole preset or one `<preset>-<label>` run,
/// each paired with its output name.
pub fn resolve_preset(name: &str) -> Result<Vec<(String, TrainConfig)>, CliError> {
    for p in presets() {
        if p.name == name {
            return Ok(p.runs.iter().map(|r| (p.run_name(r), r.config.clone())).collect());
        }
        if let Some(r) = p.runs.iter().find(|r| p.run_name(r) == name) {
            return Ok(vec![(name.to_string(), r.config.clone())]);
        }
    }
    let names: Vec<String> = presets()
        .iter()
        .flat_map(|p| std::iter::once(p.name.to_string()).chain(p.runs.iter().map(|r| p.run_name(r))))
        .collect();
    Err(CliError::Usage(format!("unknown preset '{name}'; available: {}", names.join(", "))))
}

pub fn list_presets() -> String {
    let mut out = String::new();
    for p in presets() {
        let labels: Vec<&str> = p.runs.iter().map(|r| r.label).collect();
        out.push_str(&format!("{}\t[{}]\t{}\n", p.name, labels.join(", "), p.description));
    }
    out
}

/// Reads a flat `key = value` file into the same shape as the flags.
pub fn parse_config_file(text: &str) -> Result<RunArgs, CliError> {
    let mut args = RunArgs::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let usage = |msg: String| CliError::Usage(format!("config line {}: {msg}", i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| usage(format!("expected key = value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        fn parse<V: std::str::FromStr>(v: &str) -> Result<V, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        let res: Result<(), String> = (|| {
            match key {
                "preset" => args.preset = Some(value.to_string()),
                "dataset" => args.dataset = Some(value.parse().map_err(|e: Error| e.to_string())?),
                "penalty" => args.penalty = Some(value.parse().map_err(|e: Error| e.to_string())?),
                "sampling" => args.sampling = Some(value.parse().map_err(|e: Error| e.to_string())?),
                "activation" => args.activation = Some(value.parse().map_err(|e: Error| e.to_string())?),
                "lambda" => args.lambda = Some(parse(value)?),
                "clip-c" => args.clip_c = Some(parse(value)?),
                "dragan-C" => args.dragan_c = Some(parse(value)?),
                "batch-size" => args.batch_size = Some(parse(value)?),
                "n-critic" => args.n_critic = Some(parse(value)?),
                "iterations" => args.iterations = Some(parse(value)?),
                "lr" => args.lr = Some(parse(value)?),
                "seed" => args.seed = Some(parse(value)?),
                "emd-every" => args.emd_every = Some(parse(value)?),
                "emd-batch" => args.emd_batch = Some(parse(value)?),
                "hidden-width" => args.hidden_width = Some(parse(value)?),
                "resolution" => args.resolution = Some(parse(value)?),
                "wall-clock" => args.wall_clock = parse(value)?,
                "out" => args.out = Some(PathBuf::from(value)),
                "snapshots" => {
                    args.snapshots = Some(value.split(',').map(|s| parse(s.trim())).collect::<Result<_, _>>()?)
                }
                _ => return Err(format!("unknown key '{key}'")),
            }
            Ok(())
        })();
        res.map_err(usage)?;
    }
    Ok(args)
}

impl RunArgs {
    /// `self` with unset fields taken from `lower`.
    pub fn or(self, lower: RunArgs) -> RunArgs {
        RunArgs {
            preset: self.preset.or(lower.preset),
            config: self.config.or(lower.config),
            dataset: self.dataset.or(lower.dataset),
            penalty: self.penalty.or(lower.penalty),
            sampling: self.sampling.or(lower.sampling),
            lambda: self.lambda.or(lower.lambda),
            clip_c: self.clip_c.or(lower.clip_c),
            dragan_c: self.dragan_c.or(lower.dragan_c),
            batch_size: self.batch_size.or(lower.batch_size),
            n_critic: self.n_critic.or(lower.n_critic),
            iterations: self.iterations.or(lower.iterations),
            lr: self.lr.or(lower.lr),
            seed: self.seed.or(lower.seed),
            emd_every: self.emd_every.or(lower.emd_every),
            emd_batch: self.emd_batch.or(lower.emd_batch),
            snapshots: self.snapshots.or(lower.snapshots),
            hidden_width: self.hidden_width.or(lower.hidden_width),
            activation: self.activation.or(lower.activation),
            resolution: self.resolution.or(lower.resolution),
            wall_clock: self.wall_clock || lower.wall_clock,
            out: self.out.or(lower.out),
        }
    }

    /// Applies the explicitly set fields on top of `base`.
    pub fn apply(&self, mut base: TrainConfig) -> Result<TrainConfig, CliError> {
        let kind = self.penalty.unwrap_or(base.penalty.kind);
        let penalty_flags = self.lambda.is_some() || self.sampling.is_some() || self.dragan_c.is_some();
        if !kind.uses_points() && penalty_flags {
            return Err(CliError::Usage(format!(
                "--lambda, --sampling and --dragan-C have no effect with --penalty {kind}"
            )));
        }
        if kind != PenaltyKind::Clip && self.clip_c.is_some() {
            return Err(CliError::Usage(format!("--clip-c has no effect with --penalty {kind}")));
        }
        let p = &mut base.penalty;
        p.kind = kind;
        set(&mut p.sampling, self.sampling);
        set(&mut p.lambda, self.lambda);
        set(&mut p.clip_c, self.clip_c);
        set(&mut p.dragan_c, self.dragan_c);
        set(&mut base.dataset, self.dataset);
        set(&mut base.batch_size, self.batch_size);
        set(&mut base.n_critic, self.n_critic);
        set(&mut base.iterations, self.iterations);
        set(&mut base.learning_rate, self.lr);
        set(&mut base.seed, self.seed);
        set(&mut base.emd_every, self.emd_every);
        set(&mut base.emd_batch, self.emd_batch);
        set(&mut base.snapshot_iters, self.snapshots.clone());
        set(&mut base.hidden_width, self.hidden_width);
        set(&mut base.activation, self.activation);
        set(&mut base.resolution, self.resolution);
        base.record_wall_clock |= self.wall_clock;
        base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(base)
    }
}

fn set<V>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// A fully resolved `run` invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    /// `(run name, config)` pairs, executed in order.
    pub runs: Vec<(String, TrainConfig)>,
    pub out: PathBuf,
}

impl RunPlan {
    pub fn run_dir(&self, name: &str, config: &TrainConfig) -> PathBuf {
        self.out.join(name).join(config.seed.to_string())
    }
}

/// Merges flags, config file and preset into concrete run configs.
pub fn resolve_run(flags: RunArgs) -> Result<RunPlan, CliError> {
    let file = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => RunArgs::default(),
    };
    let args = flags.or(file);
    let base = match &args.preset {
        Some(name) => resolve_preset(name)?,
        None => vec![("custom".to_string(), TrainConfig::default())],
    };
    let runs = base
        .into_iter()
        .map(|(name, config)| Ok((name, args.apply(config)?)))
        .collect::<Result<_, CliError>>()?;
    Ok(RunPlan { runs, out: args.out.unwrap_or_else(|| PathBuf::from("out")) })
}

/// Parsed command line.
#[derive(Clone, Debug, PartialEq)]
pub enum Invocation {
    Run(RunPlan),
    ListPresets,
    Sample { dataset: Dataset, n: usize, seed: u64 },
}

pub fn parse_args<I, S>(argv: I) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    Ok(match cli.command {
        Command::Run(args) => match resolve_run(args) {
            Ok(plan) => Invocation::Run(plan),
            Err(e) => return Err(clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("{e}\n"))),
        },
        Command::ListPresets => Invocation::ListPresets,
        Command::Sample { dataset, n, seed } => Invocation::Sample { dataset, n, seed },
    })
}

/// Trains one run and writes its artifacts under `dir`.
pub fn execute_run(name: &str, config: &TrainConfig, dir: &Path) -> Result<TrainOutput, CliError> {
    let out = train(config)?;
    let abort = out.abort.as_ref().map(|a| a.message.as_str());
    write_run_artifacts(&out.records, &out.figures, &out.checkpoints, abort, dir)?;
    let last_emd = out.records.iter().rev().find_map(|r| r.emd);
    match (&out.abort, last_emd) {
        (Some(a), _) => eprintln!("{name}: aborted: {}", a.message),
        (None, Some(e)) => eprintln!("{name}: {} iterations, final EMD {e:.4}", out.records.len()),
        (None, None) => eprintln!("{name}: {} iterations", out.records.len()),
    }
    eprintln!("{name}: wrote {}", dir.display());
    Ok(out)
}

/// Runs every run of `plan`; the exit code is 0 only if none aborted.
pub fn run_plan(plan: &RunPlan) -> Result<i32, CliError> {
    let mut code = EXIT_OK;
    for (name, config) in &plan.runs {
        let out = execute_run(name, config, &plan.run_dir(name, config))?;
        if !out.completed() {
            code = EXIT_ABORTED;
        }
    }
    Ok(code)
}

/// Entry point; returns the process exit code.
pub fn main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let invocation = match parse_args(argv) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match invocation {
        Invocation::ListPresets => {
            print!("{}", list_presets());
            Ok(EXIT_OK)
        }
        Invocation::Sample { dataset, n, seed } => dataset
            .sample::<f64>(&mut Rng::new(seed), n)
            .and_then(|b| write_points_csv(&mut std::io::stdout().lock(), &b).map_err(|e| Error::io("<stdout>", e)))
            .map(|()| EXIT_OK)
            .map_err(CliError::from),
        Invocation::Run(plan) => run_plan(&plan),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        match e {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    })
}
