//! The adversarial training loop.
//!
//! Each generator iteration runs `n_critic` critic updates followed by one
//! generator update. Randomness is split into independent streams (data,
//! latent, penalty points, evaluation, figures) derived from the seed, so EMD
//! cadence and snapshots never perturb the training trajectory.

use std::io::{self, Write};
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::data::{sample_latent, Batch2D, Dataset, Rng};
use crate::emd::emd;
use crate::error::{Error, Result};
use crate::nets::{init_mlp, Activation, BoundMlp, MlpParams, RmsProp, RmsPropConfig, Role, DEFAULT_HIDDEN_WIDTH, LATENT_DIM};
use crate::penalty::{penalty_for, sample_penalty_points, PenaltyConfig, PenaltyKind};
use crate::scalar::Scalar;
use crate::viz::{level_set_grid, render_figure, BBox, CheckpointFile, Figure, FigureOverlay, DEFAULT_RESOLUTION};

pub const LOG_HEADER: &str = "iteration,critic_surrogate,penalty_value,neg_critic_loss,emd,wall_ms";
pub const DEFAULT_SNAPSHOTS: [usize; 4] = [500, 2500, 5000, 10000];

const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_PENALTY: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_VIZ: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub penalty: PenaltyConfig,
    pub batch_size: usize,
    pub n_critic: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// EMD is evaluated every this many iterations; 0 disables it.
    pub emd_every: usize,
    pub emd_batch: usize,
    /// Iterations after which a figure and checkpoint are taken. Entries past
    /// `iterations` are ignored.
    pub snapshot_iters: Vec<usize>,
    pub hidden_width: usize,
    pub activation: Activation,
    pub bbox: BBox,
    pub resolution: usize,
    /// Fill `wall_ms`; off by default so logs are reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: Dataset::SwissRoll,
            penalty: PenaltyConfig::default(),
            batch_size: 256,
            n_critic: 5,
            iterations: 10000,
            learning_rate: 5e-5,
            seed: 0,
            emd_every: 20,
            emd_batch: 256,
            snapshot_iters: DEFAULT_SNAPSHOTS.to_vec(),
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            activation: Activation::Relu,
            bbox: BBox::default(),
            resolution: DEFAULT_RESOLUTION,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        self.bbox.validate()?;
        let checks = [
            (self.iterations >= 1, "iterations must be at least 1"),
            (self.batch_size >= 2, "batch size must be at least 2"),
            (self.n_critic >= 1, "n_critic must be at least 1"),
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning rate must be > 0"),
            (self.emd_every == 0 || self.emd_batch >= 1, "EMD batch must be at least 1"),
            (self.hidden_width >= 1, "hidden width must be at least 1"),
            (self.resolution >= 2, "figure resolution must be at least 2"),
            (!self.snapshot_iters.contains(&0), "snapshot iterations start at 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }

    /// Snapshot iterations within the run, sorted and deduplicated.
    pub fn snapshots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.snapshot_iters.iter().copied().filter(|&i| i <= self.iterations).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// One log row per generator iteration. The surrogate and penalty come from
/// the last critic step of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// `E[f(real)] - E[f(fake)]`
    pub critic_surrogate: f64,
    pub penalty_value: f64,
    /// Always exactly `-critic_surrogate`; the penalty is not included.
    pub neg_critic_loss: f64,
    pub emd: Option<f64>,
    pub wall_ms: u64,
}

/// Writes the run log as CSV. Numbers use the shortest round-trip form.
pub fn write_log_csv<W: Write>(out: &mut W, records: &[TrainRecord]) -> io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in records {
        let emd = r.emd.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.critic_surrogate, r.penalty_value, r.neg_critic_loss, emd, r.wall_ms
        )?;
    }
    Ok(())
}

pub fn read_log_csv(text: &str) -> Result<Vec<TrainRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Format("missing run log header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("malformed log row {}: {line}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TrainRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                critic_surrogate: num(f[1])?,
                penalty_value: num(f[2])?,
                neg_critic_loss: num(f[3])?,
                emd: if f[4].is_empty() { None } else { Some(num(f[4])?) },
                wall_ms: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// `mean f(real) - mean f(fake)`.
pub fn surrogate_loss<T: Scalar>(
    critic: &BoundMlp,
    real: &Batch2D<T>,
    fake: &Batch2D<T>,
    tape: &mut Tape<T>,
) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::invalid(format!("real batch has {} points, fake has {}", real.len(), fake.len())));
    }
    let r = tape.constant(real.tensor().clone())?;
    let f = tape.constant(fake.tensor().clone())?;
    let fr = critic.forward(tape, r)?;
    let ff = critic.forward(tape, f)?;
    let mr = tape.mean(fr)?;
    let mf = tape.mean(ff)?;
    tape.sub(mr, mf)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    pub surrogate: f64,
    pub penalty: f64,
}

/// Networks, optimizer state and random streams of one run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    config: TrainConfig,
    generator: MlpParams<T>,
    critic: MlpParams<T>,
    generator_opt: RmsProp<T>,
    critic_opt: RmsProp<T>,
    data_rng: Rng,
    latent_rng: Rng,
    penalty_rng: Rng,
    eval_rng: Rng,
    viz_rng: Rng,
    critic_updates: usize,
    generator_updates: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Rng::with_stream(config.seed, STREAM_INIT);
        let generator = init_mlp(&mut init, Role::Generator, config.hidden_width, config.activation)?;
        let critic = init_mlp(&mut init, Role::Critic, config.hidden_width, config.activation)?;
        Self::with_networks(config, generator, critic)
    }

    /// Starts from given networks with fresh optimizer state.
    pub fn with_networks(config: TrainConfig, generator: MlpParams<T>, critic: MlpParams<T>) -> Result<Self> {
        config.validate()?;
        if generator.role() != Role::Generator || critic.role() != Role::Critic {
            return Err(Error::invalid("networks passed in the wrong roles"));
        }
        let opt = RmsPropConfig { learning_rate: T::lit(config.learning_rate), ..Default::default() };
        let seed = config.seed;
        Ok(Trainer {
            generator_opt: RmsProp::for_mlp(opt, &generator)?,
            critic_opt: RmsProp::for_mlp(opt, &critic)?,
            generator,
            critic,
            data_rng: Rng::with_stream(seed, STREAM_DATA),
            latent_rng: Rng::with_stream(seed, STREAM_LATENT),
            penalty_rng: Rng::with_stream(seed, STREAM_PENALTY),
            eval_rng: Rng::with_stream(seed, STREAM_EVAL),
            viz_rng: Rng::with_stream(seed, STREAM_VIZ),
            critic_updates: 0,
            generator_updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &MlpParams<T> {
        &self.generator
    }

    pub fn critic(&self) -> &MlpParams<T> {
        &self.critic
    }

    pub fn generator_optimizer(&self) -> &RmsProp<T> {
        &self.generator_opt
    }

    pub fn critic_optimizer(&self) -> &RmsProp<T> {
        &self.critic_opt
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn generator_updates(&self) -> usize {
        self.generator_updates
    }


    /// One RMSProp update of the critic on `-surrogate + penalty`.
    pub fn critic_step(&mut self) -> Result<CriticStats> {
        let n = self.config.batch_size;
        let real = self.config.dataset.sample(&mut self.data_rng, n)?;
        let fake = generate(&self.generator, &mut self.latent_rng, n)?;

        let mut tape = Tape::new();
        let bound = self.critic.bind(&mut tape, true)?;
        let surrogate = surrogate_loss(&bound, &real, &fake, &mut tape)?;
        let mut loss = tape.neg(surrogate)?;
        let mut penalty_value = 0.0;
        let points = sample_penalty_points(&mut self.penalty_rng, &self.config.penalty, &real, &fake)?;
        if let Some(z) = points {
            if let Some(p) = penalty_for(&self.config.penalty, &bound, &z, &mut tape)? {
                penalty_value = value_of(&tape, p);
                loss = tape.add(loss, p)?;
            }
        }
        let grads = tape.grad(loss, &bound.params(), false)?;
        let grads: Vec<_> = grads.iter().map(|&g| tape.value(g).clone()).collect();
        self.critic_opt.step_mlp(&mut self.critic, &grads)?;
        if self.config.penalty.kind == PenaltyKind::Clip {
            self.critic.clip_weights(T::lit(self.config.penalty.clip_c))?;
        }
        self.critic_updates += 1;
        Ok(CriticStats {
            surrogate: value_of(&tape, surrogate),
            penalty: penalty_value,
        })
    }

    /// One RMSProp update of the generator on `-mean f(fake)`; returns that loss.
    pub fn generator_step(&mut self) -> Result<f64> {
        let z = sample_latent(&mut self.latent_rng, self.config.batch_size, LATENT_DIM)?;
        let mut tape = Tape::new();
        let gen = self.generator.bind(&mut tape, true)?;
        let critic = self.critic.bind(&mut tape, false)?;
        let zv = tape.constant(z)?;
        let x = gen.forward(&mut tape, zv)?;
        let y = critic.forward(&mut tape, x)?;
        let m = tape.mean(y)?;
        let loss = tape.neg(m)?;
        let grads = tape.grad(loss, &gen.params(), false)?;
        let grads: Vec<_> = grads.iter().map(|&g| tape.value(g).clone()).collect();
        self.generator_opt.step_mlp(&mut self.generator, &grads)?;
        self.generator_updates += 1;
        Ok(value_of(&tape, loss))
    }

    /// EMD between `emd_batch` fresh real and generated samples.
    pub fn evaluate_emd(&mut self) -> Result<f64> {
        let n = self.config.emd_batch.max(1);
        let real = self.config.dataset.sample(&mut self.eval_rng, n)?;
        let fake = generate(&self.generator, &mut self.eval_rng, n)?;
        Ok(emd(&real, &fake)?.to_f64().unwrap_or(f64::NAN))
    }

    /// Level-set figure of the current critic with fresh overlay samples.
    pub fn snapshot_figure(&mut self) -> Result<Vec<u8>> {
        let n = self.config.batch_size;
        let rng = &mut self.viz_rng;
        let training = self.config.dataset.sample(rng, n)?;
        let generated = generate(&self.generator, rng, n)?;
        let penalty = sample_penalty_points(rng, &self.config.penalty, &training, &generated)?;
        let res = self.config.resolution;
        let grid = level_set_grid(&self.critic, self.config.bbox, (res, res))?;
        let overlay = FigureOverlay { training: Some(training), generated: Some(generated), penalty };
        Ok(render_figure(&grid, &overlay))
    }

    /// Generator checkpoint followed by critic checkpoint.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.generator.write_checkpoint(&mut out).expect("writing to memory");
        self.critic.write_checkpoint(&mut out).expect("writing to memory");
        out
    }
}

fn value_of<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).item().and_then(|x| x.to_f64()).unwrap_or(f64::NAN)
}

fn generate<T: Scalar>(generator: &MlpParams<T>, rng: &mut Rng, n: usize) -> Result<Batch2D<T>> {
    let z = sample_latent(rng, n, LATENT_DIM)?;
    Batch2D::new(generator.evaluate(&z)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Abort {
    pub iteration: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub records: Vec<TrainRecord>,
    pub figures: Vec<Figure>,
    pub checkpoints: Vec<CheckpointFile>,
    /// Set when a non-finite value stopped the run early.
    pub abort: Option<Abort>,
    pub critic_updates: usize,
    pub generator_updates: usize,
}

impl TrainOutput {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Runs `config` in `f64` from freshly initialized networks.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    run(Trainer::<f64>::new(config.clone())?)
}

/// Runs a prepared trainer to completion or to the first non-finite value.
///
/// Configuration errors are returned as `Err`; numeric divergence ends the run
/// with [`TrainOutput::abort`] set and the rows logged so far.
pub fn run<T: Scalar>(mut trainer: Trainer<T>) -> Result<TrainOutput> {
    let config = trainer.config.clone();
    let snapshots = config.snapshots();
    let start = Instant::now();
    let mut out = TrainOutput {
        records: Vec::with_capacity(config.iterations),
        figures: Vec::new(),
        checkpoints: Vec::new(),
        abort: None,
        critic_updates: 0,
        generator_updates: 0,
    };

    for iteration in 1..=config.iterations {
        match iterate(&mut trainer, iteration, &snapshots, &config, start, &mut out) {
            Ok(()) => {}
            Err(e @ Error::NonFinite(_)) => {
                out.abort = Some(Abort { iteration, message: format!("iteration {iteration}: {e}") });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    out.critic_updates = trainer.critic_updates;
    out.generator_updates = trainer.generator_updates;
    Ok(out)
}

fn iterate<T: Scalar>(
    trainer: &mut Trainer<T>,
    iteration: usize,
    snapshots: &[usize],
    config: &TrainConfig,
    start: Instant,
    out: &mut TrainOutput,
) -> Result<()> {
    let mut stats = CriticStats { surrogate: 0.0, penalty: 0.0 };
    for _ in 0..config.n_critic {
        stats = trainer.critic_step()?;
    }
    let gen_loss = trainer.generator_step()?;
    if !gen_loss.is_finite() {
        return Err(Error::NonFinite(format!("generator loss {gen_loss}")));
    }
    let emd = if config.emd_every > 0 && iteration.is_multiple_of(config.emd_every) {
        Some(trainer.evaluate_emd()?)
    } else {
        None
    };
    if snapshots.binary_search(&iteration).is_ok() {
        out.figures.push(Figure { iteration, ppm: trainer.snapshot_figure()? });
        out.checkpoints.push(CheckpointFile { iteration, bytes: trainer.checkpoint_bytes() });
    }
    let wall_ms = if config.record_wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
    out.records.push(TrainRecord {
        iteration,
        critic_surrogate: stats.surrogate,
        penalty_value: stats.penalty,
        neg_critic_loss: -stats.surrogate,
        emd,
        wall_ms,
    });
    Ok(())
}
