//! Penalty-point sampling and the gradient-norm penalties.
//!
//! Both penalties are built from input gradients of the critic that are
//! themselves tape nodes, so the returned value can be differentiated with
//! respect to the critic parameters.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::data::{Batch2D, Rng};
use crate::error::{Error, Result};
use crate::nets::BoundMlp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    None,
    /// Weight clipping into `[-c, c]` after every critic update.
    Clip,
    /// Two-sided: `lambda * E[(|grad f(z)| - 1)^2]`.
    Gp,
    /// One-sided: `lambda * E[max(0, |grad f(z)| - 1)^2]`.
    Lp,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 4] = [PenaltyKind::None, PenaltyKind::Clip, PenaltyKind::Gp, PenaltyKind::Lp];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Clip => "clip",
            PenaltyKind::Gp => "gp",
            PenaltyKind::Lp => "lp",
        }
    }

    /// Whether the kind evaluates a gradient penalty on sampled points.
    pub fn uses_points(self) -> bool {
        matches!(self, PenaltyKind::Gp | PenaltyKind::Lp)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PenaltyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown penalty '{s}' (none, clip, gp, lp)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sampling {
    /// Random points on the segments between paired real and generated samples.
    Interpolate,
    /// Local perturbations of the real samples.
    PerturbReal,
    /// Local perturbations of both batches, concatenated.
    PerturbBoth,
}

impl Sampling {
    pub const ALL: [Sampling; 3] = [Sampling::Interpolate, Sampling::PerturbReal, Sampling::PerturbBoth];

    pub fn name(self) -> &'static str {
        match self {
            Sampling::Interpolate => "interpolate",
            Sampling::PerturbReal => "perturb_real",
            Sampling::PerturbBoth => "perturb_both",
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sampling::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::invalid(format!("unknown sampling '{s}' (interpolate, perturb_real, perturb_both)"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub clip_c: f64,
    pub sampling: Sampling,
    pub dragan_c: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::Lp,
            lambda: 5.0,
            clip_c: 0.01,
            sampling: Sampling::Interpolate,
            dragan_c: 0.5,
        }
    }
}

impl PenaltyConfig {
    pub fn gp(lambda: f64) -> Self {
        PenaltyConfig { kind: PenaltyKind::Gp, lambda, ..Default::default() }
    }

    pub fn lp(lambda: f64) -> Self {
        PenaltyConfig { kind: PenaltyKind::Lp, lambda, ..Default::default() }
    }

    pub fn clip(c: f64) -> Self {
        PenaltyConfig { kind: PenaltyKind::Clip, clip_c: c, ..Default::default() }
    }

    pub fn none() -> Self {
        PenaltyConfig { kind: PenaltyKind::None, ..Default::default() }
    }

    pub fn with_sampling(self, sampling: Sampling) -> Self {
        PenaltyConfig { sampling, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.clip_c > 0.0 && self.clip_c.is_finite()) {
            return Err(Error::invalid(format!("clip bound must be > 0, got {}", self.clip_c)));
        }
        if !(self.dragan_c > 0.0 && self.dragan_c.is_finite()) {
            return Err(Error::invalid(format!("perturbation scale C must be > 0, got {}", self.dragan_c)));
        }
        Ok(())
    }
}

/// `z_i = a_i * real_i + (1 - a_i) * fake_i` with `a_i ~ U[0, 1]` per row.
pub fn sample_interpolates<T: Scalar>(
    rng: &mut Rng,
    real: &Batch2D<T>,
    fake: &Batch2D<T>,
) -> Result<Batch2D<T>> {
    let alphas: Vec<T> = (0..real.len()).map(|_| T::lit(rng.uniform())).collect();
    interpolate(real, fake, &alphas)
}

/// Row-wise convex combination with the given mixing weights.
pub fn interpolate<T: Scalar>(real: &Batch2D<T>, fake: &Batch2D<T>, alphas: &[T]) -> Result<Batch2D<T>> {
    if real.len() != fake.len() || alphas.len() != real.len() {
        return Err(Error::invalid(format!(
            "interpolation needs equal sizes, got {} real, {} generated, {} weights",
            real.len(),
            fake.len(),
            alphas.len()
        )));
    }
    let points: Vec<[T; 2]> = real
        .iter()
        .zip(fake.iter())
        .zip(alphas)
        .map(|((r, f), &a)| {
            let b = T::one() - a;
            [a * r[0] + b * f[0], a * r[1] + b * f[1]]
        })
        .collect();
    Batch2D::from_points(&points)
}

/// Population standard deviation over all coordinates of the batch.
pub fn batch_std<T: Scalar>(batch: &Batch2D<T>) -> T {
    let data = batch.tensor().data();
    let n = T::lit(data.len() as f64);
    let mean = data.iter().copied().sum::<T>() / n;
    (data.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt()
}

/// `z_i = x_i + a_i * d_i` with `d_i = C * std(batch) * u_i`,
/// `u_i ~ U[0, 1]^2` per coordinate and `a_i ~ U[0, 1]` per row.
pub fn sample_local_perturbation<T: Scalar>(rng: &mut Rng, batch: &Batch2D<T>, c: f64) -> Result<Batch2D<T>> {
    if batch.len() < 2 {
        return Err(Error::invalid("local perturbation needs at least 2 points"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("perturbation scale C must be > 0, got {c}")));
    }
    let scale = T::lit(c) * batch_std(batch);
    let points: Vec<[T; 2]> = batch
        .iter()
        .map(|x| {
            let u = [T::lit(rng.uniform()), T::lit(rng.uniform())];
            let a = T::lit(rng.uniform());
            [x[0] + a * scale * u[0], x[1] + a * scale * u[1]]
        })
        .collect();
    Batch2D::from_points(&points)
}

/// Penalty points for `config.sampling`, or `None` for kinds without a gradient penalty.
pub fn sample_penalty_points<T: Scalar>(
    rng: &mut Rng,
    config: &PenaltyConfig,
    real: &Batch2D<T>,
    fake: &Batch2D<T>,
) -> Result<Option<Batch2D<T>>> {
    if !config.kind.uses_points() {
        return Ok(None);
    }
    let z = match config.sampling {
        Sampling::Interpolate => sample_interpolates(rng, real, fake)?,
        Sampling::PerturbReal => sample_local_perturbation(rng, real, config.dragan_c)?,
        Sampling::PerturbBoth => {
            let r = sample_local_perturbation(rng, real, config.dragan_c)?;
            let f = sample_local_perturbation(rng, fake, config.dragan_c)?;
            r.concat(&f)
        }
    };
    Ok(Some(z))
}

/// `[m, 1]` node of `|grad_z f(z_i)|` for every penalty point, differentiable
/// with respect to the critic parameters.
///
/// Uses one backward pass of the summed critic outputs: row `i` of the output
/// depends only on row `i` of the input.
pub fn input_gradient_norms<T: Scalar>(critic: &BoundMlp, z: &Batch2D<T>, tape: &mut Tape<T>) -> Result<Var> {
    let zv = tape.input(z.tensor().clone())?;
    let out = critic.forward(tape, zv)?;
    let total = tape.sum(out)?;
    let g = tape.grad(total, &[zv], true)?[0];
    tape.l2norm_rows(g)
}

fn hinge_penalty<T: Scalar>(
    critic: &BoundMlp,
    z: &Batch2D<T>,
    lambda: f64,
    tape: &mut Tape<T>,
    one_sided: bool,
) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let norms = input_gradient_norms(critic, z, tape)?;
    let one = tape.scalar_constant(T::one())?;
    let mut excess = tape.sub(norms, one)?;
    if one_sided {
        excess = tape.max_scalar(excess, T::zero())?;
    }
    let sq = tape.square(excess)?;
    let mean = tape.mean(sq)?;
    tape.scale(mean, T::lit(lambda))
}

pub fn penalty_gp<T: Scalar>(critic: &BoundMlp, z: &Batch2D<T>, lambda: f64, tape: &mut Tape<T>) -> Result<Var> {
    hinge_penalty(critic, z, lambda, tape, false)
}

pub fn penalty_lp<T: Scalar>(critic: &BoundMlp, z: &Batch2D<T>, lambda: f64, tape: &mut Tape<T>) -> Result<Var> {
    hinge_penalty(critic, z, lambda, tape, true)
}

/// Penalty node for `config`, or `None` when the kind has no gradient penalty.
pub fn penalty_for<T: Scalar>(
    config: &PenaltyConfig,
    critic: &BoundMlp,
    z: &Batch2D<T>,
    tape: &mut Tape<T>,
) -> Result<Option<Var>> {
    match config.kind {
        PenaltyKind::Gp => penalty_gp(critic, z, config.lambda, tape).map(Some),
        PenaltyKind::Lp => penalty_lp(critic, z, config.lambda, tape).map(Some),
        PenaltyKind::None | PenaltyKind::Clip => Ok(None),
    }
}

/// Input gradient norms as plain values.
pub fn gradient_norm_values<T: Scalar>(critic: &crate::nets::MlpParams<T>, z: &Batch2D<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape, false)?;
    let norms = input_gradient_norms(&bound, z, &mut tape)?;
    Ok(tape.value(norms).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{affine_critic, init_mlp, Activation, MlpParams, Role};

    fn linear_critic(w: [f64; 2]) -> MlpParams<f64> {
        affine_critic(w, 0.0)
    }

    fn points() -> Batch2D<f64> {
        Batch2D::from_points(&[[0.3, 0.7], [-1.2, 0.4], [0.9, -0.5], [0.1, 1.3]]).unwrap()
    }

    fn eval_penalty(w: [f64; 2], lambda: f64, lp: bool) -> f64 {
        let critic = linear_critic(w);
        let mut tape = Tape::new();
        let bound = critic.bind(&mut tape, true).unwrap();
        let p = if lp {
            penalty_lp(&bound, &points(), lambda, &mut tape)
        } else {
            penalty_gp(&bound, &points(), lambda, &mut tape)
        }
        .unwrap();
        tape.value(p).item().unwrap()
    }

    #[test]
    fn linear_critic_computes_dot_product() {
        let c = linear_critic([0.6, -0.8]);
        let y = c.evaluate(points().tensor()).unwrap();
        for (p, v) in points().iter().zip(y.data()) {
            assert!((0.6 * p[0] - 0.8 * p[1] - v).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_gradient_has_no_penalty() {
        assert!(eval_penalty([0.6, 0.8], 10.0, false).abs() < 1e-10);
        assert!(eval_penalty([0.6, 0.8], 10.0, true).abs() < 1e-10);
    }

    #[test]
    fn closed_forms() {
        assert!((eval_penalty([2.0, 0.0], 5.0, false) - 5.0).abs() < 1e-10);
        assert!((eval_penalty([0.5, 0.0], 10.0, false) - 2.5).abs() < 1e-10);
        assert!((eval_penalty([2.0, 0.0], 5.0, true) - 5.0).abs() < 1e-10);
        assert_eq!(eval_penalty([0.5, 0.0], 10.0, true), 0.0);
    }

    #[test]
    fn zero_lambda_is_neutral() {
        let mut rng = Rng::new(0);
        let critic: MlpParams<f64> = init_mlp(&mut rng, Role::Critic, 6, Activation::Tanh).unwrap();
        for lp in [false, true] {
            let mut tape = Tape::new();
            let bound = critic.bind(&mut tape, true).unwrap();
            let p = if lp {
                penalty_lp(&bound, &points(), 0.0, &mut tape)
            } else {
                penalty_gp(&bound, &points(), 0.0, &mut tape)
            }
            .unwrap();
            assert_eq!(tape.value(p).item(), Some(0.0));
            for g in tape.grad(p, &bound.params(), false).unwrap() {
                assert_eq!(tape.value(g).max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let critic = linear_critic([1.0, 0.0]);
        let mut tape = Tape::new();
        let bound = critic.bind(&mut tape, true).unwrap();
        assert!(penalty_gp(&bound, &points(), -1.0, &mut tape).is_err());
    }

    #[test]
    fn interpolation_boundaries() {
        let real = Batch2D::from_points(&[[0.0, 0.0], [1.0, -1.0]]).unwrap();
        let fake = Batch2D::from_points(&[[2.0, 2.0], [3.0, 5.0]]).unwrap();
        assert_eq!(interpolate(&real, &fake, &[1.0, 1.0]).unwrap(), real);
        assert_eq!(interpolate(&real, &fake, &[0.0, 0.0]).unwrap(), fake);
        let z = interpolate(&real, &fake, &[0.25, 0.5]).unwrap();
        assert_eq!(z.point(0), [1.5, 1.5]);
        let short = Batch2D::from_points(&[[0.0, 0.0]]).unwrap();
        assert!(sample_interpolates(&mut Rng::new(0), &real, &short).is_err());
    }

    #[test]
    fn perturbation_of_identical_points_is_identity() {
        let b = Batch2D::from_points(&[[0.5, 0.5]; 6]).unwrap();
        assert_eq!(sample_local_perturbation(&mut Rng::new(3), &b, 0.5).unwrap(), b);
    }

    #[test]
    fn perturbation_guards() {
        let one = Batch2D::from_points(&[[0.5, 0.5]]).unwrap();
        assert!(sample_local_perturbation(&mut Rng::new(0), &one, 0.5).is_err());
        let two = Batch2D::from_points(&[[0.5, 0.5], [1.0, 0.0]]).unwrap();
        assert!(sample_local_perturbation(&mut Rng::new(0), &two, 0.0).is_err());
    }

    #[test]
    fn perturbation_is_deterministic() {
        let b: Batch2D<f64> = crate::data::sample_swiss_roll(&mut Rng::new(1), 32).unwrap();
        let x = sample_local_perturbation(&mut Rng::new(5), &b, 0.5).unwrap();
        let y = sample_local_perturbation(&mut Rng::new(5), &b, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn perturb_both_concatenates() {
        let mut rng = Rng::new(0);
        let real: Batch2D<f64> = crate::data::sample_8gaussians(&mut rng, 10).unwrap();
        let fake: Batch2D<f64> = crate::data::sample_8gaussians(&mut rng, 10).unwrap();
        let cfg = PenaltyConfig::gp(5.0).with_sampling(Sampling::PerturbBoth);
        let z = sample_penalty_points(&mut rng, &cfg, &real, &fake).unwrap().unwrap();
        assert_eq!(z.len(), 20);
        assert!(sample_penalty_points(&mut rng, &PenaltyConfig::clip(0.01), &real, &fake)
            .unwrap()
            .is_none());
    }

    #[test]
    fn batched_norms_match_per_row_backward() {
        let mut rng = Rng::new(11);
        let critic: MlpParams<f64> = init_mlp(&mut rng, Role::Critic, 8, Activation::Tanh).unwrap();
        let z: Batch2D<f64> = crate::data::sample_25gaussians(&mut rng, 7).unwrap();
        let batched = gradient_norm_values(&critic, &z).unwrap();
        for (i, p) in z.iter().enumerate() {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::new(vec![1, 2], p.to_vec()).unwrap()).unwrap();
            let y = critic.forward(&mut tape, x).unwrap();
            let s = tape.sum(y).unwrap();
            let g = tape.grad(s, &[x], false).unwrap()[0];
            let d = tape.value(g).data();
            let norm = (d[0] * d[0] + d[1] * d[1] + crate::autodiff::NORM_EPS).sqrt();
            assert!((norm - batched.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_parsing_and_validation() {
        for k in PenaltyKind::ALL {
            assert_eq!(k.name().parse::<PenaltyKind>().unwrap(), k);
        }
        for s in Sampling::ALL {
            assert_eq!(s.name().parse::<Sampling>().unwrap(), s);
        }
        assert!(PenaltyConfig { lambda: -3.0, ..PenaltyConfig::default() }.validate().is_err());
        assert!(PenaltyConfig { clip_c: 0.0, ..PenaltyConfig::default() }.validate().is_err());
        assert!(PenaltyConfig::lp(100.0).validate().is_ok());
    }
}
