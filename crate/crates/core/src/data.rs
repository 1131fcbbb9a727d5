//! Seeded samplers for the 2-D toy distributions and the latent prior.
//!
//! Normal variates come from Box–Muller over the uniform stream of a
//! ChaCha8 generator, so a `(seed, stream)` pair fixes every sample bit for bit.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seedable random stream.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` derived from `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner, spare_normal: None }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform on `{0, .., n-1}`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `n` points in the plane, stored as an `[n, 2]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch2D<T> {
    points: Tensor<T>,
}

impl<T: Scalar> Batch2D<T> {
    pub fn new(points: Tensor<T>) -> Result<Self> {
        match points.dims2() {
            Some((n, 2)) if n >= 1 => {}
            _ => {
                return Err(Error::invalid(format!(
                    "a point batch must have shape [n, 2] with n >= 1, got {:?}",
                    points.shape()
                )))
            }
        }
        if !points.is_finite() {
            return Err(Error::NonFinite("point batch".into()));
        }
        Ok(Batch2D { points })
    }

    pub fn from_points(points: &[[T; 2]]) -> Result<Self> {
        let data = points.iter().flatten().copied().collect();
        Self::new(Tensor::new(vec![points.len(), 2], data)?)
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> [T; 2] {
        [self.points.at(i, 0), self.points.at(i, 1)]
    }

    pub fn iter(&self) -> impl Iterator<Item = [T; 2]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.points
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.points
    }

    pub fn concat(&self, other: &Self) -> Self {
        let points = Tensor::concat_rows(&[&self.points, &other.points])
            .expect("both operands are [n, 2]");
        Batch2D { points }
    }

    /// Applies `p -> scale * p + shift` to every point.
    pub fn affine(&self, scale: T, shift: [T; 2]) -> Result<Self> {
        let data = self
            .points
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| scale * v + shift[i % 2])
            .collect();
        Self::new(Tensor::new(vec![self.len(), 2], data)?)
    }
}

fn require_points(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("sample count must be at least 1"))
    } else {
        Ok(())
    }
}

fn batch_from_f64<T: Scalar>(n: usize, data: Vec<f64>) -> Result<Batch2D<T>> {
    Batch2D::new(Tensor::new(vec![n, 2], data.into_iter().map(T::lit).collect())?)
}

/// Eight Gaussians on a circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingSpec {
    pub radius: f64,
    pub noise_std: f64,
    pub scale: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec { radius: 2.0, noise_std: 0.02, scale: FRAC_1_SQRT_2 }
    }
}

impl RingSpec {
    /// Centers after the final scaling.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..8)
            .map(|k| {
                let a = k as f64 * PI / 4.0;
                [self.radius * a.cos() * self.scale, self.radius * a.sin() * self.scale]
            })
            .collect()
    }
}

/// Twenty-five Gaussians on a 5x5 grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub spacing: f64,
    pub noise_std: f64,
    pub scale: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { spacing: 2.0, noise_std: 0.05, scale: 1.0 / (2.0 * 2f64.sqrt()) }
    }
}

impl GridSpec {
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(25);
        for i in -2..=2 {
            for j in -2..=2 {
                out.push([
                    self.spacing * i as f64 * self.scale,
                    self.spacing * j as f64 * self.scale,
                ]);
            }
        }
        out
    }
}

/// Swiss roll projected on its first and third coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwissRollSpec {
    pub noise_std: f64,
    pub height: f64,
    pub scale: f64,
}

impl Default for SwissRollSpec {
    fn default() -> Self {
        SwissRollSpec { noise_std: 0.25, height: 21.0, scale: 1.0 / 7.5 }
    }
}

impl SwissRollSpec {
    /// Noiseless point at roll parameter `u` in `[0, 1]`.
    pub fn point(&self, u: f64) -> [f64; 2] {
        let t = 1.5 * PI * (1.0 + 2.0 * u);
        [t * t.cos() * self.scale, t * t.sin() * self.scale]
    }
}

pub fn sample_8gaussians<T: Scalar>(rng: &mut Rng, n: usize) -> Result<Batch2D<T>> {
    sample_ring(rng, n, &RingSpec::default())
}

pub fn sample_ring<T: Scalar>(rng: &mut Rng, n: usize, spec: &RingSpec) -> Result<Batch2D<T>> {
    require_points(n)?;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let a = rng.below(8) as f64 * PI / 4.0;
        let x = spec.radius * a.cos() + spec.noise_std * rng.normal();
        let y = spec.radius * a.sin() + spec.noise_std * rng.normal();
        data.push(x * spec.scale);
        data.push(y * spec.scale);
    }
    batch_from_f64(n, data)
}

pub fn sample_25gaussians<T: Scalar>(rng: &mut Rng, n: usize) -> Result<Batch2D<T>> {
    sample_grid(rng, n, &GridSpec::default())
}

pub fn sample_grid<T: Scalar>(rng: &mut Rng, n: usize, spec: &GridSpec) -> Result<Batch2D<T>> {
    require_points(n)?;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let cell = rng.below(25);
        let cx = (cell / 5) as f64 - 2.0;
        let cy = (cell % 5) as f64 - 2.0;
        let x = spec.spacing * cx + spec.noise_std * rng.normal();
        let y = spec.spacing * cy + spec.noise_std * rng.normal();
        data.push(x * spec.scale);
        data.push(y * spec.scale);
    }
    batch_from_f64(n, data)
}

pub fn sample_swiss_roll<T: Scalar>(rng: &mut Rng, n: usize) -> Result<Batch2D<T>> {
    sample_swiss_roll_with(rng, n, &SwissRollSpec::default())
}

pub fn sample_swiss_roll_with<T: Scalar>(
    rng: &mut Rng,
    n: usize,
    spec: &SwissRollSpec,
) -> Result<Batch2D<T>> {
    require_points(n)?;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = 1.5 * PI * (1.0 + 2.0 * rng.uniform());
        // the height coordinate is drawn and noised, then dropped
        let _height = spec.height * rng.uniform();
        let x = t * t.cos() + spec.noise_std * rng.normal();
        let _ = spec.noise_std * rng.normal();
        let z = t * t.sin() + spec.noise_std * rng.normal();
        data.push(x * spec.scale);
        data.push(z * spec.scale);
    }
    batch_from_f64(n, data)
}

/// `[n, dim]` i.i.d. standard normal draws.
pub fn sample_latent<T: Scalar>(rng: &mut Rng, n: usize, dim: usize) -> Result<Tensor<T>> {
    require_points(n)?;
    if dim == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    let data = (0..n * dim).map(|_| T::lit(rng.normal())).collect();
    Tensor::new(vec![n, dim], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dataset {
    EightGaussians,
    TwentyFiveGaussians,
    SwissRoll,
}

impl Dataset {
    pub const ALL: [Dataset; 3] =
        [Dataset::EightGaussians, Dataset::TwentyFiveGaussians, Dataset::SwissRoll];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::EightGaussians => "8gaussians",
            Dataset::TwentyFiveGaussians => "25gaussians",
            Dataset::SwissRoll => "swissroll",
        }
    }

    pub fn sample<T: Scalar>(self, rng: &mut Rng, n: usize) -> Result<Batch2D<T>> {
        match self {
            Dataset::EightGaussians => sample_8gaussians(rng, n),
            Dataset::TwentyFiveGaussians => sample_25gaussians(rng, n),
            Dataset::SwissRoll => sample_swiss_roll(rng, n),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset '{s}' (8gaussians, 25gaussians, swissroll)")))
    }
}

/// Writes `x,y` CSV with 17 significant digits per value.
pub fn write_points_csv<T: Scalar, W: Write>(out: &mut W, batch: &Batch2D<T>) -> std::io::Result<()> {
    writeln!(out, "x,y")?;
    for [x, y] in batch.iter() {
        let (x, y) = (x.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(f64::NAN));
        writeln!(out, "{x:.16e},{y:.16e}")?;
    }
    Ok(())
}

pub fn read_points_csv(text: &str) -> Result<Batch2D<f64>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("x,y") {
        return Err(Error::Format("point CSV must start with the header 'x,y'".into()));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("line {}: expected two numbers", i + 2)))
        };
        let mut cols = line.split(',');
        points.push([parse(cols.next())?, parse(cols.next())?]);
    }
    Batch2D::from_points(&points)
}
