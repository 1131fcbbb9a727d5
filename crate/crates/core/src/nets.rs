//! Generator and critic perceptrons, RMSProp, and weight clipping.
//!
//! Both networks have exactly three hidden layers. Hidden layers apply the
//! configured activation; the output layer is affine.
//!
//! # Checkpoint layout
//!
//! A network is serialized as an ASCII header followed by raw values:
//!
//! ```text
//! lipgan-mlp 1
//! role critic
//! activation relu
//! scalar f64
//! dims 2 512 512 512 1
//! data
//! ```
//!
//! After the `data` line come, layer by layer, the weight matrix
//! (`d_in x d_out`, row-major) and then the bias (`d_out`), every entry as an
//! 8-byte little-endian IEEE-754 double. Several networks may follow each
//! other in one file.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const HIDDEN_LAYERS: usize = 3;
pub const LATENT_DIM: usize = 2;
pub const DEFAULT_HIDDEN_WIDTH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::invalid(format!("unknown activation '{s}' (relu, tanh)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Generator,
    Critic,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Critic => "critic",
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            Role::Generator => 2,
            Role::Critic => 1,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(Role::Generator),
            "critic" => Ok(Role::Critic),
            _ => Err(Error::invalid(format!("unknown role '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `[d_in, d_out]`
    pub weight: Tensor<T>,
    /// `[d_out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, d_out) = weight
            .dims2()
            .ok_or_else(|| Error::invalid(format!("weight must be a matrix, got {:?}", weight.shape())))?;
        if bias.shape() != [d_out] {
            return Err(Error::invalid(format!(
                "bias shape {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Layer { weight, bias })
    }

    fn dims(&self) -> (usize, usize) {
        self.weight.dims2().expect("validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
    role: Role,
}

pub fn init_mlp<T: Scalar>(
    rng: &mut Rng,
    role: Role,
    hidden_width: usize,
    activation: Activation,
) -> Result<MlpParams<T>> {
    let input = match role {
        Role::Generator => LATENT_DIM,
        Role::Critic => 2,
    };
    init_mlp_with_input(rng, role, input, hidden_width, activation)
}

/// He-normal weights `N(0, 2 / d_in)`, zero biases.
pub fn init_mlp_with_input<T: Scalar>(
    rng: &mut Rng,
    role: Role,
    input_dim: usize,
    hidden_width: usize,
    activation: Activation,
) -> Result<MlpParams<T>> {
    if hidden_width == 0 || input_dim == 0 {
        return Err(Error::invalid("layer widths must be at least 1"));
    }
    let mut dims = vec![input_dim];
    dims.extend([hidden_width; HIDDEN_LAYERS]);
    dims.push(role.output_dim());
    let layers = dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let std = (2.0 / d_in as f64).sqrt();
            let data = (0..d_in * d_out).map(|_| T::lit(std * rng.normal())).collect();
            Layer::new(Tensor::new(vec![d_in, d_out], data)?, Tensor::zeros(&[d_out]))
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(role, activation, layers)
}

/// ReLU critic computing exactly `w . x + c`, as `relu(w . x) - relu(-w . x) + c`
/// with identity hidden layers. Its input gradient is `w` everywhere except
/// on the line `w . x = 0`, where the subgradient is 0.
pub fn affine_critic<T: Scalar>(w: [T; 2], c: T) -> MlpParams<T> {
    let (zero, one) = (T::zero(), T::one());
    let m = |shape: &[usize], d: Vec<T>| Tensor::new(shape.to_vec(), d).expect("shape matches data");
    let identity = || Layer { weight: m(&[2, 2], vec![one, zero, zero, one]), bias: Tensor::zeros(&[2]) };
    let layers = vec![
        Layer { weight: m(&[2, 2], vec![w[0], -w[0], w[1], -w[1]]), bias: Tensor::zeros(&[2]) },
        identity(),
        identity(),
        Layer { weight: m(&[2, 1], vec![one, -one]), bias: m(&[1], vec![c]) },
    ];
    MlpParams { layers, activation: Activation::Relu, role: Role::Critic }
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(role: Role, activation: Activation, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.len() != HIDDEN_LAYERS + 1 {
            return Err(Error::invalid(format!(
                "expected {} layers ({HIDDEN_LAYERS} hidden), got {}",
                HIDDEN_LAYERS + 1,
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].dims().1 != pair[1].dims().0 {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].dims().1,
                    i + 1,
                    pair[1].dims().0
                )));
            }
        }
        let input = layers[0].dims().0;
        let output = layers[HIDDEN_LAYERS].dims().1;
        if output != role.output_dim() || (role == Role::Critic && input != 2) {
            return Err(Error::invalid(format!(
                "{} must map {} -> {}, got {input} -> {output}",
                role.name(),
                if role == Role::Critic { "2" } else { "latent" },
                role.output_dim()
            )));
        }
        Ok(MlpParams { layers, activation, role })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dims().0
    }

    pub fn output_dim(&self) -> usize {
        self.role.output_dim()
    }

    /// `[d_0, d_1, .., d_out]`
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.dims().1));
        dims
    }

    /// Weights and biases in layer order: `w0, b0, w1, b1, ..`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Human-readable name of the `i`-th tensor in [`tensors`](Self::tensors) order.
    pub fn tensor_name(&self, i: usize) -> String {
        let kind = if i.is_multiple_of(2) { "weight" } else { "bias" };
        format!("{} layer {} {kind}", self.role.name(), i / 2)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    pub fn max_abs(&self) -> T {
        self.tensors().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Same architecture with parameters replaced by `flat` (in [`to_flat`](Self::to_flat) order).
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// Records the parameters on `tape`: differentiable leaves when
    /// `trainable`, constants otherwise.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<BoundMlp> {
        let mut leaf = |t: &Tensor<T>| {
            if trainable {
                tape.input(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| Ok((leaf(&l.weight)?, leaf(&l.bias)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundMlp { layers, activation: self.activation, input_dim: self.input_dim() })
    }

    /// Forward pass with the parameters recorded as constants.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.bind(tape, false)?.forward(tape, x)
    }

    /// Forward pass on plain tensors, without a tape.
    pub fn evaluate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let y = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Clamps every weight and bias into `[-c, c]`.
    pub fn clip_weights(&mut self, c: T) -> Result<()> {
        if c <= T::zero() || !c.is_finite() {
            return Err(Error::invalid(format!("clip bound must be positive, got {c}")));
        }
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = v.max(-c).min(c);
            }
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let dims: Vec<String> = self.dims().iter().map(usize::to_string).collect();
        write!(
            out,
            "lipgan-mlp 1\nrole {}\nactivation {}\nscalar {}\ndims {}\ndata\n",
            self.role.name(),
            self.activation.name(),
            T::NAME,
            dims.join(" ")
        )?;
        let mut buf = Vec::with_capacity(8 * self.num_params());
        for t in self.tensors() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut header = |key: &str| -> Result<String> {
            let mut line = String::new();
            input
                .read_line(&mut line)
                .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
            let line = line.trim_end_matches('\n');
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ if line == key => Ok(String::new()),
                _ => Err(Error::Format(format!("checkpoint: expected '{key}', found '{line}'"))),
            }
        };
        if header("lipgan-mlp")? != "1" {
            return Err(Error::Format("checkpoint: unsupported version".into()));
        }
        let role: Role = header("role")?.parse()?;
        let activation: Activation = header("activation")?.parse()?;
        let scalar = header("scalar")?;
        if scalar != T::NAME {
            return Err(Error::Format(format!(
                "checkpoint holds {scalar} parameters, expected {}",
                T::NAME
            )));
        }
        let dims = header("dims")?
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("checkpoint dims: {e}")))?;
        header("data")?;
        if dims.len() != HIDDEN_LAYERS + 2 {
            return Err(Error::Format(format!("checkpoint: bad dims {dims:?}")));
        }
        let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor<T>> {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 8 * n];
            input
                .read_exact(&mut bytes)
                .map_err(|e| Error::Format(format!("checkpoint payload: {e}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            Tensor::new(shape, data)
        };
        let layers = dims
            .windows(2)
            .map(|w| Layer::new(read_tensor(vec![w[0], w[1]])?, read_tensor(vec![w[1]])?))
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(role, activation, layers)
    }
}

/// Parameters of an [`MlpParams`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    input_dim: usize,
}

impl BoundMlp {
    /// Parameter nodes in `w0, b0, w1, b1, ..` order.
    pub fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// `x: [n, d_in] -> [n, d_out]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let n = match tape.shape(x) {
            &[n, d] if d == self.input_dim => n,
            other => {
                return Err(Error::Shape {
                    op: "mlp forward",
                    shapes: vec![other.to_vec(), vec![usize::MAX, self.input_dim]],
                })
            }
        };
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let d_out = tape.shape(z)[1];
            let bias = tape.broadcast(b, &[n, d_out])?;
            h = tape.add(z, bias)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig<T> {
    pub learning_rate: T,
    pub decay: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for RmsPropConfig<T> {
    fn default() -> Self {
        RmsPropConfig { learning_rate: T::lit(5e-5), decay: T::lit(0.9), epsilon: T::lit(1e-10) }
    }
}

impl<T: Scalar> RmsPropConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > T::zero()
            && self.learning_rate.is_finite()
            && self.decay > T::zero()
            && self.decay < T::one()
            && self.epsilon > T::zero()
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid RMSProp settings {self:?}")))
        }
    }
}

/// Plain RMSProp (no momentum):
/// `ms = decay * ms + (1 - decay) * g^2; p -= lr * g / (sqrt(ms) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T> {
    config: RmsPropConfig<T>,
    mean_square: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    /// Zeroed accumulators for parameters of the given shapes.
    pub fn new(config: RmsPropConfig<T>, shapes: &[&[usize]]) -> Result<Self> {
        config.validate()?;
        Ok(RmsProp { config, mean_square: shapes.iter().map(|s| Tensor::zeros(s)).collect() })
    }

    pub fn for_mlp(config: RmsPropConfig<T>, params: &MlpParams<T>) -> Result<Self> {
        let shapes: Vec<&[usize]> = params.tensors().map(Tensor::shape).collect();
        Self::new(config, &shapes)
    }

    pub fn config(&self) -> &RmsPropConfig<T> {
        &self.config
    }

    pub fn mean_square(&self) -> &[Tensor<T>] {
        &self.mean_square
    }

    pub fn mean_square_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.mean_square
    }

    /// One update of `params` from `grads`. Nothing is modified on error.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor<T>], names: impl Fn(usize) -> String) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor<T>>,
    {
        let mut params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != grads.len() || params.len() != self.mean_square.len() {
            return Err(Error::invalid(format!(
                "{} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.mean_square.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.mean_square[i].shape() != g.shape() {
                return Err(Error::Shape {
                    op: "rmsprop",
                    shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", names(i))));
            }
        }
        let RmsPropConfig { learning_rate: lr, decay, epsilon } = self.config;
        let keep = T::one() - decay;
        for ((p, g), ms) in params.iter_mut().zip(grads).zip(&mut self.mean_square) {
            for ((pv, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(ms.data_mut()) {
                *mv = decay * *mv + keep * gv * gv;
                *pv -= lr * gv / (mv.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// [`step`](Self::step) over the tensors of an MLP.
    pub fn step_mlp(&mut self, params: &mut MlpParams<T>, grads: &[Tensor<T>]) -> Result<()> {
        let names: Vec<String> = (0..grads.len()).map(|i| params.tensor_name(i)).collect();
        self.step(params.tensors_mut(), grads, |i| names[i].clone())
    }
}
