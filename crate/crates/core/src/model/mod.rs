//! The model zoo: linear regression, FC-LSTM and ConvLSTM encoders with a
//! scalar regression head.

mod cell;
mod checkpoint;
mod init;
mod ops;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph};
use crate::data::{normalize_with, Dims, RadarRecord, REFLECTIVITY_SCALE};
use crate::tensor::{avg_pool2d, Tensor, TensorError};

pub use cell::{
    convlstm_cell_step, encode, encode_sequence, fclstm_cell_step, head, lstm_step, regression_head, CellState,
    ConvLstmCellParams, FcLstmCellParams, Gate, LstmGates, RecurrentCell, RegressionHeadParams, GATES,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use init::{glorot_limit, init_params, FORGET_BIAS};
pub use ops::{Eager, Ops};

/// Parameters keyed by name, e.g. `layer0.w_xi` or `head.bias`.
pub type NamedTensors = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{gate} gate: {source}")]
    Gate {
        gate: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("cell state {axis} is {found} but the input has {expected}")]
    StateMismatch { axis: &'static str, expected: usize, found: usize },
    #[error("cell state shapes differ: h {h:?}, c {c:?}")]
    StateShapes { h: Vec<usize>, c: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("cell stack is empty")]
    EmptyStack,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("record dimensions {found} do not match the model's {expected}")]
    DimsMismatch { expected: Dims, found: Dims },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

impl ModelError {
    pub(crate) fn gate(gate: &'static str, source: TensorError) -> Self {
        ModelError::Gate { gate, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    FcLstm,
    ConvLstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::FcLstm => "fc-lstm",
            ModelKind::ConvLstm => "conv-lstm",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ModelKind::Linear => 0,
            ModelKind::FcLstm => 1,
            ModelKind::ConvLstm => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Linear),
            1 => Some(ModelKind::FcLstm),
            2 => Some(ModelKind::ConvLstm),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "fc-lstm" => Ok(ModelKind::FcLstm),
            "conv-lstm" => Ok(ModelKind::ConvLstm),
            _ => Err(format!("unknown model kind `{s}` (expected linear, fc-lstm or conv-lstm)")),
        }
    }
}

/// Architecture and input geometry. `stacks`, `hidden` and `kernel` are
/// ignored by the linear kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub stacks: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// Non-overlapping average-pooling factor applied to every input frame.
    pub pool: usize,
    /// Raw record geometry before pooling.
    pub input: Dims,
    /// Reflectivity divisor applied before pooling.
    pub input_scale: f64,
}

impl ModelSpec {
    pub const DEFAULT_HIDDEN: usize = 8;
    pub const DEFAULT_KERNEL: usize = 3;

    pub fn new(kind: ModelKind, input: Dims) -> Self {
        Self {
            kind,
            stacks: if kind == ModelKind::ConvLstm { 2 } else { 1 },
            hidden: Self::DEFAULT_HIDDEN,
            kernel: Self::DEFAULT_KERNEL,
            pool: 1,
            input,
            input_scale: REFLECTIVITY_SCALE,
        }
    }

    pub fn conv_lstm(input: Dims) -> Self {
        Self::new(ModelKind::ConvLstm, input)
    }

    pub fn fc_lstm(input: Dims) -> Self {
        Self::new(ModelKind::FcLstm, input)
    }

    pub fn linear(input: Dims) -> Self {
        Self::new(ModelKind::Linear, input)
    }

    pub fn with_stacks(mut self, stacks: usize) -> Self {
        self.stacks = stacks;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_pool(mut self, pool: usize) -> Self {
        self.pool = pool;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.input.validate().is_err() {
            return bad(format!("input dimensions {} must all be >= 1", self.input));
        }
        if self.pool == 0 {
            return bad("pool factor must be >= 1".into());
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad(format!("input scale must be positive, got {}", self.input_scale));
        }
        if self.kind != ModelKind::Linear {
            if self.stacks == 0 {
                return bad("stacks must be >= 1".into());
            }
            if self.hidden == 0 {
                return bad("hidden must be >= 1".into());
            }
        }
        if self.kind == ModelKind::ConvLstm && self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }

    /// Frame geometry `(C, H, W)` after pooling.
    pub fn pooled(&self) -> (usize, usize, usize) {
        let p = self.pool.max(1);
        (self.input.c, self.input.h.div_ceil(p), self.input.w.div_ceil(p))
    }

    /// Every parameter's name and shape, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, h, w) = self.pooled();
        let mut out = Vec::new();
        match self.kind {
            ModelKind::Linear => {
                out.push(("linear.weight".to_string(), vec![1, self.input.t * c * h * w]));
                out.push(("linear.bias".to_string(), vec![1]));
                return out;
            }
            ModelKind::FcLstm | ModelKind::ConvLstm => {
                let conv = self.kind == ModelKind::ConvLstm;
                let k = self.kernel;
                for layer in 0..self.stacks {
                    let inp = match (conv, layer) {
                        (true, 0) => c,
                        (false, 0) => c * h * w,
                        _ => self.hidden,
                    };
                    for (_, s) in GATES {
                        let (wx, wh) = if conv {
                            (vec![self.hidden, inp, k, k], vec![self.hidden, self.hidden, k, k])
                        } else {
                            (vec![self.hidden, inp], vec![self.hidden, self.hidden])
                        };
                        out.push((format!("layer{layer}.w_x{s}"), wx));
                        out.push((format!("layer{layer}.w_h{s}"), wh));
                        out.push((format!("layer{layer}.b_{s}"), vec![self.hidden]));
                    }
                }
            }
        }
        out.push(("head.weight".to_string(), vec![1, self.hidden]));
        out.push(("head.bias".to_string(), vec![1]));
        out
    }
}

/// A model specification together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: NamedTensors,
}

impl Model {
    /// Checks that `params` holds exactly the tensors `spec` calls for.
    pub fn new(spec: ModelSpec, params: NamedTensors) -> Result<Self, ModelError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        for (name, shape) in &shapes {
            let t = params.get(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.keys().find(|k| !shapes.iter().any(|(n, _)| n == *k)) {
            return Err(ModelError::UnexpectedParam(extra.clone()));
        }
        Ok(Self { spec, params })
    }

    /// Freshly initialized model; see [`init_params`].
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    /// All-zero parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = spec.param_shapes().into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).collect();
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &NamedTensors {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Replaces one parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let slot = self.params.get_mut(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::ParamShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut NamedTensors {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Network inputs for one record: normalized, pooled frames shaped
    /// `[C, H, W]` (ConvLSTM) or flattened (FC-LSTM); the linear kind gets
    /// a single vector of all `T·C·H·W` values.
    pub fn prepare(&self, record: &RadarRecord) -> Result<Vec<Tensor>, ModelError> {
        if record.dims() != self.spec.input {
            return Err(ModelError::DimsMismatch { expected: self.spec.input, found: record.dims() });
        }
        let frames = normalize_with(record, self.spec.input_scale)
            .into_iter()
            .map(|f| avg_pool2d(&f, self.spec.pool))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match self.spec.kind {
            ModelKind::ConvLstm => frames,
            ModelKind::FcLstm => frames.into_iter().map(Tensor::flatten).collect(),
            ModelKind::Linear => {
                let all: Vec<f64> = frames.into_iter().flat_map(Tensor::into_values).collect();
                vec![Tensor::from_vec(all)]
            }
        })
    }

    /// Builds the model's output (shape `[1]`) from prepared inputs with any
    /// [`Ops`] backend. `param` resolves a parameter name to a value.
    pub fn forward<O: Ops>(
        &self,
        ops: &mut O,
        param: &mut impl FnMut(&mut O, &str) -> Result<O::V, ModelError>,
        inputs: &[O::V],
    ) -> Result<O::V, ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        match self.spec.kind {
            ModelKind::Linear => {
                let w = param(ops, "linear.weight")?;
                let b = param(ops, "linear.bias")?;
                Ok(ops.affine(&inputs[0], &w, &b)?)
            }
            ModelKind::ConvLstm => {
                let stack = (0..self.spec.stacks)
                    .map(|l| {
                        LstmGates::try_build(|s| param(ops, &format!("layer{l}.{s}")))
                            .map(|gates| ConvLstmCellParams { gates })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let h = encode(ops, &stack, inputs)?;
                let hp = RegressionHeadParams { weight: param(ops, "head.weight")?, bias: param(ops, "head.bias")? };
                head(ops, &hp, &h)
            }
            ModelKind::FcLstm => {
                let stack = (0..self.spec.stacks)
                    .map(|l| {
                        LstmGates::try_build(|s| param(ops, &format!("layer{l}.{s}")))
                            .map(|gates| FcLstmCellParams { gates })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let h = encode(ops, &stack, inputs)?;
                let hp = RegressionHeadParams { weight: param(ops, "head.weight")?, bias: param(ops, "head.bias")? };
                head(ops, &hp, &h)
            }
        }
    }

    fn lookup(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.params.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn predict_prepared(&self, inputs: &[Tensor]) -> Result<f64, ModelError> {
        let out = self.forward(&mut Eager, &mut |_, name| self.lookup(name).cloned(), inputs)?;
        Ok(out.values()[0])
    }

    /// normalize → pool → encode → head for one record.
    pub fn predict(&self, record: &RadarRecord) -> Result<f64, ModelError> {
        self.predict_prepared(&self.prepare(record)?)
    }

    /// Differentiable graph whose last node is `(prediction − label)²`;
    /// every model parameter is registered under its own name.
    pub fn loss_graph(&self, inputs: &[Tensor], label: f64) -> Result<Graph, ModelError> {
        let mut g = Graph::new();
        let xs: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let pred =
            self.forward(&mut g, &mut |g: &mut Graph, name: &str| Ok(g.param(name, self.lookup(name)?.clone())?), &xs)?;
        let target = g.constant(Tensor::scalar(label));
        g.squared_error(pred, target)?;
        Ok(g)
    }
}
