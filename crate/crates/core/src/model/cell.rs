//! LSTM cells and the many-to-one encoder.
//!
//! Both cell kinds share one step:
//!
//! ```text
//! i = σ(Wxi ⋆ x + Whi ⋆ h + bi)
//! f = σ(Wxf ⋆ x + Whf ⋆ h + bf)
//! o = σ(Wxo ⋆ x + Who ⋆ h + bo)
//! g = tanh(Wxc ⋆ x + Whc ⋆ h + bc)
//! C' = f ∘ C + i ∘ g
//! H' = o ∘ tanh(C')
//! ```
//!
//! where `⋆` is a same-padded convolution for ConvLSTM and a matrix-vector
//! product for FC-LSTM. There are no peephole terms.

use super::ops::{Eager, Ops};
use super::ModelError;
use crate::tensor::{Tensor, TensorError};

/// Input weight, recurrent weight and bias of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate<V = Tensor> {
    pub w_x: V,
    pub w_h: V,
    pub bias: V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGates<V = Tensor> {
    pub input: Gate<V>,
    pub forget: Gate<V>,
    pub output: Gate<V>,
    pub candidate: Gate<V>,
}

/// Gate names paired with the suffix used in parameter names
/// (`w_xi`, `w_hf`, `b_o`, ...).
pub const GATES: [(&str, char); 4] = [("input", 'i'), ("forget", 'f'), ("output", 'o'), ("candidate", 'c')];

impl<V> LstmGates<V> {
    /// Builds all four gates from a lookup keyed by parameter suffix
    /// (`"w_xi"`, `"b_c"`, ...).
    pub fn try_build<E>(mut lookup: impl FnMut(&str) -> Result<V, E>) -> Result<Self, E> {
        let mut gate = |s: char| -> Result<Gate<V>, E> {
            Ok(Gate {
                w_x: lookup(&format!("w_x{s}"))?,
                w_h: lookup(&format!("w_h{s}"))?,
                bias: lookup(&format!("b_{s}"))?,
            })
        };
        Ok(Self { input: gate('i')?, forget: gate('f')?, output: gate('o')?, candidate: gate('c')? })
    }

    pub fn named(&self) -> [(&'static str, &Gate<V>); 4] {
        [("input", &self.input), ("forget", &self.forget), ("output", &self.output), ("candidate", &self.candidate)]
    }
}

/// ConvLSTM weights: `w_x*` are `[hidden, Cin, K, K]`, `w_h*` are
/// `[hidden, hidden, K, K]`, biases `[hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCellParams<V = Tensor> {
    pub gates: LstmGates<V>,
}

/// FC-LSTM weights: `w_x*` are `[hidden, in]`, `w_h*` are `[hidden, hidden]`,
/// biases `[hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLstmCellParams<V = Tensor> {
    pub gates: LstmGates<V>,
}

/// Hidden output `h` and memory `c`; identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<V = Tensor> {
    pub h: V,
    pub c: V,
}

pub trait RecurrentCell<V> {
    fn gates(&self) -> &LstmGates<V>;

    /// Zero `(h, c)` sized for input `x`.
    fn zero_state<O: Ops<V = V>>(&self, ops: &mut O, x: &V) -> Result<CellState<V>, ModelError>;

    fn check_input<O: Ops<V = V>>(&self, ops: &O, x: &V, state: &CellState<V>) -> Result<(), ModelError>;

    /// `W_x ⋆ x + W_h ⋆ h + b` for one gate.
    fn pre_activation<O: Ops<V = V>>(&self, ops: &mut O, gate: &Gate<V>, x: &V, h: &V) -> Result<V, TensorError>;
}

impl<V: Clone> RecurrentCell<V> for ConvLstmCellParams<V> {
    fn gates(&self) -> &LstmGates<V> {
        &self.gates
    }

    fn zero_state<O: Ops<V = V>>(&self, ops: &mut O, x: &V) -> Result<CellState<V>, ModelError> {
        let xs = ops.shape(x);
        if xs.len() != 3 {
            return Err(ModelError::gate(
                "input",
                TensorError::RankMismatch { op: "conv2d", expected: 3, found: xs.len() },
            ));
        }
        let hidden = ops.shape(&self.gates.input.bias)[0];
        let shape = [hidden, xs[1], xs[2]];
        Ok(CellState { h: ops.zeros(&shape), c: ops.zeros(&shape) })
    }

    fn check_input<O: Ops<V = V>>(&self, ops: &O, x: &V, state: &CellState<V>) -> Result<(), ModelError> {
        let (xs, hs, cs) = (ops.shape(x), ops.shape(&state.h), ops.shape(&state.c));
        if hs != cs {
            return Err(ModelError::StateShapes { h: hs, c: cs });
        }
        if xs.len() == 3 && hs.len() == 3 {
            for (axis, i) in [("height", 1), ("width", 2)] {
                if xs[i] != hs[i] {
                    return Err(ModelError::StateMismatch { axis, expected: xs[i], found: hs[i] });
                }
            }
        }
        Ok(())
    }

    fn pre_activation<O: Ops<V = V>>(&self, ops: &mut O, gate: &Gate<V>, x: &V, h: &V) -> Result<V, TensorError> {
        let from_x = ops.conv2d(x, &gate.w_x, Some(&gate.bias))?;
        let from_h = ops.conv2d(h, &gate.w_h, None)?;
        ops.add(&from_x, &from_h)
    }
}

impl<V: Clone> RecurrentCell<V> for FcLstmCellParams<V> {
    fn gates(&self) -> &LstmGates<V> {
        &self.gates
    }

    fn zero_state<O: Ops<V = V>>(&self, ops: &mut O, _x: &V) -> Result<CellState<V>, ModelError> {
        let hidden = ops.shape(&self.gates.input.bias)[0];
        Ok(CellState { h: ops.zeros(&[hidden]), c: ops.zeros(&[hidden]) })
    }

    fn check_input<O: Ops<V = V>>(&self, ops: &O, _x: &V, state: &CellState<V>) -> Result<(), ModelError> {
        let (hs, cs) = (ops.shape(&state.h), ops.shape(&state.c));
        if hs != cs {
            return Err(ModelError::StateShapes { h: hs, c: cs });
        }
        Ok(())
    }

    fn pre_activation<O: Ops<V = V>>(&self, ops: &mut O, gate: &Gate<V>, x: &V, h: &V) -> Result<V, TensorError> {
        let from_x = ops.affine(x, &gate.w_x, &gate.bias)?;
        ops.affine(h, &gate.w_h, &from_x)
    }
}

fn gate_activation<O, C>(
    ops: &mut O,
    cell: &C,
    name: &'static str,
    gate: &Gate<O::V>,
    x: &O::V,
    h: &O::V,
    squash: fn(&mut O, &O::V) -> O::V,
) -> Result<O::V, ModelError>
where
    O: Ops,
    C: RecurrentCell<O::V>,
{
    let pre = cell.pre_activation(ops, gate, x, h).map_err(|e| ModelError::gate(name, e))?;
    Ok(squash(ops, &pre))
}

/// One time step of either cell kind.
pub fn lstm_step<O, C>(ops: &mut O, cell: &C, x: &O::V, state: &CellState<O::V>) -> Result<CellState<O::V>, ModelError>
where
    O: Ops,
    C: RecurrentCell<O::V>,
{
    cell.check_input(ops, x, state)?;
    let g = cell.gates();
    let i = gate_activation(ops, cell, "input", &g.input, x, &state.h, O::sigmoid)?;
    let f = gate_activation(ops, cell, "forget", &g.forget, x, &state.h, O::sigmoid)?;
    let o = gate_activation(ops, cell, "output", &g.output, x, &state.h, O::sigmoid)?;
    let cand = gate_activation(ops, cell, "candidate", &g.candidate, x, &state.h, O::tanh)?;
    let kept = ops.hadamard(&f, &state.c).map_err(|e| ModelError::gate("forget", e))?;
    let written = ops.hadamard(&i, &cand).map_err(|e| ModelError::gate("input", e))?;
    let c = ops.add(&kept, &written)?;
    let squashed = ops.tanh(&c);
    let h = ops.hadamard(&o, &squashed).map_err(|e| ModelError::gate("output", e))?;
    Ok(CellState { h, c })
}

/// Runs a stack of cells over the sequence from zero states; layer `l`
/// consumes layer `l − 1`'s hidden output at every step. Returns the top
/// layer's final hidden output.
pub fn encode<O, C>(ops: &mut O, stack: &[C], seq: &[O::V]) -> Result<O::V, ModelError>
where
    O: Ops,
    C: RecurrentCell<O::V>,
{
    if seq.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if stack.is_empty() {
        return Err(ModelError::EmptyStack);
    }
    let mut states: Vec<Option<CellState<O::V>>> = vec![None; stack.len()];
    let mut top = None;
    for x in seq {
        let mut input = x.clone();
        for (cell, slot) in stack.iter().zip(states.iter_mut()) {
            let prev = match slot.take() {
                Some(s) => s,
                None => cell.zero_state(ops, &input)?,
            };
            let next = lstm_step(ops, cell, &input, &prev)?;
            input = next.h.clone();
            *slot = Some(next);
        }
        top = Some(input);
    }
    Ok(top.expect("non-empty sequence"))
}

/// Maps the encoder output to one value: a `[C, H, W]` map is globally
/// average-pooled first, a `[hidden]` vector is used directly.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHeadParams<V = Tensor> {
    /// `[1, hidden]`
    pub weight: V,
    /// `[1]`
    pub bias: V,
}

pub fn head<O: Ops>(ops: &mut O, params: &RegressionHeadParams<O::V>, h: &O::V) -> Result<O::V, ModelError> {
    let features = if ops.shape(h).len() == 3 { ops.global_avg_pool(h)? } else { h.clone() };
    Ok(ops.affine(&features, &params.weight, &params.bias)?)
}

pub fn convlstm_cell_step(p: &ConvLstmCellParams, x: &Tensor, state: &CellState) -> Result<CellState, ModelError> {
    lstm_step(&mut Eager, p, x, state)
}

pub fn fclstm_cell_step(p: &FcLstmCellParams, x: &Tensor, state: &CellState) -> Result<CellState, ModelError> {
    lstm_step(&mut Eager, p, x, state)
}

/// Eager many-to-one encoding of `seq` by `stack`.
pub fn encode_sequence<C: RecurrentCell<Tensor>>(stack: &[C], seq: &[Tensor]) -> Result<Tensor, ModelError> {
    encode(&mut Eager, stack, seq)
}

pub fn regression_head(params: &RegressionHeadParams, h: &Tensor) -> Result<f64, ModelError> {
    Ok(head(&mut Eager, params, h)?.values()[0])
}
