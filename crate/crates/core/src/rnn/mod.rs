//! Two-layer recurrent networks scored by a single sigmoid output neuron.
//!
//! The architecture is `Rec_N -> Rec_M -> sigm_1` where the recurrent cell
//! is a GRU, an LSTM, or an nBRC. Parameters live in one flat `f64` buffer
//! whose layout is derived from the architecture; the optimizer, the model
//! file format and the finite-difference checks all work on that buffer,
//! while the cell math reads it through typed block views.
//!
//! Gradients are exact: the loss is binary cross-entropy on the final output
//! and backpropagation through time unrolls the full trajectory, never a
//! truncated suffix.

mod io;
mod steps;

pub use io::{load_model_file, read_model, save_model_file, write_model};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::Trajectory;

/// Probability clamp used when turning the sigmoid output into a
/// cross-entropy loss. Gradients are computed from the unclamped
/// pre-activation, so the clamp only guards the logarithms.
pub const DEFAULT_PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
    Nbrc,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Gru, CellKind::Lstm, CellKind::Nbrc];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
            CellKind::Nbrc => "nbrc",
        }
    }

    /// Number of input-weight blocks (each `hidden x input`).
    pub(crate) fn input_gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
            CellKind::Nbrc => 3,
        }
    }

    /// Number of recurrent-weight blocks (each `hidden x hidden`).
    pub(crate) fn recurrent_gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
            CellKind::Nbrc => 2,
        }
    }

    /// Number of bias blocks (each `hidden`). The nBRC recurrence has none.
    pub(crate) fn bias_gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
            CellKind::Nbrc => 0,
        }
    }

    fn gate_names(self) -> (&'static [&'static str], &'static [&'static str], &'static [&'static str]) {
        match self {
            CellKind::Gru => (&["z", "r", "h"], &["z", "r", "h"], &["z", "r", "h"]),
            CellKind::Lstm => (&["i", "f", "g", "o"], &["i", "f", "g", "o"], &["i", "f", "g", "o"]),
            CellKind::Nbrc => (&["a", "c", "h"], &["a", "c"], &[]),
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            "nbrc" => Ok(CellKind::Nbrc),
            other => Err(Error::config(format!("unknown cell kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network shape: cell kind, the two recurrent widths `N` and `M`, and the
/// input feature count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub cell_kind: CellKind,
    pub first_layer: usize,
    pub second_layer: usize,
    pub input_dim: usize,
}

impl Architecture {
    pub fn new(
        cell_kind: CellKind,
        first_layer: usize,
        second_layer: usize,
        input_dim: usize,
    ) -> Result<Self> {
        if first_layer < 1 || second_layer < 1 || input_dim < 1 {
            return Err(Error::config(
                "layer widths and input dimension must be at least 1",
            ));
        }
        Ok(Architecture {
            cell_kind,
            first_layer,
            second_layer,
            input_dim,
        })
    }

    /// `(input, hidden)` dimensions of layer 0 or 1.
    pub(crate) fn layer_dims(&self, layer: usize) -> (usize, usize) {
        match layer {
            0 => (self.input_dim, self.first_layer),
            1 => (self.first_layer, self.second_layer),
            _ => unreachable!("two recurrent layers"),
        }
    }

    fn layer_param_len(&self, layer: usize) -> usize {
        let (i, h) = self.layer_dims(layer);
        let k = self.cell_kind;
        k.input_gates() * h * i + k.recurrent_gates() * h * h + k.bias_gates() * h
    }

    pub(crate) fn layer_offset(&self, layer: usize) -> usize {
        match layer {
            0 => 0,
            1 => self.layer_param_len(0),
            _ => unreachable!(),
        }
    }

    pub(crate) fn output_offset(&self) -> usize {
        self.layer_param_len(0) + self.layer_param_len(1)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.output_offset() + self.second_layer + 1
    }

    /// The per-tensor layout of the flat parameter buffer, in declared
    /// (also serialization) order.
    pub fn layout(&self) -> Layout {
        let mut tensors = Vec::new();
        let mut offset = 0usize;
        for layer in 0..2 {
            let (i, h) = self.layer_dims(layer);
            let (in_names, rec_names, bias_names) = self.cell_kind.gate_names();
            for name in in_names {
                tensors.push(TensorSpec {
                    name: format!("l{}.in_{}", layer + 1, name),
                    shape: TensorShape::Matrix { rows: h, cols: i },
                    offset,
                });
                offset += h * i;
            }
            for name in rec_names {
                tensors.push(TensorSpec {
                    name: format!("l{}.rec_{}", layer + 1, name),
                    shape: TensorShape::Matrix { rows: h, cols: h },
                    offset,
                });
                offset += h * h;
            }
            for name in bias_names {
                tensors.push(TensorSpec {
                    name: format!("l{}.bias_{}", layer + 1, name),
                    shape: TensorShape::Vector { len: h },
                    offset,
                });
                offset += h;
            }
        }
        tensors.push(TensorSpec {
            name: "out.w".into(),
            shape: TensorShape::Vector {
                len: self.second_layer,
            },
            offset,
        });
        offset += self.second_layer;
        tensors.push(TensorSpec {
            name: "out.b".into(),
            shape: TensorShape::Scalar,
            offset,
        });
        offset += 1;
        debug_assert_eq!(offset, self.parameter_count());
        Layout { tensors }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorShape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
    Scalar,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        match *self {
            TensorShape::Matrix { rows, cols } => rows * cols,
            TensorShape::Vector { len } => len,
            TensorShape::Scalar => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: TensorShape,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn total_len(&self) -> usize {
        self.tensors
            .last()
            .map(|t| t.offset + t.shape.len())
            .unwrap_or(0)
    }

    /// Name of the tensor containing the given flat index.
    pub fn name_at(&self, index: usize) -> &str {
        let pos = self
            .tensors
            .partition_point(|t| t.offset + t.shape.len() <= index);
        self.tensors
            .get(pos)
            .map(|t| t.name.as_str())
            .unwrap_or("out of range")
    }
}

/// All weights of one network in a flat buffer, plus the seed that
/// initialized them.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters {
    arch: Architecture,
    seed: u64,
    data: Vec<f64>,
}

impl NetworkParameters {
    pub(crate) fn from_parts(arch: Architecture, seed: u64, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.parameter_count() {
            return Err(Error::ModelFile(format!(
                "parameter buffer has {} values, architecture needs {}",
                data.len(),
                arch.parameter_count()
            )));
        }
        Ok(NetworkParameters { arch, seed, data })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Typed view of one recurrent layer (0 or 1).
    pub fn layer(&self, layer: usize) -> LayerParams<'_> {
        let (input, hidden) = self.arch.layer_dims(layer);
        let offset = self.arch.layer_offset(layer);
        let len = self.arch.layer_param_len(layer);
        LayerParams {
            kind: self.arch.cell_kind,
            input,
            hidden,
            data: &self.data[offset..offset + len],
        }
    }

    /// Output-layer weights and bias.
    pub fn output(&self) -> (&[f64], f64) {
        let off = self.arch.output_offset();
        let m = self.arch.second_layer;
        (&self.data[off..off + m], self.data[off + m])
    }

    /// The slice belonging to a named tensor, for inspection and tests.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let layout = self.arch.layout();
        let spec = layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.data[spec.offset..spec.offset + spec.shape.len()])
    }
}

/// View of one layer's parameters inside the flat buffer.
#[derive(Clone, Copy)]
pub struct LayerParams<'a> {
    pub(crate) kind: CellKind,
    pub(crate) input: usize,
    pub(crate) hidden: usize,
    pub(crate) data: &'a [f64],
}

impl<'a> LayerParams<'a> {
    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Input-weight block, `gates*hidden x input`, row-major.
    pub(crate) fn input_block(&self) -> &'a [f64] {
        &self.data[..self.kind.input_gates() * self.hidden * self.input]
    }

    /// Recurrent-weight block, `gates*hidden x hidden`, row-major.
    pub(crate) fn recurrent_block(&self) -> &'a [f64] {
        let start = self.kind.input_gates() * self.hidden * self.input;
        let len = self.kind.recurrent_gates() * self.hidden * self.hidden;
        &self.data[start..start + len]
    }

    /// Bias block, `gates*hidden`; empty for nBRC.
    pub(crate) fn bias_block(&self) -> &'a [f64] {
        let start = self.kind.input_gates() * self.hidden * self.input
            + self.kind.recurrent_gates() * self.hidden * self.hidden;
        &self.data[start..start + self.kind.bias_gates() * self.hidden]
    }
}

/// Recurrent state of one layer: the hidden vector, plus the cell-memory
/// vector for LSTM layers. Zero-initialized at sequence start.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: if kind == CellKind::Lstm {
                vec![0.0; hidden]
            } else {
                Vec::new()
            },
        }
    }
}

/// Full network state across both recurrent layers.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub layer1: CellState,
    pub layer2: CellState,
}

impl HiddenState {
    pub fn zeros(arch: &Architecture) -> Self {
        HiddenState {
            layer1: CellState::zeros(arch.cell_kind, arch.first_layer),
            layer2: CellState::zeros(arch.cell_kind, arch.second_layer),
        }
    }
}

/// One gradient per parameter, in the same flat layout as
/// [`NetworkParameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    arch: Architecture,
    data: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(arch: &Architecture) -> Self {
        GradientSet {
            arch: *arch,
            data: vec![0.0; arch.parameter_count()],
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds `scale * other` element-wise.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Index and tensor name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, String)> {
        let idx = self.data.iter().position(|v| !v.is_finite())?;
        Some((idx, self.arch.layout().name_at(idx).to_string()))
    }
}

/// Draws initial weights deterministically from `(arch, seed)`: matrices
/// uniform in `±sqrt(6/(fan_in+fan_out))`, biases zero except the LSTM
/// forget bias, which starts at 1.
pub fn init_parameters(arch: &Architecture, seed: u64) -> NetworkParameters {
    let layout = arch.layout();
    let mut data = vec![0.0; arch.parameter_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in &layout.tensors {
        match spec.shape {
            TensorShape::Matrix { rows, cols } => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                for v in &mut data[spec.offset..spec.offset + rows * cols] {
                    *v = rng.gen_range(-limit..limit);
                }
            }
            TensorShape::Vector { len } => {
                let fill = if spec.name.ends_with("bias_f") { 1.0 } else { 0.0 };
                for v in &mut data[spec.offset..spec.offset + len] {
                    *v = fill;
                }
            }
            TensorShape::Scalar => data[spec.offset] = 0.0,
        }
    }
    NetworkParameters {
        arch: *arch,
        seed,
        data,
    }
}

/// Applies one cell recurrence and returns the next state.
pub fn cell_step(layer: &LayerParams<'_>, x: &[f64], state: &CellState) -> Result<CellState> {
    if x.len() != layer.input {
        return Err(Error::config(format!(
            "input has {} features, layer expects {}",
            x.len(),
            layer.input
        )));
    }
    let mut next = state.clone();
    steps::step(layer, x, &state.h, &state.c, &mut next.h, &mut next.c, None);
    for (j, v) in next.h.iter().chain(next.c.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::numeric(format!("cell state component {j}")));
        }
    }
    Ok(next)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Output probability, clamped strictly inside (0, 1).
fn output_probability(params: &NetworkParameters, h2: &[f64]) -> f64 {
    let (w, b) = params.output();
    let z = steps::dot(w, h2) + b;
    sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0_f64.next_down())
}

/// Runs both recurrent layers over the whole trajectory from zero states and
/// applies the sigmoid output neuron to the final second-layer state.
pub fn forward(params: &NetworkParameters, trajectory: &Trajectory) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let arch = params.arch;
    let l1 = params.layer(0);
    let l2 = params.layer(1);
    let mut s1 = CellState::zeros(arch.cell_kind, arch.first_layer);
    let mut s2 = CellState::zeros(arch.cell_kind, arch.second_layer);
    let mut h1_next = vec![0.0; arch.first_layer];
    let mut c1_next = vec![0.0; if arch.cell_kind == CellKind::Lstm { arch.first_layer } else { 0 }];
    let mut h2_next = vec![0.0; arch.second_layer];
    let mut c2_next =
        vec![0.0; if arch.cell_kind == CellKind::Lstm { arch.second_layer } else { 0 }];
    for (t, day) in trajectory.days.iter().enumerate() {
        if day.values.len() != arch.input_dim {
            return Err(Error::config(format!(
                "trajectory day {t} has {} features, network expects {}",
                day.values.len(),
                arch.input_dim
            )));
        }
        steps::step(&l1, &day.values, &s1.h, &s1.c, &mut h1_next, &mut c1_next, None);
        steps::step(&l2, &h1_next, &s2.h, &s2.c, &mut h2_next, &mut c2_next, None);
        std::mem::swap(&mut s1.h, &mut h1_next);
        std::mem::swap(&mut s1.c, &mut c1_next);
        std::mem::swap(&mut s2.h, &mut h2_next);
        std::mem::swap(&mut s2.c, &mut c2_next);
        check_finite(&s1.h, 1, t)?;
        check_finite(&s2.h, 2, t)?;
    }
    Ok(output_probability(params, &s2.h))
}

fn check_finite(values: &[f64], layer: usize, t: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("layer {layer} hidden state at step {t}")))
    }
}

/// Binary cross-entropy of the forward output against `label`, and its exact
/// gradient with respect to every parameter via full-sequence BPTT.
///
/// `label` is normally 0 or 1 but any real value is accepted; the gradient
/// through the output pre-activation is `p - label`.
pub fn backward(
    params: &NetworkParameters,
    trajectory: &Trajectory,
    label: f64,
) -> Result<(f64, GradientSet)> {
    backward_with_clamp(params, trajectory, label, DEFAULT_PROB_CLAMP)
}

/// [`backward`] with an explicit probability clamp for the loss value.
pub fn backward_with_clamp(
    params: &NetworkParameters,
    trajectory: &Trajectory,
    label: f64,
    prob_clamp: f64,
) -> Result<(f64, GradientSet)> {
    if trajectory.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let arch = params.arch;
    let steps_count = trajectory.len();
    let kind = arch.cell_kind;
    let (n1, n2) = (arch.first_layer, arch.second_layer);
    let l1 = params.layer(0);
    let l2 = params.layer(1);

    // Forward pass, keeping per-step states and gate activations.
    let stride1 = steps::cache_stride(kind, n1);
    let stride2 = steps::cache_stride(kind, n2);
    let mut hs1 = vec![0.0; (steps_count + 1) * n1];
    let mut hs2 = vec![0.0; (steps_count + 1) * n2];
    let lstm = kind == CellKind::Lstm;
    let mut cs1 = vec![0.0; if lstm { (steps_count + 1) * n1 } else { 0 }];
    let mut cs2 = vec![0.0; if lstm { (steps_count + 1) * n2 } else { 0 }];
    let mut cache1 = vec![0.0; steps_count * stride1];
    let mut cache2 = vec![0.0; steps_count * stride2];

    for (t, day) in trajectory.days.iter().enumerate() {
        if day.values.len() != arch.input_dim {
            return Err(Error::config(format!(
                "trajectory day {t} has {} features, network expects {}",
                day.values.len(),
                arch.input_dim
            )));
        }
        let (h1_prev, h1_next) = split_step(&mut hs1, t, n1);
        let (c1_prev, c1_next) = if lstm {
            split_step_opt(&mut cs1, t, n1)
        } else {
            (&[][..], &mut [][..])
        };
        steps::step(
            &l1,
            &day.values,
            h1_prev,
            c1_prev,
            h1_next,
            c1_next,
            Some(&mut cache1[t * stride1..(t + 1) * stride1]),
        );
        let x2: &[f64] = &hs1[(t + 1) * n1..(t + 2) * n1];
        let (h2_prev, h2_next) = split_step(&mut hs2, t, n2);
        let (c2_prev, c2_next) = if lstm {
            split_step_opt(&mut cs2, t, n2)
        } else {
            (&[][..], &mut [][..])
        };
        steps::step(
            &l2,
            x2,
            h2_prev,
            c2_prev,
            h2_next,
            c2_next,
            Some(&mut cache2[t * stride2..(t + 1) * stride2]),
        );
        check_finite(&hs1[(t + 1) * n1..(t + 2) * n1], 1, t)?;
        check_finite(&hs2[(t + 1) * n2..(t + 2) * n2], 2, t)?;
    }

    let h2_final = &hs2[steps_count * n2..(steps_count + 1) * n2];
    let p = output_probability(params, h2_final);
    let loss = crate::optim::bce_with_clamp(label, p, prob_clamp);

    let mut grads = GradientSet::zeros(&arch);
    let out_off = arch.output_offset();

    // Output layer: d(loss)/d(pre-activation) = p - y.
    let dpre = p - label;
    for (g, h) in grads.data[out_off..out_off + n2].iter_mut().zip(h2_final) {
        *g = dpre * h;
    }
    grads.data[out_off + n2] = dpre;
    let (w_out, _) = params.output();
    let mut dh2 = vec![0.0; n2];
    for (d, w) in dh2.iter_mut().zip(w_out) {
        *d = dpre * w;
    }

    // Layer 2 backward over time; its input gradients feed layer 1.
    let l1_off = arch.layer_offset(0);
    let l2_off = arch.layer_offset(1);
    let l1_len = arch.layer_param_len(0);
    let l2_len = arch.layer_param_len(1);
    let mut dh1_ext = vec![0.0; (steps_count + 1) * n1];
    {
        let grad_l2 = &mut grads.data[l2_off..l2_off + l2_len];
        let mut dc2 = vec![0.0; if lstm { n2 } else { 0 }];
        let mut workspace = steps::BackwardWorkspace::new(kind, n1, n2);
        for t in (0..steps_count).rev() {
            let x2 = &hs1[(t + 1) * n1..(t + 2) * n1];
            let h_prev = &hs2[t * n2..(t + 1) * n2];
            let c_prev = if lstm { &cs2[t * n2..(t + 1) * n2] } else { &[][..] };
            let cache = &cache2[t * stride2..(t + 1) * stride2];
            steps::step_backward(
                &l2,
                x2,
                h_prev,
                c_prev,
                cache,
                &mut dh2,
                &mut dc2,
                grad_l2,
                Some(&mut dh1_ext[(t + 1) * n1..(t + 2) * n1]),
                &mut workspace,
            );
        }
    }

    // Layer 1 backward, combining the chain gradient with the per-step
    // contributions from layer 2.
    {
        let grad_l1 = &mut grads.data[l1_off..l1_off + l1_len];
        let mut dh1 = vec![0.0; n1];
        let mut dc1 = vec![0.0; if lstm { n1 } else { 0 }];
        let mut workspace = steps::BackwardWorkspace::new(kind, arch.input_dim, n1);
        for t in (0..steps_count).rev() {
            for (d, e) in dh1.iter_mut().zip(&dh1_ext[(t + 1) * n1..(t + 2) * n1]) {
                *d += e;
            }
            let x1 = &trajectory.days[t].values;
            let h_prev = &hs1[t * n1..(t + 1) * n1];
            let c_prev = if lstm { &cs1[t * n1..(t + 1) * n1] } else { &[][..] };
            let cache = &cache1[t * stride1..(t + 1) * stride1];
            steps::step_backward(
                &l1, x1, h_prev, c_prev, cache, &mut dh1, &mut dc1, grad_l1, None,
                &mut workspace,
            );
        }
    }

    if let Some((_, name)) = grads.first_non_finite() {
        return Err(Error::numeric(format!("gradient tensor {name}")));
    }
    Ok((loss, grads))
}

/// Borrows `buf[t]` (previous state) and `buf[t+1]` (next state) disjointly.
fn split_step(buf: &mut [f64], t: usize, width: usize) -> (&[f64], &mut [f64]) {
    let (head, tail) = buf.split_at_mut((t + 1) * width);
    (&head[t * width..], &mut tail[..width])
}

fn split_step_opt(buf: &mut [f64], t: usize, width: usize) -> (&[f64], &mut [f64]) {
    split_step(buf, t, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::timeseries::DailyActivity;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn arch(kind: CellKind, n: usize, m: usize, input: usize) -> Architecture {
        Architecture::new(kind, n, m, input).unwrap()
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Trajectory {
        let days = (0..len)
            .map(|_| DailyActivity {
                values: (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            })
            .collect();
        Trajectory {
            days,
            end_time: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        for kind in CellKind::ALL {
            let a = arch(kind, 5, 3, 8);
            let p1 = init_parameters(&a, 42);
            let p2 = init_parameters(&a, 42);
            assert_eq!(p1, p2);
            let p3 = init_parameters(&a, 43);
            assert_ne!(p1.data(), p3.data());
        }
    }

    #[test]
    fn gru_tensor_inventory_matches_cell_equations() {
        // N=4, M=3, n=8: three 4x8 input matrices, three 4x4 recurrent
        // matrices and three biases of 4 in layer 1; layer 2 analogous with
        // input dimension 4; output 3 weights + 1 bias.
        let a = arch(CellKind::Gru, 4, 3, 8);
        let layout = a.layout();
        let got: Vec<(String, TensorShape)> = layout
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape))
            .collect();
        let m = |r, c| TensorShape::Matrix { rows: r, cols: c };
        let v = |l| TensorShape::Vector { len: l };
        let want: Vec<(String, TensorShape)> = vec![
            ("l1.in_z".into(), m(4, 8)),
            ("l1.in_r".into(), m(4, 8)),
            ("l1.in_h".into(), m(4, 8)),
            ("l1.rec_z".into(), m(4, 4)),
            ("l1.rec_r".into(), m(4, 4)),
            ("l1.rec_h".into(), m(4, 4)),
            ("l1.bias_z".into(), v(4)),
            ("l1.bias_r".into(), v(4)),
            ("l1.bias_h".into(), v(4)),
            ("l2.in_z".into(), m(3, 4)),
            ("l2.in_r".into(), m(3, 4)),
            ("l2.in_h".into(), m(3, 4)),
            ("l2.rec_z".into(), m(3, 3)),
            ("l2.rec_r".into(), m(3, 3)),
            ("l2.rec_h".into(), m(3, 3)),
            ("l2.bias_z".into(), v(3)),
            ("l2.bias_r".into(), v(3)),
            ("l2.bias_h".into(), v(3)),
            ("out.w".into(), v(3)),
            ("out.b".into(), TensorShape::Scalar),
        ];
        assert_eq!(got, want);
        assert_eq!(layout.total_len(), a.parameter_count());
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let a = arch(CellKind::Lstm, 4, 3, 8);
        let p = init_parameters(&a, 1);
        assert!(p.tensor("l1.bias_f").unwrap().iter().all(|&v| v == 1.0));
        assert!(p.tensor("l1.bias_i").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.tensor("l2.bias_f").unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_weight_cells_hold_zero_state() {
        for kind in [CellKind::Gru, CellKind::Nbrc] {
            let a = arch(kind, 5, 3, 8);
            let p = NetworkParameters::from_parts(a, 0, vec![0.0; a.parameter_count()]).unwrap();
            let layer = p.layer(0);
            let state = CellState::zeros(kind, 5);
            let x = vec![1.0, -2.0, 0.5, 3.0, -0.25, 1.5, 0.0, 2.0];
            let next = cell_step(&layer, &x, &state).unwrap();
            assert!(next.h.iter().all(|&v| v == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn cell_step_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for kind in CellKind::ALL {
            for _ in 0..5 {
                let a = arch(kind, 6, 3, 4);
                let p = init_parameters(&a, rng.gen());
                let layer = p.layer(0);
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut state = CellState::zeros(kind, 6);
                for v in &mut state.h {
                    *v = rng.gen_range(-0.9..0.9);
                }
                for v in &mut state.c {
                    *v = rng.gen_range(-0.9..0.9);
                }
                let fast = cell_step(&layer, &x, &state).unwrap();
                let naive = reference::naive_cell_step(&layer, &x, &state).unwrap();
                for (a, b) in fast.h.iter().zip(&naive.h) {
                    assert!((a - b).abs() < 1e-12, "{kind:?} h: {a} vs {b}");
                }
                for (a, b) in fast.c.iter().zip(&naive.c) {
                    assert!((a - b).abs() < 1e-12, "{kind:?} c: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_parameters_output_half() {
        for kind in CellKind::ALL {
            let a = arch(kind, 4, 3, 8);
            let p = NetworkParameters::from_parts(a, 0, vec![0.0; a.parameter_count()]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let traj = random_trajectory(&mut rng, 12, 8);
            assert_eq!(forward(&p, &traj).unwrap(), 0.5);
        }
    }

    #[test]
    fn output_bias_drives_probability_to_one() {
        let a = arch(CellKind::Gru, 4, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let traj = random_trajectory(&mut rng, 10, 8);
        let mut prev = 0.0;
        for bias in [0.0, 2.0, 8.0, 32.0, 128.0] {
            let mut p = init_parameters(&a, 3);
            let off = a.output_offset() + a.second_layer;
            p.data_mut()[off] = bias;
            let prob = forward(&p, &traj).unwrap();
            assert!(prob > prev, "bias {bias}: {prob} <= {prev}");
            assert!(prob < 1.0);
            prev = prob;
        }
        assert!(prev > 0.999_999);
    }

    #[test]
    fn length_one_forward_equals_manual_composition() {
        for kind in CellKind::ALL {
            let a = arch(kind, 5, 4, 8);
            let p = init_parameters(&a, 11);
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let traj = random_trajectory(&mut rng, 1, 8);
            let s1 = cell_step(&p.layer(0), &traj.days[0].values, &CellState::zeros(kind, 5))
                .unwrap();
            let s2 = cell_step(&p.layer(1), &s1.h, &CellState::zeros(kind, 4)).unwrap();
            let (w, b) = p.output();
            let manual = sigmoid(steps::dot(w, &s2.h) + b);
            assert_eq!(forward(&p, &traj).unwrap(), manual);
        }
    }

    #[test]
    fn backward_with_label_equal_to_output_has_zero_gradient() {
        for kind in CellKind::ALL {
            let a = arch(kind, 5, 4, 8);
            let p = init_parameters(&a, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let traj = random_trajectory(&mut rng, 15, 8);
            let prob = forward(&p, &traj).unwrap();
            let (_, grads) = backward(&p, &traj, prob).unwrap();
            assert!(grads.data().iter().all(|&g| g == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let a = arch(CellKind::Lstm, 6, 4, 8);
        let p = init_parameters(&a, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let traj = random_trajectory(&mut rng, 20, 8);
        let (l1, g1) = backward(&p, &traj, 1.0).unwrap();
        let (l2, g2) = backward(&p, &traj, 1.0).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradients_match_finite_differences_small() {
        // The full 20-instance sweep runs in the acceptance suite; this is a
        // quick regression check per cell kind.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for kind in CellKind::ALL {
            let a = arch(kind, 4, 3, 5);
            let p = init_parameters(&a, rng.gen());
            let traj = random_trajectory(&mut rng, 8, 5);
            let label = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            let (_, grads) = backward(&p, &traj, label).unwrap();
            let fd = reference::finite_difference_gradient(&p, &traj, label, 1e-5).unwrap();
            let max_rel = reference::max_relative_error(grads.data(), &fd);
            assert!(max_rel < 1e-4, "{kind:?}: max relative error {max_rel}");
        }
    }

    #[test]
    fn gate_ranges_hold_along_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for kind in CellKind::ALL {
            let a = arch(kind, 6, 4, 8);
            let p = init_parameters(&a, rng.gen());
            let traj = random_trajectory(&mut rng, 60, 8);
            let layer = p.layer(0);
            let mut state = CellState::zeros(kind, 6);
            for day in &traj.days {
                let gates = reference::gate_activations(&layer, &day.values, &state);
                match kind {
                    CellKind::Nbrc => {
                        for &g in &gates.a {
                            assert!(g > 0.0 && g < 2.0, "nBRC a-gate {g}");
                        }
                        for &g in &gates.c {
                            assert!(g > 0.0 && g < 1.0, "nBRC c-gate {g}");
                        }
                    }
                    _ => {
                        for &g in gates.a.iter().chain(&gates.c) {
                            assert!(g > 0.0 && g < 1.0, "{kind:?} gate {g}");
                        }
                    }
                }
                state = cell_step(&layer, &day.values, &state).unwrap();
                assert!(state.h.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn model_file_roundtrip() {
        for kind in CellKind::ALL {
            let a = arch(kind, 6, 4, 8);
            let p = init_parameters(&a, 77);
            let mut buf = Vec::new();
            write_model(&mut buf, &p).unwrap();
            let back = read_model(buf.as_slice()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn model_file_rejects_corruption() {
        let a = arch(CellKind::Gru, 3, 2, 4);
        let p = init_parameters(&a, 1);
        let mut buf = Vec::new();
        write_model(&mut buf, &p).unwrap();
        assert!(read_model(&buf[..buf.len() - 8]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_model(bad_magic.as_slice()).is_err());
    }
}
