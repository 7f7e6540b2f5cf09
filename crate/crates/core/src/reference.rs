//! Slow reference implementations used to verify the fast paths.
//!
//! Everything here is written straight from the defining equations with
//! scalar loops and no shared code with the production implementations, so
//! the two can disagree only when one of them is wrong. The unit and
//! acceptance suites compare them on random instances.

use crate::labeling::ChurnParams;
use crate::optim;
use crate::rnn::{CellKind, CellState, LayerParams, NetworkParameters};
use crate::timeseries::{FeatureSchema, PlayerHistory, Trajectory};
use crate::{Error, Result};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Principal gate activations of one cell step: `a` holds the gate with the
/// widest range (the nBRC a-gate spans (0, 2)), `c` the remaining sigmoid
/// gates.
pub struct GateActivations {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

struct GateView<'a> {
    data: &'a [f64],
    input: usize,
    hidden: usize,
}

impl<'a> GateView<'a> {
    fn w(&self, gate: usize, row: usize, col: usize) -> f64 {
        self.data[(gate * self.hidden + row) * self.input + col]
    }

    fn u(&self, in_gates: usize, gate: usize, row: usize, col: usize) -> f64 {
        let base = in_gates * self.hidden * self.input;
        self.data[base + (gate * self.hidden + row) * self.hidden + col]
    }

    fn b(&self, in_gates: usize, rec_gates: usize, gate: usize, row: usize) -> f64 {
        let base =
            in_gates * self.hidden * self.input + rec_gates * self.hidden * self.hidden;
        self.data[base + gate * self.hidden + row]
    }
}

fn layer_view<'a>(layer: &LayerParams<'a>) -> GateView<'a> {
    GateView {
        data: layer.data,
        input: layer.input_dim(),
        hidden: layer.hidden_dim(),
    }
}

/// Straightforward per-element evaluation of one cell step.
pub fn naive_cell_step(
    layer: &LayerParams<'_>,
    x: &[f64],
    state: &CellState,
) -> Result<CellState> {
    let h = layer.hidden_dim();
    let n = layer.input_dim();
    if x.len() != n {
        return Err(Error::config("input dimension mismatch"));
    }
    let v = layer_view(layer);
    let hp = &state.h;
    let mut next = state.clone();
    match layer.kind() {
        CellKind::Gru => {
            let mut z = vec![0.0; h];
            let mut r = vec![0.0; h];
            for j in 0..h {
                let mut az = v.b(3, 3, 0, j);
                let mut ar = v.b(3, 3, 1, j);
                for k in 0..n {
                    az += v.w(0, j, k) * x[k];
                    ar += v.w(1, j, k) * x[k];
                }
                for k in 0..h {
                    az += v.u(3, 0, j, k) * hp[k];
                    ar += v.u(3, 1, j, k) * hp[k];
                }
                z[j] = sigmoid(az);
                r[j] = sigmoid(ar);
            }
            for j in 0..h {
                let mut ag = v.b(3, 3, 2, j);
                for k in 0..n {
                    ag += v.w(2, j, k) * x[k];
                }
                for k in 0..h {
                    ag += v.u(3, 2, j, k) * (r[k] * hp[k]);
                }
                let g = ag.tanh();
                next.h[j] = (1.0 - z[j]) * hp[j] + z[j] * g;
            }
        }
        CellKind::Lstm => {
            for j in 0..h {
                let mut pre = [
                    v.b(4, 4, 0, j),
                    v.b(4, 4, 1, j),
                    v.b(4, 4, 2, j),
                    v.b(4, 4, 3, j),
                ];
                for (gate, p) in pre.iter_mut().enumerate() {
                    for k in 0..n {
                        *p += v.w(gate, j, k) * x[k];
                    }
                    for k in 0..h {
                        *p += v.u(4, gate, j, k) * hp[k];
                    }
                }
                let i_g = sigmoid(pre[0]);
                let f_g = sigmoid(pre[1]);
                let g_g = pre[2].tanh();
                let o_g = sigmoid(pre[3]);
                let c = f_g * state.c[j] + i_g * g_g;
                next.c[j] = c;
                next.h[j] = o_g * c.tanh();
            }
        }
        CellKind::Nbrc => {
            for j in 0..h {
                let mut pa = 0.0;
                let mut pc = 0.0;
                let mut q = 0.0;
                for k in 0..n {
                    pa += v.w(0, j, k) * x[k];
                    pc += v.w(1, j, k) * x[k];
                    q += v.w(2, j, k) * x[k];
                }
                for k in 0..h {
                    pa += v.u(3, 0, j, k) * hp[k];
                    pc += v.u(3, 1, j, k) * hp[k];
                }
                let a = 1.0 + pa.tanh();
                let c = sigmoid(pc);
                let cand = (q + a * hp[j]).tanh();
                next.h[j] = c * hp[j] + (1.0 - c) * cand;
            }
        }
    }
    Ok(next)
}

/// Gate activations of one step, computed naively.
pub fn gate_activations(layer: &LayerParams<'_>, x: &[f64], state: &CellState) -> GateActivations {
    let h = layer.hidden_dim();
    let n = layer.input_dim();
    let v = layer_view(layer);
    let hp = &state.h;
    let mut a = Vec::new();
    let mut c = Vec::new();
    match layer.kind() {
        CellKind::Gru => {
            for j in 0..h {
                let mut az = v.b(3, 3, 0, j);
                let mut ar = v.b(3, 3, 1, j);
                for k in 0..n {
                    az += v.w(0, j, k) * x[k];
                    ar += v.w(1, j, k) * x[k];
                }
                for k in 0..h {
                    az += v.u(3, 0, j, k) * hp[k];
                    ar += v.u(3, 1, j, k) * hp[k];
                }
                a.push(sigmoid(az));
                c.push(sigmoid(ar));
            }
        }
        CellKind::Lstm => {
            for j in 0..h {
                for gate in 0..4 {
                    if gate == 2 {
                        continue; // the candidate is not a gate
                    }
                    let mut p = v.b(4, 4, gate, j);
                    for k in 0..n {
                        p += v.w(gate, j, k) * x[k];
                    }
                    for k in 0..h {
                        p += v.u(4, gate, j, k) * hp[k];
                    }
                    if gate == 0 {
                        a.push(sigmoid(p));
                    } else {
                        c.push(sigmoid(p));
                    }
                }
            }
        }
        CellKind::Nbrc => {
            for j in 0..h {
                let mut pa = 0.0;
                let mut pc = 0.0;
                for k in 0..n {
                    pa += v.w(0, j, k) * x[k];
                    pc += v.w(1, j, k) * x[k];
                }
                for k in 0..h {
                    pa += v.u(3, 0, j, k) * hp[k];
                    pc += v.u(3, 1, j, k) * hp[k];
                }
                a.push(1.0 + pa.tanh());
                c.push(sigmoid(pc));
            }
        }
    }
    GateActivations { a, c }
}

/// Central finite differences of the cross-entropy loss over every
/// parameter, using the same loss the backward pass reports.
pub fn finite_difference_gradient(
    params: &NetworkParameters,
    trajectory: &Trajectory,
    label: f64,
    step: f64,
) -> Result<Vec<f64>> {
    let mut work = params.clone();
    let count = params.data().len();
    let mut grad = vec![0.0; count];
    for i in 0..count {
        let original = work.data()[i];
        work.data_mut()[i] = original + step;
        let plus = optim::bce(label, crate::rnn::forward(&work, trajectory)?);
        work.data_mut()[i] = original - step;
        let minus = optim::bce(label, crate::rnn::forward(&work, trajectory)?);
        work.data_mut()[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest elementwise relative error, with a floor on the denominator so
/// finite-difference noise on near-zero gradients does not dominate.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

/// Per-day activity flags for the brute-force label scans.
pub fn active_flags(history: &PlayerHistory, schema: &FeatureSchema) -> Vec<bool> {
    history
        .days
        .iter()
        .map(|d| crate::labeling::is_active_day(d, schema))
        .collect()
}

/// Brute-force churn variable: scan the `T_c`-day window ending at `t` for
/// any active day.
pub fn churn_variable_brute(active: &[bool], t: usize, t_c: usize) -> u8 {
    assert!(t + 1 >= t_c && t < active.len());
    let any = (t + 1 - t_c..=t).any(|i| active[i]);
    u8::from(!any)
}

/// Brute-force churn indicator: does any fully inactive window end inside
/// the horizon?
pub fn churn_indicator_brute(active: &[bool], t: usize, params: &ChurnParams) -> u8 {
    let any = (t + 1..=t + params.t_pred as usize)
        .any(|i| churn_variable_brute(active, i, params.t_c as usize) == 1);
    u8::from(any)
}
