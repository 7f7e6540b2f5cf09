//! Cell recurrences and their exact backward passes, over flat row-major
//! weight blocks.
//!
//! Within a layer the parameter slice is `[input block | recurrent block |
//! bias block]`, each block stacking per-gate matrices row-wise:
//!
//! * GRU, gate order z, r, h:
//!   `z = sig(Wz x + Uz h + bz)`, `r = sig(Wr x + Ur h + br)`,
//!   `g = tanh(Wh x + Uh (r.h) + bh)`, `h' = (1-z).h + z.g`
//! * LSTM, gate order i, f, g, o:
//!   `i,f,o = sig(.)`, `g = tanh(.)`, `c' = f.c + i.g`, `h' = o.tanh(c')`
//! * nBRC, gate order a, c, h (no biases):
//!   `a = 1 + tanh(Ua x + Wa h)`, `c = sig(Uc x + Wc h)`,
//!   `h' = c.h + (1-c).tanh(U x + a.h)`

use super::{CellKind, LayerParams};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += M x`, `M` row-major `rows x cols`.
fn matvec_add(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()).take(rows) {
        *o += dot(row, x);
    }
}

/// `out += M^T dy`, `M` row-major `rows x cols`, `dy` of length `rows`.
fn matvec_t_add(m: &[f64], rows: usize, cols: usize, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (row, &d) in m.chunks_exact(cols).zip(dy.iter()).take(rows) {
        if d != 0.0 {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
    }
}

/// `gm += dy (outer) x`, `gm` row-major `len(dy) x len(x)`.
fn outer_add(dy: &[f64], x: &[f64], gm: &mut [f64]) {
    debug_assert_eq!(gm.len(), dy.len() * x.len());
    for (row, &d) in gm.chunks_exact_mut(x.len()).zip(dy.iter()) {
        if d != 0.0 {
            for (g, &v) in row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Floats cached per step for the backward pass.
pub(crate) fn cache_stride(kind: CellKind, hidden: usize) -> usize {
    match kind {
        CellKind::Gru => 3 * hidden,  // z, r, g
        CellKind::Lstm => 5 * hidden, // i, f, g, o, tanh(c')
        CellKind::Nbrc => 3 * hidden, // a, c, candidate
    }
}

/// One forward step. `c_prev`/`c_next` are the LSTM cell memories and stay
/// empty for the other kinds. When `cache` is given, the activations needed
/// by [`step_backward`] are stored into it.
pub(crate) fn step(
    layer: &LayerParams<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    h_next: &mut [f64],
    c_next: &mut [f64],
    cache: Option<&mut [f64]>,
) {
    let h = layer.hidden;
    let i = layer.input;
    let w_in = layer.input_block();
    let w_rec = layer.recurrent_block();
    let mut pre = vec![0.0; layer.kind.input_gates() * h];
    match layer.kind {
        CellKind::Gru => {
            pre.copy_from_slice(layer.bias_block());
            matvec_add(w_in, 3 * h, i, x, &mut pre);
            matvec_add(&w_rec[..2 * h * h], 2 * h, h, h_prev, &mut pre[..2 * h]);
            for v in &mut pre[..2 * h] {
                *v = sigmoid(*v);
            }
            let mut rh = vec![0.0; h];
            for j in 0..h {
                rh[j] = pre[h + j] * h_prev[j];
            }
            matvec_add(&w_rec[2 * h * h..], h, h, &rh, &mut pre[2 * h..]);
            for v in &mut pre[2 * h..] {
                *v = v.tanh();
            }
            for j in 0..h {
                let z = pre[j];
                h_next[j] = (1.0 - z) * h_prev[j] + z * pre[2 * h + j];
            }
            if let Some(cache) = cache {
                cache.copy_from_slice(&pre);
            }
        }
        CellKind::Lstm => {
            pre.copy_from_slice(layer.bias_block());
            matvec_add(w_in, 4 * h, i, x, &mut pre);
            matvec_add(w_rec, 4 * h, h, h_prev, &mut pre);
            for v in &mut pre[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut pre[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut pre[3 * h..] {
                *v = sigmoid(*v);
            }
            for j in 0..h {
                c_next[j] = pre[h + j] * c_prev[j] + pre[j] * pre[2 * h + j];
            }
            if let Some(cache) = cache {
                cache[..4 * h].copy_from_slice(&pre);
                for j in 0..h {
                    let tc = c_next[j].tanh();
                    cache[4 * h + j] = tc;
                    h_next[j] = pre[3 * h + j] * tc;
                }
            } else {
                for j in 0..h {
                    h_next[j] = pre[3 * h + j] * c_next[j].tanh();
                }
            }
        }
        CellKind::Nbrc => {
            pre.fill(0.0);
            matvec_add(w_in, 3 * h, i, x, &mut pre);
            matvec_add(w_rec, 2 * h, h, h_prev, &mut pre[..2 * h]);
            for j in 0..h {
                pre[j] = 1.0 + pre[j].tanh(); // a-gate, range (0, 2)
            }
            for v in &mut pre[h..2 * h] {
                *v = sigmoid(*v);
            }
            for j in 0..h {
                pre[2 * h + j] = (pre[2 * h + j] + pre[j] * h_prev[j]).tanh();
            }
            for j in 0..h {
                let c = pre[h + j];
                h_next[j] = c * h_prev[j] + (1.0 - c) * pre[2 * h + j];
            }
            if let Some(cache) = cache {
                cache.copy_from_slice(&pre);
            }
        }
    }
}

/// Reusable scratch for the backward sweep.
pub(crate) struct BackwardWorkspace {
    da: Vec<f64>,
    dh_prev: Vec<f64>,
    aux: Vec<f64>,
    aux2: Vec<f64>,
}

impl BackwardWorkspace {
    pub(crate) fn new(kind: CellKind, _input: usize, hidden: usize) -> Self {
        BackwardWorkspace {
            da: vec![0.0; kind.input_gates() * hidden],
            dh_prev: vec![0.0; hidden],
            aux: vec![0.0; hidden],
            aux2: vec![0.0; hidden],
        }
    }
}

/// One backward step.
///
/// On entry `dh` holds the loss gradient with respect to this step's output
/// state and `dc` the chained gradient of the LSTM cell memory; on exit they
/// hold the gradients with respect to the previous step's state. Parameter
/// gradients accumulate into `grad` (same block layout as the layer's
/// parameters) and, when requested, the gradient with respect to the step
/// input overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_backward(
    layer: &LayerParams<'_>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    cache: &[f64],
    dh: &mut [f64],
    dc: &mut [f64],
    grad: &mut [f64],
    dx: Option<&mut [f64]>,
    ws: &mut BackwardWorkspace,
) {
    let h = layer.hidden;
    let i = layer.input;
    let w_rec = layer.recurrent_block();
    let in_len = layer.kind.input_gates() * h * i;
    let rec_len = layer.kind.recurrent_gates() * h * h;
    let (g_in, rest) = grad.split_at_mut(in_len);
    let (g_rec, g_bias) = rest.split_at_mut(rec_len);
    let da = &mut ws.da;
    let dh_prev = &mut ws.dh_prev;
    dh_prev.fill(0.0);

    match layer.kind {
        CellKind::Gru => {
            let (z, rest) = cache.split_at(h);
            let (r, g) = rest.split_at(h);
            // Update gate and candidate preactivation gradients.
            for j in 0..h {
                let dz = dh[j] * (g[j] - h_prev[j]);
                da[j] = dz * z[j] * (1.0 - z[j]);
                let dg = dh[j] * z[j];
                da[2 * h + j] = dg * (1.0 - g[j] * g[j]);
                dh_prev[j] = dh[j] * (1.0 - z[j]);
            }
            // Candidate recurrence acts on r.h_prev: split its gradient.
            ws.aux.fill(0.0);
            matvec_t_add(&w_rec[2 * h * h..], h, h, &da[2 * h..], &mut ws.aux);
            for j in 0..h {
                let dr = ws.aux[j] * h_prev[j];
                da[h + j] = dr * r[j] * (1.0 - r[j]);
                dh_prev[j] += ws.aux[j] * r[j];
            }
            matvec_t_add(&w_rec[..2 * h * h], 2 * h, h, &da[..2 * h], dh_prev);

            outer_add(da, x, g_in);
            outer_add(&da[..2 * h], h_prev, &mut g_rec[..2 * h * h]);
            for j in 0..h {
                ws.aux2[j] = r[j] * h_prev[j];
            }
            outer_add(&da[2 * h..], &ws.aux2, &mut g_rec[2 * h * h..]);
            for (gb, d) in g_bias.iter_mut().zip(da.iter()) {
                *gb += d;
            }
        }
        CellKind::Lstm => {
            let (i_g, rest) = cache.split_at(h);
            let (f_g, rest) = rest.split_at(h);
            let (g_g, rest) = rest.split_at(h);
            let (o_g, tc) = rest.split_at(h);
            for j in 0..h {
                let do_ = dh[j] * tc[j];
                da[3 * h + j] = do_ * o_g[j] * (1.0 - o_g[j]);
                let dct = dc[j] + dh[j] * o_g[j] * (1.0 - tc[j] * tc[j]);
                da[j] = dct * g_g[j] * i_g[j] * (1.0 - i_g[j]);
                da[h + j] = dct * c_prev[j] * f_g[j] * (1.0 - f_g[j]);
                da[2 * h + j] = dct * i_g[j] * (1.0 - g_g[j] * g_g[j]);
                dc[j] = dct * f_g[j];
            }
            matvec_t_add(w_rec, 4 * h, h, da, dh_prev);
            outer_add(da, x, g_in);
            outer_add(da, h_prev, g_rec);
            for (gb, d) in g_bias.iter_mut().zip(da.iter()) {
                *gb += d;
            }
        }
        CellKind::Nbrc => {
            let (a, rest) = cache.split_at(h);
            let (c, cand) = rest.split_at(h);
            for j in 0..h {
                let dcand = dh[j] * (1.0 - c[j]);
                let dq = dcand * (1.0 - cand[j] * cand[j]);
                da[2 * h + j] = dq;
                let dcg = dh[j] * (h_prev[j] - cand[j]);
                da[h + j] = dcg * c[j] * (1.0 - c[j]);
                let ta = a[j] - 1.0; // tanh of the a-gate preactivation
                da[j] = dq * h_prev[j] * (1.0 - ta * ta);
                dh_prev[j] = dh[j] * c[j] + dq * a[j];
            }
            matvec_t_add(w_rec, 2 * h, h, &da[..2 * h], dh_prev);
            outer_add(da, x, g_in);
            outer_add(&da[..2 * h], h_prev, g_rec);
        }
    }

    if let Some(dx) = dx {
        dx.fill(0.0);
        matvec_t_add(layer.input_block(), layer.kind.input_gates() * h, i, da, dx);
    }
    dh.copy_from_slice(dh_prev);
}
