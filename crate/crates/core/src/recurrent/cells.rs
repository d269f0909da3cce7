//! Single-layer recurrent cells and their per-step backward passes.
//!
//! A cell's state is a flat slice whose first `hidden` entries are the output
//! `h_t` (the LSTM appends its cell state `c_t`). Backward passes accumulate
//! into `dx`, `d_prev` and the gradient cell; callers zero those buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, init_uniform, matvec_acc, matvec_t_acc, outer_acc, sigmoid, Matrix, Rng,
};

/// Borrowed view of one named parameter tensor.
#[derive(Clone, Copy, Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

pub trait Cell: Clone + Send + Sync {
    fn zeros(input: usize, hidden: usize) -> Self;
    fn input_size(&self) -> usize;
    fn hidden_size(&self) -> usize;
    /// Length of the carried state (`h`, or `h` followed by `c`).
    fn state_len(&self) -> usize;
    /// Per-step activations kept for the backward pass.
    fn cache_len(&self) -> usize;
    fn scratch_len(&self) -> usize;

    fn step(&self, x: &[f64], prev: &[f64], next: &mut [f64], cache: &mut [f64]);

    #[allow(clippy::too_many_arguments)]
    fn step_backward(
        &self,
        x: &[f64],
        prev: &[f64],
        next: &[f64],
        cache: &[f64],
        d_next: &[f64],
        grad: &mut Self,
        dx: &mut [f64],
        d_prev: &mut [f64],
        scratch: &mut [f64],
    );

    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Every weight and bias uniform on `[-1/sqrt(hidden), 1/sqrt(hidden)]`.
    fn init(rng: &mut Rng, input: usize, hidden: usize) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let scale = 1.0 / (hidden as f64).sqrt();
        for t in cell.tensors_mut() {
            let fresh = init_uniform(rng, 1, t.len(), scale).expect("positive scale");
            t.copy_from_slice(fresh.as_slice());
        }
        cell
    }

    fn add_from(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_assign(a, b.data);
        }
    }
}

/// Gate weight block: input weights, recurrent weights and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(input: usize, hidden: usize) -> Self {
        Gate {
            w: Matrix::zeros(hidden, input),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    /// `out = w x + u h + b`
    #[inline]
    fn preactivate(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        matvec_acc(self.w.as_slice(), x, out);
        matvec_acc(self.u.as_slice(), h, out);
    }

    /// Accumulates parameter gradients for pre-activation gradient `dpre`
    /// and propagates into `dx` and `dh`.
    #[inline]
    fn backward(&self, x: &[f64], h: &[f64], dpre: &[f64], grad: &mut Gate, dx: &mut [f64], dh: &mut [f64]) {
        outer_acc(grad.w.as_mut_slice(), dpre, x);
        outer_acc(grad.u.as_mut_slice(), dpre, h);
        add_assign(&mut grad.b, dpre);
        matvec_t_acc(self.w.as_slice(), dpre, dx);
        matvec_t_acc(self.u.as_slice(), dpre, dh);
    }

    fn push_tensors<'a>(&'a self, names: [&'static str; 3], out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef {
            name: names[0],
            rows: self.w.rows(),
            cols: self.w.cols(),
            data: self.w.as_slice(),
        });
        out.push(TensorRef {
            name: names[1],
            rows: self.u.rows(),
            cols: self.u.cols(),
            data: self.u.as_slice(),
        });
        out.push(TensorRef {
            name: names[2],
            rows: self.b.len(),
            cols: 1,
            data: &self.b,
        });
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w.as_mut_slice());
        out.push(self.u.as_mut_slice());
        out.push(&mut self.b);
    }

    fn check(&self, input: usize, hidden: usize) -> Result<()> {
        if self.w.shape() != (hidden, input)
            || self.u.shape() != (hidden, hidden)
            || self.b.len() != hidden
        {
            return Err(Error::shape(format!(
                "gate weights {:?}/{:?}/{} do not fit input {input}, hidden {hidden}",
                self.w.shape(),
                self.u.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Elman cell: `h_t = tanh(W x_t + U h_{t-1} + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnLayer {
    pub gate: Gate,
}

impl Cell for RnnLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        RnnLayer {
            gate: Gate::zeros(input, hidden),
        }
    }

    fn input_size(&self) -> usize {
        self.gate.w.cols()
    }

    fn hidden_size(&self) -> usize {
        self.gate.b.len()
    }

    fn state_len(&self) -> usize {
        self.hidden_size()
    }

    fn cache_len(&self) -> usize {
        0
    }

    fn scratch_len(&self) -> usize {
        self.hidden_size()
    }

    fn step(&self, x: &[f64], prev: &[f64], next: &mut [f64], _cache: &mut [f64]) {
        self.gate.preactivate(x, prev, next);
        next.iter_mut().for_each(|v| *v = v.tanh());
    }

    fn step_backward(
        &self,
        x: &[f64],
        prev: &[f64],
        next: &[f64],
        _cache: &[f64],
        d_next: &[f64],
        grad: &mut Self,
        dx: &mut [f64],
        d_prev: &mut [f64],
        scratch: &mut [f64],
    ) {
        let dpre = &mut scratch[..next.len()];
        for ((d, h), dh) in dpre.iter_mut().zip(next).zip(d_next) {
            *d = dh * (1.0 - h * h);
        }
        self.gate.backward(x, prev, dpre, &mut grad.gate, dx, d_prev);
    }

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(3);
        self.gate.push_tensors(["w", "u", "b"], &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3);
        self.gate.push_tensors_mut(&mut out);
        out
    }
}

/// Gated recurrent unit with reset gate `r`, update gate `z` and candidate
/// state `h~`:
///
/// ```text
/// r_t  = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
/// z_t  = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
/// h~_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
/// h_t  = (1 - z_t) * h_{t-1} + z_t * h~_t
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub reset: Gate,
    pub update: Gate,
    pub candidate: Gate,
}

/// Gate activations of one GRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct GruGates {
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
}

impl Cell for GruLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            reset: Gate::zeros(input, hidden),
            update: Gate::zeros(input, hidden),
            candidate: Gate::zeros(input, hidden),
        }
    }

    fn input_size(&self) -> usize {
        self.reset.w.cols()
    }

    fn hidden_size(&self) -> usize {
        self.reset.b.len()
    }

    fn state_len(&self) -> usize {
        self.hidden_size()
    }

    fn cache_len(&self) -> usize {
        3 * self.hidden_size()
    }

    fn scratch_len(&self) -> usize {
        5 * self.hidden_size()
    }

    fn step(&self, x: &[f64], prev: &[f64], next: &mut [f64], cache: &mut [f64]) {
        let h = self.hidden_size();
        let (r, rest) = cache.split_at_mut(h);
        let (z, c) = rest.split_at_mut(h);
        self.reset.preactivate(x, prev, r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        self.update.preactivate(x, prev, z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        c.copy_from_slice(&self.candidate.b);
        matvec_acc(self.candidate.w.as_slice(), x, c);
        let u = self.candidate.u.as_slice();
        for (i, ci) in c.iter_mut().enumerate() {
            let row = &u[i * h..(i + 1) * h];
            let mut s = 0.0;
            for j in 0..h {
                s += row[j] * r[j] * prev[j];
            }
            *ci = (*ci + s).tanh();
        }
        for i in 0..h {
            next[i] = (1.0 - z[i]) * prev[i] + z[i] * c[i];
        }
    }

    fn step_backward(
        &self,
        x: &[f64],
        prev: &[f64],
        _next: &[f64],
        cache: &[f64],
        d_next: &[f64],
        grad: &mut Self,
        dx: &mut [f64],
        d_prev: &mut [f64],
        scratch: &mut [f64],
    ) {
        let h = self.hidden_size();
        let r = &cache[..h];
        let z = &cache[h..2 * h];
        let c = &cache[2 * h..3 * h];
        let (dpre_r, rest) = scratch.split_at_mut(h);
        let (dpre_z, rest) = rest.split_at_mut(h);
        let (dpre_c, rest) = rest.split_at_mut(h);
        let (gated, da) = rest.split_at_mut(h);

        for i in 0..h {
            let dh = d_next[i];
            dpre_z[i] = dh * (c[i] - prev[i]) * z[i] * (1.0 - z[i]);
            dpre_c[i] = dh * z[i] * (1.0 - c[i] * c[i]);
            d_prev[i] += dh * (1.0 - z[i]);
            gated[i] = r[i] * prev[i];
            da[i] = 0.0;
        }

        // candidate path: U_h acts on r * h_{t-1}
        let cand = &self.candidate;
        outer_acc(grad.candidate.w.as_mut_slice(), dpre_c, x);
        outer_acc(grad.candidate.u.as_mut_slice(), dpre_c, gated);
        add_assign(&mut grad.candidate.b, dpre_c);
        matvec_t_acc(cand.w.as_slice(), dpre_c, dx);
        matvec_t_acc(cand.u.as_slice(), dpre_c, da);
        for j in 0..h {
            d_prev[j] += da[j] * r[j];
            dpre_r[j] = da[j] * prev[j] * r[j] * (1.0 - r[j]);
        }

        self.update
            .backward(x, prev, dpre_z, &mut grad.update, dx, d_prev);
        self.reset.backward(x, prev, dpre_r, &mut grad.reset, dx, d_prev);
    }

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(9);
        self.reset.push_tensors(["w_r", "u_r", "b_r"], &mut out);
        self.update.push_tensors(["w_z", "u_z", "b_z"], &mut out);
        self.candidate.push_tensors(["w_h", "u_h", "b_h"], &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(9);
        self.reset.push_tensors_mut(&mut out);
        self.update.push_tensors_mut(&mut out);
        self.candidate.push_tensors_mut(&mut out);
        out
    }
}

/// Four-gate LSTM. State is `[h; c]`, cache holds `i, f, o, g, tanh(c_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub cell: Gate,
}

impl Cell for LstmLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            input: Gate::zeros(input, hidden),
            forget: Gate::zeros(input, hidden),
            output: Gate::zeros(input, hidden),
            cell: Gate::zeros(input, hidden),
        }
    }

    fn input_size(&self) -> usize {
        self.input.w.cols()
    }

    fn hidden_size(&self) -> usize {
        self.input.b.len()
    }

    fn state_len(&self) -> usize {
        2 * self.hidden_size()
    }

    fn cache_len(&self) -> usize {
        5 * self.hidden_size()
    }

    fn scratch_len(&self) -> usize {
        4 * self.hidden_size()
    }

    fn step(&self, x: &[f64], prev: &[f64], next: &mut [f64], cache: &mut [f64]) {
        let h = self.hidden_size();
        let (h_prev, c_prev) = prev.split_at(h);
        let (gi, rest) = cache.split_at_mut(h);
        let (gf, rest) = rest.split_at_mut(h);
        let (go, rest) = rest.split_at_mut(h);
        let (gg, tc) = rest.split_at_mut(h);
        self.input.preactivate(x, h_prev, gi);
        self.forget.preactivate(x, h_prev, gf);
        self.output.preactivate(x, h_prev, go);
        self.cell.preactivate(x, h_prev, gg);
        let (h_next, c_next) = next.split_at_mut(h);
        for k in 0..h {
            gi[k] = sigmoid(gi[k]);
            gf[k] = sigmoid(gf[k]);
            go[k] = sigmoid(go[k]);
            gg[k] = gg[k].tanh();
            c_next[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
            tc[k] = c_next[k].tanh();
            h_next[k] = go[k] * tc[k];
        }
    }

    fn step_backward(
        &self,
        x: &[f64],
        prev: &[f64],
        _next: &[f64],
        cache: &[f64],
        d_next: &[f64],
        grad: &mut Self,
        dx: &mut [f64],
        d_prev: &mut [f64],
        scratch: &mut [f64],
    ) {
        let h = self.hidden_size();
        let (h_prev, c_prev) = prev.split_at(h);
        let gi = &cache[..h];
        let gf = &cache[h..2 * h];
        let go = &cache[2 * h..3 * h];
        let gg = &cache[3 * h..4 * h];
        let tc = &cache[4 * h..5 * h];
        let (dh_next, dc_next) = d_next.split_at(h);
        let (dpre_i, rest) = scratch.split_at_mut(h);
        let (dpre_f, rest) = rest.split_at_mut(h);
        let (dpre_o, dpre_g) = rest.split_at_mut(h);
        let (dh_prev, dc_prev) = d_prev.split_at_mut(h);

        for k in 0..h {
            let dc = dc_next[k] + dh_next[k] * go[k] * (1.0 - tc[k] * tc[k]);
            dpre_o[k] = dh_next[k] * tc[k] * go[k] * (1.0 - go[k]);
            dpre_i[k] = dc * gg[k] * gi[k] * (1.0 - gi[k]);
            dpre_g[k] = dc * gi[k] * (1.0 - gg[k] * gg[k]);
            dpre_f[k] = dc * c_prev[k] * gf[k] * (1.0 - gf[k]);
            dc_prev[k] += dc * gf[k];
        }
        self.input.backward(x, h_prev, dpre_i, &mut grad.input, dx, dh_prev);
        self.forget.backward(x, h_prev, dpre_f, &mut grad.forget, dx, dh_prev);
        self.output.backward(x, h_prev, dpre_o, &mut grad.output, dx, dh_prev);
        self.cell.backward(x, h_prev, dpre_g, &mut grad.cell, dx, dh_prev);
    }

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(12);
        self.input.push_tensors(["w_i", "u_i", "b_i"], &mut out);
        self.forget.push_tensors(["w_f", "u_f", "b_f"], &mut out);
        self.output.push_tensors(["w_o", "u_o", "b_o"], &mut out);
        self.cell.push_tensors(["w_g", "u_g", "b_g"], &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(12);
        self.input.push_tensors_mut(&mut out);
        self.forget.push_tensors_mut(&mut out);
        self.output.push_tensors_mut(&mut out);
        self.cell.push_tensors_mut(&mut out);
        out
    }
}

fn check_step(input: usize, hidden: usize, x: &[f64], state: &[f64], state_len: usize) -> Result<()> {
    if x.len() != input {
        return Err(Error::shape(format!(
            "input has {} entries, cell expects {input}",
            x.len()
        )));
    }
    if state.len() != state_len {
        return Err(Error::shape(format!(
            "state has {} entries, cell with hidden size {hidden} expects {state_len}",
            state.len()
        )));
    }
    Ok(())
}

/// One GRU step returning the new hidden state and its gate activations.
pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], layer: &GruLayer) -> Result<(Vec<f64>, GruGates)> {
    let (input, hidden) = (layer.input_size(), layer.hidden_size());
    for g in [&layer.reset, &layer.update, &layer.candidate] {
        g.check(input, hidden)?;
    }
    check_step(input, hidden, x, h_prev, hidden)?;
    let mut next = vec![0.0; hidden];
    let mut cache = vec![0.0; layer.cache_len()];
    layer.step(x, h_prev, &mut next, &mut cache);
    let gates = GruGates {
        reset: cache[..hidden].to_vec(),
        update: cache[hidden..2 * hidden].to_vec(),
        candidate: cache[2 * hidden..].to_vec(),
    };
    Ok((next, gates))
}

/// One LSTM step returning `(h_t, c_t)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LstmLayer,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (input, hidden) = (layer.input_size(), layer.hidden_size());
    for g in [&layer.input, &layer.forget, &layer.output, &layer.cell] {
        g.check(input, hidden)?;
    }
    check_step(input, hidden, x, h_prev, hidden)?;
    check_step(input, hidden, x, c_prev, hidden)?;
    let prev: Vec<f64> = h_prev.iter().chain(c_prev).copied().collect();
    let mut next = vec![0.0; 2 * hidden];
    let mut cache = vec![0.0; layer.cache_len()];
    layer.step(x, &prev, &mut next, &mut cache);
    let c = next.split_off(hidden);
    Ok((next, c))
}

pub fn rnn_cell_forward(x: &[f64], h_prev: &[f64], layer: &RnnLayer) -> Result<Vec<f64>> {
    let (input, hidden) = (layer.input_size(), layer.hidden_size());
    layer.gate.check(input, hidden)?;
    check_step(input, hidden, x, h_prev, hidden)?;
    let mut next = vec![0.0; hidden];
    layer.step(x, h_prev, &mut next, &mut []);
    Ok(next)
}

pub(crate) fn check_layer<C: Cell>(cell: &C) -> Result<()> {
    let expected = cell.tensors();
    let fresh = C::zeros(cell.input_size(), cell.hidden_size());
    for (a, b) in expected.iter().zip(fresh.tensors()) {
        if a.data.len() != b.data.len() {
            return Err(Error::shape(format!(
                "tensor {} has {} values, expected {}",
                a.name,
                a.data.len(),
                b.data.len()
            )));
        }
    }
    Ok(())
}
