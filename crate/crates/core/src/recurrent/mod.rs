//! Stacked recurrent networks over masked batches, with a scalar readout and
//! backpropagation through time.
//!
//! Padded steps carry the state through unchanged (`h_t = h_{t-1}`), so the
//! prediction for a sequence is independent of how much padding follows it.
//! Layer `l` reads layer `l - 1`'s output at the same step, and the readout
//! is an affine map of the top layer's state at the last valid step.

mod cells;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cells::{
    gru_cell_forward, lstm_cell_forward, rnn_cell_forward, Cell, Gate, GruGates, GruLayer,
    LstmLayer, RnnLayer, TensorRef,
};

use crate::dataset::PaddedBatch;
use crate::error::{Error, Result};
use crate::hsic::SampleSet;
use crate::numerics::{init_uniform, Matrix, Rng};

/// Sequences per work unit in a batch. Fixed so that the gradient reduction
/// order does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Rnn, CellKind::Lstm, CellKind::Gru];

    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::invalid(format!(
                "unknown cell type `{other}` (expected rnn, lstm or gru)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl Readout {
    fn zeros(hidden: usize) -> Self {
        Readout {
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    pub fn apply(&self, h: &[f64]) -> f64 {
        self.w_out.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.b_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layers {
    Rnn(Vec<RnnLayer>),
    Lstm(Vec<LstmLayer>),
    Gru(Vec<GruLayer>),
}

macro_rules! each_layers {
    ($layers:expr, $l:ident => $body:expr) => {
        match $layers {
            Layers::Rnn($l) => $body,
            Layers::Lstm($l) => $body,
            Layers::Gru($l) => $body,
        }
    };
}

macro_rules! each_pair {
    ($a:expr, $b:expr, ($x:ident, $y:ident) => $body:expr) => {
        match ($a, $b) {
            (Layers::Rnn($x), Layers::Rnn($y)) => $body,
            (Layers::Lstm($x), Layers::Lstm($y)) => $body,
            (Layers::Gru($x), Layers::Gru($y)) => $body,
            _ => unreachable!("layer kinds checked by caller"),
        }
    };
}

/// Stacked recurrent layers plus readout. The same type doubles as the
/// gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_size: usize,
    hidden_size: usize,
    layers: Layers,
    pub readout: Readout,
}

fn build_layers<C: Cell>(input: usize, hidden: usize, count: usize, mut make: impl FnMut(usize) -> C) -> Vec<C> {
    (0..count)
        .map(|l| make(if l == 0 { input } else { hidden }))
        .collect()
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(kind: CellKind, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        check_dims(input, hidden, layers)?;
        let layers = match kind {
            CellKind::Rnn => Layers::Rnn(build_layers(input, hidden, layers, |i| RnnLayer::zeros(i, hidden))),
            CellKind::Lstm => Layers::Lstm(build_layers(input, hidden, layers, |i| LstmLayer::zeros(i, hidden))),
            CellKind::Gru => Layers::Gru(build_layers(input, hidden, layers, |i| GruLayer::zeros(i, hidden))),
        };
        Ok(Network {
            input_size: input,
            hidden_size: hidden,
            layers,
            readout: Readout::zeros(hidden),
        })
    }

    /// Seeded initialization: every tensor uniform on `±1/sqrt(hidden)`.
    pub fn init(kind: CellKind, input: usize, hidden: usize, layers: usize, rng: &mut Rng) -> Result<Self> {
        check_dims(input, hidden, layers)?;
        let layers = match kind {
            CellKind::Rnn => Layers::Rnn(build_layers(input, hidden, layers, |i| RnnLayer::init(rng, i, hidden))),
            CellKind::Lstm => Layers::Lstm(build_layers(input, hidden, layers, |i| LstmLayer::init(rng, i, hidden))),
            CellKind::Gru => Layers::Gru(build_layers(input, hidden, layers, |i| GruLayer::init(rng, i, hidden))),
        };
        let scale = 1.0 / (hidden as f64).sqrt();
        let w_out = init_uniform(rng, 1, hidden, scale)?.into_vec();
        let b_out = rng.uniform(-scale, scale);
        Ok(Network {
            input_size: input,
            hidden_size: hidden,
            layers,
            readout: Readout { w_out, b_out },
        })
    }

    pub fn from_layers(layers: Layers, readout: Readout) -> Result<Self> {
        let (input, hidden, count) = each_layers!(&layers, ls => {
            let first = ls.first().ok_or_else(|| Error::invalid("network needs at least one layer"))?;
            let (input, hidden) = (first.input_size(), first.hidden_size());
            for (l, c) in ls.iter().enumerate() {
                cells::check_layer(c)?;
                let want_in = if l == 0 { input } else { hidden };
                if c.input_size() != want_in || c.hidden_size() != hidden {
                    return Err(Error::shape(format!(
                        "layer {l} is {}->{}, expected {want_in}->{hidden}",
                        c.input_size(), c.hidden_size()
                    )));
                }
            }
            (input, hidden, ls.len())
        });
        check_dims(input, hidden, count)?;
        if readout.w_out.len() != hidden {
            return Err(Error::shape(format!(
                "readout has {} weights for hidden size {hidden}",
                readout.w_out.len()
            )));
        }
        Ok(Network {
            input_size: input,
            hidden_size: hidden,
            layers,
            readout,
        })
    }

    pub fn kind(&self) -> CellKind {
        match self.layers {
            Layers::Rnn(_) => CellKind::Rnn,
            Layers::Lstm(_) => CellKind::Lstm,
            Layers::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn num_layers(&self) -> usize {
        each_layers!(&self.layers, ls => ls.len())
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Layers {
        &mut self.layers
    }

    pub fn zeros_like(&self) -> Network {
        Network::zeros(self.kind(), self.input_size, self.hidden_size, self.num_layers())
            .expect("dimensions already validated")
    }

    fn same_structure(&self, other: &Network) -> bool {
        self.kind() == other.kind()
            && self.input_size == other.input_size
            && self.hidden_size == other.hidden_size
            && self.num_layers() == other.num_layers()
    }

    /// Named tensors in a fixed order: layers bottom-up, then the readout.
    pub fn named_tensors(&self) -> Vec<(String, usize, usize, &[f64])> {
        let mut out = Vec::new();
        each_layers!(&self.layers, ls => {
            for (l, c) in ls.iter().enumerate() {
                for t in c.tensors() {
                    out.push((format!("layer{l}.{}", t.name), t.rows, t.cols, t.data));
                }
            }
        });
        out.push(("readout.w_out".to_string(), 1, self.hidden_size, &self.readout.w_out[..]));
        out.push(("readout.b_out".to_string(), 1, 1, std::slice::from_ref(&self.readout.b_out)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        each_layers!(&mut self.layers, ls => {
            for c in ls.iter_mut() {
                out.extend(c.tensors_mut());
            }
        });
        out.push(&mut self.readout.w_out[..]);
        out.push(std::slice::from_mut(&mut self.readout.b_out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|t| t.3.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.named_tensors() {
            out.extend_from_slice(t.3);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let count = self.param_count();
        if values.len() != count {
            return Err(Error::shape(format!(
                "{} values for a network with {count} parameters",
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += other` (same structure).
    pub fn add_assign(&mut self, other: &Network) {
        assert!(self.same_structure(other), "network structures differ");
        each_pair!(&mut self.layers, &other.layers, (a, b) => {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_from(y);
            }
        });
        for (x, y) in self.readout.w_out.iter_mut().zip(&other.readout.w_out) {
            *x += y;
        }
        self.readout.b_out += other.readout.b_out;
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|t| t.3.iter().all(|v| v.is_finite()))
    }

    /// Runs every sequence of `batch` through the stack.
    pub fn masked_forward(&self, batch: &PaddedBatch) -> Result<ForwardOutput> {
        if batch.dim() != self.input_size {
            return Err(Error::shape(format!(
                "batch has {} channels, network expects {}",
                batch.dim(),
                self.input_size
            )));
        }
        for i in 0..batch.n() {
            check_mask(batch.mask_row(i), i)?;
        }
        let seqs: Vec<SeqCache> = each_layers!(&self.layers, ls => {
            let idx: Vec<usize> = (0..batch.n()).collect();
            idx.par_chunks(CHUNK)
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|&i| forward_sequence(ls, batch.row(i), batch.mask_row(i), batch.max_len()))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        });

        let layers = self.num_layers();
        let h = self.hidden_size;
        let mut finals = vec![Matrix::zeros(batch.n(), h); layers];
        let mut predictions = Vec::with_capacity(batch.n());
        for (i, s) in seqs.iter().enumerate() {
            for (l, fin) in finals.iter_mut().enumerate() {
                fin.row_mut(i).copy_from_slice(s.final_hidden(l, h));
            }
            predictions.push(self.readout.apply(s.final_hidden(layers - 1, h)));
        }
        let final_hidden = finals
            .into_iter()
            .map(SampleSet::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::Data("hidden state became non-finite".into()))?;
        Ok(ForwardOutput {
            predictions,
            final_hidden,
            cache: ForwardCache {
                kind: self.kind(),
                input_size: self.input_size,
                hidden_size: h,
                layers,
                max_len: batch.max_len(),
                features: batch.features().to_vec(),
                mask: (0..batch.n()).flat_map(|i| batch.mask_row(i).to_vec()).collect(),
                seqs,
            },
        })
    }

    pub fn predict(&self, batch: &PaddedBatch) -> Result<Vec<f64>> {
        Ok(self.masked_forward(batch)?.predictions)
    }

    /// Reverse-mode gradients of a loss given `dL/dprediction` per sequence and
    /// `dL/dH_l` for each layer's last-valid hidden states (`n x hidden`).
    pub fn bptt(&self, cache: &ForwardCache, d_pred: &[f64], d_hidden: &[Matrix]) -> Result<Network> {
        let n = cache.seqs.len();
        let h = self.hidden_size;
        if cache.kind != self.kind()
            || cache.input_size != self.input_size
            || cache.hidden_size != h
            || cache.layers != self.num_layers()
        {
            return Err(Error::shape(format!(
                "cache from a {} {}x{}x{} network does not match {} {}x{}x{}",
                cache.kind,
                cache.input_size,
                cache.hidden_size,
                cache.layers,
                self.kind(),
                self.input_size,
                h,
                self.num_layers()
            )));
        }
        if d_pred.len() != n {
            return Err(Error::shape(format!(
                "{} prediction gradients for {n} sequences",
                d_pred.len()
            )));
        }
        if !d_hidden.is_empty() {
            if d_hidden.len() != cache.layers {
                return Err(Error::shape(format!(
                    "{} hidden-state gradients for {} layers",
                    d_hidden.len(),
                    cache.layers
                )));
            }
            for m in d_hidden {
                if m.shape() != (n, h) {
                    return Err(Error::shape(format!(
                        "hidden-state gradient is {:?}, expected ({n}, {h})",
                        m.shape()
                    )));
                }
            }
        }

        let row_len = cache.max_len * self.input_size;
        let idx: Vec<usize> = (0..n).collect();
        let partials: Vec<Network> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = self.zeros_like();
                for &i in chunk {
                    let x = &cache.features[i * row_len..(i + 1) * row_len];
                    let mask = &cache.mask[i * cache.max_len..(i + 1) * cache.max_len];
                    let seq = &cache.seqs[i];
                    let mut finals: Vec<Vec<f64>> = (0..cache.layers)
                        .map(|l| {
                            if d_hidden.is_empty() {
                                vec![0.0; h]
                            } else {
                                d_hidden[l].row(i).to_vec()
                            }
                        })
                        .collect();
                    let top = seq.final_hidden(cache.layers - 1, h);
                    for (k, f) in finals[cache.layers - 1].iter_mut().enumerate() {
                        *f += d_pred[i] * self.readout.w_out[k];
                        grad.readout.w_out[k] += d_pred[i] * top[k];
                    }
                    grad.readout.b_out += d_pred[i];
                    each_pair!(&self.layers, &mut grad.layers, (ls, gs) => {
                        backward_sequence(ls, gs, seq, x, mask, cache.max_len, &finals)
                    });
                }
                grad
            })
            .collect();
        let mut total = self.zeros_like();
        for p in &partials {
            total.add_assign(p);
        }
        Ok(total)
    }
}

fn check_dims(input: usize, hidden: usize, layers: usize) -> Result<()> {
    if input == 0 || hidden == 0 || layers == 0 {
        return Err(Error::invalid(format!(
            "network dimensions must be positive (input {input}, hidden {hidden}, layers {layers})"
        )));
    }
    Ok(())
}

fn check_mask(mask: &[u8], row: usize) -> Result<()> {
    let len = mask.iter().take_while(|&&m| m == 1).count();
    if len == 0 {
        return Err(Error::invalid(format!("sequence {row} has zero length")));
    }
    if mask[len..].iter().any(|&m| m != 0) {
        return Err(Error::invalid(format!(
            "mask row {row} is not a prefix of ones followed by zeros"
        )));
    }
    Ok(())
}

/// Per-sequence activations of every layer.
#[derive(Clone, Debug)]
struct SeqCache {
    /// `(max_len + 1) x state_len` per layer; entry 0 is the zero initial state.
    states: Vec<Vec<f64>>,
    /// `max_len x cache_len` per layer (zero at padded steps).
    steps: Vec<Vec<f64>>,
    /// `max_len x hidden` outputs per layer, the next layer's inputs.
    outputs: Vec<Vec<f64>>,
    state_len: usize,
    max_len: usize,
}

impl SeqCache {
    fn final_hidden(&self, layer: usize, hidden: usize) -> &[f64] {
        let s = self.state_len;
        &self.states[layer][self.max_len * s..self.max_len * s + hidden]
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    kind: CellKind,
    input_size: usize,
    hidden_size: usize,
    layers: usize,
    max_len: usize,
    features: Vec<f64>,
    mask: Vec<u8>,
    seqs: Vec<SeqCache>,
}

impl ForwardCache {
    /// Hidden output `h_t` of `layer` for sequence `seq` after step `t`.
    pub fn hidden_at(&self, seq: usize, layer: usize, t: usize) -> &[f64] {
        let h = self.hidden_size;
        &self.seqs[seq].outputs[layer][t * h..(t + 1) * h]
    }

    /// Per-step cell activations (for the GRU: `r_t, z_t, h~_t`).
    pub fn gates_at(&self, seq: usize, layer: usize, t: usize) -> &[f64] {
        let steps = &self.seqs[seq].steps[layer];
        let width = steps.len() / self.max_len;
        &steps[t * width..(t + 1) * width]
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

pub struct ForwardOutput {
    pub predictions: Vec<f64>,
    /// Last-valid-step hidden state of each layer, `n x hidden`.
    pub final_hidden: Vec<SampleSet>,
    pub cache: ForwardCache,
}

fn forward_sequence<C: Cell>(layers: &[C], x: &[f64], mask: &[u8], max_len: usize) -> SeqCache {
    let s = layers[0].state_len();
    let h = layers[0].hidden_size();
    let c = layers[0].cache_len();
    let mut states = Vec::with_capacity(layers.len());
    let mut steps = Vec::with_capacity(layers.len());
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for (l, cell) in layers.iter().enumerate() {
        let input: &[f64] = if l == 0 { x } else { &outputs[l - 1] };
        let width = cell.input_size();
        let mut st = vec![0.0; (max_len + 1) * s];
        let mut ca = vec![0.0; max_len * c];
        let mut out = vec![0.0; max_len * h];
        for t in 0..max_len {
            let (done, rest) = st.split_at_mut((t + 1) * s);
            let prev = &done[t * s..];
            let next = &mut rest[..s];
            if mask[t] == 1 {
                cell.step(&input[t * width..(t + 1) * width], prev, next, &mut ca[t * c..(t + 1) * c]);
            } else {
                next.copy_from_slice(prev);
            }
            out[t * h..(t + 1) * h].copy_from_slice(&next[..h]);
        }
        states.push(st);
        steps.push(ca);
        outputs.push(out);
    }
    SeqCache {
        states,
        steps,
        outputs,
        state_len: s,
        max_len,
    }
}

fn backward_sequence<C: Cell>(
    layers: &[C],
    grads: &mut [C],
    seq: &SeqCache,
    x: &[f64],
    mask: &[u8],
    max_len: usize,
    d_final: &[Vec<f64>],
) {
    let s = layers[0].state_len();
    let h = layers[0].hidden_size();
    let c = layers[0].cache_len();
    let mut scratch = vec![0.0; layers[0].scratch_len()];
    let mut d_above: Option<Vec<f64>> = None;
    for l in (0..layers.len()).rev() {
        let cell = &layers[l];
        let width = cell.input_size();
        let input: &[f64] = if l == 0 { x } else { &seq.outputs[l - 1] };
        let states = &seq.states[l];
        let cache = &seq.steps[l];
        let mut d_state = vec![0.0; s];
        d_state[..h].copy_from_slice(&d_final[l]);
        let mut d_prev = vec![0.0; s];
        let mut d_inputs = vec![0.0; max_len * width];
        for t in (0..max_len).rev() {
            if let Some(above) = &d_above {
                for k in 0..h {
                    d_state[k] += above[t * h + k];
                }
            }
            if mask[t] == 0 {
                continue;
            }
            d_prev.fill(0.0);
            cell.step_backward(
                &input[t * width..(t + 1) * width],
                &states[t * s..(t + 1) * s],
                &states[(t + 1) * s..(t + 2) * s],
                &cache[t * c..(t + 1) * c],
                &d_state,
                &mut grads[l],
                &mut d_inputs[t * width..(t + 1) * width],
                &mut d_prev,
                &mut scratch,
            );
            std::mem::swap(&mut d_state, &mut d_prev);
        }
        d_above = Some(d_inputs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sequence;

    fn sequence(rng: &mut Rng, len: usize, dim: usize, label: f64) -> Sequence {
        Sequence {
            cycle_index: len,
            dim,
            values: (0..len * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            label,
        }
    }

    #[test]
    fn zero_network_predicts_bias() {
        let mut net = Network::zeros(CellKind::Gru, 2, 3, 2).unwrap();
        net.readout.b_out = 0.75;
        let mut rng = Rng::new(1);
        let a = sequence(&mut rng, 3, 2, 1.0);
        let b = sequence(&mut rng, 6, 2, 1.0);
        let batch = PaddedBatch::from_sequences(&[&a, &b]).unwrap();
        assert_eq!(net.predict(&batch).unwrap(), vec![0.75, 0.75]);
    }

    #[test]
    fn hand_rolled_two_step_gru() {
        // 1 input, hidden 2, explicit weights
        let mut layer = GruLayer::zeros(1, 2);
        layer.reset.w = Matrix::from_rows(&[[0.5], [-0.3]]).unwrap();
        layer.reset.u = Matrix::from_rows(&[[0.1, 0.2], [0.0, -0.4]]).unwrap();
        layer.reset.b = vec![0.1, 0.0];
        layer.update.w = Matrix::from_rows(&[[1.0], [0.4]]).unwrap();
        layer.update.u = Matrix::from_rows(&[[-0.2, 0.3], [0.5, 0.1]]).unwrap();
        layer.update.b = vec![0.0, -0.1];
        layer.candidate.w = Matrix::from_rows(&[[0.7], [-1.1]]).unwrap();
        layer.candidate.u = Matrix::from_rows(&[[0.6, -0.5], [0.2, 0.9]]).unwrap();
        layer.candidate.b = vec![0.05, 0.2];
        let readout = Readout {
            w_out: vec![1.5, -2.0],
            b_out: 0.3,
        };
        let net = Network::from_layers(Layers::Gru(vec![layer.clone()]), readout.clone()).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let xs = [0.8, -0.4];
        let mut h = [0.0f64, 0.0];
        for &x in &xs {
            let w = |g: &Gate, i: usize| g.w[(i, 0)] * x;
            let u = |g: &Gate, i: usize, v: [f64; 2]| g.u[(i, 0)] * v[0] + g.u[(i, 1)] * v[1];
            let r = [0, 1].map(|i| sig(w(&layer.reset, i) + u(&layer.reset, i, h) + layer.reset.b[i]));
            let z = [0, 1].map(|i| sig(w(&layer.update, i) + u(&layer.update, i, h) + layer.update.b[i]));
            let rh = [r[0] * h[0], r[1] * h[1]];
            let c = [0, 1].map(|i| {
                (w(&layer.candidate, i) + u(&layer.candidate, i, rh) + layer.candidate.b[i]).tanh()
            });
            h = [0, 1].map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]);
        }
        let expect = 1.5 * h[0] - 2.0 * h[1] + 0.3;

        let seq = Sequence {
            cycle_index: 0,
            dim: 1,
            values: xs.to_vec(),
            label: 0.0,
        };
        let batch = PaddedBatch::from_sequences(&[&seq]).unwrap();
        let out = net.masked_forward(&batch).unwrap();
        assert!((out.predictions[0] - expect).abs() < 1e-14);
        assert!((out.final_hidden[0].sample(0)[0] - h[0]).abs() < 1e-15);
    }

    #[test]
    fn padding_leaves_predictions_and_states_unchanged() {
        let mut rng = Rng::new(9);
        for kind in CellKind::ALL {
            let net = Network::init(kind, 3, 2, 3, &mut rng).unwrap();
            let seqs: Vec<Sequence> = [2, 5, 4].iter().map(|&l| sequence(&mut rng, l, 3, 1.0)).collect();
            let refs: Vec<&Sequence> = seqs.iter().collect();
            let batch = PaddedBatch::from_sequences(&refs).unwrap();
            let base = net.masked_forward(&batch).unwrap();
            for extra in 1..=10 {
                let padded = net.masked_forward(&batch.with_extra_padding(extra)).unwrap();
                assert_eq!(base.predictions, padded.predictions);
                for i in 0..3 {
                    for t in 0..batch.lengths()[i] {
                        for l in 0..3 {
                            assert_eq!(base.cache.hidden_at(i, l, t), padded.cache.hidden_at(i, l, t));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(4);
        let net = Network::init(CellKind::Lstm, 2, 2, 2, &mut rng).unwrap();
        let a = sequence(&mut rng, 4, 2, 1.0);
        let batch = PaddedBatch::from_sequences(&[&a]).unwrap();
        let out = net.masked_forward(&batch).unwrap();
        let g = net.bptt(&out.cache, &[0.0], &[]).unwrap();
        assert!(g.flat_params().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let mut rng = Rng::new(4);
        let gru = Network::init(CellKind::Gru, 2, 2, 2, &mut rng).unwrap();
        let rnn = Network::init(CellKind::Rnn, 2, 2, 2, &mut rng).unwrap();
        let a = sequence(&mut rng, 4, 2, 1.0);
        let batch = PaddedBatch::from_sequences(&[&a]).unwrap();
        let out = gru.masked_forward(&batch).unwrap();
        assert!(rnn.bptt(&out.cache, &[1.0], &[]).is_err());
        assert!(gru.bptt(&out.cache, &[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut rng = Rng::new(4);
        let net = Network::init(CellKind::Gru, 3, 2, 1, &mut rng).unwrap();
        let a = sequence(&mut rng, 4, 2, 1.0);
        let batch = PaddedBatch::from_sequences(&[&a]).unwrap();
        assert!(net.masked_forward(&batch).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = Rng::new(12);
        let net = Network::init(CellKind::Gru, 3, 2, 3, &mut rng).unwrap();
        let flat = net.flat_params();
        let mut other = net.zeros_like();
        other.set_flat_params(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.set_flat_params(&flat[1..]).is_err());
        // 3 layers x 9 tensors + readout
        assert_eq!(net.named_tensors().len(), 29);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Network::init(CellKind::Gru, 3, 2, 3, &mut Rng::new(13)).unwrap();
        let b = Network::init(CellKind::Gru, 3, 2, 3, &mut Rng::new(13)).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.flat_params().iter().all(|v| v.abs() <= bound));
    }
}
