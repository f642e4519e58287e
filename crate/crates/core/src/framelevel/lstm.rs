//! Stacked LSTM with diagonal peephole connections.
//!
//! Per step, with `(.)` the elementwise product:
//!
//! ```text
//! i_t = sigmoid(W_xi x_t + W_hi h_{t-1} + w_ci (.) c_{t-1} + b_i)
//! f_t = sigmoid(W_xf x_t + W_hf h_{t-1} + w_cf (.) c_{t-1} + b_f)
//! c_t = f_t (.) c_{t-1} + i_t (.) tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = sigmoid(W_xo x_t + W_ho h_{t-1} + w_co (.) c_t + b_o)
//! h_t = o_t (.) tanh(c_t)
//! ```
//!
//! The output gate peeks at the *current* cell state. Input and recurrent
//! matrices are stored stacked in gate order `[i, f, c, o]`, each block
//! `hidden` rows tall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::linear::{sigmoid, FeatureRow, ParamTensors};
use crate::metrics::clamped_log_loss;
use crate::recordio::ModelParams;
use crate::rng::SeededRng;

const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_C: usize = 2;
const GATE_O: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    /// `[4 * hidden x input_dim]`, blocks `W_xi, W_xf, W_xc, W_xo`.
    pub w_x: Vec<f64>,
    /// `[4 * hidden x hidden]`, blocks `W_hi, W_hf, W_hc, W_ho`.
    pub w_h: Vec<f64>,
    pub peep_i: Vec<f64>,
    pub peep_f: Vec<f64>,
    pub peep_o: Vec<f64>,
    /// `[4 * hidden]`, blocks `b_i, b_f, b_c, b_o`.
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct CellCache {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmLayer {
            input_dim,
            hidden,
            w_x: vec![0.0; GATES * hidden * input_dim],
            w_h: vec![0.0; GATES * hidden * hidden],
            peep_i: vec![0.0; hidden],
            peep_f: vec![0.0; hidden],
            peep_o: vec![0.0; hidden],
            bias: vec![0.0; GATES * hidden],
        }
    }

    fn init(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut l = LstmLayer::zeros(input_dim, hidden);
        let sx = 1.0 / (input_dim.max(1) as f64).sqrt();
        let sh = 1.0 / (hidden.max(1) as f64).sqrt();
        l.w_x.iter_mut().for_each(|w| *w = sx * rng.normal());
        l.w_h.iter_mut().for_each(|w| *w = sh * rng.normal());
        for peep in [&mut l.peep_i, &mut l.peep_f, &mut l.peep_o] {
            peep.iter_mut().for_each(|w| *w = 0.1 * rng.normal());
        }
        // open forget gates at the start
        l.bias[GATE_F * hidden..(GATE_F + 1) * hidden].fill(1.0);
        l
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden;
        let ok = h > 0
            && self.w_x.len() == GATES * h * self.input_dim
            && self.w_h.len() == GATES * h * h
            && self.peep_i.len() == h
            && self.peep_f.len() == h
            && self.peep_o.len() == h
            && self.bias.len() == GATES * h;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                format!("LSTM layer tensors for input {} hidden {h}", self.input_dim),
                "inconsistent tensor lengths",
            ))
        }
    }

    pub(crate) fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellCache {
        let (h, d) = (self.hidden, self.input_dim);
        let mut a = self.bias.clone();
        for (r, a_r) in a.iter_mut().enumerate() {
            *a_r += x.dot(&self.w_x[r * d..(r + 1) * d]) + h_prev.dot(&self.w_h[r * h..(r + 1) * h]);
        }
        let mut cache = CellCache {
            i: vec![0.0; h],
            f: vec![0.0; h],
            g: vec![0.0; h],
            o: vec![0.0; h],
            c: vec![0.0; h],
            tanh_c: vec![0.0; h],
            h: vec![0.0; h],
        };
        for k in 0..h {
            let i = sigmoid(a[GATE_I * h + k] + self.peep_i[k] * c_prev[k]);
            let f = sigmoid(a[GATE_F * h + k] + self.peep_f[k] * c_prev[k]);
            let g = a[GATE_C * h + k].tanh();
            let c = f * c_prev[k] + i * g;
            let o = sigmoid(a[GATE_O * h + k] + self.peep_o[k] * c);
            let tc = c.tanh();
            cache.i[k] = i;
            cache.f[k] = f;
            cache.g[k] = g;
            cache.o[k] = o;
            cache.c[k] = c;
            cache.tanh_c[k] = tc;
            cache.h[k] = o * tc;
        }
        cache
    }

    /// Backpropagate one step. `dh`/`dc` are the gradients flowing into
    /// `h_t`/`c_t`; returns gradients for `(x_t, h_{t-1}, c_{t-1})`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        cache: &CellCache,
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut LstmLayer,
        want_dx: bool,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h, d) = (self.hidden, self.input_dim);
        let mut da = vec![0.0; GATES * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, g, o, c, tc) = (
                cache.i[k],
                cache.f[k],
                cache.g[k],
                cache.o[k],
                cache.c[k],
                cache.tanh_c[k],
            );
            let da_o = dh[k] * tc * o * (1.0 - o);
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc) + da_o * self.peep_o[k];
            let da_i = dc * g * i * (1.0 - i);
            let da_f = dc * c_prev[k] * f * (1.0 - f);
            let da_c = dc * i * (1.0 - g * g);
            grad.peep_o[k] += da_o * c;
            grad.peep_i[k] += da_i * c_prev[k];
            grad.peep_f[k] += da_f * c_prev[k];
            dc_prev[k] = dc * f + da_i * self.peep_i[k] + da_f * self.peep_f[k];
            da[GATE_I * h + k] = da_i;
            da[GATE_F * h + k] = da_f;
            da[GATE_C * h + k] = da_c;
            da[GATE_O * h + k] = da_o;
        }
        let mut dx = if want_dx { vec![0.0; d] } else { Vec::new() };
        let mut dh_prev = vec![0.0; h];
        for (r, &g) in da.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            x.add_scaled_to(g, &mut grad.w_x[r * d..(r + 1) * d]);
            h_prev.add_scaled_to(g, &mut grad.w_h[r * h..(r + 1) * h]);
            if want_dx {
                self.w_x[r * d..(r + 1) * d].add_scaled_to(g, &mut dx);
            }
            self.w_h[r * h..(r + 1) * h].add_scaled_to(g, &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }
}

impl ParamTensors for LstmLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.w_x,
            &self.w_h,
            &self.peep_i,
            &self.peep_f,
            &self.peep_o,
            &self.bias,
        ]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_x,
            &mut self.w_h,
            &mut self.peep_i,
            &mut self.peep_f,
            &mut self.peep_o,
            &mut self.bias,
        ]
    }
}

/// Run one cell step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(layer: &LstmLayer, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    layer.check()?;
    if x.len() != layer.input_dim || h_prev.len() != layer.hidden || c_prev.len() != layer.hidden {
        return Err(Error::shape(
            format!("x:{} h:{} c:{}", layer.input_dim, layer.hidden, layer.hidden),
            format!("x:{} h:{} c:{}", x.len(), h_prev.len(), c_prev.len()),
        ));
    }
    let cache = layer.forward(x, h_prev, c_prev);
    Ok((cache.h, cache.c))
}

/// Time steps kept from a sequence of `num_frames` when unrolling at most
/// `unroll` steps: every frame if it fits, otherwise the uniform stride
/// `floor(m * num_frames / unroll)` for `m < unroll`.
pub fn stride_indices(num_frames: usize, unroll: usize) -> Vec<usize> {
    if num_frames <= unroll {
        (0..num_frames).collect()
    } else {
        (0..unroll).map(|m| m * num_frames / unroll).collect()
    }
}

/// Stacked LSTM over frames with a logistic classifier on the last hidden
/// state of the top layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub vocab_size: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: Vec<LstmLayer>,
    /// `[vocab_size x hidden]`
    pub cls_weights: Vec<f64>,
    pub cls_biases: Vec<f64>,
}

struct LayerTrace {
    caches: Vec<CellCache>,
}

impl LstmParams {
    pub fn zeros(vocab: Vocabulary, input_dim: usize, hidden: usize, layers: usize) -> Self {
        LstmParams {
            vocab_size: vocab.size(),
            input_dim,
            hidden,
            layers: (0..layers)
                .map(|l| LstmLayer::zeros(if l == 0 { input_dim } else { hidden }, hidden))
                .collect(),
            cls_weights: vec![0.0; vocab.size() * hidden],
            cls_biases: vec![0.0; vocab.size()],
        }
    }

    pub fn init(vocab: Vocabulary, input_dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut p = LstmParams::zeros(vocab, input_dim, hidden, layers);
        for (l, layer) in p.layers.iter_mut().enumerate() {
            *layer = LstmLayer::init(if l == 0 { input_dim } else { hidden }, hidden, &mut rng);
        }
        let s = 1.0 / (hidden as f64).sqrt();
        p.cls_weights.iter_mut().for_each(|w| *w = s * rng.normal());
        p
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.vocab_size).expect("vocab_size >= 1")
    }

    fn check_inputs(&self, steps: &[&[f64]]) -> Result<()> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("no frames to unroll".into()));
        }
        if let Some(x) = steps.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::shape(format!("frame dimension {}", self.input_dim), x.len()));
        }
        Ok(())
    }

    fn run(&self, steps: &[&[f64]]) -> Vec<LayerTrace> {
        let zero = vec![0.0; self.hidden];
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut caches: Vec<CellCache> = Vec::with_capacity(steps.len());
            for (t, &step) in steps.iter().enumerate() {
                let x: &[f64] = if l == 0 { step } else { &traces[l - 1].caches[t].h };
                let (h_prev, c_prev) = match caches.last() {
                    Some(prev) => (prev.h.as_slice(), prev.c.as_slice()),
                    None => (zero.as_slice(), zero.as_slice()),
                };
                let cache = layer.forward(x, h_prev, c_prev);
                caches.push(cache);
            }
            traces.push(LayerTrace { caches });
        }
        traces
    }

    fn classify(&self, h: &[f64]) -> Vec<f64> {
        (0..self.vocab_size)
            .map(|e| sigmoid(h.dot(&self.cls_weights[e * self.hidden..(e + 1) * self.hidden]) + self.cls_biases[e]))
            .collect()
    }

    /// Scores from the already-strided time steps.
    pub fn forward_steps(&self, steps: &[&[f64]]) -> Result<Vec<f64>> {
        self.check_inputs(steps)?;
        let traces = self.run(steps);
        let top = traces.last().expect("at least one layer");
        Ok(self.classify(&top.caches.last().expect("nonempty").h))
    }

    pub(crate) fn accumulate(
        &self,
        steps: &[&[f64]],
        labels: &LabelSet,
        scale: f64,
        grad: &mut LstmParams,
    ) -> Result<f64> {
        self.check_inputs(steps)?;
        let (h, t_len) = (self.hidden, steps.len());
        let traces = self.run(steps);
        let h_final = &traces.last().expect("layers").caches[t_len - 1].h;
        let scores = self.classify(h_final);

        let mut loss = 0.0;
        let mut dh_top = vec![0.0; h];
        for (e, &p) in scores.iter().enumerate() {
            let y = labels.contains(&(e as u32));
            loss += clamped_log_loss(p, y);
            let dz = (p - f64::from(u8::from(y))) * scale;
            h_final.add_scaled_to(dz, &mut grad.cls_weights[e * h..(e + 1) * h]);
            grad.cls_biases[e] += dz;
            self.cls_weights[e * h..(e + 1) * h].add_scaled_to(dz, &mut dh_top);
        }

        // Gradient arriving at each h_t of the current layer from above.
        let mut dh_ext: Vec<Vec<f64>> = vec![vec![0.0; h]; t_len];
        dh_ext[t_len - 1] = dh_top;
        let zero = vec![0.0; h];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let caches = &traces[l].caches;
            let want_dx = l > 0;
            let mut dx_seq: Vec<Vec<f64>> = Vec::with_capacity(if want_dx { t_len } else { 0 });
            let mut dh_rec = vec![0.0; h];
            let mut dc_rec = vec![0.0; h];
            for t in (0..t_len).rev() {
                let x: &[f64] = if l == 0 { steps[t] } else { &traces[l - 1].caches[t].h };
                let (h_prev, c_prev) = if t > 0 {
                    (caches[t - 1].h.as_slice(), caches[t - 1].c.as_slice())
                } else {
                    (zero.as_slice(), zero.as_slice())
                };
                let dh: Vec<f64> = dh_ext[t].iter().zip(&dh_rec).map(|(a, b)| a + b).collect();
                let (dx, dhp, dcp) = layer.backward(
                    x,
                    h_prev,
                    c_prev,
                    &caches[t],
                    &dh,
                    &dc_rec,
                    &mut grad.layers[l],
                    want_dx,
                );
                dh_rec = dhp;
                dc_rec = dcp;
                if want_dx {
                    dx_seq.push(dx);
                }
            }
            if want_dx {
                dx_seq.reverse();
                dh_ext = dx_seq;
            }
        }
        Ok(loss)
    }

    /// Mean over sequences of the summed log-loss, and its gradient.
    pub fn loss_grad(&self, sequences: &[Vec<&[f64]>], labels: &[&LabelSet]) -> Result<(f64, LstmParams)> {
        let mut grad = LstmParams::zeros(self.vocab(), self.input_dim, self.hidden, self.layers.len());
        let scale = 1.0 / sequences.len() as f64;
        let mut loss = 0.0;
        for (s, l) in sequences.iter().zip(labels) {
            loss += self.accumulate(s, l, scale, &mut grad)?;
        }
        Ok((loss * scale, grad))
    }
}

/// Score a video: stride the frames down to at most `unroll` steps, run the
/// stack from zero state, classify the final top-layer hidden state.
pub fn lstm_forward<X: AsRef<[f64]>>(params: &LstmParams, frames: &[X], unroll: usize) -> Result<Vec<f64>> {
    if unroll == 0 {
        return Err(Error::Config("unroll must be >= 1".into()));
    }
    let steps: Vec<&[f64]> = stride_indices(frames.len(), unroll)
        .into_iter()
        .map(|j| frames[j].as_ref())
        .collect();
    params.forward_steps(&steps)
}

impl ParamTensors for LstmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(&self.cls_weights);
        out.push(&self.cls_biases);
        out
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.push(&mut self.cls_weights);
        out.push(&mut self.cls_biases);
        out
    }
}

impl ModelParams for LstmParams {
    const KIND: &'static str = "lstm";

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            ("input".to_owned(), self.input_dim),
            ("hidden".to_owned(), self.hidden),
            ("layers".to_owned(), self.layers.len()),
        ])
    }

    fn check_shapes(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.layers.is_empty()
            || self.cls_weights.len() != self.vocab_size * self.hidden
            || self.cls_biases.len() != self.vocab_size
        {
            return Err(Error::shape(
                "consistent LSTM classifier",
                "inconsistent tensor lengths",
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            let want_in = if l == 0 { self.input_dim } else { self.hidden };
            if layer.input_dim != want_in || layer.hidden != self.hidden {
                return Err(Error::shape(
                    format!("layer {l}: input {want_in} hidden {}", self.hidden),
                    format!("input {} hidden {}", layer.input_dim, layer.hidden),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_from_zero_state() {
        let layer = LstmLayer::zeros(3, 4);
        let cache = layer.forward(&[0.3, -1.0, 2.0], &[0.0; 4], &[0.0; 4]);
        assert!(cache.i.iter().chain(&cache.f).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.c.iter().chain(&cache.h).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_cell_halves_memory() {
        let layer = LstmLayer::zeros(2, 3);
        let c_prev = [1.0, -2.0, 0.4];
        let (h, c) = lstm_cell_step(&layer, &[1.0, 1.0], &[0.0; 3], &c_prev).unwrap();
        for k in 0..3 {
            assert!((c[k] - 0.5 * c_prev[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c_prev[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_forget_carries_memory() {
        let mut layer = LstmLayer::zeros(2, 3);
        layer.bias[GATE_F * 3..GATE_F * 3 + 3].fill(50.0);
        layer.bias[GATE_I * 3..GATE_I * 3 + 3].fill(-50.0);
        let c_prev = [0.7, -1.3, 2.2];
        let (_, c) = lstm_cell_step(&layer, &[0.5, -0.5], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        for k in 0..3 {
            assert!((c[k] - c_prev[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn striding() {
        assert_eq!(stride_indices(5, 60), vec![0, 1, 2, 3, 4]);
        assert_eq!(stride_indices(10, 4), vec![0, 2, 5, 7]);
        assert_eq!(stride_indices(300, 60).len(), 60);
        assert_eq!(stride_indices(300, 60)[59], 295);
    }

    #[test]
    fn zero_model_scores_half() {
        let p = LstmParams::zeros(Vocabulary::new(5).unwrap(), 3, 4, 2);
        assert_eq!(lstm_forward(&p, &[vec![1.0, 2.0, 3.0]], 60).unwrap(), vec![0.5; 5]);
        assert!(lstm_forward::<Vec<f64>>(&p, &[], 60).is_err());
    }

    #[test]
    fn full_scale_configuration_is_valid() {
        let p = LstmParams::zeros(Vocabulary::new(2).unwrap(), 8, 1024, 2);
        assert!(p.check_shapes().is_ok());
        assert_eq!(p.layers[1].input_dim, 1024);
    }

    #[test]
    fn cell_gradient_of_squared_hidden_norm() {
        use crate::framelevel::check_model_gradient;
        let mut rng = SeededRng::new(11);
        let layer = LstmLayer::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let h0: Vec<f64> = (0..4).map(|_| 0.5 * rng.normal()).collect();
        let c0: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let loss_grad = |l: &LstmLayer| {
            let cache = l.forward(&x, &h0, &c0);
            let dh: Vec<f64> = cache.h.iter().map(|h| 2.0 * h).collect();
            let mut grad = LstmLayer::zeros(3, 4);
            l.backward(&x, &h0, &c0, &cache, &dh, &[0.0; 4], &mut grad, false);
            (cache.h.iter().map(|h| h * h).sum(), grad)
        };
        assert!(check_model_gradient(&layer, loss_grad, 1e-3, 0) < 1e-4);
    }

    #[test]
    fn cell_input_gradients() {
        use crate::framelevel::numeric_gradient_check;
        let mut rng = SeededRng::new(12);
        let layer = LstmLayer::init(3, 4, &mut rng);
        let point: Vec<f64> = (0..11).map(|_| rng.normal()).collect();
        let loss_grad = |v: &[f64]| {
            let (x, rest) = v.split_at(3);
            let (h0, c0) = rest.split_at(4);
            let cache = layer.forward(x, h0, c0);
            let dh: Vec<f64> = cache.h.iter().map(|h| 2.0 * h).collect();
            let dc: Vec<f64> = cache.c.iter().map(|c| 2.0 * c).collect();
            let mut grad = LstmLayer::zeros(3, 4);
            let (dx, dhp, dcp) = layer.backward(x, h0, c0, &cache, &dh, &dc, &mut grad, true);
            let loss = cache.h.iter().chain(&cache.c).map(|v| v * v).sum();
            (loss, [dx, dhp, dcp].concat())
        };
        assert!(numeric_gradient_check(loss_grad, &point, 1e-3, 0) < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let layer = LstmLayer::zeros(2, 3);
        assert!(lstm_cell_step(&layer, &[1.0], &[0.0; 3], &[0.0; 3]).is_err());
        assert!(lstm_cell_step(&layer, &[1.0, 1.0], &[0.0; 2], &[0.0; 3]).is_err());
    }
}
