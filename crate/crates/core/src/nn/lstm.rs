//! LSTM layer with masked time steps and backpropagation through time.
//!
//! Sequences are laid out time-major: element `(t, b)` of a `T×B×D` buffer starts at
//! `(t * B + b) * D`. Gates are packed as `[input | forget | cell | output]`, each `H` wide.
//!
//! A masked (padding) step leaves the recurrent state untouched and emits a zero output,
//! so prepending padding never changes the outputs at real positions.

use rand::Rng;

use super::param::Parameter;
use super::tensor::{gemm, gemm_nt, gemm_tn, sigmoid, Tensor};
use crate::error::{HarError, Result};

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `D × 4H`
    pub w_ih: Parameter,
    /// `H × 4H`
    pub w_hh: Parameter,
    /// `4H`
    pub bias: Parameter,
    input: usize,
    hidden: usize,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub steps: usize,
    pub batch: usize,
    pub reverse: bool,
    hidden: usize,
    mask: Vec<bool>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
    /// Per-step outputs, zero on masked steps. `T × B × H`.
    pub outputs: Vec<f64>,
}

impl LstmCache {
    /// Recurrent state after the last processed step (`B × H`).
    pub fn final_hidden(&self) -> &[f64] {
        let h = self.hidden;
        let t = if self.reverse { 0 } else { self.steps - 1 };
        &self.hiddens[t * self.batch * h..(t + 1) * self.batch * h]
    }
}

impl LstmLayer {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = Parameter::fan_in_uniform(format!("{name}.w_ih"), &[input, 4 * hidden], input, rng);
        let w_hh = Parameter::fan_in_uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], hidden, rng);
        let mut bias = Parameter::zeros(format!("{name}.bias"), &[4 * hidden]);
        bias.value.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        LstmLayer { w_ih, w_hh, bias, input, hidden }
    }

    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_ih: Parameter::zeros(format!("{name}.w_ih"), &[input, 4 * hidden]),
            w_hh: Parameter::zeros(format!("{name}.w_hh"), &[hidden, 4 * hidden]),
            bias: Parameter::zeros(format!("{name}.bias"), &[4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    /// Runs the layer over `xs` (`T × B × D`). `reverse` processes time from `T-1` down to 0.
    pub fn forward(&self, xs: &[f64], mask: &[bool], steps: usize, batch: usize, reverse: bool) -> Result<LstmCache> {
        let (d, h) = (self.input, self.hidden);
        let g4 = 4 * h;
        if xs.len() != steps * batch * d || mask.len() != steps * batch {
            return Err(HarError::shape(format!(
                "lstm input {} / mask {} for T={steps} B={batch} D={d}",
                xs.len(),
                mask.len()
            )));
        }
        let rows = steps * batch;
        let mut pre = vec![0.0; rows * g4];
        for r in 0..rows {
            pre[r * g4..(r + 1) * g4].copy_from_slice(self.bias.value.data());
        }
        gemm(rows, d, g4, xs, self.w_ih.value.data(), 1.0, &mut pre);
        Ok(self.run(&pre, mask, steps, batch, reverse))
    }

    /// Same as [`forward`](Self::forward) on one-hot inputs given by index; `indexes[r]`
    /// selects row `r`'s hot input unit.
    pub fn forward_one_hot(
        &self,
        indexes: &[u32],
        mask: &[bool],
        steps: usize,
        batch: usize,
        reverse: bool,
    ) -> Result<LstmCache> {
        let g4 = 4 * self.hidden;
        if indexes.len() != steps * batch || mask.len() != steps * batch {
            return Err(HarError::shape("one-hot indexes / mask do not match T×B"));
        }
        let rows = steps * batch;
        let mut pre = vec![0.0; rows * g4];
        for r in 0..rows {
            let out = &mut pre[r * g4..(r + 1) * g4];
            out.copy_from_slice(self.bias.value.data());
            if mask[r] {
                let ix = indexes[r] as usize;
                if ix >= self.input {
                    return Err(HarError::Vocabulary(format!("index {ix} outside one-hot width {}", self.input)));
                }
                out.iter_mut().zip(self.w_ih.value.row(ix)).for_each(|(o, w)| *o += w);
            }
        }
        Ok(self.run(&pre, mask, steps, batch, reverse))
    }

    fn run(&self, pre: &[f64], mask: &[bool], steps: usize, batch: usize, reverse: bool) -> LstmCache {
        let h = self.hidden;
        let g4 = 4 * h;
        let rows = steps * batch;
        let mut cache = LstmCache {
            steps,
            batch,
            reverse,
            hidden: h,
            mask: mask.to_vec(),
            gates: vec![0.0; rows * g4],
            cells: vec![0.0; rows * h],
            tanh_cells: vec![0.0; rows * h],
            hiddens: vec![0.0; rows * h],
            outputs: vec![0.0; rows * h],
        };
        let zeros = vec![0.0; batch * h];
        let mut rec = vec![0.0; batch * g4];
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let prev = (step > 0).then(|| if reverse { t + 1 } else { t - 1 });
            let (h_prev, c_prev) = match prev {
                Some(p) => (
                    cache.hiddens[p * batch * h..(p + 1) * batch * h].to_vec(),
                    cache.cells[p * batch * h..(p + 1) * batch * h].to_vec(),
                ),
                None => (zeros.clone(), zeros.clone()),
            };
            gemm(batch, h, g4, &h_prev, self.w_hh.value.data(), 0.0, &mut rec);
            for b in 0..batch {
                let row = t * batch + b;
                let hs = row * h;
                if !mask[row] {
                    cache.cells[hs..hs + h].copy_from_slice(&c_prev[b * h..(b + 1) * h]);
                    cache.hiddens[hs..hs + h].copy_from_slice(&h_prev[b * h..(b + 1) * h]);
                    continue;
                }
                let p = &pre[row * g4..(row + 1) * g4];
                let r = &rec[b * g4..(b + 1) * g4];
                let gates = &mut cache.gates[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(p[j] + r[j]);
                    let f = sigmoid(p[h + j] + r[h + j]);
                    let g = (p[2 * h + j] + r[2 * h + j]).tanh();
                    let o = sigmoid(p[3 * h + j] + r[3 * h + j]);
                    gates[j] = i;
                    gates[h + j] = f;
                    gates[2 * h + j] = g;
                    gates[3 * h + j] = o;
                    let c = f * c_prev[b * h + j] + i * g;
                    let tc = c.tanh();
                    cache.cells[hs + j] = c;
                    cache.tanh_cells[hs + j] = tc;
                    cache.hiddens[hs + j] = o * tc;
                    cache.outputs[hs + j] = o * tc;
                }
            }
        }
        cache
    }

    /// Gradient w.r.t. the gate pre-activations (`T × B × 4H`); accumulates `w_hh` gradients.
    fn backward_recurrent(&mut self, cache: &LstmCache, d_outputs: Option<&[f64]>, d_final: Option<&[f64]>) -> Vec<f64> {
        let h = self.hidden;
        let g4 = 4 * h;
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        let mut d_pre = vec![0.0; rows * g4];
        let mut dh = d_final.map_or_else(|| vec![0.0; batch * h], |v| v.to_vec());
        let mut dc = vec![0.0; batch * h];
        let mut dh_next = vec![0.0; batch * h];
        let zeros = vec![0.0; batch * h];

        for step in (0..steps).rev() {
            let t = if cache.reverse { steps - 1 - step } else { step };
            let prev = (step > 0).then(|| if cache.reverse { t + 1 } else { t - 1 });
            let (h_prev, c_prev) = match prev {
                Some(p) => (
                    &cache.hiddens[p * batch * h..(p + 1) * batch * h],
                    &cache.cells[p * batch * h..(p + 1) * batch * h],
                ),
                None => (&zeros[..], &zeros[..]),
            };
            for b in 0..batch {
                let row = t * batch + b;
                if !cache.mask[row] {
                    continue;
                }
                let hs = row * h;
                let gates = &cache.gates[row * g4..(row + 1) * g4];
                let dp = &mut d_pre[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let mut dhj = dh[b * h + j];
                    if let Some(dout) = d_outputs {
                        dhj += dout[hs + j];
                    }
                    let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let tc = cache.tanh_cells[hs + j];
                    let d_o = dhj * tc;
                    let dct = dc[b * h + j] + dhj * o * (1.0 - tc * tc);
                    dp[j] = dct * g * i * (1.0 - i);
                    dp[h + j] = dct * c_prev[b * h + j] * f * (1.0 - f);
                    dp[2 * h + j] = dct * i * (1.0 - g * g);
                    dp[3 * h + j] = d_o * o * (1.0 - o);
                    dc[b * h + j] = dct * f;
                }
            }
            let dp_t = &d_pre[t * batch * g4..(t + 1) * batch * g4];
            gemm_tn(h, batch, g4, h_prev, dp_t, self.w_hh.grad.data_mut());
            gemm_nt(batch, g4, h, dp_t, self.w_hh.value.data(), 0.0, &mut dh_next);
            for b in 0..batch {
                let row = t * batch + b;
                // Masked rows carry `dh` through unchanged.
                if cache.mask[row] {
                    dh[b * h..(b + 1) * h].copy_from_slice(&dh_next[b * h..(b + 1) * h]);
                }
            }
        }

        d_pre
    }

    fn accumulate_bias(&mut self, d_pre: &[f64]) {
        let g4 = 4 * self.hidden;
        let bg = self.bias.grad.data_mut();
        for row in d_pre.chunks(g4) {
            for (acc, v) in bg.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }

    /// Backpropagates through a cached forward pass, accumulating parameter gradients.
    ///
    /// `d_outputs` is the gradient w.r.t. every per-step output (`T × B × H`) and
    /// `d_final` the gradient w.r.t. the final recurrent state (`B × H`). Returns the
    /// gradient w.r.t. the inputs (`T × B × D`).
    pub fn backward(
        &mut self,
        xs: &[f64],
        cache: &LstmCache,
        d_outputs: Option<&[f64]>,
        d_final: Option<&[f64]>,
    ) -> Vec<f64> {
        let (d, g4) = (self.input, 4 * self.hidden);
        let rows = cache.steps * cache.batch;
        let d_pre = self.backward_recurrent(cache, d_outputs, d_final);
        gemm_tn(d, rows, g4, xs, &d_pre, self.w_ih.grad.data_mut());
        self.accumulate_bias(&d_pre);
        let mut dxs = vec![0.0; rows * d];
        gemm_nt(rows, g4, d, &d_pre, self.w_ih.value.data(), 0.0, &mut dxs);
        dxs
    }

    /// Like [`backward`](Self::backward) but skips the input gradient, for inputs that are not trained.
    pub fn backward_params(&mut self, xs: &[f64], cache: &LstmCache, d_outputs: Option<&[f64]>, d_final: Option<&[f64]>) {
        let (d, g4) = (self.input, 4 * self.hidden);
        let rows = cache.steps * cache.batch;
        let d_pre = self.backward_recurrent(cache, d_outputs, d_final);
        gemm_tn(d, rows, g4, xs, &d_pre, self.w_ih.grad.data_mut());
        self.accumulate_bias(&d_pre);
    }

    /// Backward pass matching [`forward_one_hot`](Self::forward_one_hot).
    pub fn backward_one_hot(
        &mut self,
        indexes: &[u32],
        cache: &LstmCache,
        d_outputs: Option<&[f64]>,
        d_final: Option<&[f64]>,
    ) {
        let g4 = 4 * self.hidden;
        let d_pre = self.backward_recurrent(cache, d_outputs, d_final);
        for (r, dp) in d_pre.chunks(g4).enumerate() {
            if cache.mask[r] {
                let row = self.w_ih.grad.row_mut(indexes[r] as usize);
                row.iter_mut().zip(dp).for_each(|(g, v)| *g += v);
            }
        }
        self.accumulate_bias(&d_pre);
    }
}

/// Weights of a single cell, used by the stand-alone cell and sequence functions.
pub type LstmCellParams = LstmLayer;

/// One LSTM step for a single example: returns `(h', c')`.
pub fn lstm_cell_forward(x: &Tensor, h: &Tensor, c: &Tensor, p: &LstmCellParams) -> Result<(Tensor, Tensor)> {
    let (d, hid) = (p.input_size(), p.hidden_size());
    if x.len() != d || h.len() != hid || c.len() != hid {
        return Err(HarError::shape(format!(
            "cell expects x[{d}], h[{hid}], c[{hid}]; got x[{}], h[{}], c[{}]",
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let g4 = 4 * hid;
    let mut pre = p.bias.value.data().to_vec();
    gemm(1, d, g4, x.data(), p.w_ih.value.data(), 1.0, &mut pre);
    gemm(1, hid, g4, h.data(), p.w_hh.value.data(), 1.0, &mut pre);
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for j in 0..hid {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[hid + j]);
        let g = pre[2 * hid + j].tanh();
        let o = sigmoid(pre[3 * hid + j]);
        c_new[j] = f * c.data()[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((Tensor::from_vec(&[hid], h_new)?, Tensor::from_vec(&[hid], c_new)?))
}

/// Runs one layer over a single `T × D` sequence; returns `T × H` outputs.
pub fn lstm_sequence_forward(xs: &Tensor, mask: &[bool], p: &LstmCellParams) -> Result<Tensor> {
    let steps = mask.len();
    if xs.len() != steps * p.input_size() {
        return Err(HarError::shape(format!(
            "sequence of {} values does not hold {steps} steps of width {}",
            xs.len(),
            p.input_size()
        )));
    }
    let cache = p.forward(xs.data(), mask, steps, 1, false)?;
    Tensor::from_vec(&[steps, p.hidden_size()], cache.outputs)
}

/// Forward and backward passes concatenated per step: `T × 2H`.
pub fn bidirectional(xs: &Tensor, mask: &[bool], fwd: &LstmCellParams, bwd: &LstmCellParams) -> Result<Tensor> {
    let steps = mask.len();
    if fwd.input_size() != bwd.input_size() || fwd.hidden_size() != bwd.hidden_size() {
        return Err(HarError::shape("forward and backward layers differ in shape"));
    }
    if xs.len() != steps * fwd.input_size() {
        return Err(HarError::shape("input does not match mask length"));
    }
    let h = fwd.hidden_size();
    let f = fwd.forward(xs.data(), mask, steps, 1, false)?;
    let b = bwd.forward(xs.data(), mask, steps, 1, true)?;
    let mut out = vec![0.0; steps * 2 * h];
    for t in 0..steps {
        out[t * 2 * h..t * 2 * h + h].copy_from_slice(&f.outputs[t * h..(t + 1) * h]);
        out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&b.outputs[t * h..(t + 1) * h]);
    }
    Tensor::from_vec(&[steps, 2 * h], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmLayer::zeros("l", 3, 2);
        let (h, c) = lstm_cell_forward(&Tensor::zeros(&[3]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let mut p = LstmLayer::zeros("l", 1, 2);
        let b = p.bias.value.data_mut();
        b[2..4].fill(50.0); // forget
        b[0..2].fill(-50.0); // input
        let c = Tensor::from_vec(&[2], vec![0.3, -0.8]).unwrap();
        let (_, c2) = lstm_cell_forward(&Tensor::zeros(&[1]), &Tensor::zeros(&[2]), &c, &p).unwrap();
        for (a, b) in c2.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let p = LstmLayer::zeros("l", 3, 2);
        assert!(lstm_cell_forward(&Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).is_err());
        assert!(lstm_sequence_forward(&Tensor::zeros(&[5]), &[true, true], &p).is_err());
    }

    #[test]
    fn all_masked_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmLayer::new("l", 2, 3, &mut rng);
        let xs = Tensor::from_vec(&[4, 2], (0..8).map(|v| v as f64 * 0.1).collect()).unwrap();
        let out = lstm_sequence_forward(&xs, &[false; 4], &p).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn padding_prefix_does_not_change_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmLayer::new("l", 2, 3, &mut rng);
        let real: Vec<f64> = (0..6).map(|v| (v as f64).sin()).collect();
        let a = lstm_sequence_forward(&Tensor::from_vec(&[3, 2], real.clone()).unwrap(), &[true; 3], &p).unwrap();
        let mut padded = vec![9.0; 4];
        padded.extend(&real);
        let b = lstm_sequence_forward(
            &Tensor::from_vec(&[5, 2], padded).unwrap(),
            &[false, false, true, true, true],
            &p,
        )
        .unwrap();
        assert_eq!(&b.data()[6..], a.data());
        assert!(b.data()[..6].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequence_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmLayer::new("l", 2, 2, &mut rng);
        let xs: Vec<f64> = (0..6).map(|v| (v as f64 * 0.7).cos()).collect();
        let out = lstm_sequence_forward(&Tensor::from_vec(&[3, 2], xs.clone()).unwrap(), &[true; 3], &p).unwrap();
        let mut h = Tensor::zeros(&[2]);
        let mut c = Tensor::zeros(&[2]);
        for t in 0..3 {
            let x = Tensor::from_vec(&[2], xs[t * 2..t * 2 + 2].to_vec()).unwrap();
            let (h2, c2) = lstm_cell_forward(&x, &h, &c, &p).unwrap();
            assert_eq!(out.row(t), h2.data());
            h = h2;
            c = c2;
        }
    }

    #[test]
    fn bidirectional_palindrome_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LstmLayer::new("l", 2, 3, &mut rng);
        let xs = vec![0.1, 0.2, -0.5, 0.4, 0.9, -0.3, -0.5, 0.4, 0.1, 0.2];
        let out = bidirectional(&Tensor::from_vec(&[5, 2], xs).unwrap(), &[true; 5], &p, &p).unwrap();
        for t in 0..5 {
            let fwd = &out.row(t)[..3];
            let bwd = &out.row(4 - t)[3..];
            for (a, b) in fwd.iter().zip(bwd) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_direction_ignores_masked_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = LstmLayer::new("f", 1, 2, &mut rng);
        let b = LstmLayer::new("b", 1, 2, &mut rng);
        let a = bidirectional(&Tensor::from_vec(&[2, 1], vec![0.3, -0.2]).unwrap(), &[true; 2], &f, &b).unwrap();
        let p = bidirectional(
            &Tensor::from_vec(&[4, 1], vec![5.0, -7.0, 0.3, -0.2]).unwrap(),
            &[false, false, true, true],
            &f,
            &b,
        )
        .unwrap();
        assert_eq!(&p.data()[8..], a.data());
    }
}
