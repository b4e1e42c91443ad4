use rand::Rng;

use super::param::Parameter;
use super::tensor::{gemm, gemm_nt, gemm_tn};
use crate::error::{HarError, Result};
use crate::tokenizer::PAD_INDEX;

/// Affine map `y = x·W + b` over a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Parameter,
    pub bias: Parameter,
    input: usize,
    output: usize,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            weight: Parameter::fan_in_uniform(format!("{name}.weight"), &[input, output], input, rng),
            bias: Parameter::zeros(format!("{name}.bias"), &[output]),
            input,
            output,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub fn forward(&self, xs: &[f64], rows: usize) -> Result<Vec<f64>> {
        if xs.len() != rows * self.input {
            return Err(HarError::shape(format!(
                "dense expects {rows}×{}, got {} values",
                self.input,
                xs.len()
            )));
        }
        let mut out = Vec::with_capacity(rows * self.output);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(rows, self.input, self.output, xs, self.weight.value.data(), 1.0, &mut out);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, xs: &[f64], d_out: &[f64], rows: usize) -> Vec<f64> {
        gemm_tn(self.input, rows, self.output, xs, d_out, self.weight.grad.data_mut());
        let bg = self.bias.grad.data_mut();
        for r in 0..rows {
            for (acc, v) in bg.iter_mut().zip(&d_out[r * self.output..(r + 1) * self.output]) {
                *acc += v;
            }
        }
        let mut dx = vec![0.0; rows * self.input];
        gemm_nt(rows, self.output, self.input, d_out, self.weight.value.data(), 0.0, &mut dx);
        dx
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
}

/// Token lookup table whose padding row stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Parameter,
    rows: usize,
    dim: usize,
}

pub const EMBEDDING_INIT_STD: f64 = 0.05;

impl Embedding {
    pub fn new<R: Rng>(name: &str, rows: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = Parameter::normal(format!("{name}.table"), &[rows, dim], EMBEDDING_INIT_STD, rng);
        table.value.row_mut(PAD_INDEX as usize).fill(0.0);
        Embedding { table, rows, dim }
    }

    pub fn from_parameter(table: Parameter) -> Result<Self> {
        let shape = table.value.shape().to_vec();
        if shape.len() != 2 {
            return Err(HarError::shape("embedding table must be 2-D"));
        }
        Ok(Embedding { table, rows: shape[0], dim: shape[1] })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Looks up each index; masked positions produce zero vectors.
    pub fn forward(&self, indexes: &[u32], mask: &[bool]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; indexes.len() * self.dim];
        for (k, (&ix, &m)) in indexes.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if ix as usize >= self.rows {
                return Err(HarError::Vocabulary(format!(
                    "index {ix} outside embedding of {} rows",
                    self.rows
                )));
            }
            out[k * self.dim..(k + 1) * self.dim].copy_from_slice(self.table.value.row(ix as usize));
        }
        Ok(out)
    }

    /// Scatter-adds `d_out` into the rows that were looked up. The padding row never receives gradient.
    pub fn backward(&mut self, indexes: &[u32], mask: &[bool], d_out: &[f64]) {
        let dim = self.dim;
        for (k, (&ix, &m)) in indexes.iter().zip(mask).enumerate() {
            if !m || ix == PAD_INDEX {
                continue;
            }
            let row = self.table.grad.row_mut(ix as usize);
            for (g, v) in row.iter_mut().zip(&d_out[k * dim..(k + 1) * dim]) {
                *g += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pad_row_is_zero_and_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut e = Embedding::new("e", 4, 3, &mut rng);
        assert!(e.table.value.row(0).iter().all(|v| *v == 0.0));
        e.backward(&[0, 2], &[true, true], &[1.0; 6]);
        assert!(e.table.grad.row(0).iter().all(|v| *v == 0.0));
        assert_eq!(e.table.grad.row(2), &[1.0; 3]);
    }

    #[test]
    fn out_of_range_index_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Embedding::new("e", 4, 3, &mut rng);
        assert!(e.forward(&[4], &[true]).is_err());
        assert_eq!(e.forward(&[4], &[false]).unwrap(), vec![0.0; 3]);
    }
}
