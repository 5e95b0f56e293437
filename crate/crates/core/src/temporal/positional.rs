use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor};

/// Fixed sinusoidal table `[seq_len × d_model]`:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    table: Tensor,
}

impl PositionalEncoding {
    pub fn sinusoidal(seq_len: usize, d_model: usize) -> Self {
        let mut table = Tensor::zeros(&[seq_len, d_model]);
        for pos in 0..seq_len {
            let row = table.row_mut(pos);
            for pair in 0..d_model.div_ceil(2) {
                let exponent = (2 * pair) as f64 / d_model as f64;
                let angle = pos as f64 / 10000f64.powf(exponent);
                row[2 * pair] = angle.sin();
                if 2 * pair + 1 < d_model {
                    row[2 * pair + 1] = angle.cos();
                }
            }
        }
        PositionalEncoding { table }
    }

    /// Uses an arbitrary `[seq_len × d_model]` table.
    pub fn from_table(table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::dim("positional table", "[seq_len × d_model]", shape_str(table.shape())));
        }
        Ok(PositionalEncoding { table })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn seq_len(&self) -> usize {
        self.table.rows()
    }

    pub fn d_model(&self) -> usize {
        self.table.cols()
    }
}
