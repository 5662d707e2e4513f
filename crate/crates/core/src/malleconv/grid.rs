use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Low-resolution field of per-cell depthwise kernels and biases.
///
/// Stored packed as a `(n, grid_h, grid_w, (k²+1)·c)` tensor, which is exactly
/// what the predictor's exit convolution emits. Within a cell the first
/// `k²·c` channels are kernel taps in channel-major, then row, then column
/// order (`ch·k² + u·k + v`), followed by `c` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    k: usize,
    c: usize,
    packed: Tensor,
}

#[inline]
pub const fn weight_channel(ch: usize, u: usize, v: usize, k: usize) -> usize {
    ch * k * k + u * k + v
}

#[inline]
pub const fn bias_channel(ch: usize, k: usize, c: usize) -> usize {
    k * k * c + ch
}

pub const fn packed_channels(k: usize, c: usize) -> usize {
    (k * k + 1) * c
}

impl KernelGrid {
    pub fn new(packed: Tensor, k: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::InvalidShape(format!("kernel size must be odd, got {k}")));
        }
        let ch = packed.shape().c;
        if ch % (k * k + 1) != 0 {
            return Err(Error::InvalidShape(format!(
                "{ch} packed channels is not a multiple of k²+1 = {}",
                k * k + 1
            )));
        }
        Ok(KernelGrid { k, c: ch / (k * k + 1), packed })
    }

    /// Builds a grid from `weights[n][row][col][ch][u][v]` and `bias[n][row][col][ch]`.
    pub fn from_parts(weights: &[f32], bias: &[f32], (n, grid_h, grid_w): (usize, usize, usize), c: usize, k: usize) -> Result<Self> {
        let cells = n * grid_h * grid_w;
        if weights.len() != cells * c * k * k || bias.len() != cells * c {
            return Err(Error::InvalidShape(format!(
                "kernel grid parts: {} weights and {} biases for {cells} cells of c = {c}, k = {k}",
                weights.len(),
                bias.len()
            )));
        }
        let mut data = Vec::with_capacity(cells * packed_channels(k, c));
        for cell in 0..cells {
            data.extend_from_slice(&weights[cell * c * k * k..(cell + 1) * c * k * k]);
            data.extend_from_slice(&bias[cell * c..(cell + 1) * c]);
        }
        KernelGrid::new(Tensor::new(Shape::new(n, grid_h, grid_w, packed_channels(k, c)), data)?, k)
    }

    /// Every cell holds the same depthwise kernel `(1, k, k, c)` and bias `(1, 1, 1, c)`.
    pub fn uniform(weights: &Tensor, bias: &Tensor, (n, grid_h, grid_w): (usize, usize, usize)) -> Result<Self> {
        let ws = weights.shape();
        let (k, c) = (ws.h, ws.c);
        if ws != Shape::new(1, k, k, c) || bias.shape() != Shape::new(1, 1, 1, c) {
            return Err(Error::ShapeMismatch { op: "KernelGrid::uniform", lhs: ws, rhs: bias.shape() });
        }
        let mut cell = vec![0.0f32; packed_channels(k, c)];
        for u in 0..k {
            for v in 0..k {
                for ch in 0..c {
                    cell[weight_channel(ch, u, v, k)] = weights.at(0, u, v, ch);
                }
            }
        }
        cell[k * k * c..].copy_from_slice(bias.data());
        let cells = n * grid_h * grid_w;
        let data = cell.iter().copied().cycle().take(cells * cell.len()).collect();
        KernelGrid::new(Tensor::new(Shape::new(n, grid_h, grid_w, cell.len()), data)?, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn batch(&self) -> usize {
        self.packed.shape().n
    }

    pub fn grid_h(&self) -> usize {
        self.packed.shape().h
    }

    pub fn grid_w(&self) -> usize {
        self.packed.shape().w
    }

    pub fn packed(&self) -> &Tensor {
        &self.packed
    }

    pub fn into_packed(self) -> Tensor {
        self.packed
    }

    pub fn weight(&self, n: usize, row: usize, col: usize, ch: usize, u: usize, v: usize) -> f32 {
        self.packed.at(n, row, col, weight_channel(ch, u, v, self.k))
    }

    pub fn bias(&self, n: usize, row: usize, col: usize, ch: usize) -> f32 {
        self.packed.at(n, row, col, bias_channel(ch, self.k, self.c))
    }

    /// Packed `(k²+1)·c` values of one cell.
    pub fn cell(&self, n: usize, row: usize, col: usize) -> &[f32] {
        let i = self.packed.shape().index(n, row, col, 0);
        &self.packed.data()[i..i + packed_channels(self.k, self.c)]
    }

    /// One cell as a depthwise kernel `(1, k, k, c)` and bias `(1, 1, 1, c)`.
    pub fn cell_kernel(&self, n: usize, row: usize, col: usize) -> Result<(Tensor, Tensor)> {
        if n >= self.batch() || row >= self.grid_h() || col >= self.grid_w() {
            return Err(Error::OutOfRange(format!(
                "cell ({row}, {col}) of batch {n} in a {}x{} grid with batch {}",
                self.grid_h(),
                self.grid_w(),
                self.batch()
            )));
        }
        let (k, c) = (self.k, self.c);
        let w = Tensor::from_fn(Shape::new(1, k, k, c), |_, u, v, ch| self.weight(n, row, col, ch, u, v))?;
        let b = Tensor::from_fn(Shape::new(1, 1, 1, c), |_, _, _, ch| self.bias(n, row, col, ch))?;
        Ok((w, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_roundtrip_through_scan_order() {
        let (n, gh, gw, c, k) = (2, 2, 3, 2, 3);
        let cells = n * gh * gw;
        let weights: Vec<f32> = (0..cells * c * k * k).map(|i| i as f32).collect();
        let bias: Vec<f32> = (0..cells * c).map(|i| -(i as f32)).collect();
        let g = KernelGrid::from_parts(&weights, &bias, (n, gh, gw), c, k).unwrap();
        assert_eq!((g.k(), g.c(), g.grid_h(), g.grid_w()), (k, c, gh, gw));
        for b in 0..n {
            for r in 0..gh {
                for col in 0..gw {
                    let cell = (b * gh + r) * gw + col;
                    for ch in 0..c {
                        assert_eq!(g.bias(b, r, col, ch), bias[cell * c + ch]);
                        for u in 0..k {
                            for v in 0..k {
                                let flat = ((cell * c + ch) * k + u) * k + v;
                                assert_eq!(g.weight(b, r, col, ch, u, v), weights[flat]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_channel_count() {
        assert!(KernelGrid::new(Tensor::zeros(Shape::new(1, 2, 2, 7)), 3).is_err());
        assert!(KernelGrid::new(Tensor::zeros(Shape::new(1, 2, 2, 10)), 2).is_err());
    }
}
