use ndarray::ArrayView2;

use crate::circuit::{ConductanceMatrix, CrossbarModel};
use crate::error::{Error, Result};

use super::quant::{quantize_layer, slice_weights, QuantConfig};

/// One crossbar-sized block of a larger matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row_offset: usize,
    pub col_offset: usize,
    pub g: ConductanceMatrix<f64>,
}

/// Tiles covering a `rows × cols` digit matrix, row-major over the tile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tiles: Vec<Tile>,
}

fn digit_level(model: &CrossbarModel<f64>, max_digit: u32) -> Result<usize> {
    let span = model.device.levels - 1;
    if max_digit == 0 || span % max_digit as usize != 0 {
        return Err(Error::invalid(format!(
            "digits 0..={max_digit} do not fit evenly on {} levels",
            model.device.levels
        )));
    }
    Ok(span / max_digit as usize)
}

/// Programs a `rows × cols` digit matrix (crossbar orientation: inputs on
/// rows) onto crossbars of `model`. Digit `d` becomes level
/// `d·(levels−1)/max_digit`; cells outside the matrix hold `1/r_off`.
pub fn map_matrix_to_tiles(
    digits: &[u32],
    rows: usize,
    cols: usize,
    model: &CrossbarModel<f64>,
    max_digit: u32,
) -> Result<TileGrid> {
    if digits.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} digits for a {rows}x{cols} matrix",
            digits.len()
        )));
    }
    if let Some(&bad) = digits.iter().find(|&&d| d > max_digit) {
        return Err(Error::invalid(format!("digit {bad} exceeds {max_digit}")));
    }
    let step = digit_level(model, max_digit)?;
    let (tr, tc) = (model.geometry.rows, model.geometry.cols);
    let (grid_rows, grid_cols) = (rows.div_ceil(tr), cols.div_ceil(tc));
    let mut tiles = Vec::with_capacity(grid_rows * grid_cols);
    for gi in 0..grid_rows {
        for gj in 0..grid_cols {
            let (r0, c0) = (gi * tr, gj * tc);
            let mut levels = vec![0usize; tr * tc];
            for i in 0..tr.min(rows - r0) {
                for j in 0..tc.min(cols - c0) {
                    levels[i * tc + j] = digits[(r0 + i) * cols + c0 + j] as usize * step;
                }
            }
            tiles.push(Tile {
                row_offset: r0,
                col_offset: c0,
                g: ConductanceMatrix::from_levels(&model.device, tr, tc, &levels)?,
            });
        }
    }
    Ok(TileGrid {
        rows,
        cols,
        grid_rows,
        grid_cols,
        tiles,
    })
}

impl TileGrid {
    /// Digits recovered from the programmed conductances, padding dropped.
    pub fn read_back(&self, model: &CrossbarModel<f64>, max_digit: u32) -> Result<Vec<u32>> {
        let step = digit_level(model, max_digit)?;
        let tc = model.geometry.cols;
        let mut out = vec![0u32; self.rows * self.cols];
        for t in &self.tiles {
            let levels = t.g.levels(&model.device);
            for i in 0..t.g.rows().min(self.rows - t.row_offset) {
                for j in 0..tc.min(self.cols - t.col_offset) {
                    out[(t.row_offset + i) * self.cols + t.col_offset + j] =
                        (levels[i * tc + j] / step) as u32;
                }
            }
        }
        Ok(out)
    }
}

/// Positive and negative crossbars of one weight slice on one tile position.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePair {
    pub slice: usize,
    pub row_offset: usize,
    pub col_offset: usize,
    pub pos: ConductanceMatrix<f64>,
    pub neg: ConductanceMatrix<f64>,
    /// Digits of the two crossbars, `[tile rows × tile cols]` each.
    pub pos_digits: Vec<u32>,
    pub neg_digits: Vec<u32>,
}

impl TilePair {
    /// Identical programming on both sides contributes exactly nothing.
    pub fn cancels(&self) -> bool {
        self.pos_digits == self.neg_digits
    }
}

/// A conv/linear weight matrix lowered onto differential crossbar pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedLayer {
    pub layer: usize,
    /// Crossbar rows used: the layer's input length `k`.
    pub rows: usize,
    /// Crossbar columns used: the layer's output count.
    pub cols: usize,
    pub qc: QuantConfig,
    pub model: CrossbarModel<f64>,
    pub weight_scale: f64,
    /// Quantized weights, `[out, k]` like the source matrix.
    pub weights: Vec<i64>,
    /// Ordered by tile (row-major), then slice.
    pub pairs: Vec<TilePair>,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl SlicedLayer {
    /// Quantizes, slices and tiles `weight` (`[out, k]`).
    pub fn new(
        layer: usize,
        weight: ArrayView2<'_, f64>,
        qc: &QuantConfig,
        model: &CrossbarModel<f64>,
    ) -> Result<Self> {
        qc.validate(model.device.levels)?;
        let (out, k) = weight.dim();
        let flat: Vec<f64> = weight.iter().copied().collect();
        let q = quantize_layer(&flat, qc)?;
        // transpose into crossbar orientation: row = input, column = output
        let mut crossbar_order = vec![0i64; k * out];
        for o in 0..out {
            for i in 0..k {
                crossbar_order[i * out + o] = q.values[o * k + i];
            }
        }
        let slices = slice_weights(&crossbar_order, qc)?;
        let max_digit = qc.max_digit();
        let mut per_slice = Vec::with_capacity(qc.slices());
        for s in 0..qc.slices() {
            let pos = map_matrix_to_tiles(&slices.pos[s], k, out, model, max_digit)?;
            let neg = map_matrix_to_tiles(&slices.neg[s], k, out, model, max_digit)?;
            per_slice.push((pos, neg));
        }
        let (grid_rows, grid_cols) = (per_slice[0].0.grid_rows, per_slice[0].0.grid_cols);
        let mut pairs = Vec::with_capacity(grid_rows * grid_cols * qc.slices());
        for t in 0..grid_rows * grid_cols {
            for (s, (pos, neg)) in per_slice.iter().enumerate() {
                let (p, n) = (&pos.tiles[t], &neg.tiles[t]);
                pairs.push(TilePair {
                    slice: s,
                    row_offset: p.row_offset,
                    col_offset: p.col_offset,
                    pos_digits: tile_digits(&p.g, model, max_digit),
                    neg_digits: tile_digits(&n.g, model, max_digit),
                    pos: p.g.clone(),
                    neg: n.g.clone(),
                });
            }
        }
        Ok(Self {
            layer,
            rows: k,
            cols: out,
            qc: *qc,
            model: model.clone(),
            weight_scale: q.scale,
            weights: q.values,
            pairs,
            grid_rows,
            grid_cols,
        })
    }

    pub fn crossbars(&self) -> usize {
        2 * self.pairs.len()
    }

    /// Pairs whose two crossbars differ, i.e. that carry any weight.
    pub fn active_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| !p.cancels()).count()
    }
}

fn tile_digits(g: &ConductanceMatrix<f64>, model: &CrossbarModel<f64>, max_digit: u32) -> Vec<u32> {
    let step = (model.device.levels - 1) / max_digit as usize;
    g.levels(&model.device).into_iter().map(|l| (l / step) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CrossbarModel<f64> {
        CrossbarModel::preset("64x64_100k").unwrap()
    }

    #[test]
    fn hundred_square_needs_two_by_two_tiles() {
        let digits: Vec<u32> = (0..100 * 100).map(|i| (i % 4) as u32).collect();
        let grid = map_matrix_to_tiles(&digits, 100, 100, &model(), 3).unwrap();
        assert_eq!((grid.grid_rows, grid.grid_cols, grid.tiles.len()), (2, 2, 4));
        let last = &grid.tiles[3];
        assert_eq!((last.row_offset, last.col_offset), (64, 64));
        // padding cell
        assert_eq!(last.g.get(63, 63), 1.0 / 1e6);
        assert_eq!(grid.read_back(&model(), 3).unwrap(), digits);
    }

    #[test]
    fn digit_endpoints_hit_off_and_on() {
        let grid = map_matrix_to_tiles(&[0, 3], 1, 2, &model(), 3).unwrap();
        let g = &grid.tiles[0].g;
        assert_eq!(g.get(0, 0), 1.0 / 1e6);
        assert_eq!(g.get(0, 1), 1.0 / 100e3);
        assert!(map_matrix_to_tiles(&[4], 1, 1, &model(), 3).is_err());
        assert!(map_matrix_to_tiles(&[1], 1, 1, &model(), 2).is_err());
    }

    #[test]
    fn sliced_layer_layout() {
        let w = ndarray::Array2::from_shape_fn((70, 130), |(o, i)| ((o * 31 + i * 17) % 23) as f64 - 11.0);
        let l = SlicedLayer::new(0, w.view(), &QuantConfig::default(), &model()).unwrap();
        assert_eq!((l.grid_rows, l.grid_cols), (3, 2));
        assert_eq!(l.pairs.len(), 6 * 4);
        assert_eq!(l.crossbars(), 48);
        assert!(l.active_pairs() <= l.pairs.len());
        assert_eq!(l.weights[0], ((-11.0f64 / 11.0) * 127.0) as i64);
    }
}
