//! Dense tiles, their wire format, and dense <-> tiled conversion.
//!
//! Wire format: 8-byte magic `LPTILE01`, little-endian u32 rows, u32 cols,
//! then `rows * cols` little-endian f64 values in row-major order.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

pub const TILE_MAGIC: &[u8; 8] = b"LPTILE01";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TileError {
    #[error("shape {rows}x{cols} does not match {len} values")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("tile contains a non-finite value")]
    NonFinite,
    #[error("bad tile magic")]
    BadMagic,
    #[error("tile payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("inconsistent tile shapes while assembling at block ({row}, {col})")]
    InconsistentGrid { row: usize, col: usize },
    #[error("block size must be at least 1")]
    ZeroBlock,
}

/// A row-major block of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tile {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TileError> {
        if data.len() != rows * cols {
            return Err(TileError::BadLength { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a tile from row slices; panics on ragged input (test convenience).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tile {
        Tile::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// `‖self − other‖_F`; shapes must agree.
    pub fn frobenius_distance(&self, other: &Tile) -> f64 {
        assert_eq!(self.shape(), other.shape());
        libm::sqrt(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.data.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(TILE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Tile, TileError> {
        if bytes.len() < HEADER_LEN {
            return Err(TileError::Truncated { expected: HEADER_LEN, got: bytes.len() });
        }
        if &bytes[..8] != TILE_MAGIC {
            return Err(TileError::BadMagic);
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = HEADER_LEN + 8 * rows * cols;
        if bytes.len() != expected {
            return Err(TileError::Truncated { expected, got: bytes.len() });
        }
        let data = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tile { rows, cols, data })
    }
}

impl Index<(usize, usize)> for Tile {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Tile {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Shape of a big matrix cut into a grid of tiles. Edge tiles may be ragged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BigMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_block: usize,
    pub col_block: usize,
}

impl BigMatrix {
    pub fn new(rows: usize, cols: usize, block: usize) -> Self {
        Self { rows, cols, row_block: block, col_block: block }
    }

    /// Row-blocked only: every tile spans all columns.
    pub fn row_panels(rows: usize, cols: usize, row_block: usize) -> Self {
        Self { rows, cols, row_block, col_block: cols.max(1) }
    }

    pub fn grid_rows(&self) -> usize {
        self.rows.div_ceil(self.row_block)
    }

    pub fn grid_cols(&self) -> usize {
        self.cols.div_ceil(self.col_block)
    }

    pub fn tile_shape(&self, i: usize, j: usize) -> (usize, usize) {
        let r = self.row_block.min(self.rows - i * self.row_block);
        let c = self.col_block.min(self.cols - j * self.col_block);
        (r, c)
    }
}

/// A tile with its `(row, col)` grid position.
pub type GridTile = ((usize, usize), Tile);

/// Cuts `dense` into square `block`-sized tiles, row-major over the grid.
pub fn partition(dense: &Tile, block: usize) -> Result<Vec<GridTile>, TileError> {
    partition_rect(dense, block, block)
}

pub fn partition_rect(dense: &Tile, row_block: usize, col_block: usize) -> Result<Vec<GridTile>, TileError> {
    if row_block == 0 || col_block == 0 {
        return Err(TileError::ZeroBlock);
    }
    let shape = BigMatrix { rows: dense.rows, cols: dense.cols, row_block, col_block };
    let mut out = Vec::with_capacity(shape.grid_rows() * shape.grid_cols());
    for i in 0..shape.grid_rows() {
        for j in 0..shape.grid_cols() {
            let (r, c) = shape.tile_shape(i, j);
            let (r0, c0) = (i * row_block, j * col_block);
            out.push(((i, j), Tile::from_fn(r, c, |a, b| dense[(r0 + a, c0 + b)])));
        }
    }
    Ok(out)
}

/// Stitches a grid of tiles back into one dense matrix.
pub fn assemble(grid: &[Vec<Tile>]) -> Result<Tile, TileError> {
    let row_heights: Vec<usize> = grid.iter().map(|row| row.first().map_or(0, Tile::rows)).collect();
    let col_widths: Vec<usize> = grid.first().map_or(Vec::new(), |row| row.iter().map(Tile::cols).collect());
    for (i, row) in grid.iter().enumerate() {
        if row.len() != col_widths.len() {
            return Err(TileError::InconsistentGrid { row: i, col: row.len().min(col_widths.len()) });
        }
        for (j, t) in row.iter().enumerate() {
            if t.rows != row_heights[i] || t.cols != col_widths[j] {
                return Err(TileError::InconsistentGrid { row: i, col: j });
            }
        }
    }
    let rows: usize = row_heights.iter().sum();
    let cols: usize = col_widths.iter().sum();
    let mut out = Tile::zeros(rows, cols);
    let mut r0 = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c0 = 0;
        for (j, t) in row.iter().enumerate() {
            for a in 0..t.rows {
                out.data[(r0 + a) * cols + c0..(r0 + a) * cols + c0 + t.cols].copy_from_slice(t.row(a));
            }
            c0 += col_widths[j];
        }
        r0 += row_heights[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(rows: usize, cols: usize) -> Tile {
        Tile::from_fn(rows, cols, |r, c| (r * 100 + c) as f64 + 0.25)
    }

    fn regrid(parts: Vec<GridTile>, grid_cols: usize) -> Vec<Vec<Tile>> {
        let mut grid: Vec<Vec<Tile>> = Vec::new();
        for ((i, j), t) in parts {
            if j == 0 {
                grid.push(Vec::new());
            }
            assert_eq!(grid.len() - 1, i);
            grid[i].push(t);
        }
        assert!(grid.iter().all(|r| r.len() == grid_cols));
        grid
    }

    #[test]
    fn encode_layout_is_fixed() {
        let t = Tile::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = t.encode();
        assert_eq!(&b[..8], b"LPTILE01");
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&b[40..48], &4.0f64.to_le_bytes());
        assert_eq!(b.len(), t.encoded_len());
        assert_eq!(Tile::decode(&b).unwrap(), t);
    }

    #[test]
    fn decode_rejects_corruption() {
        let b = Tile::identity(2).encode();
        assert_eq!(Tile::decode(&b[..10]), Err(TileError::Truncated { expected: 16, got: 10 }));
        assert!(matches!(Tile::decode(&b[..20]), Err(TileError::Truncated { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert_eq!(Tile::decode(&bad), Err(TileError::BadMagic));
    }

    #[test]
    fn partition_even_grid() {
        let m = counting(4, 4);
        let parts = partition(&m, 2).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|(_, t)| t.shape() == (2, 2)));
        assert_eq!(assemble(&regrid(parts, 2)).unwrap(), m);
    }

    #[test]
    fn partition_ragged_edges() {
        let m = counting(5, 5);
        let parts = partition(&m, 2).unwrap();
        assert_eq!(parts.len(), 9);
        let shapes: Vec<_> = parts.iter().map(|(_, t)| t.shape()).collect();
        assert_eq!(shapes[0], (2, 2));
        assert_eq!(shapes[2], (2, 1));
        assert_eq!(shapes[6], (1, 2));
        assert_eq!(shapes[8], (1, 1));
        assert_eq!(assemble(&regrid(parts, 3)).unwrap(), m);
    }

    #[test]
    fn block_larger_than_matrix_is_one_tile() {
        let m = counting(3, 5);
        let parts = partition(&m, 8).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, m);
    }

    #[test]
    fn assemble_rejects_inconsistent_shapes() {
        let grid = vec![vec![Tile::zeros(2, 2), Tile::zeros(2, 1)], vec![Tile::zeros(1, 2), Tile::zeros(2, 1)]];
        assert_eq!(assemble(&grid), Err(TileError::InconsistentGrid { row: 1, col: 1 }));
        assert_eq!(partition(&Tile::zeros(2, 2), 0), Err(TileError::ZeroBlock));
    }

    #[test]
    fn big_matrix_shapes() {
        let m = BigMatrix::new(256, 256, 37);
        assert_eq!((m.grid_rows(), m.grid_cols()), (7, 7));
        assert_eq!(m.tile_shape(6, 0), (34, 37));
        let p = BigMatrix::row_panels(512, 16, 64);
        assert_eq!((p.grid_rows(), p.grid_cols()), (8, 1));
        assert_eq!(p.tile_shape(7, 0), (64, 16));
    }
}
