//! Tensor-product grids over a coordinate box, with multilinear
//! interpolation and a small self-describing serialization format.
//!
//! Binary layout (little-endian throughout): magic `CGRD`, `u32` format
//! version, `u32` number of axes, then per axis `u64` node count and `f64`
//! box endpoints, then the values in row-major order (last axis fastest).
//! The text form is line-oriented with the same fields and is sniffed by the
//! leading `carnot-grid` header.

use thiserror::Error;

use crate::field::ScalarField;

pub const GRID_MAGIC: &[u8; 4] = b"CGRD";
pub const GRID_VERSION: u32 = 1;
const MAX_AXES: usize = 8;
/// Dense-storage cap; every scan is at least O(nodes), some are O(nodes^2).
pub const MAX_NODES: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("every axis needs at least 3 nodes, axis {axis} has {nodes}")]
    BadShape { axis: usize, nodes: usize },
    #[error("box endpoints must satisfy lo < hi and be finite on axis {axis}")]
    BadBox { axis: usize },
    #[error("grid dimension count {got} unsupported (1..={MAX_AXES})")]
    BadDimension { got: usize },
    #[error("grid would hold {nodes} nodes, dense-storage cap is {MAX_NODES}")]
    TooManyNodes { nodes: u128 },
    #[error("non-finite value at linear index {index}")]
    NonFinite { index: usize },
    #[error("point leaves the grid box on axis {axis}")]
    OutOfBox { axis: usize },
    #[error("value count {got} does not match shape product {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error("grids have different geometry")]
    GeometryMismatch,
    #[error("decode failed: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
    /// Exact node spacing `(hi - lo) / (shape - 1)` per axis.
    pub spacing: Vec<f64>,
    /// Row-major strides, last axis fastest.
    pub strides: Vec<usize>,
    pub values: Vec<f64>,
    /// One-node boundary band flags, same layout as `values`.
    pub boundary: Vec<bool>,
}

/// Validates the box and returns the node count, which is guaranteed to
/// fit dense storage.
fn check_geometry(lo: &[f64], hi: &[f64], shape: &[usize]) -> Result<usize, GridError> {
    let d = shape.len();
    if d == 0 || d > MAX_AXES || lo.len() != d || hi.len() != d {
        return Err(GridError::BadDimension { got: d });
    }
    for a in 0..d {
        if shape[a] < 3 {
            return Err(GridError::BadShape { axis: a, nodes: shape[a] });
        }
        if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
            return Err(GridError::BadBox { axis: a });
        }
    }
    let nodes = shape.iter().fold(1u128, |acc, &s| acc.saturating_mul(s as u128));
    if nodes > MAX_NODES as u128 {
        return Err(GridError::TooManyNodes { nodes });
    }
    Ok(nodes as usize)
}

impl GridFunction {
    pub fn from_values(
        lo: &[f64],
        hi: &[f64],
        shape: &[usize],
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        let len = check_geometry(lo, hi, shape)?;
        if values.len() != len {
            return Err(GridError::ValueCount { expected: len, got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        let d = shape.len();
        let spacing: Vec<f64> = (0..d)
            .map(|a| (hi[a] - lo[a]) / (shape[a] - 1) as f64)
            .collect();
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let mut boundary = vec![false; len];
        let mut idx = vec![0usize; d];
        for (lin, flag) in boundary.iter_mut().enumerate() {
            Self::unravel_static(&strides, lin, &mut idx);
            *flag = idx
                .iter()
                .zip(shape)
                .any(|(&i, &s)| i == 0 || i + 1 == s);
        }
        Ok(GridFunction {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            shape: shape.to_vec(),
            spacing,
            strides,
            values,
            boundary,
        })
    }

    pub fn zeros(lo: &[f64], hi: &[f64], shape: &[usize]) -> Result<Self, GridError> {
        // Validate before allocating: the node cap must bind first.
        let len = check_geometry(lo, hi, shape)?;
        Self::from_values(lo, hi, shape, vec![0.0; len])
    }

    /// Samples a scalar field at every node.
    pub fn sample(
        lo: &[f64],
        hi: &[f64],
        shape: &[usize],
        field: &dyn ScalarField,
    ) -> Result<Self, GridError> {
        let mut g = Self::zeros(lo, hi, shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut x = vec![0.0; shape.len()];
        for lin in 0..g.values.len() {
            g.unravel(lin, &mut idx);
            g.node_coord(&idx, &mut x);
            g.values[lin] = field.eval(&x);
        }
        if let Some(index) = g.values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    fn unravel_static(strides: &[usize], lin: usize, out: &mut [usize]) {
        let mut rest = lin;
        for (a, &s) in strides.iter().enumerate() {
            out[a] = rest / s;
            rest %= s;
        }
    }

    pub fn unravel(&self, lin: usize, out: &mut [usize]) {
        Self::unravel_static(&self.strides, lin, out);
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_coord(&self, idx: &[usize], out: &mut [f64]) {
        for a in 0..self.ndim() {
            out[a] = self.lo[a] + idx[a] as f64 * self.spacing[a];
        }
    }

    pub fn node_coord_vec(&self, idx: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.ndim()];
        self.node_coord(idx, &mut x);
        x
    }

    pub fn is_interior(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(&self.shape)
            .all(|(&i, &s)| i >= 1 && i + 2 <= s)
    }

    pub fn same_geometry(&self, other: &GridFunction) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.shape == other.shape
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64, GridError> {
        if !self.same_geometry(other) {
            return Err(GridError::GeometryMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Multilinear interpolation; errors when the point leaves the box by
    /// more than a relative 1e-12 slack.
    pub fn interpolate(&self, p: &[f64]) -> Result<f64, GridError> {
        let d = self.ndim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for a in 0..d {
            let span = self.hi[a] - self.lo[a];
            let slack = 1e-12 * span;
            if p[a] < self.lo[a] - slack || p[a] > self.hi[a] + slack {
                return Err(GridError::OutOfBox { axis: a });
            }
            let u = ((p[a] - self.lo[a]) / self.spacing[a])
                .clamp(0.0, (self.shape[a] - 1) as f64);
            let mut i0 = u.floor() as usize;
            if i0 + 1 >= self.shape[a] {
                i0 = self.shape[a] - 2;
            }
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut lin = 0;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    lin += (base[a] + 1) * self.strides[a];
                } else {
                    w *= 1.0 - frac[a];
                    lin += base[a] * self.strides[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[lin];
            }
        }
        Ok(acc)
    }

    /// Conservative multilinear interpolation error bound,
    /// `sum_a h_a^2 / 8 * max |second difference along a|`.
    pub fn interpolation_error_bound(&self) -> f64 {
        let d = self.ndim();
        let mut idx = vec![0usize; d];
        let mut bound = 0.0;
        for a in 0..d {
            let mut worst: f64 = 0.0;
            for lin in 0..self.len() {
                self.unravel(lin, &mut idx);
                if idx[a] >= 1 && idx[a] + 2 <= self.shape[a] {
                    let s = self.strides[a];
                    let second =
                        self.values[lin + s] - 2.0 * self.values[lin] + self.values[lin - s];
                    worst = worst.max(second.abs() / (self.spacing[a] * self.spacing[a]));
                }
            }
            bound += self.spacing[a] * self.spacing[a] / 8.0 * worst;
        }
        bound
    }

    // ------------------------------------------------------------- codecs

    pub fn encode_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.ndim() * 24 + self.len() * 8);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ndim() as u32).to_le_bytes());
        for a in 0..self.ndim() {
            out.extend_from_slice(&(self.shape[a] as u64).to_le_bytes());
            out.extend_from_slice(&self.lo[a].to_le_bytes());
            out.extend_from_slice(&self.hi[a].to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_binary(data: &[u8]) -> Result<Self, GridError> {
        let mut r = Reader { data, pos: 0 };
        let magic = r.take(4)?;
        if magic != GRID_MAGIC {
            return Err(GridError::Decode("bad magic".into()));
        }
        let version = r.u32()?;
        if version != GRID_VERSION {
            return Err(GridError::Decode(format!("unsupported version {version}")));
        }
        let d = r.u32()? as usize;
        if d == 0 || d > MAX_AXES {
            return Err(GridError::BadDimension { got: d });
        }
        let mut shape = Vec::with_capacity(d);
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        let mut len: usize = 1;
        for _ in 0..d {
            let s = r.u64()?;
            if s < 3 || s > u32::MAX as u64 {
                return Err(GridError::Decode(format!("bad axis node count {s}")));
            }
            len = len
                .checked_mul(s as usize)
                .ok_or_else(|| GridError::Decode("shape product overflow".into()))?;
            shape.push(s as usize);
            lo.push(r.f64()?);
            hi.push(r.f64()?);
        }
        let value_bytes = len
            .checked_mul(8)
            .ok_or_else(|| GridError::Decode("shape product overflow".into()))?;
        if r.remaining() != value_bytes {
            return Err(GridError::Decode(format!(
                "expected {value_bytes} value bytes, found {}",
                r.remaining()
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.f64()?);
        }
        Self::from_values(&lo, &hi, &shape, values)
    }

    pub fn encode_text(&self) -> String {
        let mut s = String::new();
        s.push_str("carnot-grid v1\n");
        s.push_str(&format!("dim {}\n", self.ndim()));
        for a in 0..self.ndim() {
            s.push_str(&format!("axis {} {} {}\n", self.lo[a], self.hi[a], self.shape[a]));
        }
        s.push_str("values\n");
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                s.push(if i % 8 == 0 { '\n' } else { ' ' });
            }
            s.push_str(&format!("{v}"));
        }
        s.push('\n');
        s
    }

    pub fn decode_text(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        if header != "carnot-grid v1" {
            return Err(GridError::Decode("bad text header".into()));
        }
        let dim_line = lines.next().unwrap_or_default().trim();
        let d: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| GridError::Decode("bad dim line".into()))?;
        if d == 0 || d > MAX_AXES {
            return Err(GridError::BadDimension { got: d });
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut shape = Vec::new();
        for _ in 0..d {
            let line = lines.next().unwrap_or_default().trim();
            let rest = line
                .strip_prefix("axis ")
                .ok_or_else(|| GridError::Decode("bad axis line".into()))?;
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(GridError::Decode("axis line needs lo hi nodes".into()));
            }
            lo.push(parts[0].parse().map_err(|_| GridError::Decode("bad axis lo".into()))?);
            hi.push(parts[1].parse().map_err(|_| GridError::Decode("bad axis hi".into()))?);
            shape.push(
                parts[2].parse().map_err(|_| GridError::Decode("bad axis nodes".into()))?,
            );
        }
        if lines.next().map(str::trim) != Some("values") {
            return Err(GridError::Decode("missing values line".into()));
        }
        let mut values = Vec::new();
        for line in lines {
            for tok in line.split_whitespace() {
                values
                    .push(tok.parse().map_err(|_| GridError::Decode("bad value".into()))?);
            }
        }
        Self::from_values(&lo, &hi, &shape, values)
    }

    /// Sniffs binary magic vs text header.
    pub fn decode(data: &[u8]) -> Result<Self, GridError> {
        if data.starts_with(GRID_MAGIC) {
            return Self::decode_binary(data);
        }
        let text = std::str::from_utf8(data)
            .map_err(|_| GridError::Decode("neither binary magic nor utf-8 text".into()))?;
        Self::decode_text(text)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridError> {
        if self.pos + n > self.data.len() {
            return Err(GridError::Decode("truncated input".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, GridError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, GridError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GridError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
