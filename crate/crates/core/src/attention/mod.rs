//! Single-head scaled dot-product attention and its guided variants.
//!
//! All kernels accumulate in f64 and round to f32 on output. A masked-out key
//! receives the logit [`MASKED_LOGIT`] before max-subtraction, so its weight
//! underflows to exactly zero and masked and unmasked evaluations share one
//! code path.

mod diagnostics;
mod guided;

pub use diagnostics::{attention_diagnostics, AttentionDiagnostics};
pub use guided::{
    aggregate, cross_attention_concat, cross_attention_concat_kv, inject_dynamics,
    isolated_attention, out1, out2, out3, BranchTokens, Qkv,
};

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Logit assigned to disallowed keys.
pub const MASKED_LOGIT: f64 = -1e9;

/// Latent position of a token: `(map, y, x)` in token units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenPos {
    pub frame: u16,
    pub y: u16,
    pub x: u16,
}

impl TokenPos {
    pub fn new(frame: usize, y: usize, x: usize) -> Self {
        Self {
            frame: frame as u16,
            y: y as u16,
            x: x as u16,
        }
    }
}

/// `n x d` token features with one position per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    positions: Vec<TokenPos>,
}

impl TokenMatrix {
    /// Builds a matrix whose positions must be unique.
    pub fn new(d: usize, data: Vec<f32>, positions: Vec<TokenPos>) -> Result<Self> {
        let m = Self::with_positions(d, data, positions)?;
        let mut seen = HashSet::with_capacity(m.n);
        if let Some(p) = m.positions.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::Shape(format!("duplicate token position {p:?}")));
        }
        Ok(m)
    }

    /// Builds a matrix without the uniqueness check. Concatenations of frame
    /// tokens and reference tokens share positions on purpose.
    pub fn with_positions(d: usize, data: Vec<f32>, positions: Vec<TokenPos>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Shape("token dimension must be >= 1".into()));
        }
        if data.len() != positions.len() * d {
            return Err(Error::Shape(format!(
                "{} values for {} tokens of dimension {d}",
                data.len(),
                positions.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("token matrix has non-finite values".into()));
        }
        Ok(Self {
            n: positions.len(),
            d,
            data,
            positions,
        })
    }

    /// Matrix with positions `(0, 0, i)` for row `i`.
    pub fn from_rows(d: usize, data: Vec<f32>) -> Result<Self> {
        let n = data.len().checked_div(d).unwrap_or(0);
        Self::new(d, data, (0..n).map(|i| TokenPos::new(0, 0, i)).collect())
    }

    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            d,
            data: Vec::new(),
            positions: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn positions(&self) -> &[TokenPos] {
        &self.positions
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Rows `i..j`.
    pub fn rows(&self, range: std::ops::Range<usize>) -> TokenMatrix {
        TokenMatrix {
            n: range.len(),
            d: self.d,
            data: self.data[range.start * self.d..range.end * self.d].to_vec(),
            positions: self.positions[range].to_vec(),
        }
    }

    /// Picks rows by index, in order.
    pub fn gather(&self, idx: &[usize]) -> Result<TokenMatrix> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        let mut positions = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.n {
                return Err(Error::Index(format!("row {i} of {}", self.n)));
            }
            data.extend_from_slice(self.row(i));
            positions.push(self.positions[i]);
        }
        Ok(TokenMatrix {
            n: idx.len(),
            d: self.d,
            data,
            positions,
        })
    }

    /// Sequence concatenation `self ⊕ other`.
    pub fn concat(&self, other: &TokenMatrix) -> Result<TokenMatrix> {
        if self.d != other.d {
            return Err(Error::Shape(format!(
                "cannot concatenate dimension {} with {}",
                self.d, other.d
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        Ok(TokenMatrix {
            n: self.n + other.n,
            d: self.d,
            data,
            positions,
        })
    }

    pub fn concat_all(parts: &[&TokenMatrix]) -> Result<TokenMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
        let mut out = TokenMatrix::empty(first.d);
        for p in parts {
            out = out.concat(p)?;
        }
        Ok(out)
    }

    /// Same positions, new values.
    pub fn with_data(&self, d: usize, data: Vec<f32>) -> Result<TokenMatrix> {
        Self::with_positions(d, data, self.positions.clone())
    }

    /// Columns `start..end` of every row.
    pub fn columns(&self, start: usize, end: usize) -> TokenMatrix {
        let mut data = Vec::with_capacity(self.n * (end - start));
        for i in 0..self.n {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        TokenMatrix {
            n: self.n,
            d: end - start,
            data,
            positions: self.positions.clone(),
        }
    }

    /// Elementwise `f(a, b)`; positions come from `self`.
    pub fn zip_map(&self, other: &TokenMatrix, f: impl Fn(f32, f32) -> f32) -> Result<TokenMatrix> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n, self.d, other.n, other.d
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        self.with_data(self.d, data)
    }

    pub fn max_abs_diff(&self, other: &TokenMatrix) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Boolean `n_q x n_k` permission matrix; `true` lets the query attend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} mask cells for a {rows}x{cols} mask",
                allow.len()
            )));
        }
        Ok(Self { rows, cols, allow })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allow = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self { rows, cols, allow }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.allow[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `range` of the mask.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> AttentionMask {
        AttentionMask {
            rows: range.len(),
            cols: self.cols,
            allow: self.allow[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }
}

/// Row-stochastic attention weights, `n_q x n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AttentionWeights {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn check_qkv(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Result<()> {
    if q.d != k.d {
        return Err(Error::Shape(format!("query dim {} != key dim {}", q.d, k.d)));
    }
    if k.n != v.n {
        return Err(Error::Shape(format!("{} keys but {} values", k.n, v.n)));
    }
    if k.n == 0 && q.n > 0 {
        return Err(Error::Shape("attention over zero keys".into()));
    }
    Ok(())
}

/// Softmax weights of one query row. Falls back to unmasked weights when the
/// mask leaves the row without any permitted key.
fn row_weights(q: &[f32], k: &TokenMatrix, allow: Option<&[bool]>, scale: f64, out: &mut [f64]) {
    let permitted = |j: usize| allow.is_none_or(|a| a[j]);
    let any = (0..k.n).any(permitted);
    for (j, o) in out.iter_mut().enumerate() {
        *o = if !any || permitted(j) {
            let dot: f64 = q.iter().zip(k.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
            dot * scale
        } else {
            MASKED_LOGIT
        };
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn attend(
    q: &TokenMatrix,
    k: &TokenMatrix,
    v: &TokenMatrix,
    mask: Option<&AttentionMask>,
    keep_weights: bool,
) -> Result<(TokenMatrix, Option<AttentionWeights>)> {
    check_qkv(q, k, v)?;
    if let Some(m) = mask {
        if m.rows != q.n || m.cols != k.n {
            return Err(Error::Shape(format!(
                "mask is {}x{}, attention is {}x{}",
                m.rows, m.cols, q.n, k.n
            )));
        }
    }
    let scale = 1.0 / (q.d as f64).sqrt();
    let mut out = Vec::with_capacity(q.n * v.d);
    let mut weights = keep_weights.then(|| Vec::with_capacity(q.n * k.n));
    let mut w = vec![0.0f64; k.n];
    let mut acc = vec![0.0f64; v.d];
    for i in 0..q.n {
        row_weights(q.row(i), k, mask.map(|m| m.row(i)), scale, &mut w);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (j, &wj) in w.iter().enumerate() {
            for (a, &vv) in acc.iter_mut().zip(v.row(j)) {
                *a += wj * vv as f64;
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
        if let Some(ws) = weights.as_mut() {
            ws.extend_from_slice(&w);
        }
    }
    let result = TokenMatrix::with_positions(v.d, out, q.positions.clone())?;
    let weights = weights.map(|data| AttentionWeights {
        rows: q.n,
        cols: k.n,
        data,
    });
    Ok((result, weights))
}

/// `softmax(q k^T / sqrt(d)) v`.
pub fn attention(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Result<TokenMatrix> {
    attend(q, k, v, None, false).map(|(o, _)| o)
}

/// Attention restricted to permitted keys. Rows without any permitted key use
/// the unmasked result.
pub fn masked_attention(
    q: &TokenMatrix,
    k: &TokenMatrix,
    v: &TokenMatrix,
    mask: &AttentionMask,
) -> Result<TokenMatrix> {
    attend(q, k, v, Some(mask), false).map(|(o, _)| o)
}

/// Attention output together with its weight matrix.
pub fn attention_with_weights(
    q: &TokenMatrix,
    k: &TokenMatrix,
    v: &TokenMatrix,
    mask: Option<&AttentionMask>,
) -> Result<(TokenMatrix, AttentionWeights)> {
    attend(q, k, v, mask, true).map(|(o, w)| (o, w.expect("weights requested")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(d: usize, v: &[f32]) -> TokenMatrix {
        TokenMatrix::from_rows(d, v.to_vec()).unwrap()
    }

    #[test]
    fn singleton_key_returns_its_value() {
        let q = m(2, &[0.3, -2.0, 5.0, 1.0]);
        let k = m(2, &[1.0, 1.0]);
        let v = m(3, &[7.0, -1.0, 0.5]);
        let o = attention(&q, &k, &v).unwrap();
        assert_eq!(o.data(), &[7.0, -1.0, 0.5, 7.0, -1.0, 0.5]);
    }

    #[test]
    fn equal_logits_average_values() {
        let q = m(2, &[0.0, 0.0]);
        let k = m(2, &[1.0, 2.0, -3.0, 0.5, 4.0, 4.0]);
        let v = m(1, &[1.0, 2.0, 6.0]);
        let o = attention(&q, &k, &v).unwrap();
        assert!((o.data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn single_permitted_key() {
        let q = m(2, &[0.4, 0.1]);
        let k = m(2, &[1.0, 2.0, -3.0, 0.5, 4.0, 4.0]);
        let v = m(2, &[1.0, 2.0, 6.0, 5.0, -1.0, 0.0]);
        let mask = AttentionMask::new(1, 3, vec![false, true, false]).unwrap();
        let o = masked_attention(&q, &k, &v, &mask).unwrap();
        assert_eq!(o.data(), &[6.0, 5.0]);
    }

    #[test]
    fn empty_row_falls_back_to_unmasked() {
        let q = m(2, &[0.4, 0.1]);
        let k = m(2, &[1.0, 2.0, -3.0, 0.5]);
        let v = m(1, &[1.0, 2.0]);
        let blocked = AttentionMask::new(1, 2, vec![false, false]).unwrap();
        assert_eq!(
            masked_attention(&q, &k, &v, &blocked).unwrap(),
            attention(&q, &k, &v).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let q = m(2, &[0.4, 0.1]);
        let k = m(3, &[1.0, 2.0, 3.0]);
        let v = m(1, &[1.0]);
        assert!(matches!(attention(&q, &k, &v), Err(Error::Shape(_))));
        let k2 = m(2, &[1.0, 2.0]);
        let v2 = m(1, &[1.0, 2.0]);
        assert!(matches!(attention(&q, &k2, &v2), Err(Error::Shape(_))));
        let bad = AttentionMask::full(2, 1);
        assert!(matches!(masked_attention(&q, &k2, &v, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn duplicate_positions_rejected_by_strict_constructor() {
        let p = TokenPos::new(0, 1, 1);
        assert!(TokenMatrix::new(1, vec![1.0, 2.0], vec![p, p]).is_err());
        assert!(TokenMatrix::with_positions(1, vec![1.0, 2.0], vec![p, p]).is_ok());
    }
}
