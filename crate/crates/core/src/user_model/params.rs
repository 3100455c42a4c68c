use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::NUM_POSITIONS;

/// Dense row-major matrix; serializes as nested arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Validation("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn random<R: Rng>(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(mean, std).expect("finite std");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    /// `self += a ⊗ b`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (row, &ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if ai == 0.0 {
                continue;
            }
            for (o, bj) in row.iter_mut().zip(b) {
                *o += ai * bj;
            }
        }
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// All trainable tensors of the user model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModelParams {
    /// Day-of-episode embedding, `max_days × E`.
    pub day_table: Matrix,
    /// Previous-position embedding, `6 × E`.
    pub position_table: Matrix,
    /// Per-class explanation channel, `3 × E`.
    pub class_table: Matrix,
    /// Row 0: not emphasized, row 1: emphasized; `2 × E`.
    pub emphasis_table: Matrix,
    pub delta_weight: Vec<f64>,
    /// `E × 3` map from `p`.
    pub prob_weight: Matrix,
    pub input_bias: Vec<f64>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// `6 × E` map to decision logits.
    pub output_weight: Matrix,
    pub output_bias: Vec<f64>,
}

pub const GROUP_NAMES: [&str; 12] = [
    "day_table",
    "position_table",
    "class_table",
    "emphasis_table",
    "delta_weight",
    "prob_weight",
    "input_bias",
    "query",
    "key",
    "value",
    "output_weight",
    "output_bias",
];

impl UserModelParams {
    pub fn zeros(dim: usize, max_days: usize) -> Self {
        Self {
            day_table: Matrix::zeros(max_days, dim),
            position_table: Matrix::zeros(NUM_POSITIONS, dim),
            class_table: Matrix::zeros(3, dim),
            emphasis_table: Matrix::zeros(2, dim),
            delta_weight: vec![0.0; dim],
            prob_weight: Matrix::zeros(dim, 3),
            input_bias: vec![0.0; dim],
            query: Matrix::zeros(dim, dim),
            key: Matrix::zeros(dim, dim),
            value: Matrix::zeros(dim, dim),
            output_weight: Matrix::zeros(NUM_POSITIONS, dim),
            output_bias: vec![0.0; NUM_POSITIONS],
        }
    }

    pub fn init<R: Rng>(dim: usize, max_days: usize, rng: &mut R) -> Self {
        let attn = 0.5 / (dim as f64).sqrt();
        Self {
            day_table: Matrix::random(max_days, dim, 0.0, 0.1, rng),
            position_table: Matrix::random(NUM_POSITIONS, dim, 0.0, 0.1, rng),
            class_table: Matrix::random(3, dim, 1.0, 0.1, rng),
            emphasis_table: Matrix::random(2, dim, 1.0, 0.1, rng),
            delta_weight: Matrix::random(1, dim, 0.0, 0.1, rng).data,
            prob_weight: Matrix::random(dim, 3, 0.0, 0.1, rng),
            input_bias: vec![0.0; dim],
            query: Matrix::random(dim, dim, 0.0, attn, rng),
            key: Matrix::random(dim, dim, 0.0, attn, rng),
            value: Matrix::random(dim, dim, 0.0, attn, rng),
            output_weight: Matrix::random(NUM_POSITIONS, dim, 0.0, 0.1, rng),
            output_bias: vec![0.0; NUM_POSITIONS],
        }
    }

    pub fn dim(&self) -> usize {
        self.input_bias.len()
    }

    pub fn max_days(&self) -> usize {
        self.day_table.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim(), self.max_days())
    }

    /// Parameter groups in a fixed order, matching [`GROUP_NAMES`].
    pub fn groups(&self) -> [&[f64]; 12] {
        [
            self.day_table.as_slice(),
            self.position_table.as_slice(),
            self.class_table.as_slice(),
            self.emphasis_table.as_slice(),
            &self.delta_weight,
            self.prob_weight.as_slice(),
            &self.input_bias,
            self.query.as_slice(),
            self.key.as_slice(),
            self.value.as_slice(),
            self.output_weight.as_slice(),
            &self.output_bias,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.day_table.as_mut_slice(),
            self.position_table.as_mut_slice(),
            self.class_table.as_mut_slice(),
            self.emphasis_table.as_mut_slice(),
            &mut self.delta_weight,
            self.prob_weight.as_mut_slice(),
            &mut self.input_bias,
            self.query.as_mut_slice(),
            self.key.as_mut_slice(),
            self.value.as_mut_slice(),
            self.output_weight.as_mut_slice(),
            &mut self.output_bias,
        ]
    }

    pub fn norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor · other`
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            add_scaled(dst, src, factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.dim();
        let checks = [
            ("day_table", self.day_table.cols() == e),
            ("position_table", self.position_table.rows() == NUM_POSITIONS && self.position_table.cols() == e),
            ("class_table", self.class_table.rows() == 3 && self.class_table.cols() == e),
            ("emphasis_table", self.emphasis_table.rows() == 2 && self.emphasis_table.cols() == e),
            ("delta_weight", self.delta_weight.len() == e),
            ("prob_weight", self.prob_weight.rows() == e && self.prob_weight.cols() == 3),
            ("query", self.query.rows() == e && self.query.cols() == e),
            ("key", self.key.rows() == e && self.key.cols() == e),
            ("value", self.value.rows() == e && self.value.cols() == e),
            ("output_weight", self.output_weight.rows() == NUM_POSITIONS && self.output_weight.cols() == e),
            ("output_bias", self.output_bias.len() == NUM_POSITIONS),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::Validation(format!(
                "user model parameter {name} has inconsistent shape for E = {e}"
            )));
        }
        if !self.is_finite() {
            return Err(Error::Validation("user model parameters contain non-finite values".into()));
        }
        Ok(())
    }
}
