//! Second-order factorization machine.
//!
//! ```text
//! y(x) = w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j
//! ```
//!
//! The pairwise sum is evaluated in O(k * nnz) through the identity
//! `sum_{i<j} <v_i,v_j> x_i x_j = 1/2 sum_f [(sum_i v_if x_i)^2 - sum_i v_if^2 x_i^2]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ATTEMPT_CAP;
use crate::error::{Error, Result};
use crate::features::DesignRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmModel {
    /// Global bias. Kept at zero by the trainer.
    pub w0: f64,
    pub w: Vec<f64>,
    /// Row-major `schema_width x k` factor matrix.
    pub v: Vec<f64>,
    pub k: usize,
    pub schema_width: usize,
}

/// Handle to a single model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    W(usize),
    V(usize, usize),
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Param::W(i) => write!(f, "w[{i}]"),
            Param::V(i, k) => write!(f, "v[{i},{k}]"),
        }
    }
}

/// Per-factor sums `q_f = sum_i v_if x_i` for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    pub q: Vec<f64>,
}

impl FmModel {
    pub fn zeros(schema_width: usize, k: usize) -> Self {
        FmModel {
            w0: 0.0,
            w: vec![0.0; schema_width],
            v: vec![0.0; schema_width * k],
            k,
            schema_width,
        }
    }

    #[inline]
    pub fn factor(&self, i: usize, f: usize) -> f64 {
        self.v[i * self.k + f]
    }

    #[inline]
    pub fn factors(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::W(i) => self.w[i],
            Param::V(i, f) => self.factor(i, f),
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::W(i) => self.w[i] = value,
            Param::V(i, f) => self.v[i * self.k + f] = value,
        }
    }

    pub fn check_row(&self, x: &DesignRow) -> Result<()> {
        match x.indices.last() {
            Some(&i) if i as usize >= self.schema_width => Err(Error::Contract(format!(
                "row index {i} out of range for schema width {}",
                self.schema_width
            ))),
            _ => Ok(()),
        }
    }

    pub fn check_param(&self, p: Param) -> Result<()> {
        let ok = match p {
            Param::W(i) => i < self.schema_width,
            Param::V(i, f) => i < self.schema_width && f < self.k,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("parameter {p} out of range")))
        }
    }

    pub fn cache(&self, x: &DesignRow) -> PredictionCache {
        let mut q = vec![0.0; self.k];
        for (i, xi) in x.iter() {
            for (qf, vif) in q.iter_mut().zip(self.factors(i)) {
                *qf += vif * xi;
            }
        }
        PredictionCache { q }
    }

    /// Unchecked prediction; indices must be in range.
    pub(crate) fn predict_unchecked(&self, x: &DesignRow) -> f64 {
        let mut linear = self.w0;
        let mut q = [0.0f64; 32];
        let mut sq = [0.0f64; 32];
        if self.k <= 32 {
            for (i, xi) in x.iter() {
                linear += self.w[i] * xi;
                for (f, vif) in self.factors(i).iter().enumerate() {
                    let t = vif * xi;
                    q[f] += t;
                    sq[f] += t * t;
                }
            }
            let pair: f64 = (0..self.k).map(|f| q[f] * q[f] - sq[f]).sum();
            return linear + 0.5 * pair;
        }
        let mut q = vec![0.0; self.k];
        let mut sq = vec![0.0; self.k];
        for (i, xi) in x.iter() {
            linear += self.w[i] * xi;
            for (f, vif) in self.factors(i).iter().enumerate() {
                let t = vif * xi;
                q[f] += t;
                sq[f] += t * t;
            }
        }
        let pair: f64 = q.iter().zip(&sq).map(|(a, b)| a * a - b).sum();
        linear + 0.5 * pair
    }

    pub fn predict(&self, x: &DesignRow) -> Result<f64> {
        self.check_row(x)?;
        Ok(self.predict_unchecked(x))
    }

    /// Prediction limited to the valid attempt range `[1, 30]`.
    pub fn predict_clamped(&self, x: &DesignRow) -> Result<f64> {
        Ok(clamp_prediction(self.predict(x)?))
    }

    /// Splits the prediction into `g + h * theta` for one parameter `theta`.
    pub fn multilinear_terms(&self, x: &DesignRow, param: Param) -> Result<(f64, f64)> {
        self.check_row(x)?;
        self.check_param(param)?;
        let y = self.predict_unchecked(x);
        let column = match param {
            Param::W(i) | Param::V(i, _) => i,
        };
        let xi = match x.indices.binary_search(&(column as u32)) {
            Ok(pos) => x.values[pos],
            Err(_) => return Ok((y, 0.0)),
        };
        let h = match param {
            Param::W(_) => xi,
            Param::V(i, f) => {
                let qf: f64 = x.iter().map(|(j, xj)| self.factor(j, f) * xj).sum();
                xi * (qf - self.factor(i, f) * xi)
            }
        };
        Ok((y - h * self.get(param), h))
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
    }

    /// Negates factor column `f` for every feature.
    pub fn flip_factor(&mut self, f: usize) {
        for i in 0..self.schema_width {
            self.v[i * self.k + f] = -self.v[i * self.k + f];
        }
    }
}

pub fn clamp_prediction(y: f64) -> f64 {
    y.clamp(1.0, ATTEMPT_CAP as f64)
}

/// On-disk model: parameters plus the fingerprint of the schema they index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmModelFile {
    pub fingerprint: String,
    pub k: usize,
    pub schema_width: usize,
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl FmModelFile {
    pub fn new(model: &FmModel, fingerprint: impl Into<String>) -> Self {
        FmModelFile {
            fingerprint: fingerprint.into(),
            k: model.k,
            schema_width: model.schema_width,
            w0: model.w0,
            w: model.w.clone(),
            v: (0..model.schema_width)
                .map(|i| model.factors(i).to_vec())
                .collect(),
        }
    }

    /// Rebuilds the model, checking shape and the expected schema fingerprint.
    pub fn into_model(self, expected_fingerprint: &str) -> Result<FmModel> {
        if self.fingerprint != expected_fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint,
                data: expected_fingerprint.to_string(),
            });
        }
        if self.w.len() != self.schema_width
            || self.v.len() != self.schema_width
            || self.v.iter().any(|r| r.len() != self.k)
        {
            return Err(Error::Validation(
                "model parameter shapes are inconsistent".into(),
            ));
        }
        let model = FmModel {
            w0: self.w0,
            w: self.w,
            v: self.v.concat(),
            k: self.k,
            schema_width: self.schema_width,
        };
        if !model.is_finite() {
            return Err(Error::Validation("model has non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}
