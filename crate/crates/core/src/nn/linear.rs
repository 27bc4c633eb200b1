use super::params::{join, Params};
use crate::error::{shape_err, Result};
use crate::matrix::{axpy, gemv_acc, gemv_t_acc, outer_acc, Matrix};
use crate::rng::SplitMix64;

/// `y = W x + b`
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut SplitMix64) -> Self {
        Linear {
            w: super::glorot(output, input, rng),
            b: vec![0.0; output],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return shape_err(format!(
                "linear map expects {} inputs, got {}",
                self.input_size(),
                x.len()
            ));
        }
        let mut y = self.b.clone();
        gemv_acc(&self.w, x, &mut y);
        Ok(y)
    }

    /// Adds parameter gradients for upstream `dy` at input `x`; returns dL/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vec<f64> {
        outer_acc(&mut grads.w, dy, x);
        axpy(1.0, dy, &mut grads.b);
        let mut dx = vec![0.0; self.input_size()];
        gemv_t_acc(&self.w, dy, &mut dx);
        dx
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "w"), self.w.as_slice());
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w"), self.w.as_mut_slice());
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// One trainable E-dim row per training language.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEmbeddingTable {
    pub rows: Matrix,
}

impl LanguageEmbeddingTable {
    pub fn init(n_languages: usize, dim: usize, rng: &mut SplitMix64) -> Self {
        LanguageEmbeddingTable {
            rows: super::glorot(n_languages, dim, rng),
        }
    }

    pub fn zeros(n_languages: usize, dim: usize) -> Self {
        LanguageEmbeddingTable {
            rows: Matrix::zeros(n_languages, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn n_languages(&self) -> usize {
        self.rows.rows()
    }

    pub fn lookup(&self, language: usize) -> Result<&[f64]> {
        if language >= self.n_languages() {
            return shape_err(format!(
                "language index {language} outside table of {} rows",
                self.n_languages()
            ));
        }
        Ok(self.rows.row(language))
    }
}

impl Params for LanguageEmbeddingTable {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "rows"), self.rows.as_slice());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "rows"), self.rows.as_mut_slice());
    }
}
