use super::params::{join, Params};
use crate::error::{shape_err, Result};
use crate::matrix::{axpy, gemv_acc, gemv_t_acc, outer_acc, sigmoid, Matrix};
use crate::rng::SplitMix64;

/// One GRU layer (reset gate applied before the recurrent product):
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_h x + U_h (r ∘ h) + b_h)
/// h' = (1 − z) ∘ h + z ∘ c
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Per-step activations kept for backpropagation.
#[derive(Clone, Debug)]
pub struct GruTrace {
    pub h0: Vec<f64>,
    pub update: Matrix,
    pub reset: Matrix,
    pub candidate: Matrix,
    pub hidden: Matrix,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        GruLayer {
            w_z: super::glorot(hidden, input, rng),
            w_r: super::glorot(hidden, input, rng),
            w_h: super::glorot(hidden, input, rng),
            u_z: super::glorot(hidden, hidden, rng),
            u_r: super::glorot(hidden, hidden, rng),
            u_h: super::glorot(hidden, hidden, rng),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.rows()
    }

    pub fn forward(&self, inputs: &Matrix, h0: &[f64]) -> Result<GruTrace> {
        let (hs, is) = (self.hidden_size(), self.input_size());
        if inputs.cols() != is {
            return shape_err(format!("GRU expects {is}-dim inputs, got {}", inputs.cols()));
        }
        if h0.len() != hs {
            return shape_err(format!("GRU expects {hs}-dim h0, got {}", h0.len()));
        }
        let t_len = inputs.rows();
        let mut trace = GruTrace {
            h0: h0.to_vec(),
            update: Matrix::zeros(t_len, hs),
            reset: Matrix::zeros(t_len, hs),
            candidate: Matrix::zeros(t_len, hs),
            hidden: Matrix::zeros(t_len, hs),
        };
        let mut h = h0.to_vec();
        let mut a_z = vec![0.0; hs];
        let mut a_r = vec![0.0; hs];
        let mut a_h = vec![0.0; hs];
        let mut rh = vec![0.0; hs];
        for t in 0..t_len {
            let x = inputs.row(t);
            a_z.copy_from_slice(&self.b_z);
            a_r.copy_from_slice(&self.b_r);
            a_h.copy_from_slice(&self.b_h);
            gemv_acc(&self.w_z, x, &mut a_z);
            gemv_acc(&self.u_z, &h, &mut a_z);
            gemv_acc(&self.w_r, x, &mut a_r);
            gemv_acc(&self.u_r, &h, &mut a_r);
            let r = trace.reset.row_mut(t);
            for k in 0..hs {
                r[k] = sigmoid(a_r[k]);
                rh[k] = r[k] * h[k];
            }
            gemv_acc(&self.w_h, x, &mut a_h);
            gemv_acc(&self.u_h, &rh, &mut a_h);
            let z = trace.update.row_mut(t);
            for k in 0..hs {
                z[k] = sigmoid(a_z[k]);
            }
            let c = trace.candidate.row_mut(t);
            for k in 0..hs {
                c[k] = a_h[k].tanh();
            }
            let z = trace.update.row(t);
            let c = trace.candidate.row(t);
            for k in 0..hs {
                h[k] = (1.0 - z[k]) * h[k] + z[k] * c[k];
            }
            trace.hidden.row_mut(t).copy_from_slice(&h);
        }
        Ok(trace)
    }

    /// Backpropagates `d_hidden` (dL/dh_t for every step, excluding the
    /// recurrent path) through the layer. Parameter gradients are added to
    /// `grads`; returns (dL/dinputs, dL/dh0).
    pub fn backward(
        &self,
        inputs: &Matrix,
        trace: &GruTrace,
        d_hidden: &Matrix,
        grads: &mut GruLayer,
    ) -> (Matrix, Vec<f64>) {
        let hs = self.hidden_size();
        let t_len = inputs.rows();
        let mut d_inputs = Matrix::zeros(t_len, self.input_size());
        let mut dh_next = vec![0.0; hs];
        let mut dh = vec![0.0; hs];
        let mut da_z = vec![0.0; hs];
        let mut da_r = vec![0.0; hs];
        let mut da_h = vec![0.0; hs];
        let mut rh = vec![0.0; hs];
        let mut drh = vec![0.0; hs];
        for t in (0..t_len).rev() {
            let x = inputs.row(t);
            let h_prev: &[f64] = if t == 0 { &trace.h0 } else { trace.hidden.row(t - 1) };
            let z = trace.update.row(t);
            let r = trace.reset.row(t);
            let c = trace.candidate.row(t);
            let dout = d_hidden.row(t);
            for k in 0..hs {
                dh[k] = dout[k] + dh_next[k];
                da_z[k] = dh[k] * (c[k] - h_prev[k]) * z[k] * (1.0 - z[k]);
                da_h[k] = dh[k] * z[k] * (1.0 - c[k] * c[k]);
                dh_next[k] = dh[k] * (1.0 - z[k]);
                rh[k] = r[k] * h_prev[k];
            }
            // candidate path
            outer_acc(&mut grads.w_h, &da_h, x);
            outer_acc(&mut grads.u_h, &da_h, &rh);
            axpy(1.0, &da_h, &mut grads.b_h);
            let dx = d_inputs.row_mut(t);
            gemv_t_acc(&self.w_h, &da_h, dx);
            drh.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(&self.u_h, &da_h, &mut drh);
            for k in 0..hs {
                da_r[k] = drh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                dh_next[k] += drh[k] * r[k];
            }
            // reset gate
            outer_acc(&mut grads.w_r, &da_r, x);
            outer_acc(&mut grads.u_r, &da_r, h_prev);
            axpy(1.0, &da_r, &mut grads.b_r);
            gemv_t_acc(&self.w_r, &da_r, dx);
            gemv_t_acc(&self.u_r, &da_r, &mut dh_next);
            // update gate
            outer_acc(&mut grads.w_z, &da_z, x);
            outer_acc(&mut grads.u_z, &da_z, h_prev);
            axpy(1.0, &da_z, &mut grads.b_z);
            gemv_t_acc(&self.w_z, &da_z, dx);
            gemv_t_acc(&self.u_z, &da_z, &mut dh_next);
        }
        (d_inputs, dh_next)
    }
}

impl Params for GruLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "w_z"), self.w_z.as_slice());
        f(&join(prefix, "w_r"), self.w_r.as_slice());
        f(&join(prefix, "w_h"), self.w_h.as_slice());
        f(&join(prefix, "u_z"), self.u_z.as_slice());
        f(&join(prefix, "u_r"), self.u_r.as_slice());
        f(&join(prefix, "u_h"), self.u_h.as_slice());
        f(&join(prefix, "b_z"), &self.b_z);
        f(&join(prefix, "b_r"), &self.b_r);
        f(&join(prefix, "b_h"), &self.b_h);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w_z"), self.w_z.as_mut_slice());
        f(&join(prefix, "w_r"), self.w_r.as_mut_slice());
        f(&join(prefix, "w_h"), self.w_h.as_mut_slice());
        f(&join(prefix, "u_z"), self.u_z.as_mut_slice());
        f(&join(prefix, "u_r"), self.u_r.as_mut_slice());
        f(&join(prefix, "u_h"), self.u_h.as_mut_slice());
        f(&join(prefix, "b_z"), &mut self.b_z);
        f(&join(prefix, "b_r"), &mut self.b_r);
        f(&join(prefix, "b_h"), &mut self.b_h);
    }
}

/// Hidden states (T×H) of `layer` run over `inputs` from `h0`.
pub fn gru_forward(layer: &GruLayer, inputs: &Matrix, h0: &[f64]) -> Result<Matrix> {
    Ok(layer.forward(inputs, h0)?.hidden)
}
