//! Stacked GRU encoder and decoder.

use super::params::{join, Params};
use super::{GruLayer, GruTrace, Linear};
use crate::error::{shape_err, Result};
use crate::features::Embedding;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// GRU stack whose final top-layer state is mapped linearly to the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<GruLayer>,
    pub proj: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub layers: Vec<GruTrace>,
    pub embedding: Vec<f64>,
}

impl Encoder {
    pub fn init(input: usize, units: usize, n_layers: usize, dim: usize, rng: &mut SplitMix64) -> Self {
        let layers = (0..n_layers)
            .map(|k| GruLayer::init(if k == 0 { input } else { units }, units, rng))
            .collect();
        Encoder {
            layers,
            proj: Linear::init(units, dim, rng),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.proj.output_size()
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, GruLayer::input_size)
    }

    pub fn forward(&self, frames: &Matrix) -> Result<EncoderTrace> {
        if self.layers.is_empty() {
            return shape_err("encoder has no layers");
        }
        if frames.rows() == 0 {
            return shape_err("cannot encode an empty sequence");
        }
        let mut traces: Vec<GruTrace> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { frames } else { &traces[k - 1].hidden };
            let h0 = vec![0.0; layer.hidden_size()];
            let trace = layer.forward(input, &h0)?;
            traces.push(trace);
        }
        let top = &traces[traces.len() - 1].hidden;
        let embedding = self.proj.forward(top.row(top.rows() - 1))?;
        Ok(EncoderTrace {
            layers: traces,
            embedding,
        })
    }

    pub fn embed(&self, frames: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(frames)?.embedding)
    }

    /// Adds gradients of the loss w.r.t. every encoder parameter given
    /// dL/dembedding.
    pub fn backward(&self, frames: &Matrix, trace: &EncoderTrace, d_embedding: &[f64], grads: &mut Encoder) {
        let top = &trace.layers[trace.layers.len() - 1].hidden;
        let t_last = top.rows() - 1;
        let d_top = self.proj.backward(top.row(t_last), d_embedding, &mut grads.proj);
        let mut d_hidden = Matrix::zeros(top.rows(), top.cols());
        d_hidden.row_mut(t_last).copy_from_slice(&d_top);
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { frames } else { &trace.layers[k - 1].hidden };
            let (d_in, _) = self.layers[k].backward(input, &trace.layers[k], &d_hidden, &mut grads.layers[k]);
            d_hidden = d_in;
        }
    }
}

impl Params for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("gru{k}")), f);
        }
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("gru{k}")), f);
        }
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// GRU stack fed the same conditioning vector at every step, with a linear
/// read-out per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub layers: Vec<GruLayer>,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct DecoderTrace {
    pub inputs: Matrix,
    pub layers: Vec<GruTrace>,
    pub outputs: Matrix,
}

impl Decoder {
    pub fn init(input: usize, units: usize, n_layers: usize, output: usize, rng: &mut SplitMix64) -> Self {
        let layers = (0..n_layers)
            .map(|k| GruLayer::init(if k == 0 { input } else { units }, units, rng))
            .collect();
        Decoder {
            layers,
            out: Linear::init(units, output, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, GruLayer::input_size)
    }

    pub fn forward(&self, conditioning: &[f64], steps: usize) -> Result<DecoderTrace> {
        if self.layers.is_empty() {
            return shape_err("decoder has no layers");
        }
        if steps == 0 {
            return shape_err("decoder needs at least one step");
        }
        let inputs = Matrix::repeat_row(conditioning, steps);
        let mut traces: Vec<GruTrace> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { &inputs } else { &traces[k - 1].hidden };
            let h0 = vec![0.0; layer.hidden_size()];
            let trace = layer.forward(input, &h0)?;
            traces.push(trace);
        }
        let top = &traces[traces.len() - 1].hidden;
        let mut outputs = Matrix::zeros(steps, self.out.output_size());
        for t in 0..steps {
            let y = self.out.forward(top.row(t))?;
            outputs.row_mut(t).copy_from_slice(&y);
        }
        Ok(DecoderTrace {
            inputs,
            layers: traces,
            outputs,
        })
    }

    /// Adds parameter gradients given dL/doutputs; returns dL/dconditioning.
    pub fn backward(&self, trace: &DecoderTrace, d_outputs: &Matrix, grads: &mut Decoder) -> Vec<f64> {
        let top = &trace.layers[trace.layers.len() - 1].hidden;
        let mut d_hidden = Matrix::zeros(top.rows(), top.cols());
        for t in 0..top.rows() {
            let d = self.out.backward(top.row(t), d_outputs.row(t), &mut grads.out);
            d_hidden.row_mut(t).copy_from_slice(&d);
        }
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { &trace.inputs } else { &trace.layers[k - 1].hidden };
            let (d_in, _) = self.layers[k].backward(input, &trace.layers[k], &d_hidden, &mut grads.layers[k]);
            d_hidden = d_in;
        }
        let mut d_cond = vec![0.0; trace.inputs.cols()];
        for row in d_hidden.iter_rows() {
            crate::matrix::axpy(1.0, row, &mut d_cond);
        }
        d_cond
    }
}

impl Params for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("gru{k}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("gru{k}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Embedding of `frames` under an encoder built from `stack` and `proj`.
pub fn encoder_embed(stack: &[GruLayer], proj: &Linear, frames: &Matrix) -> Result<Embedding> {
    let enc = Encoder {
        layers: stack.to_vec(),
        proj: proj.clone(),
    };
    Ok(Embedding(enc.embed(frames)?))
}

/// Decoder outputs (steps × D) conditioned on `z`, optionally with a
/// language embedding appended to the per-step input.
pub fn decoder_forward(
    stack: &[GruLayer],
    out: &Linear,
    z: &[f64],
    steps: usize,
    language: Option<&[f64]>,
) -> Result<Matrix> {
    let dec = Decoder {
        layers: stack.to_vec(),
        out: out.clone(),
    };
    let mut cond = z.to_vec();
    if let Some(l) = language {
        cond.extend_from_slice(l);
    }
    if cond.len() != dec.input_size() {
        return shape_err(format!(
            "decoder expects {}-dim conditioning, got {}",
            dec.input_size(),
            cond.len()
        ));
    }
    Ok(dec.forward(&cond, steps)?.outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fd_resolvable, grad_check, zero_fill};
    use rand::Rng;

    fn random(rng: &mut SplitMix64, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn jitter_biases<P: Params>(p: &mut P, rng: &mut SplitMix64) {
        p.visit_mut("", &mut |name, v| {
            if name.ends_with("b_z") || name.ends_with("b_r") || name.ends_with("b_h") || name.ends_with(".b") {
                v.iter_mut().for_each(|x| *x = rng.random_range(-0.3..0.3));
            }
        });
    }

    #[test]
    fn zero_encoder_with_identity_projection() {
        let mut enc = Encoder {
            layers: vec![GruLayer::zeros(3, 4)],
            proj: Linear::zeros(4, 4),
        };
        for i in 0..4 {
            enc.proj.w.set(i, i, 1.0);
        }
        let x = Matrix::repeat_row(&[1.0, 2.0, 3.0], 5);
        assert_eq!(encoder_embed(&enc.layers, &enc.proj, &x).unwrap().0, vec![0.0; 4]);
    }

    #[test]
    fn identical_inputs_embed_identically() {
        let mut rng = SplitMix64::new(1);
        let enc = Encoder::init(3, 6, 2, 5, &mut rng);
        let x = random(&mut rng, 7, 3);
        assert_eq!(enc.embed(&x).unwrap(), enc.embed(&x.clone()).unwrap());
        assert!(encoder_embed(&[], &enc.proj, &x).is_err());
    }

    #[test]
    fn zero_decoder_emits_output_bias() {
        let mut dec = Decoder {
            layers: vec![GruLayer::zeros(4, 3), GruLayer::zeros(3, 3)],
            out: Linear::zeros(3, 2),
        };
        dec.out.b = vec![0.5, -1.0];
        let y = decoder_forward(&dec.layers, &dec.out, &[1.0, 2.0, 3.0, 4.0], 4, None).unwrap();
        for r in y.iter_rows() {
            assert_eq!(r, &[0.5, -1.0]);
        }
        let y2 = decoder_forward(&dec.layers, &dec.out, &[1.0, 2.0], 4, Some(&[3.0, 4.0])).unwrap();
        assert_eq!(y, y2);
        assert!(decoder_forward(&dec.layers, &dec.out, &[1.0, 2.0], 4, None).is_err());
    }

    fn randomize<P: Params>(p: &mut P, rng: &mut SplitMix64) {
        p.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0)));
    }

    #[test]
    fn encoder_gradients() {
        let mut checked = 0;
        for seed in 0..200 {
            let mut rng = SplitMix64::new(100 + seed);
            let mut enc = Encoder::init(3, 5, 2, 4, &mut rng);
            randomize(&mut enc, &mut rng);
            let t = rng.random_range(2..=7);
            let x = random(&mut rng, t, 3);
            let trace = enc.forward(&x).unwrap();
            let dz: Vec<f64> = trace.embedding.iter().map(|v| 2.0 * v).collect();
            let mut grads = enc.clone();
            zero_fill(&mut grads);
            enc.backward(&x, &trace, &dz, &mut grads);
            let loss = |e: &Encoder| e.embed(&x).unwrap().iter().map(|v| v * v).sum::<f64>();
            if !fd_resolvable(&grads, loss(&enc), 1e-5) {
                continue;
            }
            let err = grad_check(&enc, &grads, loss, 1e-5);
            assert!(err <= 1e-5, "seed {seed}: {err}");
            checked += 1;
            if checked == 20 {
                return;
            }
        }
        panic!("only {checked} well-conditioned configurations");
    }

    #[test]
    fn decoder_gradients_wrt_conditioning_and_parameters() {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(200 + seed);
            let mut dec = Decoder::init(4, 5, 2, 3, &mut rng);
            jitter_biases(&mut dec, &mut rng);
            let steps = rng.random_range(1..=7);
            let target = random(&mut rng, steps, 3);
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |d: &Decoder, z: &[f64]| {
                let y = d.forward(z, steps).unwrap().outputs;
                crate::matrix::squared_distance(y.as_slice(), target.as_slice())
            };
            let trace = dec.forward(&z, steps).unwrap();
            let mut d_out = trace.outputs.clone();
            for (g, t) in d_out.as_mut_slice().iter_mut().zip(target.as_slice()) {
                *g = 2.0 * (*g - t);
            }
            let mut grads = dec.clone();
            zero_fill(&mut grads);
            let dz = dec.backward(&trace, &d_out, &mut grads);
            let err = grad_check(&z, &dz, |zz: &Vec<f64>| loss(&dec, zz), 1e-5);
            assert!(err <= 1e-5, "seed {seed}: conditioning {err}");
            let err = grad_check(&dec, &grads, |d| loss(d, &z), 1e-5);
            assert!(err <= 1e-5, "seed {seed}: parameters {err}");
        }
    }
}
