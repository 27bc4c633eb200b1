//! Losses of every model kind with their exact gradients.
//!
//! The `*_grad` functions return the loss and a gradient container shaped
//! like the model. Internally each example adds `scale ×` its gradient into a
//! shared container so batch means need no second pass.

use super::{mine_semi_hard, EmbeddingActivation, Head, Model, ModelKind, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::nn::{add_scaled, EncoderTrace};

/// Cross-entropy of `softmax(logits)` against class `target`, and its
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "class {target} outside {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

pub(crate) struct Encoded {
    trace: EncoderTrace,
    pub(crate) z: Vec<f64>,
}

pub(crate) fn encode(model: &Model, frames: &Matrix) -> Result<Encoded> {
    if frames.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {}-dim frames, got {}",
            model.input_dim(),
            frames.cols()
        )));
    }
    let trace = model.encoder.forward(frames)?;
    let mut z = trace.embedding.clone();
    if model.config.activation == EmbeddingActivation::Tanh {
        z.iter_mut().for_each(|v| *v = v.tanh());
    }
    Ok(Encoded { trace, z })
}

pub(crate) fn encode_backward(model: &Model, frames: &Matrix, enc: &Encoded, dz: &[f64], grads: &mut Model) {
    let mut d = dz.to_vec();
    if model.config.activation == EmbeddingActivation::Tanh {
        for (g, z) in d.iter_mut().zip(&enc.z) {
            *g *= 1.0 - z * z;
        }
    }
    model.encoder.backward(frames, &enc.trace, &d, &mut grads.encoder);
}

fn check_vocab(model: &Model, vocab: &Vocabulary) -> Result<()> {
    if vocab.classes_per_language() != model.classes_per_language {
        return Err(Error::InvalidInput(
            "vocabulary does not match the model's class layout".into(),
        ));
    }
    Ok(())
}

/// Loss of one labelled example; with `grads`, adds `scale ×` its gradient.
pub(crate) fn classifier_example(
    model: &Model,
    frames: &Matrix,
    class: usize,
    vocab: &Vocabulary,
    grads: Option<(&mut Model, f64)>,
) -> Result<f64> {
    let (language, local) = vocab.locate(class)?;
    let enc = encode(model, frames)?;
    match &model.head {
        Head::Softmax(lin) => {
            let logits = lin.forward(&enc.z)?;
            let (loss, mut dl) = softmax_cross_entropy(&logits, class)?;
            if let Some((g, scale)) = grads {
                dl.iter_mut().for_each(|v| *v *= scale);
                let Head::Softmax(glin) = &mut g.head else {
                    unreachable!("gradient container mirrors the model")
                };
                let dz = lin.backward(&enc.z, &dl, glin);
                encode_backward(model, frames, &enc, &dz, g);
            }
            Ok(loss)
        }
        Head::Branched(branches) => {
            let b = &branches[language];
            let pre = b.hidden.forward(&enc.z)?;
            let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            let logits = b.out.forward(&h)?;
            let (loss, mut dl) = softmax_cross_entropy(&logits, local)?;
            if let Some((g, scale)) = grads {
                dl.iter_mut().for_each(|v| *v *= scale);
                let Head::Branched(gb) = &mut g.head else {
                    unreachable!("gradient container mirrors the model")
                };
                let gb = &mut gb[language];
                let mut dh = b.out.backward(&h, &dl, &mut gb.out);
                for (d, hv) in dh.iter_mut().zip(&h) {
                    *d *= 1.0 - hv * hv;
                }
                let dz = b.hidden.backward(&enc.z, &dh, &mut gb.hidden);
                encode_backward(model, frames, &enc, &dz, g);
            }
            Ok(loss)
        }
        _ => Err(Error::InvalidInput(format!(
            "{} model has no classification head",
            model.kind()
        ))),
    }
}

fn classifier_batch(
    model: &Model,
    batch: &[(&Matrix, usize)],
    vocab: &Vocabulary,
    mut grads: Option<&mut Model>,
) -> Result<f64> {
    check_vocab(model, vocab)?;
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, k) in batch {
        total += classifier_example(model, x, *k, vocab, grads.as_deref_mut().map(|g| (g, scale)))?;
    }
    Ok(total * scale)
}

/// Mean negative log-probability of each example's class.
pub fn classifier_loss(model: &Model, batch: &[(&Matrix, usize)], vocab: &Vocabulary) -> Result<f64> {
    classifier_batch(model, batch, vocab, None)
}

pub fn classifier_loss_grad(model: &Model, batch: &[(&Matrix, usize)], vocab: &Vocabulary) -> Result<(f64, Model)> {
    let mut g = model.zeros_like();
    let loss = classifier_batch(model, batch, vocab, Some(&mut g))?;
    Ok((loss, g))
}

/// `max(0, m + d(a, p) − d(a, n))` with squared Euclidean `d`.
pub fn contrastive_loss(z_a: &[f64], z_p: &[f64], z_n: &[f64], margin: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(z_a, z_p, z_n, margin)?.0)
}

/// Loss and gradients w.r.t. anchor, positive and negative; all zero while
/// the hinge is inactive.
pub fn contrastive_loss_grad(z_a: &[f64], z_p: &[f64], z_n: &[f64], margin: f64) -> Result<(f64, [Vec<f64>; 3])> {
    if z_p.len() != z_a.len() || z_n.len() != z_a.len() {
        return Err(Error::Shape("triplet embeddings differ in dimension".into()));
    }
    let raw = margin + squared_distance(z_a, z_p) - squared_distance(z_a, z_n);
    let d = z_a.len();
    if raw <= 0.0 {
        return Ok((0.0, [vec![0.0; d], vec![0.0; d], vec![0.0; d]]));
    }
    let ga = (0..d).map(|i| 2.0 * (z_n[i] - z_p[i])).collect();
    let gp = (0..d).map(|i| -2.0 * (z_a[i] - z_p[i])).collect();
    let gn = (0..d).map(|i| 2.0 * (z_a[i] - z_n[i])).collect();
    Ok((raw, [ga, gp, gn]))
}

fn siamese_batch(model: &Model, batch: &[&Matrix], labels: &[usize], grads: Option<&mut Model>) -> Result<f64> {
    if batch.len() != labels.len() {
        return Err(Error::Shape(format!("{} segments but {} labels", batch.len(), labels.len())));
    }
    let encoded: Vec<Encoded> = batch.iter().map(|x| encode(model, x)).collect::<Result<_>>()?;
    let zs: Vec<&[f64]> = encoded.iter().map(|e| e.z.as_slice()).collect();
    let triplets = mine_semi_hard(&zs, labels)?;
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no class in the batch has two instances".into()));
    }
    let scale = 1.0 / triplets.len() as f64;
    let m = model.config.embedding_dim;
    let mut dz = vec![vec![0.0; m]; batch.len()];
    let mut total = 0.0;
    for t in &triplets {
        let (l, [ga, gp, gn]) = contrastive_loss_grad(zs[t.anchor], zs[t.positive], zs[t.negative], model.config.margin)?;
        total += l;
        if l > 0.0 {
            for (idx, g) in [(t.anchor, ga), (t.positive, gp), (t.negative, gn)] {
                for (d, v) in dz[idx].iter_mut().zip(g) {
                    *d += scale * v;
                }
            }
        }
    }
    if let Some(g) = grads {
        for (i, x) in batch.iter().enumerate() {
            if dz[i].iter().any(|v| *v != 0.0) {
                encode_backward(model, x, &encoded[i], &dz[i], g);
            }
        }
    }
    Ok(total * scale)
}

/// Mean contrastive loss over the semi-hard triplets mined from the batch.
pub fn siamese_loss(model: &Model, batch: &[&Matrix], labels: &[usize]) -> Result<f64> {
    siamese_batch(model, batch, labels, None)
}

/// Gradient with the mined triplets held fixed.
pub fn siamese_loss_grad(model: &Model, batch: &[&Matrix], labels: &[usize]) -> Result<(f64, Model)> {
    let mut g = model.zeros_like();
    let loss = siamese_batch(model, batch, labels, Some(&mut g))?;
    Ok((loss, g))
}

/// `Σ_t ‖target_t − f_t(input)‖²` with the decoder run for as many steps as
/// `target` has frames.
pub(crate) fn reconstruction_example(
    model: &Model,
    input: &Matrix,
    target: &Matrix,
    language: Option<usize>,
    grads: Option<(&mut Model, f64)>,
) -> Result<f64> {
    let Head::Decoder { decoder, languages } = &model.head else {
        return Err(Error::InvalidInput(format!("{} model has no decoder", model.kind())));
    };
    if target.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "target frames have {} dims, model reconstructs {}",
            target.cols(),
            model.input_dim()
        )));
    }
    let enc = encode(model, input)?;
    let mut cond = enc.z.clone();
    match (languages, language) {
        (Some(table), Some(l)) => cond.extend_from_slice(table.lookup(l)?),
        (None, None) => {}
        (Some(_), None) => return Err(Error::InvalidInput("language-conditioned model needs a language".into())),
        (None, Some(_)) => return Err(Error::InvalidInput("model is not language-conditioned".into())),
    }
    let trace = decoder.forward(&cond, target.rows())?;
    let loss = squared_distance(trace.outputs.as_slice(), target.as_slice());
    if let Some((g, scale)) = grads {
        let mut d_out = trace.outputs.clone();
        for (d, t) in d_out.as_mut_slice().iter_mut().zip(target.as_slice()) {
            *d = 2.0 * scale * (*d - t);
        }
        let Head::Decoder {
            decoder: gdec,
            languages: gl,
        } = &mut g.head
        else {
            unreachable!("gradient container mirrors the model")
        };
        let d_cond = decoder.backward(&trace, &d_out, gdec);
        let m = enc.z.len();
        if let (Some(gt), Some(l)) = (gl, language) {
            for (d, v) in gt.rows.row_mut(l).iter_mut().zip(&d_cond[m..]) {
                *d += v;
            }
        }
        encode_backward(model, input, &enc, &d_cond[..m], g);
    }
    Ok(loss)
}

fn require_kind(model: &Model, allowed: &[ModelKind], what: &str) -> Result<()> {
    if !allowed.contains(&model.kind()) {
        return Err(Error::InvalidInput(format!("{what} is not defined for {} models", model.kind())));
    }
    Ok(())
}

/// Reconstruction of a segment from its own embedding.
pub fn ae_loss(model: &Model, x: &Matrix) -> Result<f64> {
    require_kind(model, &[ModelKind::Ae, ModelKind::Cae], "the autoencoder loss")?;
    reconstruction_example(model, x, x, None, None)
}

pub fn ae_loss_grad(model: &Model, x: &Matrix) -> Result<(f64, Model)> {
    require_kind(model, &[ModelKind::Ae, ModelKind::Cae], "the autoencoder loss")?;
    let mut g = model.zeros_like();
    let loss = reconstruction_example(model, x, x, None, Some((&mut g, 1.0)))?;
    Ok((loss, g))
}

/// Reconstruction of `x_prime` from the embedding of `x`; `language` is the
/// training-language index and is required exactly for conditioned models.
pub fn cae_loss(model: &Model, x: &Matrix, x_prime: &Matrix, language: Option<usize>) -> Result<f64> {
    require_kind(model, &[ModelKind::Ae, ModelKind::Cae, ModelKind::CaeLc], "the correspondence loss")?;
    reconstruction_example(model, x, x_prime, language, None)
}

pub fn cae_loss_grad(model: &Model, x: &Matrix, x_prime: &Matrix, language: Option<usize>) -> Result<(f64, Model)> {
    require_kind(model, &[ModelKind::Ae, ModelKind::Cae, ModelKind::CaeLc], "the correspondence loss")?;
    let mut g = model.zeros_like();
    let loss = reconstruction_example(model, x, x_prime, language, Some((&mut g, 1.0)))?;
    Ok((loss, g))
}

/// Sum of per-example gradient containers in slice order.
pub(crate) fn sum_in_order(model: &Model, parts: &[Model]) -> Model {
    let mut total = model.zeros_like();
    for p in parts {
        add_scaled(&mut total, p, 1.0);
    }
    total
}
