use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Uniform access to every trainable block of a parameter set.
///
/// Blocks are visited in a fixed order; gradient containers are values of
/// the same type, so flattening parameters and gradients lines them up.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Vec<f64> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(prefix, self)
    }
}

impl Params for Matrix {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(prefix, self.as_slice())
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(prefix, self.as_mut_slice())
    }
}

pub fn param_count<P: Params + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, v| n += v.len());
    n
}

pub fn flatten<P: Params + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, v| out.extend_from_slice(v));
    out
}

pub fn assign_flat<P: Params + ?Sized>(p: &mut P, values: &[f64]) -> Result<()> {
    let n = param_count(p);
    if n != values.len() {
        return Err(Error::Shape(format!("{} values for {n} parameters", values.len())));
    }
    let mut off = 0;
    p.visit_mut("", &mut |_, v| {
        v.copy_from_slice(&values[off..off + v.len()]);
        off += v.len();
    });
    Ok(())
}

pub fn zero_fill<P: Params + ?Sized>(p: &mut P) {
    p.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
}

/// `dst += a · src` over every block; both must share one layout.
pub fn add_scaled<P: Params + ?Sized>(dst: &mut P, src: &P, a: f64) {
    let s = flatten(src);
    let mut off = 0;
    dst.visit_mut("", &mut |_, v| {
        let n = v.len();
        for (x, y) in v.iter_mut().zip(&s[off..off + n]) {
            *x += a * y;
        }
        off += n;
    });
    assert_eq!(off, s.len(), "parameter layouts differ");
}
