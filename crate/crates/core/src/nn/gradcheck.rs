use super::params::{assign_flat, flatten, Params};

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `point`, over every coordinate.
pub fn grad_check<P, F>(point: &P, analytic: &P, loss: F, h: f64) -> f64
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    let x = flatten(point);
    let a = flatten(analytic);
    assert_eq!(x.len(), a.len(), "gradient layout differs from parameters");
    let mut probe = point.clone();
    let mut buf = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        buf[i] = x[i] + h;
        assign_flat(&mut probe, &buf).expect("same layout");
        let up = loss(&probe);
        buf[i] = x[i] - h;
        assign_flat(&mut probe, &buf).expect("same layout");
        let down = loss(&probe);
        buf[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(a[i], numeric));
    }
    worst
}

/// Whether every non-zero component of `analytic` sits clear of the
/// roundoff floor of a central difference with step `h` around a loss of
/// size `loss_value` (absolute noise about `ε·max(1, |L|) / 2h`), with the
/// margin needed to resolve it to a relative error of 1e-6.
pub fn fd_resolvable<P: Params + ?Sized>(analytic: &P, loss_value: f64, h: f64) -> bool {
    let noise = f64::EPSILON * loss_value.abs().max(1.0) / (2.0 * h);
    let floor = noise / 1e-6;
    flatten(analytic).iter().all(|g| *g == 0.0 || g.abs() >= floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(w: &Vec<f64>) -> f64 {
        w.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v + 0.5 * v).sum()
    }

    fn quad_grad(w: &[f64]) -> Vec<f64> {
        w.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v + 0.5).collect()
    }

    #[test]
    fn exact_on_quadratics() {
        let w = vec![0.3, -1.2, 2.5, 0.0];
        assert!(grad_check(&w, &quad_grad(&w), quad, 1e-5) <= 1e-9);
    }

    #[test]
    fn detects_corrupted_gradient() {
        let w = vec![0.3, -1.2, 2.5, 0.7];
        let bad: Vec<f64> = quad_grad(&w).iter().map(|g| g * 1.1).collect();
        assert!(grad_check(&w, &bad, quad, 1e-5) >= 1e-2);
    }

    #[test]
    fn resolvability_floor() {
        assert!(fd_resolvable(&vec![0.0, 1.0, -0.5], 1.0, 1e-5));
        assert!(!fd_resolvable(&vec![1e-7, 1.0], 1.0, 1e-5));
        assert!(!fd_resolvable(&vec![1e-4], 1000.0, 1e-5));
    }

    #[test]
    fn zero_gradients_compare_as_equal() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }
}
