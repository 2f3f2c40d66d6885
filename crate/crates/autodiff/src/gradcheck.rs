//! Central finite-difference verification of analytic gradients.

/// Worst relative error between `analytic` and central differences of
/// `loss` over every coordinate of `x`. `loss` must be deterministic.
///
/// The relative error at coordinate i is |a - d| / max(|a|, |d|, floor)
/// with floor 1e-6, so coordinates where both gradients vanish score 0
/// instead of amplifying roundoff.
pub fn grad_check<F>(mut loss: F, x: &mut [f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    assert!(step > 0.0);
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(x);
        x[i] = orig - step;
        let down = loss(x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
