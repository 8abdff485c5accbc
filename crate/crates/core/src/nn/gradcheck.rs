/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `f` around `point`.
///
/// The error for one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`; the report
/// carries the worst coordinate.
pub fn grad_check<F>(point: &[f64], analytic: &[f64], eps: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient/point length mismatch");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if err > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: err.max(report.max_rel_error),
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_corrupted_fails() {
        let p = [0.3, -1.2, 2.0];
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let good: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check(&p, &good, 1e-5, f).max_rel_error < 1e-8);
        let mut bad = good.clone();
        bad[1] = -bad[1];
        let r = grad_check(&p, &bad, 1e-5, f);
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst_index, 1);
    }
}
