//! Closed-form reference values for the uniform clamped–clamped beam.

/// First `count` positive roots of `cos(x) cosh(x) = 1`, by bisection.
pub fn clamped_beam_roots(count: usize) -> Vec<f64> {
    // cos x - 1/cosh x has the same roots and no overflow.
    let f = |x: f64| x.cos() - 1.0 / x.cosh();
    (1..=count)
        .map(|j| {
            let pi = std::f64::consts::PI;
            let (mut lo, mut hi) = (j as f64 * pi + 1e-3, (j + 1) as f64 * pi - 1e-3);
            let flo = f(lo);
            assert!(flo * f(hi) < 0.0, "bracket {j} does not change sign");
            while hi - lo > 1e-15 * hi {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    return mid;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Natural angular frequencies `(beta_j / ell)^2 sqrt(alpha / rho)` of a uniform clamped beam.
pub fn clamped_beam_frequencies(count: usize, ell: f64, alpha: f64, rho: f64) -> Vec<f64> {
    clamped_beam_roots(count)
        .into_iter()
        .map(|b| (b / ell).powi(2) * (alpha / rho).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_root() {
        let r = clamped_beam_roots(5);
        assert!((r[0] - 4.730_040_744_862_704).abs() < 1e-12);
        assert!((r[1] - 7.853_204_624_095_838).abs() < 1e-12);
        for (j, x) in r.iter().enumerate() {
            assert!((x.cos() * x.cosh() - 1.0).abs() < 1e-9 * x.cosh());
            assert!((x - (j as f64 + 1.5) * std::f64::consts::PI).abs() < 0.02);
        }
    }
}
