//! One-dimensional maximization helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol` (or than a few ulps at its
/// magnitude); returns `(x, f(x))`.
pub fn golden_section_max<F, E>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let floor = 8.0 * f64::EPSILON * a.abs().max(b.abs());
    let tol = tol.max(floor);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x)?;
    // the midpoint can lose to an interior probe on flat tops
    let best = [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |acc, p| if p.1 > acc.1 { p } else { acc });
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn finds_parabola_peak() {
        let (x, fx) =
            golden_section_max(|x| Ok::<_, Infallible>(-(x - 0.3) * (x - 0.3) + 2.0), -1.0, 2.0, 1e-9).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn handles_reversed_bracket_and_edge_maximum() {
        let (x, _) = golden_section_max(|x| Ok::<_, Infallible>(x), 1.0, 0.0, 1e-7).unwrap();
        assert!((x - 1.0).abs() < 1e-6);
    }

    #[test]
    fn terminates_far_from_origin() {
        let (x, _) = golden_section_max(|x| Ok::<_, Infallible>(-(x - 1e12).powi(2)), 1e12 - 1.0, 1e12 + 1.0, 1e-9).unwrap();
        assert!((x - 1e12).abs() < 1e-2);
    }

    #[test]
    fn propagates_errors() {
        let r = golden_section_max(|_| Err::<f64, _>("boom"), 0.0, 1.0, 1e-3);
        assert_eq!(r, Err("boom"));
    }
}
