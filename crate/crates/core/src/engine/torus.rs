//! Flat torus `R^n / Z^n` helpers.

/// Reduce a coordinate into `[0, 1)`.
#[inline]
pub(crate) fn wrap_unit(v: f64) -> f64 {
    let w = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed minimal-image displacement `to - from` in `[-0.5, 0.5]`.
#[inline]
pub(crate) fn minimal_image(from: f64, to: f64) -> f64 {
    let d = to - from;
    d - d.round()
}

/// Exact flat quotient distance between two normalized torus points.
pub(crate) fn flat_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = (a - b).abs();
            let m = d.min(1.0 - d);
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_handles_negative_rounding() {
        assert_eq!(wrap_unit(-1e-18), 0.0);
        assert_eq!(wrap_unit(1.25), 0.25);
        assert_eq!(wrap_unit(-0.25), 0.75);
    }

    #[test]
    fn quotient_distance_wraps() {
        assert!((flat_distance(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        assert_eq!(flat_distance(&[0.3, 0.4], &[0.3, 0.4]), 0.0);
    }

    #[test]
    fn minimal_image_is_signed() {
        assert!((minimal_image(0.9, 0.1) - 0.2).abs() < 1e-15);
        assert!((minimal_image(0.1, 0.9) + 0.2).abs() < 1e-15);
    }
}
