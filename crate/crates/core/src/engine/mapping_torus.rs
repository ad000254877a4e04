//! Mapping tori `T^2 x [0, roof] / (b, roof) ~ (M b, 0)` of integer unimodular
//! matrices, with a deck-invariant metric.
//!
//! For a hyperbolic matrix the metric is the length structure on `T^2 x R`
//! whose horizontal cost at height `h` is `e^{rate h} |du| + e^{-rate h} |ds|`
//! (`u`, `s` the unstable/stable eigen-coordinates, `rate = ln|lambda_u| / roof`)
//! plus `|dh|` for vertical motion. Because `M` scales `u` by `lambda_u` and
//! `s` by `1 / lambda_u`, the deck map `(y, h) -> (M y, h - roof)` is an
//! isometry, so the minimum over lifts is a genuine metric on the quotient.
//! Optimal paths move all of `u` at their lowest height and all of `s` at
//! their highest, which gives the closed form used in [`MappingTorus::staircase`].
//!
//! Orthogonal matrices glue isometrically and use the flat product metric.

use super::torus::{minimal_image, wrap_unit};
use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MappingTorus {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    roof: f64,
    geometry: BaseGeometry,
}

#[derive(Clone, Debug, PartialEq)]
enum BaseGeometry {
    Hyperbolic(Eigenframe),
    Isometric,
}

#[derive(Clone, Debug, PartialEq)]
struct Eigenframe {
    lambda_u: f64,
    rate: f64,
    /// Columns are the unit unstable and stable eigenvectors.
    from_eigen: [[f64; 2]; 2],
    to_eigen: [[f64; 2]; 2],
}

fn eigenvector(m: &[[i64; 2]; 2], lambda: f64) -> [f64; 2] {
    let (a, b, c, d) = (
        m[0][0] as f64,
        m[0][1] as f64,
        m[1][0] as f64,
        m[1][1] as f64,
    );
    let v = if b != 0.0 {
        [b, lambda - a]
    } else {
        [lambda - d, c]
    };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

impl MappingTorus {
    pub fn new(matrix: [[i64; 2]; 2], roof: f64) -> Result<Self> {
        if !(roof.is_finite() && roof > 0.0) {
            return Err(LabError::InvalidSystem(format!(
                "roof must be positive, got {roof}"
            )));
        }
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if det.abs() != 1 {
            return Err(LabError::InvalidSystem(format!(
                "base matrix must have |det| = 1, got det = {det}"
            )));
        }
        let inverse = [
            [matrix[1][1] * det, -matrix[0][1] * det],
            [-matrix[1][0] * det, matrix[0][0] * det],
        ];
        let trace = (matrix[0][0] + matrix[1][1]) as f64;
        let disc = trace * trace - 4.0 * det as f64;
        let orthogonal = {
            let c0 = matrix[0][0] * matrix[0][0] + matrix[1][0] * matrix[1][0];
            let c1 = matrix[0][1] * matrix[0][1] + matrix[1][1] * matrix[1][1];
            let dot = matrix[0][0] * matrix[0][1] + matrix[1][0] * matrix[1][1];
            c0 == 1 && c1 == 1 && dot == 0
        };
        let geometry = if orthogonal {
            BaseGeometry::Isometric
        } else if disc > 0.0 {
            let root = disc.sqrt();
            let l1 = (trace + root) / 2.0;
            let l2 = (trace - root) / 2.0;
            let (lu, ls) = if l1.abs() > l2.abs() {
                (l1, l2)
            } else {
                (l2, l1)
            };
            if lu.abs() <= 1.0 + 1e-12 {
                return Err(LabError::InvalidSystem(
                    "base matrix is not hyperbolic".into(),
                ));
            }
            let eu = eigenvector(&matrix, lu);
            let es = eigenvector(&matrix, ls);
            let from_eigen = [[eu[0], es[0]], [eu[1], es[1]]];
            let det_e = eu[0] * es[1] - es[0] * eu[1];
            let to_eigen = [
                [es[1] / det_e, -es[0] / det_e],
                [-eu[1] / det_e, eu[0] / det_e],
            ];
            BaseGeometry::Hyperbolic(Eigenframe {
                lambda_u: lu,
                rate: lu.abs().ln() / roof,
                from_eigen,
                to_eigen,
            })
        } else {
            return Err(LabError::InvalidSystem(
                "base matrix must be hyperbolic or orthogonal".into(),
            ));
        };
        Ok(Self {
            matrix,
            inverse,
            roof,
            geometry,
        })
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn roof(&self) -> f64 {
        self.roof
    }

    pub fn is_hyperbolic(&self) -> bool {
        matches!(self.geometry, BaseGeometry::Hyperbolic(_))
    }

    /// Unstable eigenvalue, when hyperbolic.
    pub fn unstable_eigenvalue(&self) -> Option<f64> {
        match &self.geometry {
            BaseGeometry::Hyperbolic(f) => Some(f.lambda_u),
            BaseGeometry::Isometric => None,
        }
    }

    #[cfg(test)]
    fn unstable_direction(&self) -> Option<[f64; 2]> {
        match &self.geometry {
            BaseGeometry::Hyperbolic(f) => Some([f.from_eigen[0][0], f.from_eigen[1][0]]),
            BaseGeometry::Isometric => None,
        }
    }

    pub(crate) fn key(&self) -> String {
        format!("mapping:{:?}:{:016x}", self.matrix, self.roof.to_bits())
    }

    pub(crate) fn diameter(&self) -> f64 {
        (0.5 + 0.25 * self.roof * self.roof).sqrt()
    }

    fn apply(m: &[[i64; 2]; 2], b: &mut [f64]) {
        let x = m[0][0] as f64 * b[0] + m[0][1] as f64 * b[1];
        let y = m[1][0] as f64 * b[0] + m[1][1] as f64 * b[1];
        b[0] = wrap_unit(x);
        b[1] = wrap_unit(y);
    }

    /// Apply `M^k` to a base point, reducing mod 1 after every factor.
    pub(crate) fn apply_power(&self, k: i64, b: &mut [f64]) {
        let m = if k >= 0 { &self.matrix } else { &self.inverse };
        for _ in 0..k.unsigned_abs() {
            Self::apply(m, b);
        }
    }

    /// Normalize `(b0, b1, h)` in place.
    pub(crate) fn normalize(&self, c: &mut [f64]) {
        let mut k = (c[2] / self.roof).floor();
        let mut h = c[2] - k * self.roof;
        if h >= self.roof {
            h -= self.roof;
            k += 1.0;
        }
        if h < 0.0 {
            h += self.roof;
            k -= 1.0;
        }
        c[0] = wrap_unit(c[0]);
        c[1] = wrap_unit(c[1]);
        self.apply_power(k as i64, &mut c[..2]);
        c[2] = h;
    }

    /// Flat-chart displacement from `p` to the nearest lift of `q`.
    pub(crate) fn chart_delta(&self, p: &[f64], q: &[f64]) -> [f64; 3] {
        let n = ((p[2] - q[2]) / self.roof).round() as i64;
        let mut b = [q[0], q[1]];
        self.apply_power(-n, &mut b);
        [
            minimal_image(p[0], b[0]),
            minimal_image(p[1], b[1]),
            q[2] + n as f64 * self.roof - p[2],
        ]
    }

    /// Distance between normalized points `(b0, b1, h)`.
    pub(crate) fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        // canonical argument order makes the result exactly symmetric
        let (p, q) = if lex_le(p, q) { (p, q) } else { (q, p) };
        let mut best = f64::INFINITY;
        // lifts (M^-n b_q, h_q + n roof), upward then downward
        let mut b = [q[0], q[1]];
        let mut n = 0i64;
        loop {
            let hq = q[2] + n as f64 * self.roof;
            if hq - p[2] >= best {
                break;
            }
            best = best.min(self.lift_distance(p, &b, hq, best));
            self.apply_power(-1, &mut b);
            n += 1;
        }
        let mut b = [q[0], q[1]];
        self.apply_power(1, &mut b);
        let mut n = -1i64;
        loop {
            let hq = q[2] + n as f64 * self.roof;
            if p[2] - hq >= best {
                break;
            }
            best = best.min(self.lift_distance(p, &b, hq, best));
            self.apply_power(1, &mut b);
            n -= 1;
        }
        best
    }

    fn lift_distance(&self, p: &[f64], bq: &[f64; 2], hq: f64, best: f64) -> f64 {
        let delta = [minimal_image(p[0], bq[0]), minimal_image(p[1], bq[1])];
        let (lo, hi) = if p[2] <= hq { (p[2], hq) } else { (hq, p[2]) };
        match &self.geometry {
            BaseGeometry::Isometric => {
                let dh = hi - lo;
                (delta[0] * delta[0] + delta[1] * delta[1] + dh * dh).sqrt()
            }
            BaseGeometry::Hyperbolic(f) => {
                let eval = |k0: f64, k1: f64| {
                    let v0 = delta[0] + k0;
                    let v1 = delta[1] + k1;
                    let a = f.to_eigen[0][0] * v0 + f.to_eigen[0][1] * v1;
                    let s = f.to_eigen[1][0] * v0 + f.to_eigen[1][1] * v1;
                    Self::staircase(f.rate, a.abs(), s.abs(), lo, hi)
                };
                let mut local = best.min(eval(0.0, 0.0));
                let budget = local - (hi - lo);
                if budget <= 0.0 {
                    return local;
                }
                let a_max = Self::max_unstable(f.rate, budget, lo);
                let s_max = Self::max_stable(f.rate, budget, hi);
                let r0 = f.from_eigen[0][0].abs() * a_max + f.from_eigen[0][1].abs() * s_max;
                let r1 = f.from_eigen[1][0].abs() * a_max + f.from_eigen[1][1].abs() * s_max;
                let k0_lo = (-r0 - delta[0]).ceil() as i64;
                let k0_hi = (r0 - delta[0]).floor() as i64;
                let k1_lo = (-r1 - delta[1]).ceil() as i64;
                let k1_hi = (r1 - delta[1]).floor() as i64;
                for k0 in k0_lo..=k0_hi {
                    for k1 in k1_lo..=k1_hi {
                        if k0 == 0 && k1 == 0 {
                            continue;
                        }
                        local = local.min(eval(k0 as f64, k1 as f64));
                    }
                }
                local
            }
        }
    }

    /// Cost of the cheapest staircase path between heights `lo <= hi` that
    /// moves `a` along the unstable and `s` along the stable direction.
    pub(crate) fn staircase(rate: f64, a: f64, s: f64, lo: f64, hi: f64) -> f64 {
        (hi - lo) + Self::unstable_cost(rate, a, lo) + Self::stable_cost(rate, s, hi)
    }

    fn unstable_cost(rate: f64, a: f64, lo: f64) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        let s_star = (2.0 / (rate * a)).ln() / rate;
        if s_star >= lo {
            a * (rate * lo).exp()
        } else {
            2.0 * (lo - s_star) + 2.0 / rate
        }
    }

    fn stable_cost(rate: f64, s: f64, hi: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let s_star = (rate * s / 2.0).ln() / rate;
        if s_star <= hi {
            s * (-rate * hi).exp()
        } else {
            2.0 * (s_star - hi) + 2.0 / rate
        }
    }

    /// Largest unstable displacement whose cost stays within `budget`.
    fn max_unstable(rate: f64, budget: f64, lo: f64) -> f64 {
        if budget <= 2.0 / rate {
            budget * (-rate * lo).exp()
        } else {
            let s_star = lo - (budget - 2.0 / rate) / 2.0;
            2.0 * (-rate * s_star).exp() / rate
        }
    }

    fn max_stable(rate: f64, budget: f64, hi: f64) -> f64 {
        if budget <= 2.0 / rate {
            budget * (rate * hi).exp()
        } else {
            let s_star = hi + (budget - 2.0 / rate) / 2.0;
            2.0 * (rate * s_star).exp() / rate
        }
    }

    /// Horocycle velocity `e^{-rate h} e_u` at height `h`.
    pub(crate) fn horocycle_velocity(&self, h: f64) -> Option<[f64; 2]> {
        match &self.geometry {
            BaseGeometry::Hyperbolic(f) if f.lambda_u > 0.0 => {
                let scale = (-f.rate * h).exp();
                Some([scale * f.from_eigen[0][0], scale * f.from_eigen[1][0]])
            }
            _ => None,
        }
    }
}

fn lex_le(p: &[f64], q: &[f64]) -> bool {
    for (a, b) in p.iter().zip(q) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];

    #[test]
    fn rejects_non_unimodular_and_parabolic() {
        assert!(MappingTorus::new([[2, 0], [0, 1]], 1.0).is_err());
        assert!(MappingTorus::new([[1, 1], [0, 1]], 1.0).is_err());
        assert!(MappingTorus::new(CAT, 0.0).is_err());
        assert!(MappingTorus::new([[0, -1], [1, 0]], 1.0).is_ok());
    }

    #[test]
    fn cat_eigenvalue() {
        let m = MappingTorus::new(CAT, 1.0).unwrap();
        let golden = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((m.unstable_eigenvalue().unwrap() - golden).abs() < 1e-14);
    }

    #[test]
    fn gluing_gap_across_seam() {
        let m = MappingTorus::new(CAT, 1.0).unwrap();
        let b = [0.3, 0.7];
        let mut mb = b;
        m.apply_power(1, &mut mb);
        let d = m.distance(&[b[0], b[1], 0.99], &[mb[0], mb[1], 0.01]);
        assert!((d - 0.02).abs() < 1e-12, "{d}");
    }

    #[test]
    fn normalize_crosses_roof() {
        let m = MappingTorus::new(CAT, 1.0).unwrap();
        let mut c = [0.5, 0.5, 1.0];
        m.normalize(&mut c);
        assert_eq!(c, [0.5, 0.0, 0.0]);
        let mut c = [0.5, 0.0, -1.0];
        m.normalize(&mut c);
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15 && c[2] == 0.0);
    }

    #[test]
    fn vertical_distance_is_height_gap() {
        let m = MappingTorus::new(CAT, 1.0).unwrap();
        let d = m.distance(&[0.2, 0.3, 0.1], &[0.2, 0.3, 0.35]);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn staircase_is_continuous_at_branch_switch() {
        let rate: f64 = 0.9;
        let lo = 0.2;
        let a_switch = 2.0 / (rate * (rate * lo).exp());
        let below = MappingTorus::staircase(rate, a_switch * (1.0 - 1e-9), 0.0, lo, lo);
        let above = MappingTorus::staircase(rate, a_switch * (1.0 + 1e-9), 0.0, lo, lo);
        assert!((below - above).abs() < 1e-8);
    }

    #[test]
    fn unit_time_stretches_unstable_displacement() {
        let m = MappingTorus::new(CAT, 1.0).unwrap();
        let eu = m.unstable_direction().unwrap();
        let eps = 1e-4;
        let p = [0.11, 0.42, 0.3];
        let q = [p[0] + eps * eu[0], p[1] + eps * eu[1], 0.3];
        let d0 = m.distance(&p, &q);
        assert!((d0 - eps * (m.unstable_eigenvalue().unwrap().ln() * 0.3).exp()).abs() < 1e-15);
        let mut p1 = [p[0], p[1], p[2] + 1.0];
        let mut q1 = [q[0], q[1], q[2] + 1.0];
        m.normalize(&mut p1);
        m.normalize(&mut q1);
        let ratio = m.distance(&p1, &q1) / d0;
        assert!(
            (ratio - m.unstable_eigenvalue().unwrap()).abs() < 1e-9,
            "{ratio}"
        );
    }
}
