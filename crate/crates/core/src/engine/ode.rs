//! Fixed-step classical RK4 for smooth vector fields on `T^n`.

use std::f64::consts::TAU;

/// `X_j(x) = w_j + m sin(2 pi x_{j+1 mod n})`: a constant field with a
/// periodic shear. `m = 0` gives the linear flow.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusField {
    pub velocity: Vec<f64>,
    pub modulation: f64,
}

impl TorusField {
    pub fn dim(&self) -> usize {
        self.velocity.len()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.velocity.len();
        for j in 0..n {
            out[j] = self.velocity[j] + self.modulation * (TAU * x[(j + 1) % n]).sin();
        }
    }
}

/// Integrate `x' = scale * X(x)` for time `t` in unwrapped coordinates using
/// `ceil(|t| / step)` equal steps.
pub(crate) fn rk4_integrate(field: &TorusField, scale: f64, x: &mut [f64], t: f64, step: f64) {
    if t == 0.0 {
        return;
    }
    let n = x.len();
    let steps = (t.abs() / step).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        field.eval(x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * scale * k1[i];
        }
        field.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * scale * k2[i];
        }
        field.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * scale * k3[i];
        }
        field.eval(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h * scale * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        }
    }
}
