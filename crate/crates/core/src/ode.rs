//! Fixed-step explicit integrators for the small subflow ODEs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TtnError};
use crate::scalar::{is_finite, Real, C};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OdeMethod {
    Euler,
    Heun,
    #[default]
    Rk4,
}

impl fmt::Display for OdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdeMethod::Euler => "euler",
            OdeMethod::Heun => "heun",
            OdeMethod::Rk4 => "rk4",
        })
    }
}

impl FromStr for OdeMethod {
    type Err = TtnError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(OdeMethod::Euler),
            "heun" => Ok(OdeMethod::Heun),
            "rk4" => Ok(OdeMethod::Rk4),
            _ => Err(TtnError::Parse(format!("unknown ode method '{s}' (euler, heun, rk4)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OdeConfig {
    pub method: OdeMethod,
    pub substeps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { method: OdeMethod::Rk4, substeps: 1 }
    }
}

impl OdeConfig {
    pub fn new(method: OdeMethod, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(TtnError::Parse("substeps must be at least 1".into()));
        }
        Ok(Self { method, substeps })
    }
}

fn axpy<T: Real>(y: &[C<T>], a: T, k: &[C<T>]) -> Vec<C<T>> {
    y.iter().zip(k).map(|(&yi, &ki)| yi + ki * a).collect()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` with `cfg.substeps` equal steps.
pub fn solve<T: Real>(
    mut f: impl FnMut(f64, &[C<T>]) -> Result<Vec<C<T>>>,
    y0: &[C<T>],
    t0: f64,
    t1: f64,
    cfg: &OdeConfig,
) -> Result<Vec<C<T>>> {
    if t1 < t0 {
        return Err(TtnError::Parse(format!("ode interval reversed: {t0} > {t1}")));
    }
    let n = cfg.substeps.max(1);
    let h = (t1 - t0) / n as f64;
    let ht = T::of(h);
    let half = T::of(0.5);
    let mut y = y0.to_vec();
    for s in 0..n {
        let t = t0 + h * s as f64;
        y = match cfg.method {
            OdeMethod::Euler => {
                let k1 = f(t, &y)?;
                axpy(&y, ht, &k1)
            }
            OdeMethod::Heun => {
                let k1 = f(t, &y)?;
                let k2 = f(t + h, &axpy(&y, ht, &k1))?;
                let avg: Vec<C<T>> = k1.iter().zip(&k2).map(|(a, b)| (a + b) * half).collect();
                axpy(&y, ht, &avg)
            }
            OdeMethod::Rk4 => {
                let k1 = f(t, &y)?;
                let k2 = f(t + 0.5 * h, &axpy(&y, ht * half, &k1))?;
                let k3 = f(t + 0.5 * h, &axpy(&y, ht * half, &k2))?;
                let k4 = f(t + h, &axpy(&y, ht, &k3))?;
                let sixth = ht / T::of(6.0);
                let two = T::of(2.0);
                y.iter()
                    .enumerate()
                    .map(|(i, &yi)| yi + (k1[i] + k2[i] * two + k3[i] * two + k4[i]) * sixth)
                    .collect()
            }
        };
        // Also reject states whose squared norm overflows: the factorizations
        // downstream would turn them into NaN.
        let nsq = y.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
        if !y.iter().all(|&z| is_finite(z)) || !nsq.to_f64_lossy().is_finite() {
            return Err(TtnError::NonFinite { t: t + h });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    type Z = C<f64>;

    fn lin(lambda: Z) -> impl FnMut(f64, &[Z]) -> Result<Vec<Z>> {
        move |_, y| Ok(y.iter().map(|&v| v * lambda).collect())
    }

    #[test]
    fn zero_field_is_exact() {
        let y0 = vec![Z::new(1.0, 2.0), Z::new(-3.0, 0.5)];
        for m in [OdeMethod::Euler, OdeMethod::Heun, OdeMethod::Rk4] {
            let y = solve(|_, y: &[Z]| Ok(vec![Z::new(0.0, 0.0); y.len()]), &y0, 0.0, 1.0, &OdeConfig::new(m, 3).unwrap())
                .unwrap();
            assert_eq!(y, y0);
        }
    }

    #[test]
    fn rk4_one_step_is_taylor() {
        let y = solve(lin(Z::new(1.0, 0.0)), &[Z::new(1.0, 0.0)], 0.0, 0.1, &OdeConfig::default()).unwrap();
        let h: f64 = 0.1;
        let want = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((y[0].re - want).abs() < 1e-15);
        assert!((y[0].re - 1.105_170_833_333_333_3).abs() < 1e-15);
    }

    #[test]
    fn rk4_unitary_drift() {
        let cfg = OdeConfig::new(OdeMethod::Rk4, 100).unwrap();
        let y = solve(lin(Z::new(0.0, 1.0)), &[Z::new(1.0, 0.0)], 0.0, 1.0, &cfg).unwrap();
        assert!((y[0].norm() - 1.0).abs() <= 1e-9);
        assert!((y[0] - Z::new(1f64.cos(), 1f64.sin())).norm() < 1e-9);
    }

    #[test]
    fn convergence_orders() {
        let lambda = Z::new(-0.7, 1.3);
        let exact = (lambda * 1.0).exp();
        for (m, p) in [(OdeMethod::Euler, 1.0), (OdeMethod::Heun, 2.0), (OdeMethod::Rk4, 4.0)] {
            let errs: Vec<f64> = (3..=8)
                .map(|k| {
                    let cfg = OdeConfig::new(m, 1 << k).unwrap();
                    let y = solve(lin(lambda), &[Z::new(1.0, 0.0)], 0.0, 1.0, &cfg).unwrap();
                    (y[0] - exact).norm()
                })
                .collect();
            for w in errs.windows(2) {
                let slope = (w[0] / w[1]).log2();
                assert!(slope >= 0.95 * p, "{m}: slope {slope} < {}", 0.95 * p);
            }
        }
    }

    #[test]
    fn linear_in_initial_value() {
        let a = [Z::new(1.0, -1.0), Z::new(0.3, 0.2)];
        let b = [Z::new(-2.0, 0.5), Z::new(1.0, 1.0)];
        let s: Vec<Z> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let f = |_: f64, y: &[Z]| Ok(vec![y[1] * Z::new(0.0, 1.0), y[0] * -2.0]);
        let cfg = OdeConfig::new(OdeMethod::Rk4, 5).unwrap();
        let ya = solve(f, &a, 0.0, 0.7, &cfg).unwrap();
        let yb = solve(f, &b, 0.0, 0.7, &cfg).unwrap();
        let ys = solve(f, &s, 0.0, 0.7, &cfg).unwrap();
        for i in 0..2 {
            assert!((ya[i] + yb[i] - ys[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn blow_up_reports_time() {
        let f = |_: f64, y: &[Z]| Ok(y.iter().map(|v| v * v * 1e200).collect());
        let err = solve(f, &[Z::new(1e100, 0.0)], 0.0, 1.0, &OdeConfig::new(OdeMethod::Euler, 4).unwrap());
        assert!(matches!(err, Err(TtnError::NonFinite { .. })));
        assert!(solve(lin(Z::new(1.0, 0.0)), &[Z::new(1.0, 0.0)], 1.0, 0.0, &OdeConfig::default()).is_err());
    }

    #[test]
    fn method_parsing() {
        for m in [OdeMethod::Euler, OdeMethod::Heun, OdeMethod::Rk4] {
            assert_eq!(m.to_string().parse::<OdeMethod>().unwrap(), m);
        }
        assert!("rk5".parse::<OdeMethod>().is_err());
        assert!(OdeConfig::new(OdeMethod::Rk4, 0).is_err());
    }
}
