//! ODE integration from t = 0 to t = 1: fixed-step Euler and classical RK4,
//! plus an embedded Dormand–Prince 5(4) pair with PI step-size control.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OdeMethod {
    Euler { steps: usize },
    Rk4 { steps: usize },
    Adaptive { rtol: f64, atol: f64 },
}

impl OdeMethod {
    pub fn parse(name: &str, steps: usize, rtol: f64, atol: f64) -> Result<Self> {
        match name {
            "euler" => Ok(OdeMethod::Euler { steps }),
            "rk4" => Ok(OdeMethod::Rk4 { steps }),
            "adaptive" => Ok(OdeMethod::Adaptive { rtol, atol }),
            other => Err(Error::config(format!(
                "unknown ode method '{other}' (expected euler|rk4|adaptive)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OdeMethod::Euler { steps } | OdeMethod::Rk4 { steps } if *steps < 1 => {
                Err(Error::config("ode steps must be >= 1"))
            }
            OdeMethod::Adaptive { rtol, atol } if *rtol <= 0.0 || *atol <= 0.0 => {
                Err(Error::config("rtol and atol must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_fixed_step(&self) -> bool {
        !matches!(self, OdeMethod::Adaptive { .. })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrate `dz/dt = f(z, t)` from 0 to 1.
pub fn integrate<T, F>(mut f: F, z0: Vec<T>, method: &OdeMethod) -> Result<(Vec<T>, OdeStats)>
where
    T: Scalar,
    F: FnMut(&[T], f64) -> Result<Vec<T>>,
{
    method.validate()?;
    match *method {
        OdeMethod::Euler { steps } => euler(&mut f, z0, steps),
        OdeMethod::Rk4 { steps } => rk4(&mut f, z0, steps),
        OdeMethod::Adaptive { rtol, atol } => dormand_prince(&mut f, z0, rtol, atol),
    }
}

fn euler<T, F>(f: &mut F, mut z: Vec<T>, steps: usize) -> Result<(Vec<T>, OdeStats)>
where
    T: Scalar,
    F: FnMut(&[T], f64) -> Result<Vec<T>>,
{
    let mut stats = OdeStats::default();
    let dt = T::from_f64(1.0 / steps as f64);
    for s in 0..steps {
        let t = s as f64 / steps as f64;
        let v = f(&z, t)?;
        stats.evals += 1;
        for (zi, vi) in z.iter_mut().zip(v) {
            *zi = *zi + dt * vi;
        }
        stats.accepted += 1;
    }
    Ok((z, stats))
}

fn rk4<T, F>(f: &mut F, mut z: Vec<T>, steps: usize) -> Result<(Vec<T>, OdeStats)>
where
    T: Scalar,
    F: FnMut(&[T], f64) -> Result<Vec<T>>,
{
    let mut stats = OdeStats::default();
    let h = 1.0 / steps as f64;
    let ht = T::from_f64(h);
    let half = T::from_f64(0.5);
    let sixth = T::from_f64(1.0 / 6.0);
    let two = T::from_f64(2.0);
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = f(&z, t)?;
        let z2: Vec<T> = z.iter().zip(&k1).map(|(&zi, &k)| zi + ht * half * k).collect();
        let k2 = f(&z2, t + h / 2.0)?;
        let z3: Vec<T> = z.iter().zip(&k2).map(|(&zi, &k)| zi + ht * half * k).collect();
        let k3 = f(&z3, t + h / 2.0)?;
        let z4: Vec<T> = z.iter().zip(&k3).map(|(&zi, &k)| zi + ht * k).collect();
        let k4 = f(&z4, t + h)?;
        stats.evals += 4;
        for i in 0..z.len() {
            z[i] = z[i] + ht * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        stats.accepted += 1;
    }
    Ok((z, stats))
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
/// 5th-order solution weights (row 7 of A; FSAL).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Embedded 4th-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MIN_STEP: f64 = 1e-8;
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn dormand_prince<T, F>(f: &mut F, mut z: Vec<T>, rtol: f64, atol: f64) -> Result<(Vec<T>, OdeStats)>
where
    T: Scalar,
    F: FnMut(&[T], f64) -> Result<Vec<T>>,
{
    let n = z.len();
    let mut stats = OdeStats::default();
    let mut t = 0.0f64;
    let mut h = 0.05f64;
    let expo1 = 0.2 - BETA * 0.75;
    let mut facold = 1e-4f64;

    let mut k1 = f(&z, t)?;
    stats.evals += 1;

    while t < 1.0 {
        if h < MIN_STEP {
            return Err(Error::numeric(format!(
                "adaptive step underflow at t = {t:.6} (h = {h:.3e})"
            )));
        }
        if t + h > 1.0 {
            h = 1.0 - t;
        }

        let mut k = vec![k1.clone()];
        for stage in 0..6 {
            let mut zs = z.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    let at = T::from_f64(a * h);
                    for i in 0..n {
                        zs[i] = zs[i] + at * kj[i];
                    }
                }
            }
            let ks = f(&zs, t + C[stage] * h)?;
            stats.evals += 1;
            k.push(ks);
        }

        // 5th-order candidate and embedded error estimate
        let mut z5 = z.clone();
        for (j, kj) in k.iter().enumerate() {
            if B5[j] != 0.0 {
                let bt = T::from_f64(B5[j] * h);
                for i in 0..n {
                    z5[i] = z5[i] + bt * kj[i];
                }
            }
        }
        let mut err_sq = 0.0f64;
        for i in 0..n {
            let mut e = 0.0f64;
            for (j, kj) in k.iter().enumerate() {
                e += (B5[j] - B4[j]) * kj[i].as_f64();
            }
            e *= h;
            let sc = atol + rtol * z[i].as_f64().abs().max(z5[i].as_f64().abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            // accept; FSAL reuses the last stage
            t += h;
            z = z5;
            k1 = k.pop().expect("seven stages");
            stats.accepted += 1;
            // PI control against the previous accepted error
            let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            facold = err.max(1e-4);
            h /= fac;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }
    Ok((z, stats))
}
