//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! Supports a scalar event function: integration stops at the first accepted
//! step over which the event changes sign, with the crossing located by
//! bisection on re-integrated sub-steps.

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { abs: 1e-8, rel: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Outcome<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    /// True if integration stopped at an event crossing before `t_end`.
    pub event: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 100_000;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One Dormand-Prince step; returns the 5th order solution and the error estimate.
fn dp_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let k2 = f(t + C2 * h, &axpy(y, &[(A21, &k1)], h));
    let k3 = f(t + C3 * h, &axpy(y, &[(A31, &k1), (A32, &k2)], h));
    let k4 = f(t + C4 * h, &axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(
        t + C5 * h,
        &axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
    );
    let k6 = f(
        t + h,
        &axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
    );
    let y_new = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = f(t + h, &y_new);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y_new, err)
}

fn error_norm<const N: usize>(y0: &[f64; N], y1: &[f64; N], err: &[f64; N], tol: Tolerances) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sc = tol.abs + tol.rel * y0[i].abs().max(y1[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / N as f64).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end`.
///
/// If `event` is given, integration stops at the first sign change of
/// `event(y)` (from a non-zero value), returning the state at the located root.
pub fn integrate<const N: usize, F, G>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    tol: Tolerances,
    event: Option<G>,
) -> Result<Outcome<N>, OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(&[f64; N]) -> f64,
{
    let span = t_end - t0;
    let mut out = Outcome {
        t: t0,
        y: y0,
        event: false,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    if span <= 0.0 {
        return Ok(out);
    }
    let mut h = span;
    let h_min = span * 1e-14;
    let mut t = t0;
    let mut y = y0;
    while t < t_end {
        if out.accepted_steps + out.rejected_steps > MAX_STEPS {
            return Err(OdeError::TooManySteps(MAX_STEPS));
        }
        h = h.min(t_end - t);
        let (y_new, err) = dp_step(&f, t, &y, h);
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t));
        }
        let en = error_norm(&y, &y_new, &err, tol);
        if en > 1.0 {
            out.rejected_steps += 1;
            h *= (0.9 * en.powf(-0.2)).max(0.2);
            if h < h_min {
                return Err(OdeError::StepUnderflow(t));
            }
            continue;
        }
        out.accepted_steps += 1;
        if let Some(g) = &event {
            let g0 = g(&y);
            let g1 = g(&y_new);
            if g0 != 0.0 && (g1 == 0.0 || g0.signum() != g1.signum()) {
                let (dt, y_root) = locate_root(&f, g, t, &y, h, g0);
                out.t = t + dt;
                out.y = y_root;
                out.event = true;
                return Ok(out);
            }
        }
        let last = t_end - t <= h;
        t = if last { t_end } else { t + h };
        y = y_new;
        let grow = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        h *= grow;
    }
    out.t = t_end;
    out.y = y;
    Ok(out)
}

fn locate_root<const N: usize, F, G>(f: &F, g: &G, t: f64, y: &[f64; N], h: f64, g0: f64) -> (f64, [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(&[f64; N]) -> f64,
{
    let (mut lo, mut hi) = (0.0f64, h);
    let mut y_hi = dp_step(f, t, y, h).0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let y_mid = dp_step(f, t, y, mid).0;
        let gm = g(&y_mid);
        if gm != 0.0 && gm.signum() == g0.signum() {
            lo = mid;
        } else {
            hi = mid;
            y_hi = y_mid;
        }
    }
    (hi, y_hi)
}
