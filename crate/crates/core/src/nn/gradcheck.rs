//! Central finite-difference gradient checks in 64-bit precision.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bindings, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_SAMPLES: usize = 64;
/// Coordinates whose central difference disagrees with the analytic value by
/// more than this are probed again at half the step to look for a kink.
pub const KINK_PROBE: f64 = 1e-6;
/// Second differences at the full and half step that disagree by more than
/// this (absolute, plus the same amount relative) mark a kink in the window.
/// For a smooth function they agree up to `O(h^2)` and rounding noise.
pub const KINK_CURVATURE: f64 = 1e-2;
/// At a kink the analytic value must still match one of the one-sided slopes.
pub const KINK_SIDE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinates whose difference window straddles a kink; excluded from
    /// the error maxima above.
    pub kinks: usize,
    /// Worst relative error against the closer one-sided slope at a kink.
    pub max_kink_side_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks).sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol && self.tensors.iter().all(|t| t.max_kink_side_err < KINK_SIDE_TOL)
    }

    /// Aligned text table, one row per tensor.
    pub fn to_table(&self) -> String {
        let w = self.tensors.iter().map(|t| t.name.len()).max().unwrap_or(6).max(6);
        let mut s = format!(
            "{:<w$}  {:>7}  {:>12}  {:>12}  {:>5}\n",
            "tensor", "checked", "max_rel_err", "max_abs_err", "kinks"
        );
        for t in &self.tensors {
            s += &format!(
                "{:<w$}  {:>7}  {:>12.3e}  {:>12.3e}  {:>5}\n",
                t.name, t.checked, t.max_rel_err, t.max_abs_err, t.kinks
            );
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Up to `samples` distinct coordinates, chosen by a stream keyed on the
/// tensor name; all of them when the tensor is small enough.
fn sample_indices(name: &str, numel: usize, samples: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..numel).collect();
    if numel > samples {
        let mut rng = Stream::new(0, name);
        for i in 0..samples {
            let j = i + rng.below(numel - i);
            idx.swap(i, j);
        }
        idx.truncate(samples);
        idx.sort_unstable();
    }
    idx
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences (step `1e-5`) on at most `samples` coordinates per tensor.
/// Coordinates are picked at random so wide matrices are not sampled along
/// one column.
pub fn gradcheck<F>(f: F, params: &ParamSet<f64>, samples: usize) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    let samples = samples.clamp(1, MAX_SAMPLES);
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let out = f(&mut g, &b)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let out = f(&mut g, &b)?;
    let f0 = g.value(out).item();
    if !f0.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    let mut grads = g.backward(out)?;
    let analytic = params.collect_grads(&b, &mut grads);

    let mut work = params.clone();
    let mut tensors = Vec::new();
    for (name, t) in params.iter() {
        let a = analytic.get(name).expect("same names");
        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            kinks: 0,
            max_kink_side_err: 0.0,
        };
        for i in sample_indices(name, t.numel(), samples) {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let an = a.data()[i];
            check.checked += 1;
            if relative_error(an, numeric) > KINK_PROBE {
                work.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP / 2.0;
                let up2 = eval(&work)?;
                work.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP / 2.0;
                let down2 = eval(&work)?;
                work.get_mut(name).unwrap().data_mut()[i] = orig;
                if let Some(side) = kink_side_error(an, [down, down2, f0, up2, up]) {
                    check.kinks += 1;
                    check.max_kink_side_err = check.max_kink_side_err.max(side);
                    continue;
                }
            }
            check.max_rel_err = check.max_rel_err.max(relative_error(an, numeric));
            check.max_abs_err = check.max_abs_err.max((an - numeric).abs());
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { tensors })
}

/// Values at `-h, -h/2, 0, h/2, h`. Returns `None` when the two second
/// differences agree, as for any smooth function; otherwise a kink lies in
/// the window and the result is the analytic value's relative error against
/// the closer second-order one-sided slope.
fn kink_side_error(analytic: f64, [m1, m2, f0, p2, p1]: [f64; 5]) -> Option<f64> {
    let h = FD_STEP;
    let d_full = (p1 - 2.0 * f0 + m1) / (h * h);
    let d_half = (p2 - 2.0 * f0 + m2) / (h * h / 4.0);
    let gap = (d_full - d_half).abs();
    if gap <= KINK_CURVATURE * (1.0 + d_full.abs().max(d_half.abs())) {
        return None;
    }
    let right = (4.0 * p2 - 3.0 * f0 - p1) / h;
    let left = (3.0 * f0 - 4.0 * m2 + m1) / h;
    Some(relative_error(analytic, right).min(relative_error(analytic, left)))
}
