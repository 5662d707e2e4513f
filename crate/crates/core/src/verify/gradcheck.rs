//! Central finite differences against reverse-mode gradients.
//!
//! A graph `f(inputs) -> y` is reduced to the scalar `L = Σ r·y` with a
//! fixed random projection `r`. Numerical derivatives use
//! `(L(x+ε) − L(x−ε)) / 2ε` with `L` summed in f64. A coordinate is skipped
//! as a kink (relu, max pool) when its one-sided slopes disagree, or when the
//! central difference with step `ε/2` disagrees with the one at `ε`: on a
//! piecewise-linear path the two are equal unless a kink lies within `ε`.
//!
//! The error for one input is `max|a − n| / max(max|a|, max|n|, 1e-8)`,
//! i.e. [`rel_err`](crate::tensor::rel_err) with the denominator taken over
//! the whole tensor, since elementwise relative error is dominated by f32
//! cancellation noise on near-zero entries. Each coordinate's deviation is
//! first reduced by the noise of the difference quotient itself: rounding
//! an f32 output `y_i` perturbs `L` by up to `u·|r_i·y_i|`, so over the
//! outputs that depend on the perturbed coordinate the quotient carries at most
//! `u·Σ|r_i|(|y⁺_i| + |y⁻_i|) / 2ε` of noise.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, REL_ERR_FLOOR};

pub const FD_EPS: f32 = 1e-3;
pub const FD_TOL: f32 = 1e-3;
/// Largest fraction of coordinates that may be skipped as kinks; a single
/// skip is always allowed as long as something is left to compare.
pub const MAX_KINK_FRACTION: f64 = 0.5;
const KINK_SLOPE_GAP: f64 = FD_TOL as f64;
const HALF_STEP_GAP: f64 = 0.5 * FD_TOL as f64;
const DEPENDENCE_PROBE: f32 = 0.5;

pub type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub input: String,
    pub error: f32,
    /// Largest noise-adjusted deviation `|a − n|`.
    pub abs_error: f32,
    /// Largest `|a|` or `|n|`; the denominator of `error`.
    pub scale: f32,
    pub coords: usize,
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f32) -> bool {
        let allowed = (MAX_KINK_FRACTION * self.coords as f64).max(1.0);
        self.error < tol && self.skipped < self.coords && (self.skipped as f64) <= allowed
    }

    /// Treats several inputs as one flattened tensor.
    pub fn merge(input: &str, parts: &[GradCheck]) -> GradCheck {
        let abs_error = parts.iter().fold(0.0f32, |m, p| m.max(p.abs_error));
        let scale = parts.iter().fold(REL_ERR_FLOOR, |m, p| m.max(p.scale));
        GradCheck {
            input: input.to_string(),
            error: abs_error / scale,
            abs_error,
            scale,
            coords: parts.iter().map(|p| p.coords).sum(),
            skipped: parts.iter().map(|p| p.skipped).sum(),
        }
    }
}

fn forward(f: &Graph, inputs: &[Tensor]) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    Ok(tape.value(y).data().to_vec())
}

fn project(y: &[f32], r: &[f32]) -> f64 {
    y.iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Checks every input of `f`. `names` labels the inputs in reports.
pub fn check_gradients(f: &Graph, names: &[&str], inputs: &[Tensor], seed: u64) -> Result<Vec<GradCheck>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let r = Tensor::randn(tape.value(y).shape(), 1.0, &mut Rng::keyed(seed, "projection"));
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let y0 = forward(f, inputs)?;
    let base = project(&y0, r.data());
    let unit = f32::EPSILON as f64 / 2.0;
    let mut out = Vec::with_capacity(inputs.len());
    for (i, name) in names.iter().enumerate() {
        let analytic = grads.wrt(vars[i])?;
        let scale = analytic.data().iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64));
        let mut numeric = vec![0.0f64; analytic.len()];
        let mut noise = vec![0.0f64; analytic.len()];
        let mut skip = vec![false; analytic.len()];
        let mut probe = inputs.to_vec();
        for j in 0..analytic.len() {
            let orig = inputs[i].data()[j];
            let mut at = |delta: f32| -> Result<Vec<f32>> {
                let mut d = inputs[i].data().to_vec();
                d[j] = orig + delta;
                probe[i] = Tensor::new(inputs[i].shape(), d)?;
                forward(f, &probe)
            };
            let (yp, ym) = (at(FD_EPS)?, at(-FD_EPS)?);
            let (lp, lm) = (project(&yp, r.data()), project(&ym, r.data()));
            // Effective step as represented in f32.
            let step = ((orig + FD_EPS) - orig) as f64;
            let back = (orig - (orig - FD_EPS)) as f64;
            numeric[j] = (lp - lm) / (step + back);
            // Outputs that depend on this coordinate, found with a large probe
            // since an ε step may change an output by less than its rounding.
            let yl = at(DEPENDENCE_PROBE)?;
            let rounding: f64 = (0..y0.len())
                .filter(|&o| yp[o] != ym[o] || yl[o] != y0[o])
                .map(|o| (r.data()[o] as f64).abs() * (yp[o].abs() as f64 + ym[o].abs() as f64))
                .sum();
            noise[j] = unit * rounding / (step + back);
            let (up, down) = ((lp - base) / step, (base - lm) / back);
            let h = FD_EPS / 2.0;
            let (hp, hm) = (project(&at(h)?, r.data()), project(&at(-h)?, r.data()));
            let half = (hp - hm) / (((orig + h) - orig) as f64 + (orig - (orig - h)) as f64);
            skip[j] = (up - down).abs() > KINK_SLOPE_GAP * scale.max(up.abs()).max(down.abs()) + 4.0 * noise[j]
                || (half - numeric[j]).abs() > HALF_STEP_GAP * scale.max(numeric[j].abs()) + 3.0 * noise[j];
        }
        probe[i] = inputs[i].clone();
        let (mut diff, mut mag) = (0.0f64, REL_ERR_FLOOR as f64);
        for j in 0..analytic.len() {
            if !skip[j] {
                let a = analytic.data()[j] as f64;
                diff = diff.max((a - numeric[j]).abs() - noise[j]);
                mag = mag.max(a.abs()).max(numeric[j].abs());
            }
        }
        out.push(GradCheck {
            input: name.to_string(),
            error: (diff / mag) as f32,
            abs_error: diff as f32,
            scale: mag as f32,
            coords: analytic.len(),
            skipped: skip.iter().filter(|&&s| s).count(),
        });
    }
    Ok(out)
}
