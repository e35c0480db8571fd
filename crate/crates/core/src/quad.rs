//! Adaptive Simpson quadrature.
//!
//! Integrands return `Result<f64>`. Points where the integrand hits an
//! expression domain error (division by zero on a measure-zero line, say) are
//! counted in [`QuadOutcome::skipped`] and contribute zero; every other error
//! aborts the integration.

use std::cell::Cell;

use crate::error::Result;

/// Initial uniform panels before adaptive refinement starts.
const INITIAL_PANELS: usize = 32;
const MAX_DEPTH: u32 = 40;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadOutcome {
    pub value: f64,
    /// Sum of the local Richardson error estimates.
    pub error: f64,
    pub evals: usize,
    pub skipped: usize,
    /// Some interval hit the recursion limit before meeting its tolerance.
    pub depth_limited: bool,
}

struct Sampler<'f, F> {
    f: &'f mut F,
    out: QuadOutcome,
}

impl<F: FnMut(f64) -> Result<f64>> Sampler<'_, F> {
    fn at(&mut self, x: f64) -> Result<f64> {
        self.out.evals += 1;
        match (self.f)(x) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => {
                self.out.skipped += 1;
                Ok(0.0)
            }
            Err(e) if e.is_domain() => {
                self.out.skipped += 1;
                Ok(0.0)
            }
            Err(e) => Err(e),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        a: f64,
        m: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.at(lm)?;
        let frm = self.at(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol || depth >= MAX_DEPTH || (m - a) <= f64::EPSILON * a.abs() {
            if depth >= MAX_DEPTH && delta.abs() > 15.0 * tol {
                self.out.depth_limited = true;
            }
            self.out.error += delta.abs() / 15.0;
            return Ok(left + right + delta / 15.0);
        }
        Ok(self.refine(a, lm, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?
            + self.refine(m, rm, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?)
    }
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The tolerance is taken relative to a first-pass estimate of `∫|f|` on a
/// uniform composite rule, which keeps narrow peaks inside wide intervals from
/// being missed.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<QuadOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(QuadOutcome::default());
    }
    if b < a {
        let mut r = adaptive_simpson(f, b, a, rel_tol)?;
        r.value = -r.value;
        return Ok(r);
    }
    let mut s = Sampler {
        f: &mut f,
        out: QuadOutcome::default(),
    };
    let h = (b - a) / INITIAL_PANELS as f64;
    let node = |i: usize| if i == 2 * INITIAL_PANELS { b } else { a + 0.5 * h * i as f64 };
    let mut fx = Vec::with_capacity(2 * INITIAL_PANELS + 1);
    for i in 0..=2 * INITIAL_PANELS {
        fx.push(s.at(node(i))?);
    }
    let panels: Vec<f64> = (0..INITIAL_PANELS)
        .map(|p| {
            let (fa, fm, fb) = (fx[2 * p], fx[2 * p + 1], fx[2 * p + 2]);
            (node(2 * p + 2) - node(2 * p)) / 6.0 * (fa + 4.0 * fm + fb)
        })
        .collect();
    let scale: f64 = (0..INITIAL_PANELS)
        .map(|p| {
            let (fa, fm, fb) = (fx[2 * p].abs(), fx[2 * p + 1].abs(), fx[2 * p + 2].abs());
            (node(2 * p + 2) - node(2 * p)) / 6.0 * (fa + 4.0 * fm + fb)
        })
        .sum();
    if scale == 0.0 {
        return Ok(s.out);
    }
    let tol = rel_tol * scale / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for p in 0..INITIAL_PANELS {
        total += s.refine(
            node(2 * p),
            node(2 * p + 1),
            node(2 * p + 2),
            fx[2 * p],
            fx[2 * p + 1],
            fx[2 * p + 2],
            panels[p],
            tol,
            0,
        )?;
    }
    s.out.value = total;
    Ok(s.out)
}

/// Iterated adaptive Simpson over an axis-aligned box.
pub fn integrate_box<F>(mut f: F, bounds: &[(f64, f64)], rel_tol: f64) -> Result<QuadOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut point = vec![0.0; bounds.len()];
    let inner_skips = Cell::new(0usize);
    let inner_evals = Cell::new(0usize);
    let inner_limited = Cell::new(false);
    let mut out = iterate(&mut f, bounds, &mut point, 0, rel_tol, &inner_skips, &inner_evals, &inner_limited)?;
    out.skipped += inner_skips.get();
    out.evals += inner_evals.get();
    out.depth_limited |= inner_limited.get();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn iterate<F>(
    f: &mut F,
    bounds: &[(f64, f64)],
    point: &mut Vec<f64>,
    axis: usize,
    rel_tol: f64,
    skips: &Cell<usize>,
    evals: &Cell<usize>,
    limited: &Cell<bool>,
) -> Result<QuadOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let (lo, hi) = bounds[axis];
    if axis + 1 == bounds.len() {
        return adaptive_simpson(
            |t| {
                point[axis] = t;
                f(point)
            },
            lo,
            hi,
            rel_tol,
        );
    }
    adaptive_simpson(
        |t| {
            point[axis] = t;
            let inner = iterate(f, bounds, point, axis + 1, 0.1 * rel_tol, skips, evals, limited)?;
            skips.set(skips.get() + inner.skipped);
            evals.set(evals.get() + inner.evals);
            if inner.depth_limited {
                limited.set(true);
            }
            Ok(inner.value)
        },
        lo,
        hi,
        rel_tol,
    )
}

/// Integrate over the whole real line through `z = center + scale * tan(t)`.
pub fn integrate_real_line<F>(mut f: F, center: f64, scale: f64, rel_tol: f64) -> Result<QuadOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    let half = std::f64::consts::FRAC_PI_2;
    adaptive_simpson(
        |t| {
            let c = t.cos();
            let jac = scale / (c * c);
            let v = f(center + scale * t.tan())?;
            if v == 0.0 {
                Ok(0.0)
            } else {
                Ok(v * jac)
            }
        },
        -half,
        half,
        rel_tol,
    )
}

/// Trapezoid rule on a sampled grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Trapezoid weights such that `Σ w_i y_i` is the trapezoid integral.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (x[i + 1] - x[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::expr::ExprError;

    #[test]
    fn polynomial_is_exact() {
        let r = adaptive_simpson(|x| Ok(x * x * x - 2.0 * x), -1.0, 3.0, 1e-10).unwrap();
        assert!((r.value - 12.0).abs() < 1e-12);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn kinked_density_to_relative_1e8() {
        // ∫_{-3}^{3} |u| e^{-u^2} du = 1 - e^{-9}
        let r = adaptive_simpson(|u: f64| Ok(u.abs() * (-u * u).exp()), -3.0, 3.0, 1e-8).unwrap();
        let exact = 1.0 - (-9.0f64).exp();
        assert!(((r.value - exact) / exact).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn narrow_peak_is_found() {
        let r = adaptive_simpson(
            |x: f64| Ok((-(x - 7.3).powi(2) / (2.0 * 0.3f64.powi(2))).exp()),
            -50.0,
            50.0,
            1e-8,
        )
        .unwrap();
        let exact = 0.3 * (2.0 * std::f64::consts::PI).sqrt();
        assert!(((r.value - exact) / exact).abs() < 1e-7, "{}", r.value);
    }

    #[test]
    fn domain_points_are_skipped_and_counted() {
        let r = adaptive_simpson(
            |x: f64| {
                if x == 0.0 {
                    Err(Error::Expr(ExprError::Domain {
                        op: "division by zero",
                        point: vec![x],
                    }))
                } else {
                    Ok(1.0)
                }
            },
            -1.0,
            1.0,
            1e-8,
        )
        .unwrap();
        assert!(r.skipped >= 1);
        assert!((r.value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn other_errors_propagate() {
        let r = adaptive_simpson(|_| Err(Error::Invalid("boom".into())), 0.0, 1.0, 1e-8);
        assert!(r.is_err());
    }

    #[test]
    fn real_line_gaussian_and_cauchy() {
        let g = integrate_real_line(
            |z: f64| Ok((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()),
            0.0,
            1.0,
            1e-10,
        )
        .unwrap();
        assert!((g.value - 1.0).abs() < 1e-9);
        let c = integrate_real_line(
            |z: f64| Ok(1.0 / (std::f64::consts::PI * (1.0 + z * z))),
            0.0,
            1.0,
            1e-10,
        )
        .unwrap();
        assert!((c.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn box_integral_of_product_gaussian() {
        let r = integrate_box(
            |x| Ok((-0.5 * (x[0] * x[0] + x[1] * x[1])).exp() / (2.0 * std::f64::consts::PI)),
            &[(-1.0, 1.0), (0.0, 2.0)],
            1e-9,
        )
        .unwrap();
        let erf = libm::erf;
        let exact = erf(1.0 / 2f64.sqrt()) * 0.5 * erf(2.0 / 2f64.sqrt());
        assert!((r.value - exact).abs() < 1e-9, "{} vs {exact}", r.value);
    }

    #[test]
    fn trapezoid_weights_agree_with_rule() {
        let x = [0.0, 0.5, 1.5, 2.0];
        let y = [1.0, 2.0, -1.0, 4.0];
        let w = trapezoid_weights(&x);
        let s: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((s - trapezoid(&x, &y)).abs() < 1e-15);
    }
}
