//! The extension counterexample on `[0, 1]` with Lebesgue measure `p`.
//!
//! Take `𝒜 = {∅, {0}, (0,1], [0,1]}` and `q_𝒜({0}) = ρ`. Every version of
//! the conditional expectation `E(f | 𝒜) = C·χ_{0} + ∫ f·χ_{(0,1]}` is valid
//! because `{0}` is `p`-null, and the induced extension gives
//! `q(A) = ρC` and `q(Aᶜ) = ρC + 1 − ρ` for `A = {0}`. Agreeing with `q_𝒜`
//! needs `C = 1` and `C = 0` at once, which is impossible unless `ρ = 0`.

use serde::{Deserialize, Serialize};

/// Tolerance for the consistency equations.
pub const CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionInstance {
    pub rho: f64,
    pub c: f64,
}

impl ExtensionInstance {
    /// `None` unless `rho ∈ [0, 1]` and `c` is finite.
    pub fn new(rho: f64, c: f64) -> Option<Self> {
        ((0.0..=1.0).contains(&rho) && c.is_finite()).then_some(ExtensionInstance { rho, c })
    }

    /// Both `q(A) = ρ` and `q(Aᶜ) = 1 − ρ` hold.
    pub fn is_consistent(&self) -> bool {
        let (qa, qac) = extension_values(*self);
        (qa - self.rho).abs() <= CONSISTENCY_TOL && (qac - (1.0 - self.rho)).abs() <= CONSISTENCY_TOL
    }

    /// `|q(A) − ρ| + |q(Aᶜ) − (1 − ρ)|`.
    pub fn violation(&self) -> f64 {
        let (qa, qac) = extension_values(*self);
        (qa - self.rho).abs() + (qac - (1.0 - self.rho)).abs()
    }
}

/// `(q(A), q(Aᶜ)) = (ρC, ρC + 1 − ρ)`.
pub fn extension_values(inst: ExtensionInstance) -> (f64, f64) {
    let qa = inst.rho * inst.c;
    (qa, qa + (1.0 - inst.rho))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub pairs: usize,
    /// Consistent pairs with `ρ > 0`; expected to be empty.
    pub counterexamples: Vec<(f64, f64)>,
    /// Pairs with `ρ = 0`, and how many of them were consistent.
    pub zero_rho_pairs: usize,
    pub zero_rho_consistent: usize,
    /// Smallest violation seen over pairs with `ρ > 0`.
    pub min_positive_violation: Option<f64>,
}

impl SweepReport {
    /// No counterexample, and every `ρ = 0` pair consistent.
    pub fn confirms(&self) -> bool {
        self.counterexamples.is_empty() && self.zero_rho_consistent == self.zero_rho_pairs
    }
}

/// Evaluate the consistency equations on every `(ρ, C)` pair.
pub fn consistency_sweep(rhos: &[f64], cs: &[f64]) -> SweepReport {
    let mut rep = SweepReport::default();
    for &rho in rhos {
        for &c in cs {
            let Some(inst) = ExtensionInstance::new(rho, c) else { continue };
            rep.pairs += 1;
            let ok = inst.is_consistent();
            if rho == 0.0 {
                rep.zero_rho_pairs += 1;
                rep.zero_rho_consistent += usize::from(ok);
            } else {
                if ok {
                    rep.counterexamples.push((rho, c));
                }
                let v = inst.violation();
                rep.min_positive_violation = Some(rep.min_positive_violation.map_or(v, |m: f64| m.min(v)));
            }
        }
    }
    rep
}

/// `ρ ∈ {0, 1/K, …, 1}`.
pub fn rho_grid(steps: usize) -> Vec<f64> {
    let k = steps.max(1);
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

/// `C ∈ {−10, −9.99, …, 10}`.
pub fn default_c_grid() -> Vec<f64> {
    (-1000..=1000).map(|j| j as f64 / 100.0).collect()
}
