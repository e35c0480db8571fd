//! Seeded samplers for the Monte Carlo estimators.
//!
//! Work is split over a fixed number of independent ChaCha substreams keyed by
//! `(seed, key, stream)`. The partition never depends on the number of worker
//! threads, and callers reduce per-stream results in stream order, so outputs
//! are bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;

/// Number of substreams every Monte Carlo run is partitioned into.
pub const STREAMS: usize = 64;

/// Rejection attempts allowed for a single accepted draw.
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn standard_normal() -> Self {
        Marginal::Normal { mean: 0.0, sd: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            Marginal::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            _ => Err(Error::Sampler(format!("invalid marginal {self:?}"))),
        }
    }

    /// Inverse CDF at `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                mean - sd * std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
            }
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * p,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Marginal::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Marginal::Normal { sd, .. } => sd,
            Marginal::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// How to draw from the measure whose density the problem declares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerSpec {
    /// Independent coordinates, each through its inverse CDF.
    Product { marginals: Vec<Marginal> },
    /// Uniform proposals in a box, accepted against the density with a declared bound.
    Rejection {
        #[serde(rename = "box")]
        bounds: Vec<(f64, f64)>,
        bound: f64,
    },
}

impl SamplerSpec {
    pub fn standard_normal(dim: usize) -> Self {
        SamplerSpec::Product {
            marginals: vec![Marginal::standard_normal(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SamplerSpec::Product { marginals } => marginals.len(),
            SamplerSpec::Rejection { bounds, .. } => bounds.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Sampler(format!(
                "sampler has dimension {}, problem has {dim}",
                self.dim()
            )));
        }
        match self {
            SamplerSpec::Product { marginals } => marginals.iter().try_for_each(Marginal::validate),
            SamplerSpec::Rejection { bounds, bound } => {
                if !(bound.is_finite() && *bound > 0.0) {
                    return Err(Error::Sampler(format!("invalid density bound {bound}")));
                }
                if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                    return Err(Error::Sampler("rejection box must be finite and non-empty".into()));
                }
                Ok(())
            }
        }
    }

    /// Draw one point into `out`.
    pub fn draw<R: Rng>(&self, density: &Expression, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            SamplerSpec::Product { marginals } => {
                for (o, m) in out.iter_mut().zip(marginals) {
                    *o = m.sample(rng);
                }
                Ok(())
            }
            SamplerSpec::Rejection { bounds, bound } => {
                for _ in 0..MAX_REJECTIONS {
                    for (o, (lo, hi)) in out.iter_mut().zip(bounds) {
                        *o = lo + (hi - lo) * rng.random::<f64>();
                    }
                    let f = match density.eval(out) {
                        Ok(f) => f,
                        Err(e) if e.is_domain() => 0.0,
                        Err(e) => return Err(e.into()),
                    };
                    if f > *bound {
                        return Err(Error::Sampler(format!(
                            "density {f} exceeds the declared bound {bound} at {out:?}"
                        )));
                    }
                    if rng.random::<f64>() * bound < f {
                        return Ok(());
                    }
                }
                Err(Error::Sampler(format!(
                    "no acceptance in {MAX_REJECTIONS} proposals"
                )))
            }
        }
    }

    /// Cheap consistency check between the sampler and the declared density.
    ///
    /// Product samplers are compared pointwise with the density; for rejection
    /// samplers the acceptance rate gives an estimate of the density's mass in
    /// the box. Returns a warning when the two disagree.
    pub fn spot_check(&self, density: &Expression, seed: u64) -> Result<Option<String>> {
        let mut rng = stream_rng(seed, u64::MAX, 0);
        let mut x = vec![0.0; self.dim()];
        match self {
            SamplerSpec::Product { marginals } => {
                for _ in 0..16 {
                    self.draw(density, &mut rng, &mut x)?;
                    let want: f64 = marginals.iter().zip(&x).map(|(m, &xi)| m.pdf(xi)).product();
                    let got = match density.eval(&x) {
                        Ok(v) => v,
                        Err(e) if e.is_domain() => continue,
                        Err(e) => return Err(e.into()),
                    };
                    if (got - want).abs() > 1e-6 * want.max(1e-300) {
                        return Ok(Some(format!(
                            "sampler and density disagree at {x:?}: density {got:.6e}, sampler pdf {want:.6e}"
                        )));
                    }
                }
                Ok(None)
            }
            SamplerSpec::Rejection { bounds, bound } => {
                let n = 20_000usize;
                let vol: f64 = bounds.iter().map(|(lo, hi)| hi - lo).product();
                let mut accepted = 0usize;
                for _ in 0..n {
                    for (o, (lo, hi)) in x.iter_mut().zip(bounds) {
                        *o = lo + (hi - lo) * rng.random::<f64>();
                    }
                    let f = density.eval(&x).unwrap_or(0.0);
                    if rng.random::<f64>() * bound < f {
                        accepted += 1;
                    }
                }
                let p = accepted as f64 / n as f64;
                let mass = p * bound * vol;
                let se = (p * (1.0 - p) / n as f64).sqrt() * bound * vol;
                if (mass - 1.0).abs() > 5.0 * se + 0.01 {
                    Ok(Some(format!(
                        "density mass in the rejection box estimated at {mass:.4} (expected 1)"
                    )))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

/// Independent generator for `(seed, key, stream)`.
pub fn stream_rng(seed: u64, key: u64, stream: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(stream);
    rng
}

/// Number of draws assigned to `stream` when `total` draws are split over [`STREAMS`].
pub fn stream_share(total: usize, stream: usize) -> usize {
    total / STREAMS + usize::from(stream < total % STREAMS)
}

/// Run `job(stream, share)` for every substream on `workers` threads
/// (machine parallelism when `None`). Results come back in stream order.
pub fn run_streams<T, F>(total: usize, workers: Option<usize>, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize) -> Result<T> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Sampler(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..STREAMS)
            .into_par_iter()
            .map(|s| job(s, stream_share(total, s)))
            .collect()
    })
}

/// Worker count from `SINGCOND_THREADS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("SINGCOND_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantile_matches_known_values() {
        let m = Marginal::standard_normal();
        assert!(m.quantile(0.5).abs() < 1e-15);
        assert!((m.quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        let m2 = Marginal::Normal { mean: 1.0, sd: 2.0 };
        assert!((m2.quantile(0.025) - (1.0 - 2.0 * 1.959_963_984_540_054)).abs() < 1e-11);
    }

    #[test]
    fn shares_cover_total() {
        for total in [0, 1, 63, 64, 65, 1_000_003] {
            let s: usize = (0..STREAMS).map(|i| stream_share(total, i)).sum();
            assert_eq!(s, total);
        }
    }

    #[test]
    fn streams_are_independent_of_worker_count() {
        let sums = |w| {
            run_streams(10_000, Some(w), |s, n| {
                let mut rng = stream_rng(7, 1, s as u64);
                Ok((0..n).map(|_| rng.random::<f64>()).sum::<f64>())
            })
            .unwrap()
        };
        let one = sums(1);
        let four = sums(4);
        assert_eq!(one.len(), STREAMS);
        assert!(one.iter().zip(&four).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejection_sampler_detects_bound_violation() {
        let d = Expression::parse("exp(-(x1^2+x2^2)/2)/(2*pi)").unwrap();
        let spec = SamplerSpec::Rejection {
            bounds: vec![(-6.0, 6.0), (-6.0, 6.0)],
            bound: 0.01,
        };
        let mut rng = stream_rng(1, 0, 0);
        let mut x = [0.0; 2];
        let mut hit = false;
        for _ in 0..1000 {
            if spec.draw(&d, &mut rng, &mut x).is_err() {
                hit = true;
                break;
            }
        }
        assert!(hit);
        let ok = SamplerSpec::Rejection {
            bounds: vec![(-6.0, 6.0), (-6.0, 6.0)],
            bound: 0.16,
        };
        assert_eq!(ok.spot_check(&d, 3).unwrap(), None);
    }

    #[test]
    fn product_spot_check_flags_mismatch() {
        let spec = SamplerSpec::standard_normal(2);
        let good = Expression::parse("exp(-(x1^2+x2^2)/2)/(2*pi)").unwrap();
        let bad = Expression::parse("exp(-(x1^2+x2^2))/pi").unwrap();
        assert_eq!(spec.spot_check(&good, 1).unwrap(), None);
        assert!(spec.spot_check(&bad, 1).unwrap().is_some());
    }
}
