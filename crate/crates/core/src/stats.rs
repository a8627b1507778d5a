//! Seeded Monte Carlo and exact-enumeration drivers.
//!
//! Work is split into fixed-size chunks and chunk `c` always draws from
//! stream `c` of the master seed, so results are independent of the number
//! of worker threads. Partial sums are combined in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_into, Instance, OutcomeSpace, Profile};

pub type Rng = ChaCha8Rng;

/// Samples per chunk.
pub const CHUNK: u64 = 4096;

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub samples: u64,
    pub exact: bool,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, half_width: 0.0, samples: 0, exact: true }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn std_err(&self) -> f64 {
        self.half_width / Z95
    }

    fn from_sums(sum: f64, sumsq: f64, n: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Estimate { mean, half_width: Z95 * (var / nf).sqrt(), samples: n, exact: false }
    }
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Order-preserving map over `0..n`, parallel when the feature is on.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Monte Carlo means of a `dim`-dimensional statistic. `f` fills the output
/// buffer for one draw.
pub fn monte_carlo<F>(samples: u64, seed: u64, dim: usize, f: F) -> Vec<Estimate>
where
    F: Fn(&mut Rng, &mut [f64]) + Sync + Send,
{
    assert!(samples > 0, "samples must be positive");
    let chunks = samples.div_ceil(CHUNK);
    let partial = par_map(chunks as usize, |c| {
        let mut rng = rng_for(seed, c as u64);
        let len = CHUNK.min(samples - c as u64 * CHUNK);
        let mut sums = vec![0.0; 2 * dim];
        let mut buf = vec![0.0; dim];
        for _ in 0..len {
            f(&mut rng, &mut buf);
            for (d, v) in buf.iter().enumerate() {
                sums[2 * d] += v;
                sums[2 * d + 1] += v * v;
            }
        }
        sums
    });
    let mut total = vec![0.0; 2 * dim];
    for s in partial {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    (0..dim).map(|d| Estimate::from_sums(total[2 * d], total[2 * d + 1], samples)).collect()
}

/// Exact weighted sums over `0..count`. `f` fills the buffer for one index
/// and returns its probability weight.
pub fn exact_sum<F>(count: u64, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(u64, &mut [f64]) -> f64 + Sync + Send,
{
    let chunks = count.div_ceil(CHUNK);
    let partial = par_map(chunks as usize, |c| {
        let start = c as u64 * CHUNK;
        let end = (start + CHUNK).min(count);
        let mut sums = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        for idx in start..end {
            let w = f(idx, &mut buf);
            for (s, v) in sums.iter_mut().zip(&buf) {
                *s += w * v;
            }
        }
        sums
    });
    let mut total = vec![0.0; dim];
    for s in partial {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    total
}

/// Exact enumeration or seeded sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    Sampled { samples: u64, seed: u64 },
}

impl EvalMode {
    /// Exact when the profile count is at most `limit`, else sampled.
    pub fn auto(profiles: f64, limit: f64, samples: u64, seed: u64) -> Self {
        if profiles <= limit {
            EvalMode::Exact
        } else {
            EvalMode::Sampled { samples, seed }
        }
    }
}

/// Profile count above which [`EvalMode::auto`] callers switch to sampling.
pub const EXACT_PROFILE_LIMIT: f64 = 1e6;

/// Hard cap for explicitly requested exact enumeration.
pub const EXACT_HARD_LIMIT: f64 = 5e7;

/// Expectation of a statistic of the realization, over `space` when exact.
pub fn expect_over_profiles<F>(
    inst: &Instance,
    space: &OutcomeSpace,
    mode: EvalMode,
    dim: usize,
    f: F,
) -> Result<Vec<Estimate>>
where
    F: Fn(&Profile, &[usize], &mut [f64]) + Sync + Send,
{
    match mode {
        EvalMode::Exact => {
            let size = space.size();
            if size > EXACT_HARD_LIMIT {
                return Err(Error::TooLarge { what: "exact profile enumeration", size, limit: EXACT_HARD_LIMIT });
            }
            let sums = exact_sum(size as u64, dim, |idx, out| {
                let mut profile = space.empty_profile();
                let mut digits = vec![0; space.n()];
                let w = space.fill(idx, &mut profile, &mut digits);
                f(&profile, &digits, out);
                w
            });
            Ok(sums.into_iter().map(Estimate::exact).collect())
        }
        EvalMode::Sampled { samples, seed } => Ok(monte_carlo(samples, seed, dim, |rng, out| {
            let mut profile = space.empty_profile();
            sample_into(inst, rng, &mut profile);
            let digits: Vec<usize> =
                (0..space.n()).map(|i| space.locate(i, profile.atom[i], profile.tag[i])).collect();
            f(&profile, &digits, out);
        })),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    num / den
}
