//! Score normalisation and aggregate statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map sending `random_ref` to 0 and `upper_ref` to 1.
pub fn normalized_score(raw: f64, random_ref: f64, upper_ref: f64) -> Result<f64> {
    if upper_ref == random_ref {
        return Err(Error::DegenerateReference(random_ref));
    }
    Ok((raw - random_ref) / (upper_ref - random_ref))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("mean of an empty list"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Interquartile mean: drop `floor(n / 4)` values from each end of the
/// sorted list and average the rest.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("IQM of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    mean(&v[cut..v.len() - cut])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Iqm,
}

impl Statistic {
    pub fn apply(self, values: &[f64]) -> Result<f64> {
        match self {
            Statistic::Mean => mean(values),
            Statistic::Iqm => iqm(values),
        }
    }
}

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval of `statistic` at confidence `level`.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
    statistic: Statistic,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::contract("bootstrap of an empty list"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("confidence level must be in (0, 1), got {level}")));
    }
    if resamples < 100 {
        return Err(Error::config("at least 100 bootstrap resamples are required"));
    }
    let n = values.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..n)];
        }
        stats.push(statistic.apply(&buf)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&stats, tail), quantile(&stats, 1.0 - tail)))
}

/// Trailing moving average; the first points average the available prefix.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::config("smoothing window must be at least 1"));
    }
    Ok((0..series.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            series[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64
        })
        .collect())
}

/// Per-seed mean of the last `last_k` evaluation values, in seed order.
pub fn seed_finals(per_seed: &[Vec<f64>], last_k: usize) -> Result<Vec<f64>> {
    if per_seed.is_empty() {
        return Err(Error::contract("no seeds to score"));
    }
    if last_k == 0 {
        return Err(Error::config("final window must be at least 1"));
    }
    per_seed
        .iter()
        .map(|s| {
            if s.len() < last_k {
                return Err(Error::contract(format!("need {last_k} evaluation points, found {}", s.len())));
            }
            mean(&s[s.len() - last_k..])
        })
        .collect()
}

/// Mean over the last `last_k` evaluations of each seed, then over seeds.
pub fn final_score(per_seed: &[Vec<f64>], last_k: usize) -> Result<f64> {
    mean(&seed_finals(per_seed, last_k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalized_score(50.0, 50.0, 250.0).unwrap(), 0.0);
        assert_eq!(normalized_score(250.0, 50.0, 250.0).unwrap(), 1.0);
        assert_eq!(normalized_score(150.0, 50.0, 250.0).unwrap(), 0.5);
        assert!(matches!(normalized_score(1.0, 2.0, 2.0), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn iqm_values() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 4.5);
        assert_eq!(iqm(&[3.0; 7]).unwrap(), 3.0);
        assert_eq!(iqm(&[-2.5]).unwrap(), -2.5);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn smoothing() {
        let s = [1.0, 5.0, -2.0, 4.0];
        assert_eq!(smooth(&s, 1).unwrap(), s.to_vec());
        assert_eq!(smooth(&[2.0; 6], 3).unwrap(), vec![2.0; 6]);
        assert_eq!(*smooth(&[0.0, 0.0, 0.0, 0.0, 10.0], 5).unwrap().last().unwrap(), 2.0);
        assert_eq!(smooth(&[0.0, 4.0], 5).unwrap(), vec![0.0, 2.0]);
        assert!(smooth(&s, 0).is_err());
    }

    #[test]
    fn final_scores() {
        assert_eq!(final_score(&[vec![7.0; 10]], 10).unwrap(), 7.0);
        let ramp: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(final_score(&[ramp.clone()], 10).unwrap(), 4.5);
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![0.0, 6.0, 2.0, 9.0];
        let flat = mean(&[3.0, 4.0, 2.0, 9.0]).unwrap();
        assert_eq!(final_score(&[a, b], 2).unwrap(), flat);
        assert!(final_score(&[ramp], 11).is_err());
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let mut r = stream(0, Stream::Eval);
        assert_eq!(bootstrap_ci(&[4.0; 9], 500, 0.95, &mut r, Statistic::Iqm).unwrap(), (4.0, 4.0));
        let v = [1.0, 3.0, 2.0, 8.0, 5.0];
        let a = bootstrap_ci(&v, 1000, 0.95, &mut stream(3, Stream::Eval), Statistic::Mean).unwrap();
        let b = bootstrap_ci(&v, 1000, 0.95, &mut stream(3, Stream::Eval), Statistic::Mean).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= a.1);
        assert!(bootstrap_ci(&v, 10, 0.95, &mut r, Statistic::Mean).is_err());
        assert!(bootstrap_ci(&v, 100, 1.0, &mut r, Statistic::Mean).is_err());
    }

    #[test]
    fn bootstrap_coverage() {
        let mut data_rng = stream(11, Stream::Env);
        let mut boot_rng = stream(12, Stream::Eval);
        let trials = 1000;
        let mut covered = 0;
        for _ in 0..trials {
            let sample: Vec<f64> = (0..30).map(|_| data_rng.sample(StandardNormal)).collect();
            let (lo, hi) = bootstrap_ci(&sample, DEFAULT_RESAMPLES, 0.95, &mut boot_rng, Statistic::Mean).unwrap();
            covered += usize::from(lo <= 0.0 && 0.0 <= hi);
        }
        // The percentile interval is x̄ ± z·s_n/√n with the plug-in deviation
        // s_n, so its coverage is P(|t_29| ≤ 1.96·√(29/30)) = 0.9362, not 0.95.
        let p = 0.9362;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!((covered as f64 - p * trials as f64).abs() < 3.0 * sigma, "{covered}");
    }

    proptest! {
        #[test]
        fn iqm_bounded_and_permutation_invariant(v in prop::collection::vec(-1e3f64..1e3, 1..40), rot in 0usize..40) {
            let m = iqm(&v).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            let mut p = v.clone();
            p.rotate_left(rot % v.len());
            p.reverse();
            prop_assert_eq!(iqm(&p).unwrap(), m);
        }

        #[test]
        fn iqm_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..40), idx in 0usize..40, bump in 0.0f64..100.0) {
            let mut w = v.clone();
            let i = idx % v.len();
            w[i] += bump;
            prop_assert!(iqm(&w).unwrap() >= iqm(&v).unwrap() - 1e-9);
        }

        #[test]
        fn smooth_commutes_with_shift(v in prop::collection::vec(-1e3f64..1e3, 0..30), c in -1e3f64..1e3, w in 1usize..8) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = smooth(&shifted, w).unwrap();
            let b: Vec<f64> = smooth(&v, w).unwrap().iter().map(|x| x + c).collect();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn normalization_is_affine(raw in -1e3f64..1e3, r in -1e3f64..1e3, gap in 1e-2f64..1e3, a in 1e-2f64..10.0, b in -1e3f64..1e3, neg in any::<bool>()) {
            let a = if neg { -a } else { a };
            let u = r + gap;
            let base = normalized_score(raw, r, u).unwrap();
            let moved = normalized_score(a * raw + b, a * r + b, a * u + b).unwrap();
            prop_assert!((base - moved).abs() < 1e-6 * (1.0 + base.abs()));
        }
    }
}
