//! Convergence diagnostics: rank-normalized split R-hat, bulk/tail effective
//! sample sizes with Geyer truncation, and Monte Carlo standard errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Reason a diagnostic could not be computed.
pub type Undefined = &'static str;

/// Splits every chain in half (middle draw dropped when odd).
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn validate(chains: &[Vec<f64>]) -> Result<(), Undefined> {
    if chains.len() < 2 {
        return Err("need at least 2 chains");
    }
    if chains.iter().any(|c| c.len() < 4) {
        return Err("need at least 4 draws per chain");
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite draws");
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Err("constant draws");
    }
    Ok(())
}

/// Pooled ranks (average over ties) mapped through the normal quantile
/// function: `z = Phi^-1((rank - 3/8) / (S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let lens: Vec<usize> = chains.iter().map(|c| c.len()).collect();
    let total: usize = lens.iter().sum();
    let mut indexed: Vec<(f64, usize)> = chains
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[indexed[k].1] = avg;
        }
        i = j + 1;
    }
    let std = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    let z: Vec<f64> = ranks
        .iter()
        .map(|&r| std.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    let mut out = Vec::with_capacity(chains.len());
    let mut offset = 0;
    for len in lens {
        out.push(z[offset..offset + len].to_vec());
        offset += len;
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Classic potential scale reduction on already-prepared chains.
fn basic_rhat(chains: &[Vec<f64>]) -> Result<f64, Undefined> {
    let n = chains.iter().map(|c| c.len()).min().unwrap() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| sample_variance(c)).collect();
    let w = mean(&vars);
    if !(w > 0.0) {
        return Err("constant draws");
    }
    let b_over_n = sample_variance(&means);
    let var_hat = (n - 1.0) / n * w + b_over_n;
    Ok((var_hat / w).sqrt())
}

/// Rank-normalized split R-hat: the max of the bulk statistic and the
/// folded (median-absolute-deviation) statistic.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64, Undefined> {
    validate(chains)?;
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split))?;
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|&v| (v - med).abs()).collect())
        .collect();
    let fold = match basic_rhat(&rank_normalize(&folded)) {
        Ok(v) => v,
        // a symmetric two-point distribution can fold to a constant
        Err(_) => bulk,
    };
    Ok(bulk.max(fold))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Type-7 (linear interpolation) quantile of a sorted slice.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted_quantile(&s, p)
}

/// Multi-chain effective sample size with Geyer initial-monotone truncation
/// (the Stan estimator). Expects split chains of equal length.
fn combined_ess(chains: &[Vec<f64>]) -> Result<f64, Undefined> {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap();
    if n < 4 {
        return Err("need at least 4 draws per chain");
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    // per-chain autocovariance at a given lag (biased, divided by n)
    let acov = |c: usize, lag: usize| -> f64 {
        let x = &chains[c][..n];
        let mu = means[c];
        (0..n - lag)
            .map(|t| (x[t] - mu) * (x[t + lag] - mu))
            .sum::<f64>()
            / n as f64
    };
    let chain_vars: Vec<f64> = (0..m).map(|c| acov(c, 0) * n as f64 / (n as f64 - 1.0)).collect();
    let mean_var = mean(&chain_vars);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return Err("constant draws");
    }

    let mut rho_hat: Vec<f64> = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mean_acov = |lag: usize| (0..m).map(|c| acov(c, lag)).sum::<f64>() / m as f64;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho_hat[1] = rho_odd;

    let mut s = 1;
    while s < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho_hat[s + 1] = rho_even;
            rho_hat[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho_hat[max_s + 1] = rho_even;
    }
    // initial monotone sequence
    let mut s = 1;
    while max_s >= 3 && s <= max_s - 3 {
        if rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s] {
            rho_hat[s + 1] = 0.5 * (rho_hat[s - 1] + rho_hat[s]);
            rho_hat[s + 2] = rho_hat[s + 1];
        }
        s += 2;
    }

    let total = (m * n) as f64;
    let mut tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    tau = tau.max(1.0 / total.log10().max(1.0)).max(1e-8);
    Ok((total / tau).min(total))
}

/// Bulk ESS, tail ESS, and the Monte Carlo SE of the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub bulk: f64,
    pub tail: f64,
    pub mcse_mean: f64,
}

pub fn ess_and_mcse(chains: &[Vec<f64>]) -> Result<EssResult, Undefined> {
    validate(chains)?;
    let split = split_chains(chains);
    let bulk = combined_ess(&rank_normalize(&split))?;

    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let mut tail = f64::INFINITY;
    let mut tail_defined = false;
    for p in [0.05, 0.95] {
        let q = quantile(&pooled, p);
        let indicators: Vec<Vec<f64>> = split
            .iter()
            .map(|c| c.iter().map(|&v| f64::from(u8::from(v <= q))).collect())
            .collect();
        let constant = {
            let first = indicators[0][0];
            indicators.iter().flatten().all(|&v| v == first)
        };
        if constant {
            continue;
        }
        if let Ok(e) = combined_ess(&indicators) {
            tail = tail.min(e);
            tail_defined = true;
        }
    }
    if !tail_defined {
        tail = bulk;
    }

    let sd = sample_variance(&pooled).sqrt();
    let mcse_mean = sd / bulk.sqrt();
    Ok(EssResult { bulk, tail, mcse_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_distr::StandardNormal;

    fn normal_chains(n_chains: usize, n: usize, means: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        (0..n_chains)
            .map(|c| {
                (0..n)
                    .map(|_| means[c] + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        let chains = normal_chains(4, 10_000, &[0.0; 4], 1);
        let r = split_rhat(&chains).unwrap();
        assert!(r < 1.01, "rhat {r}");
    }

    #[test]
    fn separated_chains_flagged() {
        // rank normalization bounds the statistic, but fully separated
        // chains still land far above the 1.1 gate
        let chains = normal_chains(2, 2_000, &[0.0, 10.0], 2);
        let r = split_rhat(&chains).unwrap();
        assert!(r > 1.5, "rhat {r}");
    }

    #[test]
    fn constant_chains_undefined() {
        let chain = vec![3.5; 100];
        let err = split_rhat(&[chain.clone(), chain]).unwrap_err();
        assert_eq!(err, "constant draws");
    }

    #[test]
    fn iid_ess_close_to_draw_count() {
        let chains = normal_chains(4, 5_000, &[0.0; 4], 3);
        let total = 20_000.0;
        let ess = ess_and_mcse(&chains).unwrap();
        assert!(
            (ess.bulk - total).abs() / total < 0.10,
            "bulk ess {} vs {total}",
            ess.bulk
        );
        assert!(ess.tail > 0.5 * total, "tail ess {}", ess.tail);
    }

    #[test]
    fn ar1_ess_matches_analytic_ratio() {
        let phi: f64 = 0.9;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let n = 40_000;
        let innov_sd = (1.0 - phi * phi).sqrt();
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        x = phi * x + innov_sd * rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let expected_ratio = (1.0 - phi) / (1.0 + phi);
        let ess = ess_and_mcse(&chains).unwrap();
        let ratio = ess.bulk / (2.0 * n as f64);
        assert!(
            (ratio - expected_ratio).abs() / expected_ratio < 0.25,
            "ratio {ratio} vs {expected_ratio}"
        );
    }

    #[test]
    fn mcse_is_calibrated() {
        // over replications, (mean - truth) / mcse should be ~standard normal
        let mut scores = Vec::new();
        for rep in 0..100 {
            let chains = normal_chains(2, 500, &[0.0, 0.0], 100 + rep);
            let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
            let est = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let e = ess_and_mcse(&chains).unwrap();
            scores.push(est / e.mcse_mean);
        }
        let sd = sample_variance(&scores).sqrt();
        assert!((0.7..1.3).contains(&sd), "score sd {sd}");
    }

    #[test]
    fn quantiles_interpolate() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }
}
