use clipbound::hpo::{sample_tnb, TnbParams};
use clipbound::numkit::poisson_subsample;
use clipbound::Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

/// Pearson statistic over bins whose expected count is at least 5, with the
/// remaining mass pooled into one tail bin.
fn pearson(observed: &[u64], expected: &[f64], total: f64) -> (f64, usize) {
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut rest_obs, mut rest_exp) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e >= 5.0 {
            stat += (o as f64 - e).powi(2) / e;
            bins += 1;
        } else {
            rest_obs += o as f64;
            rest_exp += e;
        }
    }
    let tail_obs = total - observed.iter().sum::<u64>() as f64 + rest_obs;
    let tail_exp = total - expected.iter().sum::<f64>() + rest_exp;
    if tail_exp > 0.0 {
        stat += (tail_obs - tail_exp).powi(2) / tail_exp;
        bins += 1;
    }
    (stat, bins)
}

fn critical(df: usize) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99)
}

#[test]
fn poisson_batch_sizes_are_binomial() {
    let (n, q, draws) = (200usize, 0.05, 20_000usize);
    let mut rng = Rng::new(11);
    let mut counts = vec![0u64; n + 1];
    for _ in 0..draws {
        counts[poisson_subsample(n, q, &mut rng).unwrap().len()] += 1;
    }
    let binom = Binomial::new(q, n as u64).unwrap();
    let expected: Vec<f64> = (0..=n).map(|k| draws as f64 * binom.pmf(k as u64)).collect();
    let (stat, bins) = pearson(&counts, &expected, draws as f64);
    assert!(stat < critical(bins - 1), "chi2 {stat} with {bins} bins");
}

#[test]
fn poisson_inclusion_is_uniform_over_indices() {
    let (n, q, draws) = (50usize, 0.2, 10_000usize);
    let mut rng = Rng::new(12);
    let mut hits = vec![0u64; n];
    for _ in 0..draws {
        for i in poisson_subsample(n, q, &mut rng).unwrap() {
            hits[i] += 1;
        }
    }
    let expected = vec![draws as f64 * q; n];
    let stat: f64 = hits.iter().zip(&expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    // each index is an independent binomial; dividing by (1 - q) makes the sum chi-square with n dof
    assert!(stat / (1.0 - q) < critical(n), "chi2 {stat}");
}

#[test]
fn tnb_sampler_passes_goodness_of_fit() {
    for (shape, gamma) in [(1.0, 0.1), (1.0, 0.5), (0.0, 0.5), (2.0, 0.3)] {
        let tnb = TnbParams::new(shape, gamma).unwrap();
        let draws = 100_000usize;
        let mut rng = Rng::new(13);
        let mut counts = vec![0u64; tnb.support_len() + 1];
        for _ in 0..draws {
            counts[sample_tnb(&tnb, &mut rng)] += 1;
        }
        let expected: Vec<f64> = (0..counts.len()).map(|k| draws as f64 * tnb.pmf(k)).collect();
        let (stat, bins) = pearson(&counts, &expected, draws as f64);
        assert!(stat < critical(bins - 1), "({shape}, {gamma}): chi2 {stat} with {bins} bins");
    }
}
