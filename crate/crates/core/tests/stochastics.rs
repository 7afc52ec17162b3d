use proptest::prelude::*;
use sentinel_core::stochastics::{derive_stream, sample, DistributionSpec};

fn families() -> Vec<DistributionSpec> {
    vec![
        DistributionSpec::Normal { mean: 3.0, sd: 1.0 },
        DistributionSpec::Gamma { shape: 7.86, rate: 0.032 },
        DistributionSpec::Poisson { rate: 4.5 },
        DistributionSpec::Exponential { rate: 1.0 / 7.0 },
        DistributionSpec::Binomial { n: 40, p: 0.3 },
        DistributionSpec::Categorical { probs: vec![0.23, 0.35, 0.17, 0.16, 0.09] },
        DistributionSpec::Uniform { lo: -2.0, hi: 5.0 },
    ]
}

#[test]
fn every_family_mean_within_three_standard_errors() {
    let n = 100_000;
    for (i, spec) in families().into_iter().enumerate() {
        let mut stream = derive_stream(656, &format!("moments/{i}"));
        let draws = sample(&spec, n, &mut stream).unwrap();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (spec.variance() / n as f64).sqrt();
        assert!((mean - spec.mean()).abs() <= 3.0 * se, "{spec:?}: mean {mean} vs {} (se {se})", spec.mean());
    }
}

#[test]
fn analytic_moments_match_closed_forms() {
    let g = DistributionSpec::Gamma { shape: 7.86, rate: 0.032 };
    assert!((g.mean() - 245.625).abs() < 1e-9);
    assert!((g.variance() - 7.86 / 0.032f64.powi(2)).abs() < 1e-6);
    let c = DistributionSpec::Categorical { probs: vec![0.5, 0.5] };
    assert_eq!(c.mean(), 0.5);
    assert_eq!(c.variance(), 0.25);
    let u = DistributionSpec::Uniform { lo: 0.0, hi: 6.0 };
    assert_eq!(u.variance(), 3.0);
}

#[test]
fn child_equals_slash_joined_label() {
    let mut a = derive_stream(656, "epidemic").child("rep-1");
    let mut b = derive_stream(656, "epidemic/rep-1");
    for _ in 0..1000 {
        assert_eq!(a.uniform01().to_bits(), b.uniform01().to_bits());
    }
}

#[test]
fn sibling_streams_are_uncorrelated() {
    let n = 20_000;
    let mut a = derive_stream(656, "epidemic/rep-1");
    let mut b = derive_stream(656, "epidemic/rep-2");
    let xs: Vec<f64> = (0..n).map(|_| a.uniform01() - 0.5).collect();
    let ys: Vec<f64> = (0..n).map(|_| b.uniform01() - 0.5).collect();
    let cov = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    let corr = cov / (1.0 / 12.0);
    // Null sd of the sample correlation is 1/sqrt(n).
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
}

fn any_family() -> impl Strategy<Value = DistributionSpec> {
    prop_oneof![
        (-50.0..50.0f64, 0.0..10.0f64).prop_map(|(mean, sd)| DistributionSpec::Normal { mean, sd }),
        (0.1..20.0f64, 0.01..5.0f64).prop_map(|(shape, rate)| DistributionSpec::Gamma { shape, rate }),
        (0.0..50.0f64).prop_map(|rate| DistributionSpec::Poisson { rate }),
        (0.01..10.0f64).prop_map(|rate| DistributionSpec::Exponential { rate }),
        (0u64..200, 0.0..=1.0f64).prop_map(|(n, p)| DistributionSpec::Binomial { n, p }),
        prop::collection::vec(0.0..1.0f64, 1..6).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| DistributionSpec::Categorical { probs: w.iter().map(|x| x / s).collect() })
        }),
        (-10.0..10.0f64, 0.0..10.0f64).prop_map(|(lo, w)| DistributionSpec::Uniform { lo, hi: lo + w }),
    ]
}

fn in_support(spec: &DistributionSpec, x: f64) -> bool {
    match spec {
        DistributionSpec::Normal { .. } => x.is_finite(),
        // Tiny shapes can underflow to 0.0 in f64.
        DistributionSpec::Gamma { .. } => x >= 0.0 && x.is_finite(),
        DistributionSpec::Poisson { .. } => x >= 0.0 && x.fract() == 0.0,
        DistributionSpec::Exponential { .. } => x >= 0.0,
        DistributionSpec::Binomial { n, .. } => x >= 0.0 && x <= *n as f64 && x.fract() == 0.0,
        DistributionSpec::Categorical { probs } => {
            x.fract() == 0.0 && x >= 0.0 && (x as usize) < probs.len() && probs[x as usize] > 0.0
        }
        DistributionSpec::Uniform { lo, hi } => x >= *lo && (x < *hi || lo == hi),
    }
}

proptest! {
    #[test]
    fn draws_stay_in_support(spec in any_family(), seed in any::<u64>()) {
        spec.validate().unwrap();
        let draws = sample(&spec, 200, &mut derive_stream(seed, "support")).unwrap();
        for x in draws {
            prop_assert!(in_support(&spec, x), "{:?} produced {}", spec, x);
        }
    }

    #[test]
    fn replay_reproduces_any_prefix(spec in any_family(), seed in any::<u64>(), label in "[a-z/0-9-]{0,24}", k in 1usize..300) {
        let full = sample(&spec, 300, &mut derive_stream(seed, &label)).unwrap();
        let prefix = sample(&spec, k, &mut derive_stream(seed, &label)).unwrap();
        prop_assert_eq!(
            prefix.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            full[..k].iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn invalid_probability_vectors_are_rejected(w in prop::collection::vec(0.0..1.0f64, 2..6)) {
        let s: f64 = w.iter().sum();
        prop_assume!((s - 1.0).abs() > 1e-6);
        let spec = DistributionSpec::Categorical { probs: w };
        prop_assert!(spec.validate().is_err());
        prop_assert!(sample(&spec, 1, &mut derive_stream(1, "x")).is_err());
    }
}
