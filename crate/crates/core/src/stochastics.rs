//! Deterministic, label-addressed random streams and the distribution
//! samplers used by every simulation stage.
//!
//! A stream is identified by `(master_seed, label)`. The ChaCha key is the
//! SHA-256 digest of both, so any stream can be rebuilt from its address
//! alone without replaying siblings. Replicates, catchments and grid cells
//! each get their own label, which makes every result independent of the
//! order (or thread) in which it was produced.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DOMAIN_TAG: &[u8] = b"sentinel-stream/v1\0";

/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A seeded random stream addressed by a master seed and a textual label.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    rng: ChaCha20Rng,
}

/// Build the stream for `(master_seed, label)`. Calling this twice with the
/// same arguments yields streams that produce identical sequences.
pub fn derive_stream(master_seed: u64, label: &str) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    RngStream { master_seed, label: label.to_owned(), rng: ChaCha20Rng::from_seed(key) }
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Fresh stream at `<label>/<sub>`; does not consume from `self`.
    pub fn child(&self, sub: impl AsRef<str>) -> RngStream {
        derive_stream(self.master_seed, &format!("{}/{}", self.label, sub.as_ref()))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        if n == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        Binomial::new(n, p).expect("binomial p checked to lie in (0, 1)").sample(&mut self.rng)
    }

    /// Standard exponential scaled by `1 / rate`.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        Exp::new(rate).expect("exponential rate must be positive").sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return mean;
        }
        Normal::new(mean, sd).expect("normal sd must be finite and non-negative").sample(&mut self.rng)
    }

    /// Index drawn from a (validated) probability vector.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform01();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A parametric distribution as it appears in configuration files:
/// `{ family = "gamma", params = { shape = 7.86, rate = 0.032 } }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum DistributionSpec {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Poisson { rate: f64 },
    Exponential { rate: f64 },
    Binomial { n: u64, p: f64 },
    Categorical { probs: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, "must be finite"))
            }
        }
        match *self {
            DistributionSpec::Normal { mean, sd } => {
                finite("mean", mean)?;
                finite("sd", sd)?;
                // sd == 0 is accepted as a degenerate point mass.
                if sd < 0.0 {
                    return Err(Error::param("sd", format!("must be >= 0, got {sd}")));
                }
            }
            DistributionSpec::Gamma { shape, rate } => {
                finite("shape", shape)?;
                finite("rate", rate)?;
                if shape <= 0.0 {
                    return Err(Error::param("shape", format!("must be > 0, got {shape}")));
                }
                if rate <= 0.0 {
                    return Err(Error::param("rate", format!("must be > 0, got {rate}")));
                }
            }
            DistributionSpec::Poisson { rate } | DistributionSpec::Exponential { rate } => {
                finite("rate", rate)?;
                if rate <= 0.0 {
                    return Err(Error::param("rate", format!("must be > 0, got {rate}")));
                }
            }
            DistributionSpec::Binomial { p, .. } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::param("p", format!("must lie in [0, 1], got {p}")));
                }
            }
            DistributionSpec::Categorical { ref probs } => validate_probs("probs", probs)?,
            DistributionSpec::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if hi < lo {
                    return Err(Error::param("hi", format!("must be >= lo ({lo}), got {hi}")));
                }
            }
        }
        Ok(())
    }

    /// Analytic mean of the family.
    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { mean, .. } => mean,
            DistributionSpec::Gamma { shape, rate } => shape / rate,
            DistributionSpec::Poisson { rate } => rate,
            DistributionSpec::Exponential { rate } => 1.0 / rate,
            DistributionSpec::Binomial { n, p } => n as f64 * p,
            DistributionSpec::Categorical { ref probs } => probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum(),
            DistributionSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Analytic variance of the family.
    pub fn variance(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { sd, .. } => sd * sd,
            DistributionSpec::Gamma { shape, rate } => shape / (rate * rate),
            DistributionSpec::Poisson { rate } => rate,
            DistributionSpec::Exponential { rate } => 1.0 / (rate * rate),
            DistributionSpec::Binomial { n, p } => n as f64 * p * (1.0 - p),
            DistributionSpec::Categorical { ref probs } => {
                let m = self.mean();
                probs.iter().enumerate().map(|(i, p)| p * (i as f64 - m).powi(2)).sum()
            }
            DistributionSpec::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
        }
    }

    fn draw(&self, stream: &mut RngStream) -> f64 {
        match *self {
            DistributionSpec::Normal { mean, sd } => stream.normal(mean, sd),
            DistributionSpec::Gamma { shape, rate } => {
                Gamma::new(shape, 1.0 / rate).expect("validated gamma").sample(stream)
            }
            DistributionSpec::Poisson { rate } => Poisson::new(rate).expect("validated poisson").sample(stream),
            DistributionSpec::Exponential { rate } => stream.exponential(rate),
            DistributionSpec::Binomial { n, p } => stream.binomial(n, p) as f64,
            DistributionSpec::Categorical { ref probs } => stream.categorical(probs) as f64,
            DistributionSpec::Uniform { lo, hi } => stream.uniform(lo, hi),
        }
    }
}

/// Checks a probability vector: entries in `[0, 1]`, sum within
/// [`PROB_SUM_TOL`] of one.
pub fn validate_probs(field: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::param(field, "probability vector is empty"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param(field, format!("entry {p} outside [0, 1]")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::param(field, format!("entries sum to {total}, expected 1")));
    }
    Ok(())
}

/// `n` i.i.d. draws from `spec`. Discrete families (poisson, binomial,
/// categorical) return integral values; categorical indices are 0-based.
pub fn sample(spec: &DistributionSpec, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::param("n", "sample count must be >= 1"));
    }
    Ok((0..n).map(|_| spec.draw(stream)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn same_address_same_sequence() {
        let mut a = derive_stream(656, "epidemic/rep-1");
        let mut b = derive_stream(656, "epidemic/rep-1");
        let xs: Vec<u64> = (0..1000).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = derive_stream(656, "epidemic/rep-1");
        let mut b = derive_stream(656, "epidemic/rep-2");
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = derive_stream(657, "epidemic/rep-1");
        let mut a = derive_stream(656, "epidemic/rep-1");
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn child_is_derived_by_path() {
        let parent = derive_stream(656, "pop");
        let mut child = parent.child("catchments");
        let mut direct = derive_stream(656, "pop/catchments");
        assert_eq!(child.label(), "pop/catchments");
        assert_eq!(child.next_u64(), direct.next_u64());
    }

    #[test]
    fn pop_stream_is_usable() {
        let mut s = derive_stream(656, "pop/catchments");
        let xs = sample(&DistributionSpec::Normal { mean: 3.0, sd: 1.0 }, 16, &mut s).unwrap();
        assert_eq!(xs.len(), 16);
        assert!(xs.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn degenerate_binomial_and_categorical() {
        let mut s = derive_stream(1, "t");
        let xs = sample(&DistributionSpec::Binomial { n: 10, p: 0.0 }, 5, &mut s).unwrap();
        assert_eq!(xs, vec![0.0; 5]);
        let probs = DistributionSpec::Categorical { probs: vec![1.0, 0.0, 0.0] };
        assert_eq!(sample(&probs, 3, &mut s).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn exponential_mean_matches_analytic() {
        let mut s = derive_stream(656, "test/exp");
        let xs = sample(&DistributionSpec::Exponential { rate: 1.0 / 7.0 }, 100_000, &mut s).unwrap();
        let m = mean(&xs);
        assert!((6.9..=7.1).contains(&m), "mean {m}");
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let cases = [
            (DistributionSpec::Normal { mean: 0.0, sd: -1.0 }, "sd"),
            (DistributionSpec::Gamma { shape: 0.0, rate: 1.0 }, "shape"),
            (DistributionSpec::Gamma { shape: 1.0, rate: -1.0 }, "rate"),
            (DistributionSpec::Exponential { rate: 0.0 }, "rate"),
            (DistributionSpec::Binomial { n: 3, p: 1.5 }, "p"),
            (DistributionSpec::Categorical { probs: vec![0.5, 0.4] }, "probs"),
            (DistributionSpec::Categorical { probs: vec![1.2, -0.2] }, "probs"),
            (DistributionSpec::Uniform { lo: 2.0, hi: 1.0 }, "hi"),
        ];
        let mut s = derive_stream(1, "t");
        for (spec, field) in cases {
            match sample(&spec, 1, &mut s) {
                Err(Error::InvalidParameter { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{spec:?}: expected error, got {other:?}"),
            }
        }
        assert!(sample(&DistributionSpec::Poisson { rate: 1.0 }, 0, &mut s).is_err());
    }

    #[test]
    fn config_shape_round_trips_through_json() {
        let spec: DistributionSpec =
            serde_json::from_str(r#"{"family":"gamma","params":{"shape":7.86,"rate":0.032}}"#).unwrap();
        assert_eq!(spec, DistributionSpec::Gamma { shape: 7.86, rate: 0.032 });
    }
}
