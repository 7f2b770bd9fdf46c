use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetBundle, Provenance, Split, User};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Planted-partition users with region-flavoured text.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_regions: usize,
    /// Total terms; half are shared, half are split across regions.
    pub vocab_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub words_per_user: usize,
    /// Probability that a word is drawn from the user's regional terms.
    pub regional_weight: f64,
    /// Standard deviation of the coordinate jitter, degrees.
    pub jitter_deg: f64,
    /// Distance between neighbouring region centres, degrees.
    pub spacing_deg: f64,
    pub train_share: f64,
    pub dev_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_regions: 4,
            vocab_size: 400,
            p_in: 0.02,
            p_out: 0.001,
            words_per_user: 20,
            regional_weight: 0.3,
            jitter_deg: 0.5,
            spacing_deg: 5.0,
            train_share: 0.6,
            dev_share: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Argument(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        prob("p_in", self.p_in)?;
        prob("p_out", self.p_out)?;
        prob("regional_weight", self.regional_weight)?;
        prob("train_share", self.train_share)?;
        prob("dev_share", self.dev_share)?;
        if self.train_share + self.dev_share > 1.0 {
            return Err(Error::Argument("train and dev shares exceed 1".into()));
        }
        if self.n_regions < 2 {
            return Err(Error::Argument("need at least 2 regions".into()));
        }
        if self.p_in <= self.p_out {
            return Err(Error::Argument(format!(
                "p_in ({}) must exceed p_out ({})",
                self.p_in, self.p_out
            )));
        }
        if self.n_users < self.n_regions {
            return Err(Error::Argument("fewer users than regions".into()));
        }
        if self.vocab_size < 2 * self.n_regions {
            return Err(Error::Argument(
                "vocabulary too small for the region count".into(),
            ));
        }
        if !(self.jitter_deg >= 0.0) || !(self.spacing_deg > 0.0) {
            return Err(Error::Argument("jitter must be ≥ 0 and spacing > 0".into()));
        }
        Ok(())
    }

    /// Region centres on a near-square grid starting at (30°N, 100°W).
    pub fn region_centres(&self) -> Vec<(f64, f64)> {
        let cols = (self.n_regions as f64).sqrt().ceil() as usize;
        (0..self.n_regions)
            .map(|r| {
                let (row, col) = (r / cols, r % cols);
                (
                    30.0 + row as f64 * self.spacing_deg,
                    -100.0 + col as f64 * self.spacing_deg,
                )
            })
            .collect()
    }

    /// Term ids reserved for region `r`; the shared block is
    /// `0..vocab_size / 2`.
    pub fn regional_terms(&self, r: usize) -> std::ops::Range<usize> {
        let shared = self.vocab_size / 2;
        let per = (self.vocab_size - shared) / self.n_regions;
        shared + r * per..shared + (r + 1) * per
    }
}

pub fn term_name(t: usize) -> String {
    format!("w{t:04}")
}

/// User `i`'s region.
pub fn synthetic_region(i: usize, n_regions: usize) -> usize {
    i % n_regions
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_users;
    let centres = config.region_centres();
    let jitter = Normal::new(0.0, config.jitter_deg).map_err(|e| Error::Argument(e.to_string()))?;
    let shared = config.vocab_size / 2;
    let id = |i: usize| format!("u{i:05}");

    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let r = synthetic_region(i, config.n_regions);
        let (lat, lon) = centres[r];
        let lat = (lat + jitter.sample(&mut rng)).clamp(-90.0, 90.0);
        let lon = (lon + jitter.sample(&mut rng)).clamp(-180.0, 180.0);
        let regional = config.regional_terms(r);
        let words: Vec<String> = (0..config.words_per_user)
            .map(|_| {
                let t = if rng.random::<f64>() < config.regional_weight {
                    rng.random_range(regional.clone())
                } else {
                    rng.random_range(0..shared)
                };
                term_name(t)
            })
            .collect();
        users.push(User {
            id: id(i),
            location: GeoPoint::new(lat, lon)?,
            text: words.join(" "),
            split: Split::Test,
        });
    }

    let mut mentions = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let same =
                synthetic_region(i, config.n_regions) == synthetic_region(j, config.n_regions);
            let p = if same { config.p_in } else { config.p_out };
            if rng.random::<f64>() < p {
                mentions.push((id(i), id(j)));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (config.train_share * n as f64).round() as usize;
    let n_dev = (config.dev_share * n as f64).round() as usize;
    for (k, &u) in order.iter().enumerate() {
        users[u].split = if k < n_train {
            Split::Train
        } else if k < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    DatasetBundle::new(users, mentions, Provenance::Synthetic)
}
