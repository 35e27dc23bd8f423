use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::{largest_remainder, stratified_split};
use super::{ClientDataset, Federation, Samples};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Parameters of a long-tailed synthetic federation.
///
/// Client `m` holds `round(base_n · ρ^m)` examples. Within a client, classes are
/// ranked by a random permutation and rank `k` receives a share proportional
/// to `τ^k`. Features are Gaussian clusters, one per class, shared by all
/// clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::features")]
    pub features: usize,
    #[serde(default = "defaults::base_n")]
    pub base_n: usize,
    /// Client-size decay ρ.
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    /// Class-frequency decay τ.
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    /// Standard deviation of each coordinate of the class cluster centers.
    #[serde(default = "defaults::center_scale")]
    pub center_scale: f64,
    /// Standard deviation of the within-class noise.
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn clients() -> usize {
        10
    }
    pub fn classes() -> usize {
        8
    }
    pub fn features() -> usize {
        16
    }
    pub fn base_n() -> usize {
        600
    }
    pub fn rho() -> f64 {
        0.7
    }
    pub fn tau() -> f64 {
        0.5
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn center_scale() -> f64 {
        1.0
    }
    pub fn spread() -> f64 {
        2.0
    }
}

impl Default for FederationSpec {
    fn default() -> Self {
        FederationSpec {
            clients: defaults::clients(),
            classes: defaults::classes(),
            features: defaults::features(),
            base_n: defaults::base_n(),
            rho: defaults::rho(),
            tau: defaults::tau(),
            test_fraction: defaults::test_fraction(),
            center_scale: defaults::center_scale(),
            spread: defaults::spread(),
            seed: 0,
        }
    }
}

impl FederationSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients < 2 {
            return fail(format!("a federation needs at least 2 clients, got {}", self.clients));
        }
        if self.classes < 2 || self.features == 0 {
            return fail("need at least 2 classes and 1 feature".into());
        }
        for (name, v) in [("rho", self.rho), ("tau", self.tau)] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if !(self.spread > 0.0 && self.spread.is_finite())
            || !(self.center_scale >= 0.0 && self.center_scale.is_finite())
        {
            return fail("spread must be positive and center_scale non-negative".into());
        }
        let smallest = self.base_n as f64 * self.rho.powi(self.clients as i32 - 1);
        if smallest < self.classes as f64 {
            return fail(format!(
                "smallest client would hold {smallest:.2} examples, fewer than {} classes",
                self.classes
            ));
        }
        Ok(())
    }

    pub fn client_size(&self, m: usize) -> usize {
        (self.base_n as f64 * self.rho.powi(m as i32)).round() as usize
    }

    /// Normalized `τ^k` shares over class ranks.
    pub fn class_shares(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.classes).map(|k| self.tau.powi(k as i32)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / sum).collect()
    }
}

pub fn synthesize(spec: &FederationSpec) -> Result<Federation> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.classes, spec.features);

    let mut centers = Matrix::zeros(c, d);
    for v in centers.as_mut_slice() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = spec.center_scale * z;
    }

    let shares = spec.class_shares();
    let mut next_id = 0u64;
    let mut clients = Vec::with_capacity(spec.clients);
    let mut permutations = Vec::with_capacity(spec.clients);
    for m in 0..spec.clients {
        let mut ranking: Vec<usize> = (0..c).collect();
        ranking.shuffle(&mut rng);
        let per_rank = largest_remainder(spec.client_size(m), &shares);
        let mut per_class = vec![0usize; c];
        for (rank, &class) in ranking.iter().enumerate() {
            per_class[class] = per_rank[rank];
        }

        let n: usize = per_class.iter().sum();
        let mut features = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (class, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                for (j, slot) in features.row_mut(row).iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *slot = centers[(class, j)] + spec.spread * z;
                }
                labels.push(class);
                row += 1;
            }
        }
        let ids = (next_id..next_id + n as u64).collect();
        next_id += n as u64;
        let all = Samples {
            features,
            labels,
            ids,
        };
        let (train, test) = stratified_split(&all, c, spec.test_fraction, &mut rng);
        clients.push(ClientDataset::new(m, train, test, c)?);
        permutations.push(ranking);
    }

    Federation::assemble(
        c,
        d,
        clients,
        (0..c).map(|k| k.to_string()).collect(),
        (0..spec.clients).map(|m| m.to_string()).collect(),
        Some(permutations),
    )
}
