//! Deterministic closed-form evaluator.
//!
//! `accuracy = sum_u a_u (1 - exp(-c_u / k_u)) / sum_u a_u` and channel `j` of unit `u`
//! scores `a_u exp(-j / k_u)`. The coefficients come from a ChaCha stream seeded by
//! SHA-256 of (architecture family, seed, unit id), so every unit's draw is independent
//! of unit order and of which other units exist.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::archspec::{flops, width_units, ArchSpec};
use crate::error::Result;
use crate::projection::{DatasetSpec, DEFAULT_BACKWARD_FACTOR};

use super::{EvaluationResult, Evaluator, EvaluatorBudget};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCoefficients {
    /// Importance weight.
    pub alpha: f64,
    /// Saturation scale in channels.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEvaluator {
    pub seed: u64,
    pub kappa_scale: f64,
}

impl SyntheticEvaluator {
    pub fn new(seed: u64) -> Self {
        SyntheticEvaluator { seed, kappa_scale: 32.0 }
    }

    pub fn coefficients(&self, family: &str, unit_id: &str) -> UnitCoefficients {
        let mut h = Sha256::new();
        h.update(family.as_bytes());
        h.update([0]);
        h.update(self.seed.to_le_bytes());
        h.update(unit_id.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha20Rng::from_seed(key);
        let alpha = rng.gen_range(0.5..1.5);
        let kappa = self.kappa_scale * rng.gen_range(0.2..1.0);
        UnitCoefficients { alpha, kappa }
    }

    /// Proxy for the given per-unit channel counts of an architecture family.
    pub fn accuracy(&self, family: &str, unit_ids: &[String], counts: &[u64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (id, &c) in unit_ids.iter().zip(counts) {
            let UnitCoefficients { alpha, kappa } = self.coefficients(family, id);
            num += alpha * (1.0 - (-(c as f64) / kappa).exp());
            den += alpha;
        }
        if den == 0.0 {
            1.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, arch: &ArchSpec, ds: &DatasetSpec, budget: &EvaluatorBudget) -> Result<EvaluationResult> {
        let units = width_units(arch)?;
        let ids: Vec<String> = units.iter().map(|u| u.id.clone()).collect();
        let counts: Vec<u64> = units.iter().map(|u| u.base_channels).collect();
        let accuracy_proxy = self.accuracy(&arch.name, &ids, &counts);
        let channel_scores = units
            .iter()
            .map(|u| {
                let UnitCoefficients { alpha, kappa } = self.coefficients(&arch.name, &u.id);
                (0..u.base_channels).map(|j| alpha * (-(j as f64) / kappa).exp()).collect()
            })
            .collect();
        let macs = flops(arch, ds.resolution)?.total as u128;
        let cost_flops = macs * ds.total() as u128 * budget.epochs as u128 * DEFAULT_BACKWARD_FACTOR as u128;
        Ok(EvaluationResult {
            accuracy_proxy,
            channel_scores,
            cost_flops,
        })
    }
}
