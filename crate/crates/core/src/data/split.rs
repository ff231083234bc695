//! Seeded stratified split into train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::Behavior;

use super::manifest::{ManifestEntry, ManifestLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.75,
            val_frac: 0.10,
            test_frac: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitEntries {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Split per class: train gets round(train_frac * n), validation
/// round(val_frac * n), test the remainder. Within-class order is shuffled
/// by the seed; undefined-labeled entries must already be filtered out.
pub fn stratified_split(entries: &[ManifestEntry], spec: &SplitSpec) -> Result<SplitEntries> {
    let frac_sum = spec.train_frac + spec.val_frac + spec.test_frac;
    if (frac_sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument {
            op: "stratified_split",
            reason: format!("fractions sum to {frac_sum}, expected 1"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitEntries::default();
    for behavior in Behavior::ALL {
        let mut class: Vec<&ManifestEntry> = entries
            .iter()
            .filter(|e| e.label == ManifestLabel::Behavior(behavior))
            .collect();
        if class.is_empty() {
            continue;
        }
        if class.len() < 3 {
            return Err(Error::ClassTooSmall {
                label: behavior,
                count: class.len(),
            });
        }
        class.shuffle(&mut rng);
        let n = class.len();
        let n_train = (spec.train_frac * n as f64).round() as usize;
        let n_val = (spec.val_frac * n as f64).round() as usize;
        debug_assert!(n_train + n_val <= n, "rounding overflow for class size {n}");
        for (i, entry) in class.into_iter().enumerate() {
            if i < n_train {
                out.train.push(entry.clone());
            } else if i < n_train + n_val {
                out.val.push(entry.clone());
            } else {
                out.test.push(entry.clone());
            }
        }
    }
    // Mix classes within each partition, still fully determined by the seed.
    out.train.shuffle(&mut rng);
    out.val.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    Ok(out)
}
