//! Synthetic stand-in for the rupture simulation catalogue.
//!
//! Features are drawn uniformly from [`FEATURE_RANGES`] (stresses in MPa with
//! compression negative, `d_c` in meters, barrier `width`/`height` in km).
//! Labels follow a closed-form slip-weakening criterion:
//!
//! ```text
//! slope   s  = 2 * height / width
//! normal  sn = -(syy + geom_coupling * s * sxx)
//! mu_s       = mu_d + friction_drop
//! excess  E  = mu_s * sn - sxy            (strength above the applied shear)
//! drop    D  = sxy - mu_d * sn            (dynamic stress drop)
//! ratio   S  = E / max(D, 0.01)
//! energy  G  = energy_coeff * d_c
//! label      = 1 (propagated) iff S + G * s < s_crit, else 0 (arrested)
//! ```

use std::collections::BTreeMap;

use super::{default_feature_names, LabeledTable};
use crate::error::{Error, Result};
use crate::random::RandomSource;

/// Sampling interval of each feature, in [`FEATURE_NAMES`](super::FEATURE_NAMES) order.
pub const FEATURE_RANGES: [(f64, f64); 8] = [
    (-120.0, -60.0),
    (-120.0, -60.0),
    (20.0, 70.0),
    (0.2, 0.6),
    (0.1, 0.5),
    (0.1, 0.8),
    (2.0, 6.0),
    (0.1, 1.0),
];

const MIN_STRESS_DROP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub s_crit: f64,
    pub geom_coupling: f64,
    pub energy_coeff: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            s_crit: 1.5,
            geom_coupling: 0.3,
            energy_coeff: 4.0,
        }
    }
}

impl GeneratorConfig {
    /// Overrides fields from `key = value` entries. Unknown keys are left to
    /// the caller.
    pub fn apply_overrides(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        for (key, slot) in [
            ("s_crit", &mut self.s_crit),
            ("geom_coupling", &mut self.geom_coupling),
            ("energy_coeff", &mut self.energy_coeff),
        ] {
            if let Some(raw) = entries.get(key) {
                *slot = raw.parse().map_err(|_| {
                    Error::InvalidConfig(format!("{key}: expected a number, got {raw:?}"))
                })?;
            }
        }
        Ok(())
    }
}

/// Label for one row of features in contract order.
pub fn rupture_label(x: &[f64], config: &GeneratorConfig) -> u8 {
    let [sxx, syy, sxy, mu_d, friction_drop, d_c, width, height] = x[..8] else {
        unreachable!("slice has 8 entries")
    };
    let slope = 2.0 * height / width;
    let normal = -(syy + config.geom_coupling * slope * sxx);
    let mu_s = mu_d + friction_drop;
    let excess = mu_s * normal - sxy;
    let drop = sxy - mu_d * normal;
    let ratio = excess / drop.max(MIN_STRESS_DROP);
    let energy = config.energy_coeff * d_c;
    u8::from(ratio + energy * slope < config.s_crit)
}

/// `n` rows; row `i` draws its eight features from child stream `i` of `rng`.
pub fn generate_synthetic(n: usize, rng: &RandomSource, config: &GeneratorConfig) -> Result<LabeledTable> {
    if n < 1 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let mut features = Vec::with_capacity(n * 8);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut row_rng = rng.child(i as u64);
        let row: Vec<f64> = FEATURE_RANGES
            .iter()
            .map(|&(lo, hi)| row_rng.uniform(lo, hi))
            .collect();
        labels.push(rupture_label(&row, config));
        features.extend(row);
    }
    LabeledTable::new(default_feature_names(), features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_barrier_high_shear_propagates() {
        // s = 1/30, sn = 65.7, E = -50.29, D = 56.86, S = -0.8845, G*s = 0.0133
        let x = [-70.0, -65.0, 70.0, 0.2, 0.1, 0.1, 6.0, 0.1];
        let s: f64 = 2.0 * 0.1 / 6.0;
        let sn = 65.0 + 0.3 * s * 70.0;
        let ratio = (0.3 * sn - 70.0) / (70.0 - 0.2 * sn);
        assert!((ratio - -0.8845).abs() < 1e-3);
        assert_eq!(rupture_label(&x, &GeneratorConfig::default()), 1);
    }

    #[test]
    fn steep_barrier_low_shear_arrests() {
        // s = 1, sn = 130, E = 123, D = -58 -> floor 0.01, S = 12300
        let x = [-100.0, -100.0, 20.0, 0.6, 0.5, 0.5, 2.0, 1.0];
        assert_eq!(rupture_label(&x, &GeneratorConfig::default()), 0);
    }

    #[test]
    fn threshold_and_coefficients_are_configurable() {
        let x = [-70.0, -65.0, 70.0, 0.2, 0.1, 0.1, 6.0, 0.1];
        let strict = GeneratorConfig {
            s_crit: -5.0,
            ..GeneratorConfig::default()
        };
        assert_eq!(rupture_label(&x, &strict), 0);

        let mut cfg = GeneratorConfig::default();
        let entries: BTreeMap<String, String> = [("s_crit", "2.5"), ("energy_coeff", "1")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        cfg.apply_overrides(&entries).unwrap();
        assert_eq!(cfg.s_crit, 2.5);
        assert_eq!(cfg.energy_coeff, 1.0);
        assert_eq!(cfg.geom_coupling, 0.3);
    }

    #[test]
    fn features_fall_in_ranges() {
        let t = generate_synthetic(500, &RandomSource::new(2, 0), &GeneratorConfig::default()).unwrap();
        for row in t.rows() {
            for (v, (lo, hi)) in row.iter().zip(FEATURE_RANGES) {
                assert!(*v >= lo && *v < hi);
            }
        }
    }

    #[test]
    fn labels_are_a_function_of_features() {
        let cfg = GeneratorConfig::default();
        let t = generate_synthetic(1000, &RandomSource::new(5, 0), &cfg).unwrap();
        for (row, &y) in t.rows().zip(t.labels()) {
            assert_eq!(rupture_label(row, &cfg), y);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(100, &RandomSource::new(5, 0), &cfg).unwrap();
        let b = generate_synthetic(100, &RandomSource::new(5, 0), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(0, &RandomSource::new(5, 0), &cfg).is_err());
    }

    // Frozen from a single generator run at n = 2000, seed 7, default config.
    #[test]
    fn default_class_balance_regression() {
        let t = generate_synthetic(2000, &RandomSource::new(7, 0), &GeneratorConfig::default()).unwrap();
        let (_, pos) = t.class_counts();
        let frac = pos as f64 / 2000.0;
        assert!((0.25..=0.50).contains(&frac), "propagated fraction {frac}");
        assert_eq!(pos, FROZEN_PROPAGATED_AT_SEED_7);
    }

    const FROZEN_PROPAGATED_AT_SEED_7: usize = 696;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn more_shear_never_arrests_a_propagating_rupture(
            seed in any::<u64>(),
            bump in 0.0..30.0f64,
        ) {
            let mut rng = RandomSource::new(seed, 0);
            let mut row: Vec<f64> = FEATURE_RANGES.iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect();
            let cfg = GeneratorConfig::default();
            let before = rupture_label(&row, &cfg);
            row[2] += bump;
            let after = rupture_label(&row, &cfg);
            prop_assert!(!(before == 1 && after == 0));
        }
    }
}
