//! Fixtures shared by the criterion benchmarks.

use alseg_core::ingestion::generate_synthetic;
use alseg_core::{Dataset, SyntheticConfig};

/// Synthetic dataset with `per_class` training samples per class at the default image size.
pub fn fixture(per_class: usize) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        train_per_class: per_class,
        valid_per_class: 2,
        test_per_class: 5,
        ..SyntheticConfig::default()
    })
    .expect("default synthetic config is valid")
}
