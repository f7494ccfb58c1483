//! Sampling, validation and export of benchmark instances.

mod dataset;
mod fixture;
mod grid;
mod ranges;
mod validate;

pub use dataset::{
    generate_dataset, generate_fixture, generate_fixtures, write_dataset, DatasetConfig, DatasetEntry, DatasetSummary,
    DifficultyHistogram, FixtureSummary, GeneratedDataset, InstanceSource, Rejection, SUMMARY_FILE,
};
pub use fixture::{export_fixture, import_fixture, Fixture, FixtureSeeds, FORMAT_VERSION};
pub use grid::GridSpec;
pub use ranges::{ArmRanges, FamilyRanges, Interval, NvdexRanges, SpdSpec, MAX_VALUE_FORM_DRAWS};
pub use validate::{
    max_energy_residual, revalidate, validate_bellman, validate_boundedness, validate_instance, validate_spd,
    BoundednessSpec, CheckResult, ValidationConfig, ValidationTrace,
};
