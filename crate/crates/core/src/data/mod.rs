//! Synthetic generators, censoring, CSV / JSON input and output, and
//! component decompositions of fitted models.

mod artifacts;
mod censor;
mod experiment;
mod generators;
mod io;

pub use artifacts::{decompose, Decomposition, FitSummary, FittedModel, MeanVar, TrainingData};
pub use censor::{apply_censoring, survival_toy_with_individual, CensoringScheme, DEFAULT_CAP_FACTOR};
pub use experiment::{censor_experiment, CensorExperiment, CensorExperimentSpec, Scenario};
pub use generators::{
    generate_pinwheel, generate_rings, generate_survival_toy, generate_tabular, pinwheel_features, ring_features,
    survival_toy_features, GeneratorKind, GeneratorSpec, LabeledDataset, MIN_SAMPLES,
};
pub use io::{
    load_csv, load_table, matrix_rows, read_json, read_table, rows_matrix, table_to_dataset, to_json_string, write_csv,
    write_json, write_table, CensorColumns, CsvLayout, Table, SCHEMA_VERSION,
};
