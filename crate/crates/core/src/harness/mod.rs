mod config;
mod experiment;
mod report;
mod store;

pub use config::{DatasetSpec, ExperimentConfig, PruneSettings, TrainSettings, Variant};
pub use experiment::{
    map_model, nf_table, run_cell, sweep, train_for_seed, MapOptions, MappedModel, NfRow,
    TrainedSet,
};
pub use report::{
    read_report, sig6, write_nf_table, write_report, ReportRow, NF_COLUMNS, REPORT_COLUMNS,
};
pub use store::{
    load_dataset, load_mapped, load_model, save_dataset, save_mapped, save_model, DatasetManifest,
    MapRun, MappedLayer, MappedManifest, ModelManifest, Seeds, SplitEntry, StoredModel,
    TensorEntry, F32_LE, MANIFEST, U8,
};
