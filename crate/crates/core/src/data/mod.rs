//! Interaction ingestion, per-user sequences, the toy dataset, splits and
//! batching.

pub mod batch;
pub mod dataset;
pub mod ingest;
pub mod sequence;
pub mod toy;

pub use batch::{make_batches, Batch, SequenceRow};
pub use dataset::{Dataset, EvalExample, Split, UserData};
pub use ingest::{
    parse_interactions, parse_interactions_str, write_interactions, ColumnSpec, Delimiter, IdMap,
    InteractionLog, InteractionRecord, ParseMode,
};
pub use sequence::{
    build_user_sequences, drop_items, leave_one_out_split, median_nonzero_interval,
    normalize_intervals, simulate_partial_observation, IntervalScaling, LeaveOneOut, Target,
    UserSequence,
};
pub use toy::{generate_toy_dataset, ToyConfig, ToyDataset, ToyRecord};
