//! Offline evaluation: simulated feedback, experiments and statistics.

pub mod experiment;
pub mod metrics;
pub mod pool;
pub mod synth;

pub use experiment::{
    grid_search, run_experiment, run_session, session_seed, simulate_feedback, ExperimentConfig, ExperimentResult,
    GridSearch,
};
pub use metrics::{auc, average_precision, paired_ttest, TTest};
pub use pool::{generate_synthetic_pool, load_recorded_pool, read_pool_tsv, SimPool, SyntheticPoolConfig};
pub use synth::{generate_synthetic_corpus, SyntheticCorpusConfig};
