mod propositions;
mod training;
mod transcripts;

pub use propositions::{check_report_file, verify_propositions};
pub use training::{ablate_k, continual, run_training, train, RunResult};
pub use transcripts::eval_transcripts;
