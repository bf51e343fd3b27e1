//! Corpora, pre-training, retrieval and classification evaluation, threshold
//! sweeps and metrics reports.

mod classify;
mod corpus;
mod pipeline;
mod report;
mod retrieval;
mod sweep;
mod train;

pub use classify::{accuracy, average_precision, class_count, classify_finetune, mean_average_precision, ClassifyResult, FinetuneConfig, Task};
pub use corpus::{
    class_objects, read_f32, synth_clips, synth_corpus, write_f32, AudioSource, ClipData, ClipEntry, CorpusManifest, Dataset, FrameSource, Geometry, Split,
    SynthClip, SynthConfig, SynthOutput,
};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use report::{percent, render_table, MetricsReport, SUM_R_TOL};
pub use retrieval::{cosine_matrix, embed_corpus, evaluate_retrieval, positive_ranks, rank_of, retrieval_both, retrieval_eval, Recalls, RetrievalMetrics, RECALL_KS};
pub use sweep::{sweep_point, threshold_sweep, SweepRow, SweepSetup, SweepTable};
pub use train::{batch_loss, evaluate_batch, train, write_trace, CheckpointSink, StepRecord, TrainConfig, TrainRun};
