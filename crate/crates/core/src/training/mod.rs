//! Pretraining, collation, masked-token evaluation and fine-tuning.

mod collate;
mod finetune;
mod pretrain;
mod spans;
mod trainer;

pub use collate::{collate, Batch};
pub use finetune::{
    evaluate_seq2seq, finetune_classifier, finetune_seq2seq, layer_groups, predict_classes, ClassifierOutcome, FinetuneConfig,
    FrozenViolation, HeadKind, Seq2SeqOutcome, UnfreezePolicy, UnfreezeSchedule,
};
pub use pretrain::{mlm_accuracy, pretrain, sample_crop, split_heldout, MlmEval, PretrainConfig, PretrainOutcome, ResumeState};
pub use spans::{corrupt_spans, splice_back, Corrupted, SpanCorruptionSpec};
pub use trainer::{write_metrics_csv, StepLog};
