//! The entity-centric question generation model: joint encoder, content
//! focusing, focus-aware decoding and question verification.

mod batch;
mod checkpoint;
mod config;
mod decode;
mod init;
mod loss;
mod net;

pub use batch::{encode_question, encode_sample, encode_samples, encode_source, EncodedSample, TokenBatch};
pub use checkpoint::{Checkpoint, Flags, Manifest, FORMAT_VERSION, TOKENIZER_ID};
pub use config::{check_lambda, Mode, ModelConfig, Objective, MAX_SOURCE_LEN, MAX_TARGET_LEN};
pub use decode::{DecodeOptions, Strategy};
pub use init::{component_filter, init_params, with_pretrained};
pub use loss::{cf_loss, nll_from_log, qg_loss, qv_loss, token_ce_from_log, total_loss, LossParts};
pub use net::{nll_var, token_ce_var, Classified, Decoded, EcqgModel, Forward, ForwardOutputs, SampleLoss, StepResult};
