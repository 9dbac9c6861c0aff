//! A small end-to-end system on synthetic sources: learned transforms with a
//! hyperprior, a conditioned joint source-channel encoder and decoder with
//! rate-driven masks, the relaxed and hard channel chains, and the
//! three-phase training schedule.
//!
//! The order-dependent shift of each conditioning block is stored as one
//! vector per order, which is the one-hot product written out.

mod checkpoint;
mod config;
mod eval;
mod model;
mod source;
mod train;

pub use checkpoint::{load_checkpoint, manifest_path, save_checkpoint, MANIFEST_HEADER};
pub use config::TrainConfig;
pub use eval::{encode, evaluate, psnr, Encoded, EvalResult};
pub use model::{
    condition_vector, embedding_rates, is_transmitter, Chain, Stage, ToyModel, CHANNEL_REALS, EMBEDDINGS,
    HYPER_DIM, LATENT_DIM, SYMBOLS_PER_EMBEDDING, TRANSMITTER,
};
pub use source::{gauss_markov, make_source_batch, squash, CORRELATION, SOURCE_DIM};
pub use train::{
    gradient_norms, loss_gradient_check, loss_rd, run_phase, run_phase1, run_phase2, run_phase3, write_trace, Adam, PhaseKind,
    TraceRow, TRACE_HEADER,
};
