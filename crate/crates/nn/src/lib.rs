//! Neural components: a small reverse-mode autograd engine, the conditional
//! score network and its trainer, and the descriptor/image alignment model.

pub mod checkpoint;
mod error;
pub mod graph;
pub mod params;
pub mod score;
pub mod semantic;
pub mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Adam, AdamConfig, ParamId, ParamStore};
pub use score::{predict_noise, NetworkPredictor, ScoreNetConfig, ScoreNetwork};
pub use semantic::{
    contrastive_loss, cross_attention, pretrain_alignment, retrieval_accuracy, AlignmentConfig, AlignmentModel,
    AlignmentOutcome, AlignmentPair, ContrastiveConfig, Embedding, RetrievalReport, SemanticContext,
};
pub use tensor::{Element, Tensor};
pub use train::{
    gradient_check, train, train_resumable, training_loss, training_loss_with, GradientProbe, LossDraws, LossNorm, TrainOutcome,
    TrainingConfig, TrainingExample,
};
