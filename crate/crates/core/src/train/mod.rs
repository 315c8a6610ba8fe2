//! Pairwise triple construction, the margin ranking loss and the training
//! loop.

mod check;
mod features;
mod loss;
mod trainer;

pub use check::{check_loss_gradients, toy_grad_check, toy_problem};
pub use features::{Featurizer, NeuralScorer, PreparedCandidate, PreparedGroup};
pub use loss::{batch_loss, hinge_loss, loss_and_gradients, make_triples, LossConfig, TrainingTriple, TripleSide};
pub use trainer::{dev_metrics, save_history, train, write_history, HistoryRow, TrainConfig, TrainOutcome};
