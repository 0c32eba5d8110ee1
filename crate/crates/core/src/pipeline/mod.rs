//! Training, distillation, self-training, inference and fusion.

mod distill;
mod fusion;
mod manifest;
pub(crate) mod model;
mod optim;
mod predict;
mod selftrain;
mod train;

pub use distill::distill;
pub use fusion::{apply_threshold, fuse, fused_scores, fusion_bce, pseudo_document, FusedPrediction, FusionConfig, FusionOutcome, GRID_POINTS};
pub use manifest::{sha256_hex, Manifest};
pub use model::{DocScores, Model, ModelSpec};
pub use optim::{clip_grad_norm, lr_factor, AdamW};
pub use predict::{predict, predictions_from_json, predictions_to_json, Prediction, DEFAULT_EVI_THRESHOLD};
pub use selftrain::{run_self_training, SelfTrainConfig, SelfTrainOutcome};
pub use train::{document_loss_on, train, TOY_LAMBDA, EpochLog, ErTarget, EvidenceSource, LossVars, TrainConfig, TrainLog};

/// Applies `f` to every item on scoped worker threads, keeping input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
