//! Objectives: batch-all triplet, lookup-table (OIM-style) classification,
//! cross-entropy with label smoothing, and the linear regression study case.

mod softmax;
mod study;
mod triplet;

pub use softmax::{argmax, cross_entropy, cross_entropy_with_grad, label_smooth, oim_loss, oim_scores, softmax};
pub use study::{study_case_loss, StudyCase, StudyCaseLoss};
pub use triplet::{
    batch_all_triplet_loss, batch_all_triplets, triplet_loss, triplet_loss_with_grads, triplet_set_loss,
    Reduction, TripletBatchLoss, TripletConfig, TripletDistance, TripletIndexSet,
};
