//! Dense-network building blocks: parameters, forward/backward passes, losses,
//! momentum SGD and finite-difference gradient checking. All arithmetic is
//! 64-bit with a fixed summation order, so results are reproducible bit for bit.

pub mod gradcheck;
mod loss;
mod matrix;
mod model;
pub mod objective;
mod optim;

pub use loss::{cross_entropy, disc_loss, log_sum_exp, reg_loss, softmax, DiscLoss};
pub use matrix::Matrix;
pub use model::{
    clamp_prob, discriminate, discriminate_cached, forward_classify, forward_features, sigmoid,
    Batch, Dense, DiscOutput, ForwardCache, Gradients, ModelParams, Role, DISC_EPS,
};
pub use optim::{sgd_step, OptimizerState};

/// Argmax per row; ties resolve to the lowest class index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
