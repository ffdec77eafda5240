//! Clip-state comparison: prototype scoring of single embeddings, and the
//! two two-tower cross-attention variants with an antisymmetric readout.

mod prototype;
#[cfg(test)]
mod tests;
mod two_tower;

pub use prototype::{
    cosine_distance, cosine_similarity, cosine_similarity_rows, order_from_scores, order_pair_embedding,
    order_pair_logit, prototype_loss, sob_score, Method, PairPrediction, PrototypePair, DEFAULT_REPULSION,
};
pub use two_tower::{pair_bce, TwoTowerCls, TwoTowerFull};
