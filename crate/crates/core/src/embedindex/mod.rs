//! Embedding post-processing and exact retrieval: PCA by power iteration,
//! brute-force k-nearest-neighbor search and Top-k recall.

mod index;
mod pca;

pub use index::{
    decode_index, encode_index, recall_at, recall_csv, recall_curve, single_image_localize,
    EmbeddingIndex, Neighbor, TopK,
};
pub use pca::{
    decode_pca, encode_pca, pca_fit, pca_reconstruct, pca_transform, pca_transform_rows, PcaModel,
    PCA_MAX_ITERATIONS, PCA_TOLERANCE,
};
