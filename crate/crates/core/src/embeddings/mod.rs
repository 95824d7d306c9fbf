//! Code embeddings: CBOW training, neighbor lookup and history features.

mod cbow;
mod featurize;
mod neighbors;
mod table;

pub use cbow::{cbow_step_gradients, train_cbow, CbowConfig, CbowGradients, CbowStats};
pub use featurize::{feature_len, featurize_history};
pub use neighbors::{nearest_code, NeighborIndex};
pub use table::{load_embeddings, save_embeddings, EmbeddingTable, FORMAT_VERSION, MAGIC};
