//! Open-world embedding retrieval: hierarchical metric losses, exact kNN
//! retrieval with hierarchy-aware metrics, distance-based OOD detection, a
//! synthetic hierarchical embedding generator and a linear-head trainer.

pub mod hierarchy;
pub mod io;
pub mod losses;
pub mod ood;
pub mod retrieval;
pub mod simdata;
pub mod trainer;

pub use hierarchy::{pair_sets, HierarchicalLabel, PairSets};
pub use losses::{compute_loss, LossMode, LossOutput, LossParams};
pub use retrieval::EmbeddingDatabase;
