//! Budgeted selection of high-influence training samples.
//!
//! Training gradients are clustered by cosine similarity, then an influence
//! budget is spread across clusters with an upper-confidence-bound bandit.
//! Only drawn samples have their influence evaluated; the best of those form
//! the selected subset.
//!
//! ```no_run
//! use clusterucb::prelude::*;
//!
//! let pool = synthgen::generate(&SynthConfig::default())?;
//! let clusters = spherical_kmeans(&pool.train, &KMeansParams::new(20, 0))?;
//! let oracle = LazyInfluenceOracle::new(&pool.train, &pool.val)?;
//! let config = BanditConfig::new(pool.train.rows() / 5, 0);
//! let run = pipeline::select(&clusters, &oracle, &config)?;
//! println!("selected {} samples", run.selection.len());
//! # Ok::<(), clusterucb::Error>(())
//! ```

pub mod bandit;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod grdm;
pub mod influence;
pub mod matrix;
pub mod pipeline;
pub mod projection;
pub mod selection;
pub mod synthgen;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::bandit::{run_bandit, BanditConfig, DrawLog, Policy};
    pub use crate::clustering::{spherical_kmeans, Clustering, KMeansParams};
    pub use crate::evaluation::{recall_influence, recall_sample, EvalReport};
    pub use crate::influence::{
        full_influences, Checkpoint, InfluenceSource, InfluenceVector, LazyInfluenceOracle,
    };
    pub use crate::matrix::{GradientMatrix, ValidationSet};
    pub use crate::pipeline::{self, GroundTruth};
    pub use crate::selection::{final_select, oracle_top, SelectionResult};
    pub use crate::synthgen::{self, SynthConfig};
}
