//! Cooperative neural information retrieval: a reinforcement-learned query
//! reformulator and a kernel-pooling reranker trained in alternation, plus
//! BM25 retrieval, knowledge-graph candidate terms, expansion baselines and
//! ranking metrics.

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod error;
pub mod knowledge;
pub mod knrm;
pub mod lexical;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::TrainingConfig;
pub use error::{Error, Result};
