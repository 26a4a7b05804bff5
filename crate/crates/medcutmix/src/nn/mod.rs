pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use encoder::{select_sentence_rows, EmbeddingSet, EncoderConfig, Model, Vocab};
pub use gradcheck::grad_check;
pub use graph::{Graph, NodeId, Params};
pub use tensor::Tensor;
