//! File formats, pipelines and the CLI around `pcac-core`.

pub mod bitstream;
pub mod model_file;
pub mod pipeline;
pub mod ply;
