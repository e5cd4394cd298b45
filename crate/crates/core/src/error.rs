use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("phantom spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("degenerate segment: endpoints closer than 1e-9")]
    DegenerateSegment,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward called without a recorded forward pass")]
    GraphNotRecorded,

    #[error("replay buffer holds {size} experiences, {requested} requested")]
    BufferTooSmall { size: usize, requested: usize },

    #[error("channel closed")]
    ChannelClosed,

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
