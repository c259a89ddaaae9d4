//! Item description and user preference generation through a multimodal
//! language model, with an on-disk response cache and an offline stub.

mod cache;
mod catalog;
mod client;
mod generate;
mod prompt;

use std::path::PathBuf;

use thiserror::Error;

pub use cache::{CacheEntry, CacheKind, DescribeCache};
pub use catalog::{build_behavior_list, ItemCatalog, ItemEntry, UserCatalog, DEFAULT_BEHAVIOR_CAP};
pub use client::{
    ChatRequest, HttpTransport, ImageMode, MllmClient, MllmClientConfig, StubTransport, Transport,
    API_KEY_ENV, ENDPOINT_ENV,
};
pub use generate::{
    describe_items, describe_users, generate_item_description, generate_user_preference, DescribeReport,
};
pub use prompt::{
    fuse_descriptions, render_prompt1, render_prompt2, serialize_behavior_list, FUSION_SEPARATOR, PROMPT1_TEMPLATE,
    PROMPT2_TEMPLATE,
};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("dataset name must not be empty")]
    EmptyDatasetName,
    #[error("behavior list must not be empty")]
    EmptyBehaviorList,
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("item {0} has no multimodal description")]
    MissingDescription(usize),
    #[error("item {0} has no image reference")]
    MissingImage(usize),
    #[error("item {0} has no metadata entry")]
    MissingMetadata(String),
    #[error("invalid client config: {0}")]
    BadConfig(String),
    #[error("{path}: line {line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DescriptorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DescriptorError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DescriptorError>;
