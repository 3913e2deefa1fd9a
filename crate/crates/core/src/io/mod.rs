//! File formats and the external backend protocol.

pub mod adapter;
pub mod json;
pub mod metadata;
pub mod ptlf;
pub mod scores;

pub use adapter::{
    invoke_adapter, validate_outputs, AdapterEndpoint, AdapterError, AdapterOutputs,
    AdapterRequest, AdapterRole, Backend, InstanceSet, OutputSpec, OutputValidationError,
    SubprocessBackend, DEFAULT_ADAPTER_TIMEOUT,
};
pub use metadata::{read_metadata, write_metadata, InstanceMetadata, MetadataError};
pub use ptlf::{
    decode_features, encode_features, read_features, write_features, FeatureFile,
    FeatureFileError, FeatureFileHeader,
};
pub use scores::{read_scores, write_scores, ScoresError};
