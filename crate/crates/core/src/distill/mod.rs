//! Traffic distillation: path templates, inferred schemas, auth descriptors
//! and packaged skills.

mod auth;
mod package;
mod paths;
pub(crate) mod shape;

pub use auth::{extract_auth, AuthDescriptor, AuthKind, Vault};
pub(crate) use auth::write_private;
pub use package::{
    distill, merge_skills, read_skill_dir, render_client_stub, render_manifest, write_skill_dir,
    EndpointDelta, EndpointKey, EndpointTemplate, MergeDelta, Merged, QueryParam, SkillPackage,
};
pub use paths::{
    extract_params, is_integer, is_opaque_id, is_uuid, normalize_paths, template_matches,
    ParamKind, PathParam, PathTemplate,
};
pub use shape::{infer_shape, infer_value, Field, NotStructured, ResponseShape, ScalarKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("no API entries to distill")]
    NoApiEntries,
    #[error("cannot merge skills for different domains: {0} vs {1}")]
    DomainMismatch(String, String),
    #[error("skill directory: {0}")]
    Io(#[from] std::io::Error),
    #[error("skill directory contents: {0}")]
    Format(#[from] serde_json::Error),
}
