//! Reference models for the link-prediction task: a raw-feature MLP and a
//! two-stage encoder pretrained without link supervision.

mod dgi;
mod mlp;

pub use dgi::{
    dgi_downstream, dgi_pretrain, dgi_type_loss, discriminate, readout, shuffle_rows, DgiConfig, DgiPretrained,
    Discriminator,
};
pub use mlp::{mlp_dataset, mlp_fit, mlp_heldout_examples, Mlp, MlpConfig, MlpFit, Triple, MLP_MAGIC, MLP_VERSION};
