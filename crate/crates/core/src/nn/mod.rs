//! The five network blocks and their parameter file.

mod bundle;
mod io;
mod mlp;
mod saf;

pub use bundle::{Backbone, ModelBundle, ModelDims, HEAD_LR_MULTIPLIER};
pub use io::{apply_params, load_params, parse_params, render_params, save_params, PARAM_FILE_HEADER};
pub use mlp::{Activation, BatchNormLayer, DenseLayer, IdGen, Mlp, MlpSpec};
pub use saf::{SafModule, ETA_MARGIN};
