//! Dense matrices, masked softmax and a reverse-mode tape.

mod gradcheck;
mod matrix;
mod ops;
mod params;
mod tape;

pub use gradcheck::{finite_difference_check, relative_error, FdReport, ParamCheck};
pub use matrix::Matrix;
pub use ops::{argmax, masked_column_softmax, relu, rowwise_max, sigmoid, softmax, Mask};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{Elementwise, Node, OpKind, Tape, LOG_CLAMP};
