//! Reverse-mode differentiation engine and the numerical primitives the
//! rest of the crate composes.

mod array;
mod gradcheck;
mod nn;
mod params;
mod tape;

pub use array::{Real, RealArray};
pub use gradcheck::{check_all_primitives, check_primitive, grad_check, GradCheckReport};
pub use nn::{
    affine, broadcast_cols, variational_dropout, BiLstmParamNames, GruParamNames, LstmParamNames,
};
pub use params::{BoundParams, Param, ParameterStore};
pub use tape::{Gradients, Tape, Var, PRIMITIVE_NAMES};
