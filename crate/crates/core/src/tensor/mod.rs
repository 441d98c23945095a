//! Dense arrays and the gradient tape.

mod array;
mod tape;

pub use array::NdArray;
pub use tape::{Tape, Var};
