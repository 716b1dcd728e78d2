//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Values live in plain row-major [`Tensor`]s. Computations are recorded on
//! a [`Tape`] through [`Var`] handles, and [`Tape::backward`] returns the
//! gradient of a scalar with respect to every leaf that asked for one.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Mask, Tensor};
