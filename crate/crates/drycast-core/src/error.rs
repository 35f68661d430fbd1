//! Error type shared by the tensor engine, model code, and codecs.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands whose shapes cannot be combined by `op`.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An axis index outside the operand's rank.
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// A slice `[start, start + len)` falling outside the axis extent.
    Slice {
        op: &'static str,
        axis: usize,
        start: usize,
        len: usize,
        size: usize,
    },
    /// Backward pass seeded from a tensor that is not a single scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A byte payload (checkpoint, config, image) that does not parse.
    Decode { what: String },
    /// A registered name whose implementation is intentionally absent.
    Unavailable { what: String },
    /// Any other argument that violates a documented precondition.
    Invalid { what: String },
}

fn write_shape(f: &mut fmt::Formatter<'_>, shape: &[usize]) -> fmt::Result {
    f.write_str("[")?;
    for (i, d) in shape.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{d}")?;
    }
    f.write_str("]")
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes ")?;
                write_shape(f, lhs)?;
                f.write_str(" vs ")?;
                write_shape(f, rhs)
            }
            Error::Axis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            Error::Slice {
                op,
                axis,
                start,
                len,
                size,
            } => write!(
                f,
                "{op}: slice {start}..{} exceeds axis {axis} of size {size}",
                start + len
            ),
            Error::NonScalarLoss { shape } => {
                f.write_str("backward requires a scalar loss, got shape ")?;
                write_shape(f, shape)
            }
            Error::Decode { what } => write!(f, "decode error: {what}"),
            Error::Unavailable { what } => write!(f, "{what} is not available in this build"),
            Error::Invalid { what } => f.write_str(what),
        }
    }
}

impl core::error::Error for Error {}
