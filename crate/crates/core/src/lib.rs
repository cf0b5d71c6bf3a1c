//! Rank-adaptive Basis-Update & Galerkin time integration for tree tensor
//! networks.
//!
//! ```
//! use ttn_core::integrator::{integrate, Observable};
//! use ttn_core::spin::{all_up_state, ising_hamiltonian, magnetization_op, IsingSpec};
//! use ttn_core::{RhsKind, StepConfig, Tree};
//!
//! let tree = Tree::balanced_binary(2, 8)?;
//! let h = ising_hamiltonian::<f64>(&IsingSpec::new(8, 1.0)?)?;
//! let y0 = all_up_state(&tree)?;
//! let cfg = StepConfig { h: 0.01, theta: 1e-8, ..Default::default() };
//! let obs = [Observable { name: "m".into(), op: magnetization_op(8)? }];
//! let (y, reports) = integrate(&y0, &RhsKind::Schrodinger(h), 0.0, 0.5, &cfg, &obs, |_, _| Ok(()))?;
//! assert_eq!(reports.len(), 51);
//! assert!((y.norm() - 1.0).abs() < 1e-6);
//! # Ok::<(), ttn_core::TtnError>(())
//! ```

pub mod error;
pub mod integrator;
pub mod ode;
pub mod operator;
pub mod scalar;
pub mod spin;
pub mod tensor_core;
pub mod tree;
pub mod ttn;
pub mod tucker;

pub use error::{Result, TtnError};
pub use integrator::{integrate, step, IntegratorMode, StepConfig, StepReport, TruncationReport};
pub use ode::{OdeConfig, OdeMethod};
pub use operator::{KroneckerSumOp, RhsKind};
pub use scalar::{Real, C};
pub use tensor_core::{DenseTensor, Matrix};
pub use tree::{Address, Tree, TreeRank};
pub use ttn::{Ttn, TtnNode};
pub use tucker::TuckerState;

/// Double precision is the default working precision.
pub type Ttn64 = Ttn<f64>;
pub type Ttn32 = Ttn<f32>;
pub type Tensor64 = DenseTensor<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Operator64 = KroneckerSumOp<f64>;
pub type Rhs64 = RhsKind<f64>;
pub type Tucker64 = TuckerState<f64>;
