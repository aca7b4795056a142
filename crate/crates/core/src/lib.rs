//! Generic fluid network models.
//!
//! Fluid networks are integrated as differential inclusions
//! ([`dynamics`]). Path families are manipulated with the scaling, shift and
//! concatenation operations of [`gfn`]. The path-integral Lyapunov function
//! and certificate searches live in [`lyapunov`], draining-time verdicts in
//! [`stability`], reflection problems in [`skorokhod`] and the discrete
//! queueing side in [`fluidlimit`].

pub mod dynamics;
pub mod fixtures;
pub mod fluidlimit;
pub mod gfn;
pub(crate) mod lp;
pub mod lyapunov;
pub mod model;
pub mod polytope;
pub mod rng;
pub mod skorokhod;
pub mod specfile;
pub mod stability;
pub mod trajectory;

pub use dynamics::{ControlSelector, Dynamics, DynamicsError};
pub use fluidlimit::{DistanceTable, FluidLimitError, Law, QueueingSpec};
pub use gfn::{ExplicitFamily, GfnError, PathFamily};
pub use lyapunov::{Certificate, CertificateStatus, LyapunovError, SearchBudget, ValueEstimate, ValueStatus};
pub use model::{Discipline, ModelError, NetworkSpec, RawNetwork};
pub use skorokhod::{LspInstance, LspSolution, SkorokhodError};
pub use specfile::{SpecError, SpecFile};
pub use stability::{Verdict, VerdictStatus};
pub use trajectory::Trajectory;
