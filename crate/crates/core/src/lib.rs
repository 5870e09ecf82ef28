//! Spectral calculus on the flat torus for prescribed scalar curvature
//! problems: bubble profiles, the conformal energy `J`, its flows, and the
//! construction of disconnected exit sets for double-peak curvatures.

pub mod bubbles;
pub mod conformal;
pub mod error;
pub mod exitset;
pub mod flows;
pub mod grid;
pub mod quadrature;

pub use bubbles::{BubbleParams, Cutoff, InteractionConstants};
pub use conformal::{CurvatureField, RegionMask};
pub use error::{LabError, Result};
pub use exitset::{DoublePeak, DoublePeakSpec, ExitPoint};
pub use flows::{FlowKind, FlowSample, FlowTrace, TerminalEvent};
pub use grid::{torus_distance, Norms, Point, ScalarField, TorusGrid};
