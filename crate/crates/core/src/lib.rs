//! Linear spreading speeds and pulsating fronts for periodic cooperative
//! reaction-diffusion systems.

pub mod barriers;
pub mod cauchy;
pub mod disc;
pub mod eigen;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod report;
pub mod speed;
pub mod wave;

pub use disc::{DiscreteOperator, PeriodicGrid};
pub use eigen::{DispersionCurve, EigenOptions, EigenPair};
pub use error::{Error, Result};
pub use model::{Builtin, ModelConfig, ModelSpec, Regularity, SamplePlan, StructureReport};
pub use wave::{rational_frame, construct_pulsating_wave, verify_wave, RationalFrame, WaveOptions, WaveProfile, WaveReport};
pub use cauchy::{SimGrid, SimulationState};
