//! Two-stage utility-proportional-fair rate allocation for a single cell.
//!
//! Stage one distributes the cell capacity `R` among users with an iterative
//! bidding protocol between the base station and the users
//! ([`protocol::run_first_stage`]). Stage two splits each user's share among
//! its applications ([`intra_ue::allocate_internal`]). VIP users carry target
//! rates for some applications; when those targets exhaust the capacity only
//! VIP users are served.
//!
//! The [`oracle`] module solves the same global problems centrally and is
//! used to certify the distributed result. [`scenario`] handles configuration
//! files, sweeps over `R`, time-varying weight schedules and CSV output.

pub mod error;
pub mod intra_ue;
pub mod oracle;
pub mod price_response;
pub mod protocol;
pub mod scenario;
pub mod utility;

pub use error::{Error, Result};
pub use protocol::{CaseFlag, FirstStageResult, IterationTrace, ProtocolParams};
pub use scenario::{RunRecord, ScenarioConfig, WeightSchedule};
pub use utility::{Application, UserClass, UserProfile, UtilityFunction};
