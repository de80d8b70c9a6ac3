//! Live capture over the W3C WebDriver protocol.
//!
//! [`run_plan`] drives a browser session through a [`CapturePlan`] and
//! returns a snapshot bundle ready for analysis. [`fixture::FixtureDriver`]
//! is a local stand-in endpoint used by the tests.

pub mod capture;
pub mod extract;
pub mod fixture;
pub mod plan;
pub mod webdriver;

pub use capture::{run_plan, CaptureError, CaptureOutcome, PoliteRequest};
pub use plan::{Action, CapturePlan, PlanError, TaskSpec};
pub use webdriver::{WebDriverClient, WebDriverError};
