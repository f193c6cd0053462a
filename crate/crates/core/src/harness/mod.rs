//! Everything around the pipeline that a run needs: manifests, the run
//! store, the scripted mock server, batch execution and sweeps.

pub mod ablate;
pub mod batch;
pub mod manifest;
pub mod mock;
pub mod scenario;
pub mod store;
pub mod synth;

pub use ablate::{run_ablation, AblationPlan, AblationReport, AblationRow};
pub use batch::{run_batch, summarize, BatchError, BatchOptions, BatchRun, RunSummary};
pub use manifest::{ingest_manifest, Manifest, ManifestEntry, ManifestError};
pub use mock::{serve_mock, MockError, MockServer};
pub use scenario::{Endpoint, Rule, Scenario, ScenarioError};
pub use store::{RunStore, StoreError};
