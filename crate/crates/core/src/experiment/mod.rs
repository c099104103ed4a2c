//! Config-driven sweeps, the run ledger, figures and reports.

pub mod config;
pub mod render;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, Overrides, PromptVariant, ScaleSpec, TaskTemplate};
pub use runner::{run, run_with_backends, RunRecord, RunStatus, SweepSummary};

use crate::backend::BackendError;
use crate::Error;

/// Process exit code for a failed command: 2 for configuration problems,
/// 3 when a backend could not be reached, 4 for a degraded probe, 1 for
/// anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::AmbiguousLabels(_) | Error::Param(_) | Error::UnsupportedClassCount(_) => 2,
        Error::Backend(BackendError::Unavailable(_)) => 3,
        Error::ProbeDegraded { .. } => 4,
        Error::NoUncertaintySignal => 2,
        Error::ActiveLoop { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Parses a command-line backend shorthand:
///
/// - `baseline:<preset>` (`logreg`, `knn`, `dtree`, `mlp`, `svm-rbf`, `svm-poly`)
/// - `mock:<script>` (`threshold`, `constant`, `centroid`)
/// - `numeric:<url>`
/// - `completion:<model>@<url>`
pub fn parse_backend_spec(spec: &str) -> crate::Result<crate::backend::BackendDescriptor> {
    use crate::backend::mock::MockScript;
    use crate::backend::{BackendDescriptor, BackendKind};
    use crate::baselines::BaselineSpec;

    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("backend {spec:?} should look like kind:value")))?;
    match kind {
        "baseline" => {
            let b = BaselineSpec::preset(rest)?;
            let mut d = BackendDescriptor::new(b.name(), BackendKind::Baseline);
            d.params = serde_json::to_value(b)?;
            Ok(d)
        }
        "mock" => {
            let script = match rest {
                "threshold" => MockScript::Threshold {
                    dim: 0,
                    at: 50.0,
                    sharpness: 0.2,
                },
                "constant" => MockScript::Constant { class: 0 },
                "centroid" => MockScript::NearestCentroid { temperature: 100.0 },
                other => return Err(Error::Config(format!("unknown mock script {other:?}"))),
            };
            let mut d = BackendDescriptor::new(format!("mock-{rest}"), BackendKind::Mock);
            d.params = serde_json::to_value(script)?;
            Ok(d)
        }
        "numeric" => {
            let mut d = BackendDescriptor::new("numeric", BackendKind::Numeric);
            d.endpoint = Some(rest.to_string());
            Ok(d)
        }
        "completion" => {
            let (model, url) = rest
                .split_once('@')
                .ok_or_else(|| Error::Config(format!("completion backend {rest:?} should be model@url")))?;
            let mut d = BackendDescriptor::new(model, BackendKind::Completion);
            d.model_name = model.to_string();
            d.endpoint = Some(url.to_string());
            Ok(d)
        }
        other => Err(Error::Config(format!("unknown backend kind {other:?}"))),
    }
}
