//! Classical classifiers behind the [`Backend`] interface.
//!
//! The model is fitted on the context set the first time that context is
//! seen and reused for every later query against it.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{Backend, BackendDescriptor, BackendError, BackendKind, ClassLogits, LogitSource, ProbeContext};
use crate::baselines::{self, BaselineSpec, ClassifierModel, Dataset};
use crate::taskgen::CoordSpace;
use crate::{Error, Point, Result};

pub struct BaselineBackend {
    descriptor: BackendDescriptor,
    spec: BaselineSpec,
    fitted: Mutex<HashMap<String, Arc<ClassifierModel>>>,
}

impl BaselineBackend {
    pub fn new(spec: BaselineSpec) -> Self {
        let mut descriptor = BackendDescriptor::new(spec.name(), BackendKind::Baseline);
        descriptor.params = serde_json::to_value(&spec).expect("baseline specs serialize");
        BaselineBackend {
            descriptor,
            spec,
            fitted: Mutex::new(HashMap::new()),
        }
    }

    /// Reads the [`BaselineSpec`] from `params`.
    pub fn from_descriptor(descriptor: BackendDescriptor) -> Result<Self> {
        if descriptor.kind != BackendKind::Baseline {
            return Err(Error::Config(format!("{:?} is not a baseline backend", descriptor.name)));
        }
        let spec: BaselineSpec = serde_json::from_value(descriptor.params.clone())
            .map_err(|e| Error::Config(format!("baseline {:?}: {e}", descriptor.name)))?;
        let mut backend = BaselineBackend::new(spec);
        backend.descriptor.name = descriptor.name.clone();
        backend.descriptor.max_in_flight = descriptor.max_in_flight;
        Ok(backend)
    }

    pub fn spec(&self) -> &BaselineSpec {
        &self.spec
    }

    /// Fits (or fetches) the model for `ctx`.
    pub fn model(&self, ctx: &ProbeContext<'_>) -> std::result::Result<Arc<ClassifierModel>, BackendError> {
        let key = ctx.fingerprint();
        if let Some(m) = self.fitted.lock().expect("model cache").get(&key) {
            return Ok(m.clone());
        }
        let data = Dataset::from_examples(ctx.examples, ctx.num_classes())
            .map_err(|e| BackendError::Protocol(format!("context rejected: {e}")))?;
        let (model, report) =
            baselines::fit(&self.spec, &data).map_err(|e| BackendError::Protocol(format!("fit failed: {e}")))?;
        log::debug!(
            "fitted {} on {} points in {:.3}s",
            self.spec.name(),
            data.len(),
            report.wall_time_secs
        );
        let model = Arc::new(model);
        self.fitted.lock().expect("model cache").insert(key, model.clone());
        Ok(model)
    }
}

impl Backend for BaselineBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn space(&self) -> CoordSpace {
        CoordSpace::Raw
    }

    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        let mut bytes = ctx.fingerprint().into_bytes();
        bytes.extend_from_slice(&query[0].to_le_bytes());
        bytes.extend_from_slice(&query[1].to_le_bytes());
        bytes
    }

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        let model = self.model(ctx)?;
        Ok(ClassLogits::new(model.scores(query), LogitSource::NumericHead))
    }

    fn batched(&self) -> bool {
        true
    }

    fn classify_many(
        &self,
        ctx: &ProbeContext<'_>,
        queries: &[Point],
    ) -> Vec<std::result::Result<ClassLogits, BackendError>> {
        match self.model(ctx) {
            Ok(model) => model
                .scores_many(queries)
                .into_iter()
                .map(|s| Ok(ClassLogits::new(s, LogitSource::NumericHead)))
                .collect(),
            Err(e) => vec![Err(e); queries.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::classify_batch;
    use crate::promptfmt::{make_label_map, PromptConfig};
    use crate::taskgen::Example;

    #[test]
    fn fits_once_per_context() {
        let backend = BaselineBackend::new(BaselineSpec::knn());
        let cfg = PromptConfig::new(["a", "b"]);
        let labels = make_label_map(&cfg).unwrap();
        let examples: Vec<Example> = (0..10)
            .map(|i| Example {
                x: [i as f64, 0.0],
                y: usize::from(i >= 5),
            })
            .collect();
        let ctx = ProbeContext::new(&examples, &cfg, &labels).unwrap();
        let out = classify_batch(&backend, &ctx, &[[0.0, 0.0], [9.0, 0.0], [0.0, 0.0]]);
        let classes: Vec<usize> = out.iter().map(|r| r.as_ref().unwrap().class).collect();
        assert_eq!(classes, vec![0, 1, 0]);
        assert_eq!(backend.fitted.lock().unwrap().len(), 1);
    }

    #[test]
    fn descriptor_round_trip() {
        let backend = BaselineBackend::new(BaselineSpec::svm_poly());
        let again = BaselineBackend::from_descriptor(backend.descriptor().clone()).unwrap();
        assert_eq!(again.spec(), &BaselineSpec::svm_poly());
        assert_eq!(again.fingerprint(), backend.fingerprint());
    }
}
