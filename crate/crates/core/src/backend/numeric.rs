//! Numeric wire protocol.
//!
//! `POST {endpoint}/predict` with
//! `{"context": [{"x": [f, f], "y": int}], "queries": [[f, f]], "num_classes": K}`
//! answered by `{"logits": [[f; K]]}`, one row per query. No prompt is
//! involved; coordinates travel in raw task space.
//!
//! [`NumericServer`] is a small reference server for the same protocol. It
//! can front any classifier function, which makes over-the-wire and
//! in-process evaluation directly comparable.

use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::completion::JsonClient;
use super::{Backend, BackendDescriptor, BackendError, BackendKind, ClassLogits, LogitSource, ProbeContext};
use crate::promptfmt::{make_label_map, PromptConfig};
use crate::taskgen::{CoordSpace, Example};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRequest {
    pub context: Vec<Example>,
    pub queries: Vec<Point>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericResponse {
    pub logits: Vec<Vec<f64>>,
}

const DEFAULT_CHUNK: usize = 1024;

pub struct NumericBackend {
    descriptor: BackendDescriptor,
    url: String,
    client: JsonClient,
    chunk: usize,
}

impl NumericBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self> {
        if descriptor.kind != BackendKind::Numeric {
            return Err(Error::Config(format!("{:?} is not a numeric backend", descriptor.name)));
        }
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("numeric backend {:?} needs an endpoint", descriptor.name)))?;
        let chunk = descriptor
            .params
            .get("chunk_size")
            .and_then(Value::as_u64)
            .map_or(DEFAULT_CHUNK, |c| c.max(1) as usize);
        let api_key = descriptor
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(NumericBackend {
            url: format!("{}/predict", endpoint.trim_end_matches('/')),
            client: JsonClient::new(&descriptor, api_key),
            descriptor,
            chunk,
        })
    }

    /// Convenience constructor for a bare endpoint URL.
    pub fn at(name: &str, endpoint: &str) -> Result<Self> {
        let mut descriptor = BackendDescriptor::new(name, BackendKind::Numeric);
        descriptor.endpoint = Some(endpoint.to_string());
        NumericBackend::new(descriptor)
    }

    /// Posts raw context and queries, returning one K-vector per query.
    pub fn numeric_classify(
        &self,
        context: &[Example],
        queries: &[Point],
        num_classes: usize,
    ) -> std::result::Result<Vec<ClassLogits>, BackendError> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.chunk) {
            let request = NumericRequest {
                context: context.to_vec(),
                queries: chunk.to_vec(),
                num_classes,
            };
            let body = serde_json::to_value(&request).expect("numeric request serializes");
            let response = self.client.post(&self.url, &body)?;
            let response: NumericResponse = serde_json::from_value(response)
                .map_err(|e| BackendError::Protocol(format!("numeric response: {e}")))?;
            validate_response(&response, chunk.len(), num_classes)?;
            out.extend(
                response
                    .logits
                    .into_iter()
                    .map(|row| ClassLogits::new(row, LogitSource::NumericHead)),
            );
        }
        Ok(out)
    }
}

fn validate_response(
    response: &NumericResponse,
    n_queries: usize,
    num_classes: usize,
) -> std::result::Result<(), BackendError> {
    if response.logits.len() != n_queries {
        return Err(BackendError::Protocol(format!(
            "expected {n_queries} logit rows, got {}",
            response.logits.len()
        )));
    }
    for row in &response.logits {
        if row.len() != num_classes {
            return Err(BackendError::Protocol(format!(
                "expected {num_classes} logits per query, got {}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol("non-finite logit".into()));
        }
    }
    Ok(())
}

impl Backend for NumericBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn space(&self) -> CoordSpace {
        CoordSpace::Raw
    }

    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        serde_json::to_vec(&NumericRequest {
            context: ctx.examples.to_vec(),
            queries: vec![query],
            num_classes: ctx.num_classes(),
        })
        .expect("numeric request serializes")
    }

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        self.numeric_classify(ctx.examples, &[query], ctx.num_classes())?
            .pop()
            .ok_or_else(|| BackendError::Protocol("empty response".into()))
    }

    fn batched(&self) -> bool {
        true
    }

    fn classify_many(
        &self,
        ctx: &ProbeContext<'_>,
        queries: &[Point],
    ) -> Vec<std::result::Result<ClassLogits, BackendError>> {
        match self.numeric_classify(ctx.examples, queries, ctx.num_classes()) {
            Ok(rows) => rows.into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e); queries.len()],
        }
    }
}

/// Model behind a [`NumericServer`]: `(context, queries, K) -> logits`.
pub type NumericModel = dyn Fn(&[Example], &[Point], usize) -> std::result::Result<Vec<Vec<f64>>, String> + Send + Sync;

/// Reference server for the numeric protocol, bound to `127.0.0.1`.
pub struct NumericServer {
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl NumericServer {
    pub fn spawn(model: Arc<NumericModel>) -> Result<Self> {
        Self::bind("127.0.0.1:0", model)
    }

    pub fn bind(addr: &str, model: Arc<NumericModel>) -> Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("numeric server needs an IP listener".into()))?;
        let server = Arc::new(server);
        let worker_server = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for request in worker_server.incoming_requests() {
                handle(request, model.as_ref());
            }
        });
        Ok(NumericServer {
            server,
            addr,
            worker: Some(worker),
        })
    }

    /// Serves any backend; the request's K picks placeholder labels.
    pub fn serve_backend(backend: Arc<dyn Backend>) -> Result<Self> {
        Self::spawn(Arc::new(move |context: &[Example], queries: &[Point], k: usize| {
            let cfg = PromptConfig::new((0..k).map(|c| format!("class{c}")));
            let labels = make_label_map(&cfg).map_err(|e| e.to_string())?;
            let ctx = ProbeContext::new(context, &cfg, &labels).map_err(|e| e.to_string())?;
            backend
                .classify_many(&ctx, queries)
                .into_iter()
                .map(|r| r.map(|l| l.scores).map_err(|e| e.to_string()))
                .collect()
        }))
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for NumericServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn json_response(status: u16, body: &Value) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    tiny_http::Response::from_data(serde_json::to_vec(body).expect("json body")).with_status_code(status).with_header(header)
}

fn handle(mut request: tiny_http::Request, model: &NumericModel) {
    let respond = |request: tiny_http::Request, status: u16, body: Value| {
        if let Err(e) = request.respond(json_response(status, &body)) {
            log::warn!("numeric server: failed to respond: {e}");
        }
    };
    if request.method() != &tiny_http::Method::Post || request.url() != "/predict" {
        respond(request, 404, serde_json::json!({"error": "not found"}));
        return;
    }
    let mut body = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut body) {
        respond(request, 400, serde_json::json!({"error": format!("unreadable body: {e}")}));
        return;
    }
    let parsed: NumericRequest = match serde_json::from_str(&body) {
        Ok(p) => p,
        Err(e) => {
            respond(request, 400, serde_json::json!({"error": format!("schema: {e}")}));
            return;
        }
    };
    if parsed.num_classes < 2 {
        respond(request, 400, serde_json::json!({"error": "num_classes must be at least 2"}));
        return;
    }
    if let Some(ex) = parsed.context.iter().find(|e| e.y >= parsed.num_classes) {
        respond(request, 400, serde_json::json!({"error": format!("label {} out of range", ex.y)}));
        return;
    }
    if parsed.queries.is_empty() {
        respond(request, 200, serde_json::json!({"logits": []}));
        return;
    }
    match model(&parsed.context, &parsed.queries, parsed.num_classes) {
        Ok(logits) => respond(request, 200, serde_json::json!({ "logits": logits })),
        Err(e) => respond(request, 400, serde_json::json!({ "error": e })),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::softmax;

    fn linear_model() -> Arc<NumericModel> {
        Arc::new(|ctx: &[Example], queries: &[Point], k: usize| {
            Ok(queries
                .iter()
                .map(|q| (0..k).map(|c| q[0] * c as f64 - ctx.len() as f64 * 0.01).collect())
                .collect())
        })
    }

    #[test]
    fn shapes_follow_the_request() {
        let server = NumericServer::spawn(linear_model()).unwrap();
        let backend = NumericBackend::at("num", &server.endpoint()).unwrap();
        let ctx: Vec<Example> = (0..8).map(|i| Example { x: [i as f64, 0.0], y: i % 2 }).collect();
        let out = backend.numeric_classify(&ctx, &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 2).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|l| l.scores.len() == 2));
        for l in &out {
            let s: f64 = softmax(&l.scores).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(backend.numeric_classify(&ctx, &[], 2).unwrap().is_empty());
    }

    #[test]
    fn wrong_shape_is_a_protocol_error() {
        let server = NumericServer::spawn(Arc::new(|_: &[Example], q: &[Point], _k: usize| {
            Ok(q.iter().map(|_| vec![0.0, 1.0, 2.0]).collect())
        }))
        .unwrap();
        let backend = NumericBackend::at("num", &server.endpoint()).unwrap();
        assert!(matches!(
            backend.numeric_classify(&[], &[[0.0, 0.0]], 2),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn server_rejects_malformed_payloads() {
        let server = NumericServer::spawn(linear_model()).unwrap();
        let url = format!("{}/predict", server.endpoint());
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let status = agent.post(&url).send("{\"queries\": 3}").unwrap().status().as_u16();
        assert_eq!(status, 400);
        let mut resp = agent
            .post(&url)
            .send("{\"context\": [], \"queries\": [], \"num_classes\": 2}")
            .unwrap();
        let body: Value = serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body, serde_json::json!({"logits": []}));
    }
}
