//! The MLaaS boundary: classifiers behind a predict API.
//!
//! The verifier never touches a suspect model directly; it sees only what a
//! prediction service exposes. [`PredictService`] is that boundary. Two
//! implementations ship: every [`MlpClassifier`] is itself a service (the
//! in-process adapter used by tests and fast benchmarks), and
//! [`HttpPredictClient`] speaks the wire protocol to a remote [`serve`]d
//! model. The verifier is generic over the two, so the transport can never
//! change a verdict.
//!
//! # Wire protocol
//!
//! `POST /predict` with a UTF-8 JSON body:
//!
//! ```json
//! {"inputs": [[1.0, 2.0], [3.0, 4.0]], "mode": "labels"}
//! ```
//!
//! Response: `{"labels": [0, 1]}`, plus `"logits": [[...], ...]` when the
//! request mode is `"logits"`. Errors come back with a non-200 status and a
//! body `{"error": {"code": "...", "message": "..."}}`. Numbers are encoded
//! in shortest round-trip decimal form, so every transported float parses
//! back to the exact bits the model produced.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::learner::MlpClassifier;
use crate::synth::LabeledDataset;
use crate::{Error, Result};

/// What the caller wants back from a predict call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Labels,
    Logits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub inputs: Vec<Vec<f64>>,
    pub mode: PredictMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireError {
    error: WireErrorBody,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireErrorBody {
    code: String,
    message: String,
}

/// Address and timeout of a remote predict service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoint {
    /// `host:port`.
    pub address: String,
    /// Per-request timeout in seconds.
    pub timeout_secs: f64,
}

impl Endpoint {
    pub fn new(address: impl Into<String>) -> Self {
        Self {
            address: address.into(),
            timeout_secs: 10.0,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Black-box access to a classifier: inputs go in, labels (and optionally
/// logits) come out. Nothing else about the model is observable.
pub trait PredictService {
    fn predict(&self, request: &PredictRequest) -> Result<PredictResponse>;
}

fn validate_inputs(inputs: &[Vec<f64>], expected_dim: usize) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Malformed {
            what: "predict request".into(),
            detail: "inputs must be non-empty".into(),
        });
    }
    for (i, row) in inputs.iter().enumerate() {
        if row.len() != expected_dim {
            return Err(Error::Malformed {
                what: "predict request".into(),
                detail: format!(
                    "input {i} has {} features, expected {expected_dim}",
                    row.len()
                ),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                what: "predict request".into(),
                detail: format!("input {i} holds a non-finite value"),
            });
        }
    }
    Ok(())
}

/// In-process adapter: the model itself answers predict requests, so tests
/// and benchmarks can run the full pipeline without sockets.
impl PredictService for MlpClassifier {
    fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
        validate_inputs(&request.inputs, self.input_dim())?;
        let flat: Vec<f64> = request.inputs.iter().flatten().copied().collect();
        let logits_flat = self.predict_logits(&flat)?;
        let k = self.num_classes();
        let labels: Vec<usize> = logits_flat
            .chunks_exact(k)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let logits = match request.mode {
            PredictMode::Labels => None,
            PredictMode::Logits => {
                Some(logits_flat.chunks_exact(k).map(<[f64]>::to_vec).collect())
            }
        };
        Ok(PredictResponse { labels, logits })
    }
}

/// HTTP client side of the wire protocol. One call per request; retries
/// belong to [`query_batches`].
pub struct HttpPredictClient {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl HttpPredictClient {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(endpoint.timeout())
            .build();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn url(&self) -> String {
        format!("http://{}/predict", self.endpoint.address)
    }
}

impl PredictService for HttpPredictClient {
    fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
        let transport = |message: String| Error::Malformed {
            what: format!("predict call to {}", self.endpoint.address),
            detail: message,
        };
        match self.agent.post(&self.url()).send_json(request) {
            Ok(response) => response
                .into_json::<PredictResponse>()
                .map_err(|e| transport(format!("undecodable response body: {e}"))),
            Err(ureq::Error::Status(code, response)) => {
                let body = response.into_string().unwrap_or_default();
                let detail = serde_json::from_str::<WireError>(&body)
                    .map(|w| format!("{}: {}", w.error.code, w.error.message))
                    .unwrap_or(body);
                Err(transport(format!("status {code}: {detail}")))
            }
            Err(ureq::Error::Transport(t)) => Err(transport(t.to_string())),
        }
    }
}

/// Handle to a running predict server. Dropping it stops accepting work;
/// [`shutdown`](Self::shutdown) also joins the worker threads.
pub struct ServerHandle {
    server: Arc<tiny_http::Server>,
    workers: Vec<std::thread::JoinHandle<()>>,
    address: String,
}

impl ServerHandle {
    /// `host:port` the server actually bound (resolves `:0` requests).
    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::new(self.address.clone())
    }

    pub fn shutdown(self) {
        drop(self);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        // unblock() wakes a single blocked recv(), so signal once per worker.
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

const SERVER_WORKERS: usize = 4;

fn json_response(status: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header =
        tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
    tiny_http::Response::from_string(body)
        .with_header(header)
        .with_status_code(status)
}

fn error_body(code: &str, message: &str) -> String {
    serde_json::to_string(&WireError {
        error: WireErrorBody {
            code: code.into(),
            message: message.into(),
        },
    })
    .expect("error body serializes")
}

fn handle_request(model: &MlpClassifier, request: &mut tiny_http::Request) -> (u16, String) {
    if request.method() != &tiny_http::Method::Post || request.url() != "/predict" {
        return (
            404,
            error_body("not_found", "only POST /predict is served"),
        );
    }
    let mut body = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut body) {
        return (400, error_body("unreadable_body", &e.to_string()));
    }
    let parsed: PredictRequest = match serde_json::from_str(&body) {
        Ok(p) => p,
        Err(e) => return (400, error_body("invalid_json", &e.to_string())),
    };
    match model.predict(&parsed) {
        Ok(response) => (
            200,
            serde_json::to_string(&response).expect("response serializes"),
        ),
        Err(Error::Malformed { detail, .. }) => (400, error_body("invalid_request", &detail)),
        Err(Error::DimensionMismatch { expected, got }) => (
            400,
            error_body(
                "invalid_request",
                &format!("expected {expected} features per input, got {got}"),
            ),
        ),
        Err(other) => (500, error_body("internal", &other.to_string())),
    }
}

/// Serves `model` at `address` (`host:port`; port 0 picks a free one) until
/// the handle is shut down. The model is immutable while serving, so
/// responses are deterministic and requests can be answered concurrently.
pub fn serve(model: MlpClassifier, address: &str) -> Result<ServerHandle> {
    let server = Arc::new(
        tiny_http::Server::http(address).map_err(|e| Error::Server(e.to_string()))?,
    );
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Server("server bound to a non-IP address".into()))?;
    let model = Arc::new(model);
    let workers = (0..SERVER_WORKERS)
        .map(|_| {
            let server = server.clone();
            let model = model.clone();
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let (status, body) = handle_request(&model, &mut request);
                    let _ = request.respond(json_response(status, body));
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        server,
        workers,
        address: bound.to_string(),
    })
}

/// Most batch requests allowed in flight at once.
pub const MAX_IN_FLIGHT: usize = 4;
/// Attempts per batch before giving up.
pub const QUERY_ATTEMPTS: u32 = 3;

/// Queries `data` through a predict service in consecutive, non-overlapping
/// batches of `batch_size` rows (the final batch may be smaller).
///
/// Up to [`MAX_IN_FLIGHT`] batches are pipelined, but responses always come
/// back in batch order. Each batch is retried up to [`QUERY_ATTEMPTS`] times;
/// a batch that still fails aborts the query with [`Error::QueryFailed`].
pub fn query_batches<S>(
    service: &S,
    data: &LabeledDataset,
    batch_size: usize,
    mode: PredictMode,
) -> Result<Vec<PredictResponse>>
where
    S: PredictService + Sync + ?Sized,
{
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("query over an empty dataset".into()));
    }
    let n = data.len();
    let n_batches = n.div_ceil(batch_size);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<PredictResponse>>>> =
        (0..n_batches).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..MAX_IN_FLIGHT.min(n_batches) {
            scope.spawn(|| loop {
                let batch = next.fetch_add(1, Ordering::SeqCst);
                if batch >= n_batches {
                    break;
                }
                let start = batch * batch_size;
                let count = batch_size.min(n - start);
                let request = PredictRequest {
                    inputs: (start..start + count).map(|i| data.row(i).to_vec()).collect(),
                    mode,
                };
                let mut attempt = 0;
                let outcome = loop {
                    attempt += 1;
                    match service.predict(&request) {
                        Ok(response) => break Ok(response),
                        Err(_) if attempt < QUERY_ATTEMPTS => {
                            std::thread::sleep(Duration::from_millis(50));
                        }
                        Err(e) => {
                            break Err(Error::QueryFailed {
                                batch,
                                attempts: attempt,
                                message: e.to_string(),
                            })
                        }
                    }
                };
                let failed = outcome.is_err();
                *slots[batch].lock().expect("slot lock") = Some(outcome);
                if failed {
                    break;
                }
            });
        }
    });

    let mut out = Vec::with_capacity(n_batches);
    for (batch, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(response)) => {
                let start = batch * batch_size;
                let expected = batch_size.min(n - start);
                if response.labels.len() != expected {
                    return Err(Error::Malformed {
                        what: format!("response for batch {batch}"),
                        detail: format!(
                            "{} labels for {expected} inputs",
                            response.labels.len()
                        ),
                    });
                }
                out.push(response);
            }
            Some(Err(e)) => return Err(e),
            None => {
                return Err(Error::QueryFailed {
                    batch,
                    attempts: 0,
                    message: "batch abandoned after an earlier failure".into(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn trained_toy() -> (MlpClassifier, LabeledDataset) {
        let protos = synth::shared_prototypes(3, 5, 3.0, 7);
        let gen = synth::GeneratorSpec::with_default_transform("g", protos, 0.5, 8);
        let prompt = synth::PromptSpec::seeded("p", 3, 5, 0.2, 9);
        let data = synth::sample_synthetic(&gen, &prompt, 60, 1).unwrap();
        let (model, _) = crate::learner::train(
            MlpClassifier::new(5, Some(16), 3, 2),
            &data,
            &crate::learner::TrainConfig {
                epochs: 15,
                ..Default::default()
            },
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn in_process_labels_match_logits_argmax() {
        let (model, data) = trained_toy();
        let request = PredictRequest {
            inputs: data.to_row_vecs(),
            mode: PredictMode::Logits,
        };
        let response = model.predict(&request).unwrap();
        let logits = response.logits.as_ref().unwrap();
        assert_eq!(response.labels.len(), data.len());
        for (row, &label) in logits.iter().zip(response.labels.iter()) {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(label, best);
        }
    }

    #[test]
    fn single_input_request_yields_single_label() {
        let (model, data) = trained_toy();
        let request = PredictRequest {
            inputs: vec![data.row(0).to_vec()],
            mode: PredictMode::Labels,
        };
        let response = model.predict(&request).unwrap();
        assert_eq!(response.labels.len(), 1);
        assert!(response.logits.is_none());
    }

    #[test]
    fn ragged_and_empty_requests_are_rejected() {
        let (model, _) = trained_toy();
        let ragged = PredictRequest {
            inputs: vec![vec![0.0; 5], vec![0.0; 4]],
            mode: PredictMode::Labels,
        };
        assert!(model.predict(&ragged).is_err());
        let empty = PredictRequest {
            inputs: vec![],
            mode: PredictMode::Labels,
        };
        assert!(model.predict(&empty).is_err());
    }

    #[test]
    fn batch_arithmetic_splits_as_documented() {
        let (model, _) = trained_toy();
        let protos = synth::shared_prototypes(3, 5, 3.0, 7);
        let gen = synth::GeneratorSpec::with_default_transform("g", protos, 0.5, 8);
        let prompt = synth::PromptSpec::seeded("q", 3, 5, 0.2, 10);
        // 5000 rows at batch 128: 40 batches, the last of size 8.
        let data = synth::sample_synthetic(&gen, &prompt, 1667, 3).unwrap();
        let data = {
            let flat = data.rows_flat(0, 5000).to_vec();
            let labels = data.labels()[..5000].to_vec();
            LabeledDataset::new(3, 5, flat, labels, "cut").unwrap()
        };
        let responses = query_batches(&model, &data, 128, PredictMode::Labels).unwrap();
        assert_eq!(responses.len(), 40);
        assert!(responses[..39].iter().all(|r| r.labels.len() == 128));
        assert_eq!(responses[39].labels.len(), 8);

        let single = query_batches(&model, &data, 10_000, PredictMode::Labels).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].labels.len(), 5000);
    }

    #[test]
    fn query_batches_concatenation_matches_direct_prediction() {
        let (model, data) = trained_toy();
        let responses = query_batches(&model, &data, 17, PredictMode::Labels).unwrap();
        let concatenated: Vec<usize> = responses.into_iter().flat_map(|r| r.labels).collect();
        let direct = model.predict_labels(data.features_flat()).unwrap();
        assert_eq!(concatenated, direct);
    }

    struct FlakyService {
        inner: MlpClassifier,
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl PredictService for FlakyService {
        fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call < self.fail_first {
                return Err(Error::Server("synthetic transport failure".into()));
            }
            self.inner.predict(request)
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let (model, data) = trained_toy();
        let direct = model.predict_labels(data.features_flat()).unwrap();
        let flaky = FlakyService {
            inner: model,
            calls: AtomicUsize::new(0),
            fail_first: 2,
        };
        let responses = query_batches(&flaky, &data, 45, PredictMode::Labels).unwrap();
        let concatenated: Vec<usize> = responses.into_iter().flat_map(|r| r.labels).collect();
        assert_eq!(concatenated, direct);
    }

    struct BrokenService;

    impl PredictService for BrokenService {
        fn predict(&self, _: &PredictRequest) -> Result<PredictResponse> {
            Err(Error::Server("always down".into()))
        }
    }

    #[test]
    fn persistent_failure_reports_the_batch_index() {
        let (_, data) = trained_toy();
        let err = query_batches(&BrokenService, &data, 64, PredictMode::Labels).unwrap_err();
        match err {
            Error::QueryFailed { attempts, .. } => assert_eq!(attempts, QUERY_ATTEMPTS),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn served_model_is_transport_transparent() {
        let (model, data) = trained_toy();
        let direct_labels = model.predict_labels(data.features_flat()).unwrap();
        let direct_logits = model.predict_logits(data.features_flat()).unwrap();

        let handle = serve(model, "127.0.0.1:0").unwrap();
        let client = HttpPredictClient::new(handle.endpoint());

        let responses = query_batches(&client, &data, 33, PredictMode::Logits).unwrap();
        let labels: Vec<usize> = responses.iter().flat_map(|r| r.labels.clone()).collect();
        assert_eq!(labels, direct_labels);

        // Logits survive the JSON round trip bit for bit.
        let wire_logits: Vec<f64> = responses
            .iter()
            .flat_map(|r| r.logits.as_ref().unwrap().iter().flatten().copied())
            .collect();
        assert_eq!(wire_logits.len(), direct_logits.len());
        for (a, b) in wire_logits.iter().zip(direct_logits.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        handle.shutdown();
    }

    #[test]
    fn server_rejects_malformed_requests_with_structured_errors() {
        let (model, _) = trained_toy();
        let handle = serve(model, "127.0.0.1:0").unwrap();
        let url = format!("http://{}/predict", handle.address());

        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(5))
            .build();
        let err = agent.post(&url).send_string("{not json").unwrap_err();
        match err {
            ureq::Error::Status(status, response) => {
                assert_eq!(status, 400);
                let body: serde_json::Value = response.into_json().unwrap();
                assert_eq!(body["error"]["code"], "invalid_json");
                assert!(body["error"]["message"].is_string());
            }
            other => panic!("unexpected {other:?}"),
        }

        let err = agent
            .post(&format!("http://{}/other", handle.address()))
            .send_string("{}")
            .unwrap_err();
        match err {
            ureq::Error::Status(status, _) => assert_eq!(status, 404),
            other => panic!("unexpected {other:?}"),
        }
        handle.shutdown();
    }
}
