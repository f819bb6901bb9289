//! Stateless inference service. Every response is a pure function of the
//! loaded snapshot and the request; clients hold all state (z, labels).

mod http;

pub use http::{resolve_checkpoint, router, serve, serve_blocking, CHECKPOINT_ENV};

use std::path::Path;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::TensorMap;
use crate::data::{encode_png, to_byte};
use crate::latent::{
    self, apply_direction, direction_from_examples, interpolate, load_directions, onehot, sample_z, validate_soft_label, vicinity_sample,
    DirectionVector, LatentError, LatentVector, Prior, Space, DEFAULT_VICINITY_AMOUNT, DEFAULT_VICINITY_COUNT,
};
use crate::models::{Generator, ModelError};

pub const MAX_COUNT: usize = 256;
pub const MAX_STEPS: usize = 64;
/// Offset of the label stream from the latent stream of one seed.
const LABEL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// A structured error returned with an HTTP status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: 400,
            code: "bad_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: 404,
            code: "not_found",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: 500,
            code: "internal",
            message: message.into(),
        }
    }

    pub fn body(&self) -> Value {
        json!({ "error": { "code": self.code, "message": self.message } })
    }
}

impl From<LatentError> for ApiError {
    fn from(e: LatentError) -> Self {
        match e {
            LatentError::UnknownDirection(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Label { .. } => ApiError::bad_request(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

/// One latent vector or a list of them.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ZPayload {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

/// A stored direction by name, or an inline one (as returned by fit).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DirectionRef {
    Name(String),
    Inline(DirectionVector),
}

/// Request record; unused fields are ignored by each endpoint.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub op: Option<String>,
    pub z: Option<ZPayload>,
    pub z2: Option<ZPayload>,
    pub label: Option<usize>,
    pub soft_label: Option<Vec<f64>>,
    pub amount: Option<f64>,
    pub count: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub cluster: Option<usize>,
    pub direction: Option<DirectionRef>,
    pub space: Option<Space>,
    pub cross_cluster: Option<bool>,
}

/// Everything needed to re-render one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub z: Vec<f64>,
    pub label: Option<usize>,
    pub soft_label: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Item {
    #[serde(flatten)]
    pub payload: Payload,
    /// Base64 PNG.
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Info,
    Generate,
    Vicinity,
    Interpolate,
    Transfer,
    DirectionList,
    DirectionFit,
    DirectionApply,
}

impl Route {
    pub const ALL: [Route; 8] = [
        Route::Info,
        Route::Generate,
        Route::Vicinity,
        Route::Interpolate,
        Route::Transfer,
        Route::DirectionList,
        Route::DirectionFit,
        Route::DirectionApply,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Route::Info => "/info",
            Route::Generate => "/generate",
            Route::Vicinity => "/vicinity",
            Route::Interpolate => "/interpolate",
            Route::Transfer => "/transfer",
            Route::DirectionList => "/direction/list",
            Route::DirectionFit => "/direction/fit",
            Route::DirectionApply => "/direction/apply",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.path() == path)
    }
}

/// Immutable model snapshot with its stored directions.
#[derive(Debug, Clone)]
pub struct Studio {
    generator: Generator,
    directions: Vec<DirectionVector>,
}

impl Studio {
    pub fn new(generator: Generator, tensors: &TensorMap) -> Result<Self, ApiError> {
        let directions = load_directions(tensors).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Self { generator, directions })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (generator, tensors, _) = Generator::load(path)?;
        let directions = load_directions(&tensors).map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(Self { generator, directions })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn directions(&self) -> &[DirectionVector] {
        &self.directions
    }

    fn latent_dim(&self) -> usize {
        self.generator.config.latent_dim
    }

    fn k(&self) -> usize {
        self.generator.config.k
    }

    fn conditional(&self) -> bool {
        self.generator.config.is_conditional()
    }

    /// Parses a JSON body and dispatches. Returns the status and JSON body.
    pub fn handle(&self, route: Route, body: &[u8], raw: bool) -> (u16, Value) {
        let parsed = if route == Route::Info || (body.iter().all(u8::is_ascii_whitespace)) {
            Ok(Request::default())
        } else {
            serde_json::from_slice::<Request>(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
        };
        match parsed.and_then(|req| self.dispatch(route, &req, raw)) {
            Ok(v) => (200, v),
            Err(e) => (e.status, e.body()),
        }
    }

    pub fn dispatch(&self, route: Route, req: &Request, raw: bool) -> Result<Value, ApiError> {
        match route {
            Route::Info => Ok(self.info()),
            Route::Generate => self.generate(req, raw),
            Route::Vicinity => self.vicinity(req, raw),
            Route::Interpolate => self.interpolate(req, raw),
            Route::Transfer => self.transfer(req, raw),
            Route::DirectionList => Ok(self.direction_list()),
            Route::DirectionFit => self.direction_fit(req),
            Route::DirectionApply => self.direction_apply(req, raw),
        }
    }

    pub fn info(&self) -> Value {
        let c = &self.generator.config;
        json!({
            "latent_dim": c.latent_dim,
            "k": c.k,
            "resolution": c.resolution,
            "conditioning": c.conditioning,
            "arch": c.arch,
            "channels": c.channels,
            "prior": Prior::Gaussian,
        })
    }

    fn one_z(&self, p: Option<&ZPayload>, field: &str) -> Result<LatentVector, ApiError> {
        match p {
            Some(ZPayload::One(v)) => self.check_z(v.clone(), field),
            Some(ZPayload::Many(_)) => Err(ApiError::bad_request(format!("`{field}` must be a single vector"))),
            None => Err(ApiError::bad_request(format!("missing `{field}`"))),
        }
    }

    fn many_z(&self, p: Option<&ZPayload>, field: &str) -> Result<Vec<LatentVector>, ApiError> {
        match p {
            Some(ZPayload::Many(vs)) if !vs.is_empty() => vs.iter().map(|v| self.check_z(v.clone(), field)).collect(),
            Some(ZPayload::One(v)) => Ok(vec![self.check_z(v.clone(), field)?]),
            _ => Err(ApiError::bad_request(format!("missing or empty `{field}`"))),
        }
    }

    fn check_z(&self, v: Vec<f64>, field: &str) -> Result<LatentVector, ApiError> {
        if v.len() != self.latent_dim() {
            return Err(ApiError::bad_request(format!(
                "`{field}` has length {}, model latent_dim is {}",
                v.len(),
                self.latent_dim()
            )));
        }
        Ok(LatentVector::new(v, Prior::Gaussian)?)
    }

    fn check_label(&self, label: usize, field: &str) -> Result<usize, ApiError> {
        if label >= self.k() {
            return Err(ApiError::bad_request(format!("`{field}` {label} out of range for k = {}", self.k())));
        }
        Ok(label)
    }

    /// Label and soft label of a request, validated; `None`s for
    /// unconditional models.
    fn label_of(&self, req: &Request) -> Result<(Option<usize>, Option<Vec<f64>>), ApiError> {
        if !self.conditional() {
            return Ok((None, None));
        }
        let soft = match &req.soft_label {
            Some(s) => {
                validate_soft_label(s, self.k())?;
                Some(s.clone())
            }
            None => None,
        };
        let label = match (req.label, &soft) {
            (Some(l), _) => Some(self.check_label(l, "label")?),
            (None, Some(s)) => Some(argmax(s)),
            (None, None) => return Err(ApiError::bad_request("conditional model needs `label` or `soft_label`")),
        };
        Ok((label, soft))
    }

    fn payload(&self, z: LatentVector, label: Option<usize>, soft: Option<Vec<f64>>) -> Payload {
        let (label, soft) = if self.conditional() { (label, soft) } else { (None, None) };
        Payload {
            z: z.values,
            label,
            soft_label: soft,
        }
    }

    /// Renders payloads in one batch.
    pub fn render(&self, payloads: Vec<Payload>, raw: bool) -> Result<Vec<Item>, ApiError> {
        let zs: Vec<LatentVector> = payloads.iter().map(|p| LatentVector::new(p.z.clone(), Prior::Gaussian)).collect::<Result<_, _>>()?;
        let z = latent::to_tensor(&zs)?;
        let labels = if self.conditional() {
            let rows = payloads
                .iter()
                .map(|p| match (&p.soft_label, p.label) {
                    (Some(s), _) => Ok(s.clone()),
                    (None, Some(l)) => onehot(l, self.k()),
                    (None, None) => Err(LatentError::SoftLabel("missing label".into())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(latent::labels_to_tensor(&rows)?)
        } else {
            None
        };
        let images = self.generator.render_batched(&z, labels.as_ref(), 64)?;
        let d = images.dims().to_vec();
        let (c, side) = (d[1], d[2]);
        let len = c * side * side;
        payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| {
                let chw = &images.data()[i * len..(i + 1) * len];
                let png = encode_chw_png(chw, c, side).map_err(|e| ApiError::internal(e.to_string()))?;
                Ok(Item {
                    payload,
                    image: base64::engine::general_purpose::STANDARD.encode(png),
                    raw: raw.then(|| chw.to_vec()),
                })
            })
            .collect()
    }

    fn items(&self, op: &str, seed: Option<u64>, payloads: Vec<Payload>, raw: bool) -> Result<Value, ApiError> {
        let items = self.render(payloads, raw)?;
        let mut v = json!({ "op": op, "items": items });
        if let Some(s) = seed {
            v["seed"] = json!(s);
        }
        Ok(v)
    }

    fn count(req: &Request, default: usize) -> Result<usize, ApiError> {
        let n = req.count.unwrap_or(default);
        if n == 0 || n > MAX_COUNT {
            return Err(ApiError::bad_request(format!("`count` must be in 1..={MAX_COUNT}")));
        }
        Ok(n)
    }

    fn generate(&self, req: &Request, raw: bool) -> Result<Value, ApiError> {
        let n = Self::count(req, 1)?;
        let seed = req.seed.unwrap_or_else(fallback_seed);
        let zs = sample_z(n, self.latent_dim(), Prior::Gaussian, seed)?;
        let labels: Vec<Option<usize>> = if self.conditional() {
            match req.cluster {
                Some(c) => vec![Some(self.check_label(c, "cluster")?); n],
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LABEL_STREAM);
                    (0..n).map(|_| Some(rng.random_range(0..self.k()))).collect()
                }
            }
        } else {
            vec![None; n]
        };
        let payloads = zs.into_iter().zip(labels).map(|(z, l)| self.payload(z, l, None)).collect();
        self.items("generate", Some(seed), payloads, raw)
    }

    fn vicinity(&self, req: &Request, raw: bool) -> Result<Value, ApiError> {
        let z = self.one_z(req.z.as_ref(), "z")?;
        let (label, soft) = self.label_of(req)?;
        let count = Self::count(req, DEFAULT_VICINITY_COUNT)?;
        let amount = req.amount.unwrap_or(DEFAULT_VICINITY_AMOUNT);
        let cross = req.cross_cluster.unwrap_or(false) && self.conditional();
        let seed = req.seed.unwrap_or_else(fallback_seed);
        let k = self.k().max(1);
        let samples = vicinity_sample(&z, label.unwrap_or(0), k, count, amount, cross, seed)?;
        let payloads = samples
            .into_iter()
            .map(|s| {
                let soft = if cross { None } else { soft.clone() };
                self.payload(s.z, label.map(|_| s.label), soft)
            })
            .collect();
        let mut v = self.items("vicinity", Some(seed), payloads, raw)?;
        v["amount"] = json!(amount);
        Ok(v)
    }

    fn interpolate(&self, req: &Request, raw: bool) -> Result<Value, ApiError> {
        let z1 = self.one_z(req.z.as_ref(), "z")?;
        let z2 = self.one_z(req.z2.as_ref(), "z2")?;
        let matched = match req.op.as_deref() {
            None | Some("matched") => true,
            Some("linear") => false,
            Some(o) => return Err(ApiError::bad_request(format!("unknown interpolation op `{o}`"))),
        };
        let (label, soft) = self.label_of(req)?;
        let ts: Vec<f64> = match (req.amount, req.steps) {
            (Some(t), _) => vec![t],
            (None, Some(s)) if (2..=MAX_STEPS).contains(&s) => (0..s).map(|i| i as f64 / (s - 1) as f64).collect(),
            (None, Some(s)) => return Err(ApiError::bad_request(format!("`steps` must be in 2..={MAX_STEPS}, got {s}"))),
            (None, None) => return Err(ApiError::bad_request("need `steps` (>= 2) or `amount`")),
        };
        let payloads = ts
            .iter()
            .map(|&t| Ok(self.payload(interpolate(&z1, &z2, t, matched)?, label, soft.clone())))
            .collect::<Result<Vec<_>, ApiError>>()?;
        self.items("interpolate", None, payloads, raw)
    }

    fn transfer(&self, req: &Request, raw: bool) -> Result<Value, ApiError> {
        if !self.conditional() {
            return Err(ApiError::bad_request("class transfer needs a conditional model"));
        }
        let z = self.one_z(req.z.as_ref(), "z")?;
        let from = self.check_label(req.label.ok_or_else(|| ApiError::bad_request("missing `label`"))?, "label")?;
        let targets: Vec<usize> = match req.cluster {
            Some(c) => vec![c],
            None => (0..self.k().min(Self::count(req, self.k().min(MAX_COUNT))?)).collect(),
        };
        let payloads = targets
            .into_iter()
            .map(|to| {
                let (z, to) = latent::class_transfer(&z, from, to, self.k())?;
                Ok(self.payload(z, Some(to), None))
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        self.items("transfer", None, payloads, raw)
    }

    fn direction_list(&self) -> Value {
        let dirs: Vec<Value> = self
            .directions
            .iter()
            .map(|d| {
                json!({
                    "name": d.name,
                    "latent": d.z_offset.is_some(),
                    "label": d.label_offset.is_some(),
                    "n_positive": d.n_positive,
                    "n_negative": d.n_negative,
                })
            })
            .collect();
        json!({ "op": "direction/list", "directions": dirs })
    }

    fn direction_fit(&self, req: &Request) -> Result<Value, ApiError> {
        let name = match &req.direction {
            Some(DirectionRef::Name(n)) => n.clone(),
            _ => return Err(ApiError::bad_request("`direction` must be the new direction's name")),
        };
        let pos: Vec<Vec<f64>> = self.many_z(req.z.as_ref(), "z")?.into_iter().map(|z| z.values).collect();
        let neg: Vec<Vec<f64>> = self.many_z(req.z2.as_ref(), "z2")?.into_iter().map(|z| z.values).collect();
        let dir = direction_from_examples(&name, &pos, &neg, None)?;
        Ok(json!({ "op": "direction/fit", "direction": dir }))
    }

    fn direction_apply(&self, req: &Request, raw: bool) -> Result<Value, ApiError> {
        let dir = match &req.direction {
            Some(DirectionRef::Name(n)) => self
                .directions
                .iter()
                .find(|d| &d.name == n)
                .cloned()
                .ok_or_else(|| ApiError::from(LatentError::UnknownDirection(n.clone())))?,
            Some(DirectionRef::Inline(d)) => d.clone(),
            None => return Err(ApiError::bad_request("missing `direction`")),
        };
        let z = self.one_z(req.z.as_ref(), "z")?;
        let amount = req.amount.ok_or_else(|| ApiError::bad_request("missing `amount`"))?;
        let space = req.space.unwrap_or(Space::Latent);
        let (label, soft) = self.label_of(req)?;
        let label_vec = match (&soft, label) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(l)) => Some(onehot(l, self.k())?),
            (None, None) => None,
        };
        let (z2, l2) = apply_direction(&z, label_vec.as_deref(), &dir, amount, space)?;
        let (label, soft) = match space {
            Space::Latent => (label, soft),
            _ => {
                let l2 = l2.expect("label space result");
                (Some(argmax(&l2)), Some(l2))
            }
        };
        let payloads = vec![self.payload(z2, label, soft)];
        let mut v = self.items("direction/apply", None, payloads, raw)?;
        v["direction"] = json!(dir.name);
        Ok(v)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

fn fallback_seed() -> u64 {
    rand::rng().random()
}

/// PNG bytes of one `[C, S, S]` image in `[-1, 1]` (C = 1 or 3).
pub fn encode_chw_png(chw: &[f32], channels: usize, side: usize) -> Result<Vec<u8>, crate::data::DataError> {
    let plane = side * side;
    let mut hwc = vec![0u8; chw.len()];
    for c in 0..channels {
        for p in 0..plane {
            hwc[p * channels + c] = to_byte(chw[c * plane + p]);
        }
    }
    encode_png(side, side, channels, &hwc)
}
