//! HTTP audit service.
//!
//! | method | path                  |                                        |
//! |--------|-----------------------|----------------------------------------|
//! | GET    | `/session`            | session metadata                       |
//! | GET    | `/exemplars`          | `percentile, page, page_size, attr, verdict` |
//! | GET    | `/dashboard`          | `percentile`                           |
//! | POST   | `/annotations`        | JSON body, returns the stored record   |
//! | GET    | `/annotations`        | `example_id`: active verdicts and history |
//! | GET    | `/annotations/export` | every record as CSV                    |

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cie_core::audit::{
    load_media, now_rfc3339, AnnotationStore, AuditError, AuditSession, ExemplarQuery,
    FeatureTable, NewAnnotation, SessionInputs, VerdictSet,
};
use cie_core::divergence::DivergenceError;
use cie_core::ledger::IngestOptions;
use serde::Deserialize;
use serde_json::json;

use crate::inputs::{load_attributes, load_scores, load_train_fractions, Missing};

pub const DEFAULT_PERCENTILE: f64 = 90.0;
pub const ANNOTATION_LOG: &str = "annotations.jsonl";

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, env = "CIE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CIE_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Where the annotation log lives.
    #[arg(long, env = "CIE_DATA_DIR", default_value = "cie-data")]
    pub data_dir: PathBuf,
    /// Experiment output directory; use with --variant instead of naming
    /// every input file.
    #[arg(long, requires = "variant")]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, conflicts_with = "run")]
    pub scores: Option<PathBuf>,
    #[arg(long, conflicts_with = "run", requires = "scores")]
    pub header: Option<PathBuf>,
    #[arg(long, conflicts_with = "run", requires = "scores")]
    pub predictions: Option<PathBuf>,
    #[arg(long, conflicts_with = "run")]
    pub attributes: Option<PathBuf>,
    #[arg(long, conflicts_with = "run")]
    pub train_attributes: Option<PathBuf>,
    #[arg(long, conflicts_with = "run")]
    pub features: Option<PathBuf>,
    /// Sidecar mapping example ids to media URLs or paths.
    #[arg(long)]
    pub media: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "error")]
    pub missing: Missing,
    /// Tie-break seed; defaults to the one recorded in the score file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub positive_class: u32,
    /// Extra verdict accepted besides the built-in ones; repeatable.
    #[arg(long = "verdict")]
    pub extra_verdicts: Vec<String>,
}

struct SessionPaths {
    scores: PathBuf,
    header: PathBuf,
    predictions: PathBuf,
    attributes: Option<PathBuf>,
    train_attributes: Option<PathBuf>,
    features: Option<PathBuf>,
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

impl ServeArgs {
    fn paths(&self) -> anyhow::Result<Option<SessionPaths>> {
        if let Some(run) = &self.run {
            let variant = self.variant.as_deref().context("--run needs --variant")?;
            return Ok(Some(SessionPaths {
                scores: run.join("scores").join(format!("{variant}.csv")),
                header: run.join("header.toml"),
                predictions: run.join("predictions.csv"),
                attributes: existing(run.join("attributes.csv")),
                train_attributes: existing(run.join("train_attributes.csv")),
                features: existing(run.join("features.csv")),
            }));
        }
        let Some(scores) = &self.scores else {
            return Ok(None);
        };
        Ok(Some(SessionPaths {
            scores: scores.clone(),
            header: self.header.clone().context("--scores needs --header")?,
            predictions: self
                .predictions
                .clone()
                .context("--scores needs --predictions")?,
            attributes: self.attributes.clone(),
            train_attributes: self.train_attributes.clone(),
            features: self.features.clone(),
        }))
    }

    /// Loads the session named by the arguments, if any.
    pub fn load_session(&self) -> anyhow::Result<Option<AuditSession>> {
        let Some(p) = self.paths()? else {
            return Ok(None);
        };
        let (scores, sha) = load_scores(&p.scores)?;
        let ledger = cie_core::ledger::load_ledger(
            &p.header,
            &p.predictions,
            IngestOptions {
                missing: self.missing.into(),
            },
        )
        .with_context(|| format!("loading ledger {}", p.predictions.display()))?;
        let session = AuditSession::new(SessionInputs {
            ledger,
            scores,
            score_file_sha256: sha,
            attributes: load_attributes(p.attributes.as_deref())?,
            train_fractions: load_train_fractions(p.train_attributes.as_deref())?,
            media: load_media(self.media.as_deref())?,
            features: p.features.as_deref().map(FeatureTable::load).transpose()?,
            positive_class: self.positive_class,
            seed: self.seed,
            verdicts: VerdictSet {
                extras: self.extra_verdicts.clone(),
            },
        })?;
        Ok(Some(session))
    }
}

pub struct AppState {
    pub session: Option<AuditSession>,
    /// Single writer for the annotation log.
    pub store: Mutex<AnnotationStore>,
}

impl AppState {
    pub fn open(session: Option<AuditSession>, data_dir: &Path) -> anyhow::Result<Arc<Self>> {
        std::fs::create_dir_all(data_dir)
            .with_context(|| format!("creating {}", data_dir.display()))?;
        let store = AnnotationStore::open(&data_dir.join(ANNOTATION_LOG))?;
        Ok(Arc::new(Self {
            session,
            store: Mutex::new(store),
        }))
    }

    fn session(&self) -> Result<&AuditSession, ApiError> {
        self.session
            .as_ref()
            .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "no session loaded".into()))
    }

    fn store(&self) -> std::sync::MutexGuard<'_, AnnotationStore> {
        // a panic mid-append leaves at worst a torn line, which open() repairs
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        let status = match &e {
            AuditError::UnknownExample(_) => StatusCode::NOT_FOUND,
            AuditError::InvalidVerdict(_)
            | AuditError::Invalid(_)
            | AuditError::Divergence(DivergenceError::InvalidPercentile(_)) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type Shared = Arc<AppState>;

#[derive(Debug, Deserialize)]
struct PercentileQuery {
    percentile: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ExemplarParams {
    percentile: Option<f64>,
    page: Option<usize>,
    page_size: Option<usize>,
    attr: Option<String>,
    verdict: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AnnotationParams {
    example_id: String,
}

async fn session_info(State(s): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.session()?.info()))
}

async fn exemplars(
    State(s): State<Shared>,
    Query(q): Query<ExemplarParams>,
) -> Result<impl IntoResponse, ApiError> {
    let session = s.session()?;
    let query = ExemplarQuery {
        percentile: q.percentile.unwrap_or(DEFAULT_PERCENTILE),
        page: q.page.unwrap_or(1),
        page_size: q.page_size.unwrap_or(0),
        attribute: q.attr.filter(|a| !a.is_empty()),
        verdict: q.verdict.filter(|v| !v.is_empty()),
    };
    let store = s.store();
    Ok(Json(session.exemplars(&query, &store)?))
}

async fn dashboard(
    State(s): State<Shared>,
    Query(q): Query<PercentileQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let session = s.session()?;
    let store = s.store();
    Ok(Json(session.dashboard(
        q.percentile.unwrap_or(DEFAULT_PERCENTILE),
        &store,
    )?))
}

async fn post_annotation(
    State(s): State<Shared>,
    Json(a): Json<NewAnnotation>,
) -> Result<impl IntoResponse, ApiError> {
    let session = s.session()?;
    let mut store = s.store();
    let stored = session.annotate(&mut store, &a, now_rfc3339())?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn get_annotations(
    State(s): State<Shared>,
    Query(q): Query<AnnotationParams>,
) -> Result<impl IntoResponse, ApiError> {
    let session = s.session()?;
    if !session.contains(&q.example_id) {
        return Err(AuditError::UnknownExample(q.example_id).into());
    }
    let store = s.store();
    Ok(Json(json!({
        "example_id": q.example_id,
        "active": store.active_for(&q.example_id),
        "history": store.history(&q.example_id),
    })))
}

async fn export(State(s): State<Shared>) -> impl IntoResponse {
    let csv = s.store().export_csv();
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/session", get(session_info))
        .route("/exemplars", get(exemplars))
        .route("/dashboard", get(dashboard))
        .route("/annotations", get(get_annotations).post(post_annotation))
        .route("/annotations/export", get(export))
        .with_state(state)
}

pub fn run(args: &ServeArgs) -> anyhow::Result<()> {
    let session = args.load_session()?;
    if session.is_none() {
        log::warn!("no session inputs given; data endpoints will answer 503");
    }
    let state = AppState::open(session, &args.data_dir)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
