//! Pipeline orchestration over the session store.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::Utc;
use stainscope_core::explain::explain_field;
use stainscope_core::imaging::render_overlay;
use stainscope_core::xai::{encode_hlmap, ExplanationMethod};
use stainscope_core::{
    apply_roi_inpainting, compute_tissue_mask, decode_image, extract_json_block, generate_report,
    synthesize_prompt, validate_report, ChatClient, ChatClientConfig, ImageBuffer, ImageFormatHint,
    MaskParams, QueuedBackend, ReportField, VisionLanguageBackend,
};

use crate::error::ServiceError;
use crate::session::{
    AnalysisSession, ExplanationRecord, FailureRecord, GenerationDigest, SessionStatus, SessionSummary,
};
use crate::store::{SessionStore, HEATMAP_DIR, INPAINTED_FILE, ORIGINAL_FILE};

/// Blend weight of server-rendered overlays.
pub const OVERLAY_ALPHA: f64 = 0.5;

pub struct Workbench {
    store: SessionStore,
    backend: QueuedBackend<Arc<dyn VisionLanguageBackend>>,
    chat: Arc<dyn ChatClient>,
    chat_config: ChatClientConfig,
    mask_params: MaskParams,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Workbench {
    pub fn new(
        store: SessionStore,
        backend: Arc<dyn VisionLanguageBackend>,
        chat: Arc<dyn ChatClient>,
        chat_config: ChatClientConfig,
    ) -> Self {
        Self {
            store,
            backend: QueuedBackend::new(backend),
            chat,
            chat_config,
            mask_params: MaskParams::default(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_mask_params(mut self, params: MaskParams) -> Self {
        self.mask_params = params;
        self
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn backend_name(&self) -> &str {
        &self.backend.descriptor().name
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        Arc::clone(locks.entry(id.to_string()).or_default())
    }

    /// Runs `op` on the loaded session while holding its lock.
    fn with_session<T>(
        &self,
        id: &str,
        op: impl FnOnce(&mut AnalysisSession) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let lock = self.session_lock(id);
        let _held = lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut session = self.store.load(id)?;
        op(&mut session)
    }

    pub fn create_session(
        &self,
        image_bytes: &[u8],
        query: &str,
        inpainting_enabled: bool,
    ) -> Result<AnalysisSession, ServiceError> {
        if query.trim().is_empty() {
            return Err(ServiceError::EmptyQuery);
        }
        let image = decode_image(image_bytes, ImageFormatHint::Auto)?;
        let png = image.to_png_bytes()?;

        let id = format!("{:032x}", rand::random::<u128>());
        self.store.create_dir(&id)?;
        self.store.write_atomic(&id, ORIGINAL_FILE, &png)?;
        let now = Utc::now();
        let session = AnalysisSession {
            id,
            created_at: now,
            updated_at: now,
            status: SessionStatus::Created,
            query: query.to_string(),
            inpainting_enabled,
            image_ref: ORIGINAL_FILE.into(),
            inpainted_ref: None,
            specialized_prompt: None,
            prompt_text: None,
            prompt_retry_count: None,
            report: None,
            report_warnings: Vec::new(),
            generation: None,
            explanations: Vec::new(),
            error: None,
        };
        self.store.save(&session)?;
        tracing::info!(id = %session.id, "session created");
        Ok(session)
    }

    pub fn get_session(&self, id: &str) -> Result<AnalysisSession, ServiceError> {
        self.store.load(id)
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, ServiceError> {
        self.store.list()
    }

    /// Marks the session failed with `err` recorded, then hands `err` back.
    fn fail(&self, session: &mut AnalysisSession, stage: &str, err: ServiceError) -> ServiceError {
        session.status = SessionStatus::Failed;
        session.error = Some(FailureRecord {
            stage: stage.to_string(),
            code: err.code().to_string(),
            message: err.to_string(),
        });
        session.updated_at = Utc::now();
        tracing::warn!(id = %session.id, stage, error = %err, "stage failed");
        match self.store.save(session) {
            Ok(()) => err,
            Err(store_err) => store_err,
        }
    }

    pub fn run_prompt_stage(&self, id: &str) -> Result<AnalysisSession, ServiceError> {
        self.with_session(id, |session| {
            require(session, SessionStatus::Created)?;
            match synthesize_prompt(&session.query, self.chat.as_ref(), &self.chat_config) {
                Ok(synthesis) => {
                    session.prompt_text = Some(synthesis.prompt.render());
                    session.prompt_retry_count = Some(synthesis.retry_count);
                    session.specialized_prompt = Some(synthesis.prompt);
                    session.status = SessionStatus::Prompted;
                    session.updated_at = Utc::now();
                    self.store.save(session)?;
                    Ok(session.clone())
                }
                Err(e) => Err(self.fail(session, "prompt", e.into())),
            }
        })
    }

    pub fn run_analysis_stage(&self, id: &str) -> Result<AnalysisSession, ServiceError> {
        self.with_session(id, |session| {
            require(session, SessionStatus::Prompted)?;
            match self.analyze(session) {
                Ok(()) => Ok(session.clone()),
                Err(e) => Err(self.fail(session, "analyze", e)),
            }
        })
    }

    fn analyze(&self, session: &mut AnalysisSession) -> Result<(), ServiceError> {
        let prompt = session
            .specialized_prompt
            .clone()
            .ok_or_else(|| ServiceError::Storage("prompted session has no prompt".into()))?;
        let original = self.load_image(&session.id, &session.image_ref)?;
        let image = if session.inpainting_enabled {
            let mask = compute_tissue_mask(&original, &self.mask_params)?;
            let processed = apply_roi_inpainting(&original, &mask)?;
            self.store.write_atomic(&session.id, INPAINTED_FILE, &processed.to_png_bytes()?)?;
            session.inpainted_ref = Some(INPAINTED_FILE.into());
            processed
        } else {
            original
        };

        let gen = generate_report(&self.backend, &image, &prompt)?;
        let block = extract_json_block(&gen.text)?;
        let validated = validate_report(block)?;
        self.store.save_generation(&session.id, &gen)?;

        session.generation = Some(GenerationDigest { text: gen.text.clone(), token_count: gen.len() });
        session.report = Some(validated.report);
        session.report_warnings = validated.warnings;
        session.status = SessionStatus::Analyzed;
        session.updated_at = Utc::now();
        self.store.save(session)
    }

    /// Explains `field` with `method`. Failures here leave the session as it was.
    pub fn run_explanation(&self, id: &str, field: &str, method: &str) -> Result<ExplanationRecord, ServiceError> {
        let method: ExplanationMethod = method
            .parse()
            .map_err(|_| ServiceError::UnsupportedMethod(method.to_string()))?;
        let field: ReportField = field.parse().map_err(|_| ServiceError::UnknownField(field.to_string()))?;

        self.with_session(id, |session| {
            require(session, SessionStatus::Analyzed)?;
            let prompt = session
                .specialized_prompt
                .clone()
                .ok_or_else(|| ServiceError::Storage("analyzed session has no prompt".into()))?;
            let gen = self.store.load_generation(id)?;
            let original = self.load_image(id, &session.image_ref)?;
            let image = match &session.inpainted_ref {
                Some(r) => self.load_image(id, r)?,
                None => original.clone(),
            };

            let explanation = explain_field(&self.backend, &image, &prompt, &gen, field, method)?;
            let overlay = render_overlay(&image, explanation.map01.view(), OVERLAY_ALPHA)?;
            let focus_score = match compute_tissue_mask(&original, &self.mask_params) {
                Ok(mask) => Some(explanation.focus_score(&mask)?),
                Err(_) => None,
            };

            let index = session.explanations.len();
            let overlay_ref = format!("{HEATMAP_DIR}/{index}.png");
            let map_ref = format!("{HEATMAP_DIR}/{index}.hlmap");
            self.store.write_atomic(id, &overlay_ref, &overlay.to_png_bytes()?)?;
            self.store.write_atomic(id, &map_ref, &encode_hlmap(explanation.map01.view())?)?;

            let record = ExplanationRecord {
                index,
                field,
                method,
                span: explanation.span,
                span_text: explanation.span_text,
                overlay_ref,
                map_ref,
                focus_score,
                created_at: Utc::now(),
            };
            session.explanations.push(record.clone());
            session.updated_at = Utc::now();
            self.store.save(session)?;
            Ok(record)
        })
    }

    fn load_image(&self, id: &str, relative: &str) -> Result<ImageBuffer, ServiceError> {
        let bytes = self.store.read_artifact(id, relative)?;
        decode_image(&bytes, ImageFormatHint::Png).map_err(|e| ServiceError::Storage(e.to_string()))
    }
}

fn require(session: &AnalysisSession, expected: SessionStatus) -> Result<(), ServiceError> {
    if session.status != expected {
        return Err(ServiceError::WrongState { expected, actual: session.status });
    }
    Ok(())
}
