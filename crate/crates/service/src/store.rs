//! Directory-per-session flat-file store.
//!
//! ```text
//! <root>/<id>/session.json
//!            /generation.json
//!            /original.png
//!            /inpainted.png
//!            /heatmaps/<n>.png
//!            /heatmaps/<n>.hlmap
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stainscope_core::GenerationResult;

use crate::error::ServiceError;
use crate::session::{AnalysisSession, SessionSummary};

pub const SESSION_FILE: &str = "session.json";
pub const GENERATION_FILE: &str = "generation.json";
pub const ORIGINAL_FILE: &str = "original.png";
pub const INPAINTED_FILE: &str = "inpainted.png";
pub const HEATMAP_DIR: &str = "heatmaps";

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

/// Ids are 32 lowercase hex digits; anything else cannot name a session.
pub fn is_valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if !is_valid_id(id) {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn create_dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        let dir = self.session_dir(id)?;
        fs::create_dir_all(dir.join(HEATMAP_DIR))?;
        Ok(dir)
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place.
    pub fn write_atomic(&self, id: &str, relative: &str, bytes: &[u8]) -> Result<(), ServiceError> {
        let path = self.artifact_path(id, relative)?;
        let parent = path.parent().expect("artifact paths have a parent");
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| ServiceError::Storage(e.to_string()))?;
        Ok(())
    }

    pub fn artifact_path(&self, id: &str, relative: &str) -> Result<PathBuf, ServiceError> {
        let clean = Path::new(relative)
            .components()
            .all(|c| matches!(c, std::path::Component::Normal(_)));
        if !clean {
            return Err(ServiceError::NotFound(relative.to_string()));
        }
        Ok(self.session_dir(id)?.join(relative))
    }

    pub fn read_artifact(&self, id: &str, relative: &str) -> Result<Vec<u8>, ServiceError> {
        let path = self.artifact_path(id, relative)?;
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::NotFound(format!("{id}/{relative}")),
            _ => e.into(),
        })
    }

    pub fn save(&self, session: &AnalysisSession) -> Result<(), ServiceError> {
        let json = serde_json::to_vec_pretty(session)?;
        self.write_atomic(&session.id, SESSION_FILE, &json)
    }

    pub fn load(&self, id: &str) -> Result<AnalysisSession, ServiceError> {
        let bytes = self.read_artifact(id, SESSION_FILE)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save_generation(&self, id: &str, gen: &GenerationResult) -> Result<(), ServiceError> {
        self.write_atomic(id, GENERATION_FILE, &serde_json::to_vec(gen)?)
    }

    pub fn load_generation(&self, id: &str) -> Result<GenerationResult, ServiceError> {
        Ok(serde_json::from_slice(&self.read_artifact(id, GENERATION_FILE)?)?)
    }

    /// Sessions ordered by creation time, then id. Directories without a
    /// readable `session.json` are skipped.
    pub fn list(&self) -> Result<Vec<SessionSummary>, ServiceError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !is_valid_id(&name) || !entry.file_type()?.is_dir() {
                continue;
            }
            if let Ok(session) = self.load(&name) {
                out.push(session.summary());
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}
