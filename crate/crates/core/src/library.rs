//! Persistent agent library.
//!
//! The JSON file is the single source of truth; the embedding index over
//! descriptions is rebuilt from it and never written back. Writers take an
//! advisory lock on `<library>.lock`, merge records other writers added since
//! this snapshot was loaded, then replace the file atomically.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, EmbeddingIndex};
use crate::model::{validate_agent_profile, AgentProfile, ModelError, Provenance};

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library does not parse at byte {offset}: {message}")]
    ParseFailure { offset: usize, message: String },
    #[error("invalid record {name:?}: {cause}")]
    InvalidRecord { name: String, cause: String },
    #[error("library I/O: {0}")]
    IoFailure(#[from] io::Error),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub struct AgentLibrary {
    path: Option<PathBuf>,
    profiles: Vec<AgentProfile>,
    index: EmbeddingIndex,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for AgentLibrary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentLibrary")
            .field("path", &self.path)
            .field("len", &self.profiles.len())
            .finish()
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parses and validates a library document.
pub fn parse_library(text: &str) -> Result<Vec<AgentProfile>, LibraryError> {
    let profiles: Vec<AgentProfile> =
        serde_json::from_str(text).map_err(|e| LibraryError::ParseFailure {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(profiles.len());
    for p in profiles {
        let name = p.name.clone();
        let p = validate_agent_profile(p).map_err(|e| LibraryError::InvalidRecord {
            name: name.clone(),
            cause: e.to_string(),
        })?;
        if !seen.insert(name.clone()) {
            return Err(LibraryError::InvalidRecord {
                name,
                cause: "duplicate name".into(),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn serialize_library(profiles: &[AgentProfile]) -> String {
    let mut text = serde_json::to_string_pretty(profiles).expect("profiles serialize");
    text.push('\n');
    text
}

/// Writes `contents` to a temp file next to `path`, runs `before_rename`,
/// then renames over `path`. An error anywhere leaves `path` untouched.
pub(crate) fn write_atomic(
    path: &Path,
    contents: &[u8],
    before_rename: impl FnOnce() -> io::Result<()>,
) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    before_rename()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `base`, or `base_2`, `base_3`, ... whichever is first free.
pub fn disambiguate(base: &str, taken: impl Fn(&str) -> bool) -> String {
    if !taken(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}_{n}"))
        .find(|candidate| !taken(candidate))
        .expect("unbounded suffix search")
}

struct LockGuard(fs::File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    path.with_file_name(name)
}

impl AgentLibrary {
    pub fn empty(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            path: None,
            profiles: Vec::new(),
            index: EmbeddingIndex::new(),
            embedder,
        }
    }

    /// An in-memory library that is never persisted.
    pub fn from_profiles(
        profiles: Vec<AgentProfile>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, LibraryError> {
        let text = serde_json::to_string(&profiles).expect("profiles serialize");
        let profiles = parse_library(&text)?;
        let mut lib = Self::empty(embedder);
        lib.reset(profiles)?;
        Ok(lib)
    }

    pub fn load(path: impl Into<PathBuf>, embedder: Arc<dyn Embedder>) -> Result<Self, LibraryError> {
        let path = path.into();
        let text = fs::read_to_string(&path)?;
        let profiles = parse_library(&text)?;
        let mut lib = Self::empty(embedder);
        lib.path = Some(path);
        lib.reset(profiles)?;
        Ok(lib)
    }

    /// Loads `path`, or starts an empty library bound to it when the file
    /// does not exist yet.
    pub fn open(path: impl Into<PathBuf>, embedder: Arc<dyn Embedder>) -> Result<Self, LibraryError> {
        let path = path.into();
        if path.exists() {
            Self::load(path, embedder)
        } else {
            let mut lib = Self::empty(embedder);
            lib.path = Some(path);
            Ok(lib)
        }
    }

    fn reset(&mut self, profiles: Vec<AgentProfile>) -> Result<(), LibraryError> {
        self.index = EmbeddingIndex::build(
            self.embedder.as_ref(),
            profiles
                .iter()
                .map(|p| (p.name.as_str(), p.description.as_str())),
        )?;
        self.profiles = profiles;
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn profiles(&self) -> &[AgentProfile] {
        &self.profiles
    }

    pub fn get(&self, name: &str) -> Option<&AgentProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    /// Top-`k` profiles for a role description.
    pub fn candidates(&self, description: &str, k: usize) -> Result<Vec<AgentProfile>, LibraryError> {
        let hits = self
            .index
            .top_k_text(self.embedder.as_ref(), description, k)?;
        Ok(hits
            .into_iter()
            .map(|s| self.profiles[s.position].clone())
            .collect())
    }

    fn push(&mut self, profile: AgentProfile) -> Result<(), LibraryError> {
        let vector = self.embedder.embed(&profile.description)?;
        self.index
            .insert(profile.name.clone(), profile.description.clone(), vector)?;
        self.profiles.push(profile);
        Ok(())
    }

    /// Adds a generated agent and persists the library. A name collision
    /// stores the agent under the next free numeric suffix. Returns the
    /// stored name.
    pub fn add_generated(&mut self, profile: AgentProfile) -> Result<String, LibraryError> {
        self.add_generated_with(profile, || Ok(()))
    }

    pub(crate) fn add_generated_with(
        &mut self,
        mut profile: AgentProfile,
        before_rename: impl FnOnce() -> io::Result<()>,
    ) -> Result<String, LibraryError> {
        profile.provenance = Provenance::Generated;
        let name = profile.name.clone();
        let mut profile =
            validate_agent_profile(profile).map_err(|e: ModelError| LibraryError::InvalidRecord {
                name,
                cause: e.to_string(),
            })?;

        let _guard = match &self.path {
            Some(path) => {
                let lock = fs::OpenOptions::new()
                    .create(true)
                    .truncate(false)
                    .write(true)
                    .open(lock_path(path))?;
                lock.lock()?;
                let guard = LockGuard(lock);
                self.merge_from_disk(path.clone())?;
                Some(guard)
            }
            None => None,
        };

        profile.name = disambiguate(&profile.name, |n| self.get(n).is_some());
        let stored = profile.name.clone();
        let snapshot = (self.profiles.clone(), self.index.clone());
        self.push(profile)?;
        if let Some(path) = self.path.clone() {
            let text = serialize_library(&self.profiles);
            if let Err(e) = write_atomic(&path, text.as_bytes(), before_rename) {
                (self.profiles, self.index) = snapshot;
                return Err(e.into());
            }
        }
        Ok(stored)
    }

    /// Adopts records another writer appended since this snapshot.
    fn merge_from_disk(&mut self, path: PathBuf) -> Result<(), LibraryError> {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        for p in parse_library(&text)? {
            if self.get(&p.name).is_none() {
                self.push(p)?;
            }
        }
        Ok(())
    }

    /// Writes the whole library to its path (atomic replace).
    pub fn save(&self) -> Result<(), LibraryError> {
        if let Some(path) = &self.path {
            write_atomic(path, serialize_library(&self.profiles).as_bytes(), || Ok(()))?;
        }
        Ok(())
    }

    pub fn save_to(&self, path: &Path) -> Result<(), LibraryError> {
        write_atomic(path, serialize_library(&self.profiles).as_bytes(), || Ok(()))?;
        Ok(())
    }
}
