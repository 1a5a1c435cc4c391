//! Dynamic code symbol index.
//!
//! Every identifier and comment in a tracked source file becomes a
//! [`SymbolRecord`] with its position, its neighbors in source order, and
//! name-resolved dependency edges. Top-level declarations are grouped into
//! [`DocUnit`]s, the retrievable documents, each carrying a hashed
//! [`EmbeddingVector`]. Snapshots are immutable; [`IndexSnapshot::apply_edit`]
//! returns a new snapshot whose content hash matches a from-scratch rebuild.

mod cache;
mod embed;
mod lexer;
mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{load_cache, save_cache, CACHE_VERSION};
pub use embed::{feature_bucket, fnv1a, hash_features, EmbeddingVector};

use parse::{fragment_symbols, parse_file, ParsedFile};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no indexable files under {0}")]
    NoIndexableFiles(PathBuf),
    #[error("edit out of range for {path}: {start}..{end} (file has {len} bytes)")]
    EditOutOfRange {
        path: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("file is not tracked by the index: {0}")]
    UntrackedFile(String),
    #[error("file cannot be indexed with this configuration: {0}")]
    UnsupportedFile(String),
    #[error("empty fragment")]
    EmptyFragment,
    #[error("unknown document unit {0}")]
    UnknownUnit(String),
    #[error("invalid index configuration: {0}")]
    Config(String),
    #[error("index cache: {0}")]
    Cache(String),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageProfile {
    /// C-family languages: `//` and `/* */` comments, brace-delimited bodies.
    Brace,
    /// Python-style languages: `#` comments, indentation-delimited bodies.
    Indent,
}

impl LanguageProfile {
    pub fn name(self) -> &'static str {
        match self {
            LanguageProfile::Brace => "brace",
            LanguageProfile::Indent => "indent",
        }
    }

    fn for_extension(ext: &str) -> LanguageProfile {
        match ext {
            "py" | "pyi" => LanguageProfile::Indent,
            _ => LanguageProfile::Brace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub extensions: Vec<String>,
    pub d_emb: usize,
    pub profiles: Vec<String>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            extensions: ["rs", "c", "h", "cc", "cpp", "hpp", "java", "swift", "go", "js", "ts", "kt", "py"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            d_emb: 256,
            profiles: vec!["brace".into(), "indent".into()],
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb < 2 {
            return Err(IndexError::Config(format!("d_emb must be at least 2, got {}", self.d_emb)));
        }
        if self.extensions.is_empty() {
            return Err(IndexError::Config("extension list is empty".into()));
        }
        for p in &self.profiles {
            if p != "brace" && p != "indent" {
                return Err(IndexError::Config(format!("unknown language profile {p:?}")));
            }
        }
        if self.profiles.is_empty() {
            return Err(IndexError::Config("no language profile enabled".into()));
        }
        Ok(())
    }

    /// Profile used for a repository-relative path, if the path is indexable.
    pub fn profile_for(&self, path: &str) -> Option<LanguageProfile> {
        let ext = Path::new(path).extension()?.to_str()?;
        if !self.extensions.iter().any(|e| e == ext) {
            return None;
        }
        let profile = LanguageProfile::for_extension(ext);
        self.profiles
            .iter()
            .any(|p| p == profile.name())
            .then_some(profile)
    }

    /// Profile used to tokenize free-standing query fragments.
    pub fn fragment_profile(&self) -> LanguageProfile {
        if self.profiles.iter().any(|p| p == "brace") {
            LanguageProfile::Brace
        } else {
            LanguageProfile::Indent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolKind {
    Function,
    Type,
    Variable,
    Import,
    Comment,
    Other,
}

impl SymbolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SymbolKind::Function => "function",
            SymbolKind::Type => "type",
            SymbolKind::Variable => "variable",
            SymbolKind::Import => "import",
            SymbolKind::Comment => "comment",
            SymbolKind::Other => "other",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Function,
    Type,
    /// A file with no declarations.
    Module,
}

/// Zero-based source span, end column exclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn contains(&self, line: u32, col: u32) -> bool {
        (self.start_line, self.start_col) <= (line, col) && (line, col) < (self.end_line, self.end_col)
    }
}

macro_rules! located_id {
    ($name:ident, $sep:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name {
            file: String,
            ordinal: u32,
        }

        impl $name {
            pub fn new(file: impl Into<String>, ordinal: u32) -> Self {
                Self {
                    file: file.into(),
                    ordinal,
                }
            }

            pub fn file(&self) -> &str {
                &self.file
            }

            pub fn ordinal(&self) -> u32 {
                self.ordinal
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}{}", self.file, $sep, self.ordinal)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let (file, ord) = s
                    .rsplit_once($sep)
                    .ok_or_else(|| format!("expected <file>{}<n>, got {s:?}", $sep))?;
                let ordinal = ord.parse().map_err(|_| format!("bad ordinal in {s:?}"))?;
                Ok(Self::new(file, ordinal))
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

located_id!(SymbolId, "@");
located_id!(UnitId, "#");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub symbol_id: SymbolId,
    pub name: String,
    pub kind: SymbolKind,
    pub file: String,
    pub span: Span,
    pub neighbors: Vec<SymbolId>,
    pub dependencies: Vec<SymbolId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocUnit {
    pub id: UnitId,
    pub name: String,
    pub kind: UnitKind,
    pub file: String,
    /// Lines `[start_line, end_line)` of the file.
    pub start_line: u32,
    pub end_line: u32,
    pub symbols: Vec<SymbolId>,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

/// A change to the indexed tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FileEdit {
    /// Replace the byte range `start..end` of a tracked file.
    Replace {
        path: String,
        start: usize,
        end: usize,
        text: String,
    },
    /// Create a file or overwrite it entirely.
    Write { path: String, text: String },
    Delete { path: String },
}

impl FileEdit {
    pub fn path(&self) -> &str {
        match self {
            FileEdit::Replace { path, .. } | FileEdit::Write { path, .. } | FileEdit::Delete { path } => path,
        }
    }
}

/// Code text or a stored document unit.
#[derive(Debug, Clone, Copy)]
pub enum Fragment<'a> {
    Text(&'a str),
    Unit(&'a UnitId),
}

#[derive(Debug)]
struct FileState {
    text: String,
    parsed: std::result::Result<ParsedFile, String>,
}

impl FileState {
    fn new(path: &str, text: String, profile: LanguageProfile) -> Self {
        let stem = Path::new(path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(path)
            .to_string();
        let parsed = parse_file(&text, profile, &stem);
        Self { text, parsed }
    }
}

#[derive(Debug)]
pub struct IndexSnapshot {
    config: IndexConfig,
    files: BTreeMap<String, Arc<FileState>>,
    skipped: Vec<Diagnostic>,
    records: BTreeMap<SymbolId, SymbolRecord>,
    units: Vec<DocUnit>,
    unit_pos: HashMap<UnitId, usize>,
    defs: BTreeMap<String, Vec<SymbolId>>,
    in_degree: HashMap<SymbolId, usize>,
    revision: u64,
    content_hash: [u8; 32],
}

/// Builds a snapshot from every indexable file under `repo_root`.
pub fn build_index(repo_root: &Path, config: &IndexConfig) -> Result<IndexSnapshot> {
    config.validate()?;
    let io = |e: std::io::Error| IndexError::Io {
        path: repo_root.to_path_buf(),
        source: e,
    };
    let meta = std::fs::metadata(repo_root).map_err(io)?;
    if !meta.is_dir() {
        return Err(io(std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory")));
    }
    let mut sources = BTreeMap::new();
    let mut skipped = Vec::new();
    collect_sources(repo_root, repo_root, config, &mut sources, &mut skipped)?;
    if sources.is_empty() && skipped.is_empty() {
        return Err(IndexError::NoIndexableFiles(repo_root.to_path_buf()));
    }
    let mut snap = build_from_sources(config, sources)?;
    snap.skipped = skipped;
    Ok(snap)
}

fn collect_sources(
    root: &Path,
    dir: &Path,
    config: &IndexConfig,
    out: &mut BTreeMap<String, String>,
    skipped: &mut Vec<Diagnostic>,
) -> Result<()> {
    let io = |e: std::io::Error| IndexError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        let path = entry.path();
        let ft = entry.file_type().map_err(io)?;
        if ft.is_dir() {
            collect_sources(root, &path, config, out, skipped)?;
            continue;
        }
        let rel = relative_path(root, &path);
        if config.profile_for(&rel).is_none() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| IndexError::Io {
            path: path.clone(),
            source: e,
        })?;
        match String::from_utf8(bytes) {
            Ok(text) => {
                out.insert(rel, text);
            }
            Err(_) => skipped.push(Diagnostic {
                path: rel,
                message: "not valid UTF-8; skipped".into(),
            }),
        }
    }
    Ok(())
}

fn relative_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Builds a snapshot from in-memory sources keyed by repository-relative path.
pub fn build_from_sources(config: &IndexConfig, sources: BTreeMap<String, String>) -> Result<IndexSnapshot> {
    config.validate()?;
    let mut files = BTreeMap::new();
    for (path, text) in sources {
        let profile = config
            .profile_for(&path)
            .ok_or_else(|| IndexError::UnsupportedFile(path.clone()))?;
        let state = FileState::new(&path, text, profile);
        files.insert(path, Arc::new(state));
    }
    Ok(link(config.clone(), files, Vec::new(), 0))
}

fn link(
    config: IndexConfig,
    files: BTreeMap<String, Arc<FileState>>,
    skipped: Vec<Diagnostic>,
    revision: u64,
) -> IndexSnapshot {
    // pass 1: definitions table
    let mut defs: BTreeMap<String, Vec<SymbolId>> = BTreeMap::new();
    for (path, f) in &files {
        let Ok(parsed) = &f.parsed else { continue };
        for (i, s) in parsed.symbols.iter().enumerate() {
            if s.is_definition {
                defs.entry(s.name.clone())
                    .or_default()
                    .push(SymbolId::new(path.clone(), i as u32));
            }
        }
    }

    // pass 2: records with neighbor and dependency edges
    let mut records = BTreeMap::new();
    let mut in_degree: HashMap<SymbolId, usize> = HashMap::new();
    for (path, f) in &files {
        let Ok(parsed) = &f.parsed else { continue };
        let n = parsed.symbols.len();
        for (i, s) in parsed.symbols.iter().enumerate() {
            let id = SymbolId::new(path.clone(), i as u32);
            let mut neighbors = Vec::with_capacity(2);
            if i > 0 {
                neighbors.push(SymbolId::new(path.clone(), i as u32 - 1));
            }
            if i + 1 < n {
                neighbors.push(SymbolId::new(path.clone(), i as u32 + 1));
            }
            let dependencies = if matches!(s.kind, SymbolKind::Other | SymbolKind::Import) {
                resolve(&defs, &s.name, path, &id)
            } else {
                Vec::new()
            };
            for d in &dependencies {
                *in_degree.entry(d.clone()).or_default() += 1;
            }
            records.insert(
                id.clone(),
                SymbolRecord {
                    symbol_id: id,
                    name: s.name.clone(),
                    kind: s.kind,
                    file: path.clone(),
                    span: s.span,
                    neighbors,
                    dependencies,
                },
            );
        }
    }

    // pass 3: document units and their embeddings
    let mut units = Vec::new();
    for (path, f) in &files {
        let Ok(parsed) = &f.parsed else { continue };
        for (k, u) in parsed.units.iter().enumerate() {
            let symbols: Vec<SymbolId> = u
                .symbols
                .clone()
                .map(|i| SymbolId::new(path.clone(), i as u32))
                .collect();
            let mut features = Vec::new();
            for id in &symbols {
                unit_symbol_features(&records[id], &records, &mut features);
            }
            units.push(DocUnit {
                id: UnitId::new(path.clone(), k as u32),
                name: u.name.clone(),
                kind: u.kind,
                file: path.clone(),
                start_line: u.start_line,
                end_line: u.end_line,
                symbols,
                embedding: hash_features(&features, config.d_emb),
            });
        }
    }
    let unit_pos = units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
    let content_hash = Sha256::digest(canonical_bytes(config.d_emb, &records, &units)).into();
    IndexSnapshot {
        config,
        files,
        skipped,
        records,
        units,
        unit_pos,
        defs,
        in_degree,
        revision,
        content_hash,
    }
}

/// Same-file definitions win; otherwise every definition elsewhere with that name.
fn resolve(defs: &BTreeMap<String, Vec<SymbolId>>, name: &str, file: &str, me: &SymbolId) -> Vec<SymbolId> {
    let Some(cands) = defs.get(name) else {
        return Vec::new();
    };
    let local: Vec<SymbolId> = cands
        .iter()
        .filter(|d| d.file() == file && *d != me)
        .cloned()
        .collect();
    if !local.is_empty() {
        return local;
    }
    cands.iter().filter(|d| d.file() != file).cloned().collect()
}

fn unit_symbol_features(rec: &SymbolRecord, records: &BTreeMap<SymbolId, SymbolRecord>, out: &mut Vec<String>) {
    let targets: BTreeSet<String> = rec
        .dependencies
        .iter()
        .map(|d| records[d].name.clone())
        .collect();
    embed::symbol_features(&rec.name, rec.kind, targets, out);
}

struct Canon(Vec<u8>);

impl Canon {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn sym(&mut self, id: &SymbolId) {
        self.str(id.file());
        self.u32(id.ordinal());
    }
    fn ids(&mut self, ids: &[SymbolId]) {
        self.u32(ids.len() as u32);
        ids.iter().for_each(|i| self.sym(i));
    }
}

/// Canonical little-endian form of records, units and embeddings.
fn canonical_bytes(d_emb: usize, records: &BTreeMap<SymbolId, SymbolRecord>, units: &[DocUnit]) -> Vec<u8> {
    let mut c = Canon(Vec::new());
    c.0.extend_from_slice(b"CAMP-CANON-1");
    c.u32(d_emb as u32);
    c.u64(records.len() as u64);
    for r in records.values() {
        c.sym(&r.symbol_id);
        c.str(&r.name);
        c.0.push(r.kind.code());
        for v in [r.span.start_line, r.span.start_col, r.span.end_line, r.span.end_col] {
            c.u32(v);
        }
        c.ids(&r.neighbors);
        c.ids(&r.dependencies);
    }
    c.u64(units.len() as u64);
    for u in units {
        c.str(u.id.file());
        c.u32(u.id.ordinal());
        c.str(&u.name);
        c.0.push(u.kind as u8);
        c.u32(u.start_line);
        c.u32(u.end_line);
        c.ids(&u.symbols);
        for v in u.embedding.as_slice() {
            c.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    c.0
}

fn check_edit_path(path: &str) -> Result<()> {
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.contains('\\')
        || path.split('/').any(|c| c.is_empty() || c == "." || c == "..");
    if bad {
        return Err(IndexError::UnsupportedFile(path.to_string()));
    }
    Ok(())
}

impl IndexSnapshot {
    /// Applies one edit, re-parsing only the touched file. The snapshot is
    /// left untouched when the edit is rejected.
    pub fn apply_edit(&self, edit: &FileEdit) -> Result<IndexSnapshot> {
        let mut files = self.files.clone();
        match edit {
            FileEdit::Replace { path, start, end, text } => {
                let cur = files
                    .get(path)
                    .ok_or_else(|| IndexError::UntrackedFile(path.clone()))?;
                let old = &cur.text;
                if start > end || *end > old.len() || !old.is_char_boundary(*start) || !old.is_char_boundary(*end) {
                    return Err(IndexError::EditOutOfRange {
                        path: path.clone(),
                        start: *start,
                        end: *end,
                        len: old.len(),
                    });
                }
                let mut new_text = String::with_capacity(old.len() + text.len());
                new_text.push_str(&old[..*start]);
                new_text.push_str(text);
                new_text.push_str(&old[*end..]);
                let profile = self.config.profile_for(path).expect("tracked files have a profile");
                files.insert(path.clone(), Arc::new(FileState::new(path, new_text, profile)));
            }
            FileEdit::Write { path, text } => {
                check_edit_path(path)?;
                let profile = self
                    .config
                    .profile_for(path)
                    .ok_or_else(|| IndexError::UnsupportedFile(path.clone()))?;
                files.insert(path.clone(), Arc::new(FileState::new(path, text.clone(), profile)));
            }
            FileEdit::Delete { path } => {
                files
                    .remove(path)
                    .ok_or_else(|| IndexError::UntrackedFile(path.clone()))?;
            }
        }
        let skipped = self
            .skipped
            .iter()
            .filter(|d| d.path != edit.path())
            .cloned()
            .collect();
        Ok(link(self.config.clone(), files, skipped, self.revision + 1))
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn d_emb(&self) -> usize {
        self.config.d_emb
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.content_hash
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash)
    }

    pub fn records(&self) -> &BTreeMap<SymbolId, SymbolRecord> {
        &self.records
    }

    pub fn record(&self, id: &SymbolId) -> Option<&SymbolRecord> {
        self.records.get(id)
    }

    pub fn doc_units(&self) -> &[DocUnit] {
        &self.units
    }

    pub fn unit(&self, id: &UnitId) -> Option<&DocUnit> {
        self.unit_pos.get(id).map(|&i| &self.units[i])
    }

    pub fn unit_position(&self, id: &UnitId) -> Option<usize> {
        self.unit_pos.get(id).copied()
    }

    /// Tracked files, including ones that currently fail to parse.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn file_text(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(|f| f.text.as_str())
    }

    pub fn sources(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(p, f)| (p.clone(), f.text.clone())).collect()
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = self.skipped.clone();
        for (path, f) in &self.files {
            if let Err(msg) = &f.parsed {
                out.push(Diagnostic {
                    path: path.clone(),
                    message: msg.clone(),
                });
            }
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        out
    }

    /// Definitions available for name resolution, keyed by name.
    pub fn definitions(&self) -> &BTreeMap<String, Vec<SymbolId>> {
        &self.defs
    }

    /// Number of dependency edges pointing at `id`.
    pub fn in_degree(&self, id: &SymbolId) -> usize {
        self.in_degree.get(id).copied().unwrap_or(0)
    }

    pub fn file_symbols<'a>(&'a self, file: &str) -> impl Iterator<Item = &'a SymbolRecord> + 'a {
        let lo = SymbolId::new(file, 0);
        let hi = SymbolId::new(file, u32::MAX);
        self.records.range(lo..=hi).map(|(_, r)| r)
    }

    /// The document unit whose line range contains `line` in `file`.
    pub fn unit_at(&self, file: &str, line: u32) -> Option<&DocUnit> {
        self.units
            .iter()
            .find(|u| u.file == file && u.start_line <= line && line < u.end_line)
    }

    /// Source text of a unit's lines.
    pub fn unit_text(&self, id: &UnitId) -> Option<&str> {
        let u = self.unit(id)?;
        let text = &self.files.get(&u.file)?.text;
        Some(line_slice(text, u.start_line, u.end_line))
    }

    pub fn embed(&self, fragment: Fragment<'_>) -> Result<EmbeddingVector> {
        match fragment {
            Fragment::Text(t) => self.embed_text(t),
            Fragment::Unit(id) => {
                let u = self.unit(id).ok_or_else(|| IndexError::UnknownUnit(id.to_string()))?;
                let mut features = Vec::new();
                for s in &u.symbols {
                    unit_symbol_features(&self.records[s], &self.records, &mut features);
                }
                Ok(hash_features(&features, self.config.d_emb))
            }
        }
    }

    /// Embeds free code text, resolving identifiers against this index.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let features = self.text_features(text);
        if features.is_empty() {
            return Err(IndexError::EmptyFragment);
        }
        Ok(hash_features(&features, self.config.d_emb))
    }

    pub fn text_features(&self, text: &str) -> Vec<String> {
        let mut features = Vec::new();
        for s in fragment_symbols(text, self.config.fragment_profile()) {
            let resolved = matches!(s.kind, SymbolKind::Other | SymbolKind::Import) && self.defs.contains_key(&s.name);
            let dep = resolved.then(|| s.name.clone());
            embed::symbol_features(&s.name, s.kind, dep, &mut features);
        }
        features
    }

    /// Number of dangling neighbor/dependency edges (always zero for a consistent index).
    pub fn dangling_edges(&self) -> usize {
        let mut n = self
            .records
            .values()
            .flat_map(|r| r.neighbors.iter().chain(&r.dependencies))
            .filter(|id| !self.records.contains_key(id))
            .count();
        n += self
            .units
            .iter()
            .flat_map(|u| &u.symbols)
            .filter(|id| !self.records.contains_key(id))
            .count();
        n
    }
}

pub(crate) fn line_slice(text: &str, start_line: u32, end_line: u32) -> &str {
    let mut start = None;
    let mut end = text.len();
    let mut line = 0u32;
    if start_line == 0 {
        start = Some(0);
    }
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            line += 1;
            if line == start_line {
                start = Some(i + 1);
            }
            if line == end_line {
                end = i + 1;
                break;
            }
        }
    }
    match start {
        Some(s) if s <= end => &text[s..end],
        _ => "",
    }
}
