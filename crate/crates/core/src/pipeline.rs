//! End-to-end prompt assembly for each model configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{context_vector, ContextVector, EnvironmentState, SignalPayload, DEFAULT_TAU_C};
use crate::index::{Diagnostic, IndexSnapshot};
use crate::params::LearnedParams;
use crate::prompt::{construct, serialize, ComponentKind, Dialect, PromptComponent, PromptError, PromptPayload, PromptPlan, Tokenizer};
use crate::retrieval::{retrieve_with, CandidateScope, FusionWeights, HeuristicMatrix, RetrievalError, RetrievalOptions, RetrievalResult, DEFAULT_K};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a programming assistant. Complete the code at the cursor so that it fulfils the request.";
pub const DEFAULT_BUDGET: usize = 2048;
/// Lines above the cursor used as the retrieval input.
pub const INPUT_WINDOW: u32 = 20;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("parameters have dimension {params}, index has {index}")]
    Dimension { params: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelConfig {
    /// Request only, no local processing.
    CloudOnly,
    /// Identity-matrix retrieval on the request, no context.
    BaseRag,
    /// Retrieval restricted to the open (cursor) file.
    FileContext,
    /// Context extraction, learned retrieval and learned prompt order.
    Camp,
}

impl ModelConfig {
    pub const ALL: [ModelConfig; 4] = [ModelConfig::CloudOnly, ModelConfig::BaseRag, ModelConfig::FileContext, ModelConfig::Camp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelConfig::CloudOnly => "cloudonly",
            ModelConfig::BaseRag => "baserag",
            ModelConfig::FileContext => "filecontext",
            ModelConfig::Camp => "camp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelConfig::CloudOnly => "CloudOnly",
            ModelConfig::BaseRag => "BaseRAG",
            ModelConfig::FileContext => "FileContext",
            ModelConfig::Camp => "CAMP",
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| format!("unknown model {s:?} (expected cloudonly, baserag, filecontext or camp)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub k: usize,
    pub budget: usize,
    pub dialect: Dialect,
    pub tokenizer: Tokenizer,
    pub fusion: FusionWeights,
    pub tau_c: usize,
    pub system_prompt: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            budget: DEFAULT_BUDGET,
            dialect: Dialect::ChatMessages,
            tokenizer: Tokenizer::default(),
            fusion: FusionWeights::default(),
            tau_c: DEFAULT_TAU_C,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        }
    }
}

/// What the user asked for, and where.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest<'a> {
    pub environment: &'a EnvironmentState,
    pub query: &'a str,
    /// Code the request is about; defaults to the lines above the cursor.
    pub input_text: Option<&'a str>,
    /// Earlier turns, oldest first.
    pub history: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltPrompt {
    pub plan: PromptPlan,
    pub payload: PromptPayload,
    pub retrieval: Option<RetrievalResult>,
    pub context: Option<ContextVector>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Up to `window` lines directly above the cursor.
pub fn preceding_lines(snapshot: &IndexSnapshot, env: &EnvironmentState, window: u32) -> Option<String> {
    let c = env.cursor.as_ref()?;
    let text = snapshot.file_text(&env.cursor_file()?)?;
    let start = c.line.saturating_sub(window);
    let s = crate::index::line_slice(text, start, c.line);
    (!s.trim().is_empty()).then(|| s.to_string())
}

/// Text form of the context vector: location, enclosing unit and summary symbols.
pub fn context_system_prompt(env: &EnvironmentState, snapshot: &IndexSnapshot, ctx: &ContextVector) -> Option<String> {
    let mut out = String::new();
    let repo = env.absolute_root();
    if let Some(name) = repo.file_name() {
        out.push_str(&format!("Repository: {}\n", name.to_string_lossy()));
    }
    for e in ctx.entries.iter().filter(|e| e.weight > 0.0) {
        match &e.signal.payload {
            SignalPayload::Cursor { file, line, unit, .. } => {
                out.push_str(&format!("Cursor: {file} line {}\n", line + 1));
                if let Some(t) = snapshot.unit_text(unit) {
                    out.push_str(&format!("Enclosing code:\n{}\n", t.trim_end()));
                }
            }
            SignalPayload::Artifacts { entries } => {
                let names: Vec<&str> = entries.iter().map(|a| a.path.as_str()).collect();
                out.push_str(&format!("Build artifacts: {}\n", names.join(", ")));
            }
            SignalPayload::IndexInformation { names, .. } => {
                out.push_str(&format!("Frequently used symbols: {}\n", names.join(", ")));
            }
            SignalPayload::RepoPath { .. } => {}
        }
    }
    (!out.is_empty()).then_some(out)
}

fn retrieved_parts(snapshot: &IndexSnapshot, r: &RetrievalResult) -> Vec<String> {
    r.items
        .iter()
        .filter_map(|it| {
            let u = snapshot.unit(&it.unit)?;
            let text = snapshot.unit_text(&it.unit)?;
            Some(format!("# {} ({})\n{}", u.file, u.name, text.trim_end()))
        })
        .collect()
}

/// Assembles the prompt `model` would send for `req`.
pub fn build_prompt(
    model: ModelConfig,
    snapshot: &IndexSnapshot,
    params: &LearnedParams,
    req: &PromptRequest<'_>,
    opts: &PipelineOptions,
) -> Result<BuiltPrompt, PipelineError> {
    let tok = &opts.tokenizer;
    let mut components = vec![
        PromptComponent::new(ComponentKind::SystemPrompt, opts.system_prompt.clone(), tok),
        PromptComponent::new(ComponentKind::NewMessage, req.query, tok),
    ];
    if !req.history.is_empty() {
        components.push(PromptComponent::history(req.history.clone(), tok));
    }
    let mut retrieval = None;
    let mut context = None;
    let mut diagnostics = Vec::new();
    let ordering = if model == ModelConfig::Camp { params.ordering.clone() } else { Default::default() };

    match model {
        ModelConfig::CloudOnly => {}
        ModelConfig::BaseRag => {
            let h = HeuristicMatrix::identity(snapshot.d_emb());
            let input = req.input_text.unwrap_or(req.query);
            let ro = RetrievalOptions {
                fusion: opts.fusion,
                scope: CandidateScope::All,
                exclude_cursor_unit: false,
            };
            let r = retrieve_with(snapshot, None, input, None, &h, opts.k, &ro)?;
            components.push(PromptComponent::from_parts(ComponentKind::RetrievedContent, retrieved_parts(snapshot, &r), tok));
            retrieval = Some(r);
        }
        ModelConfig::FileContext | ModelConfig::Camp => {
            if params.d() != snapshot.d_emb() {
                return Err(PipelineError::Dimension {
                    params: params.d(),
                    index: snapshot.d_emb(),
                });
            }
            let (ctx, diags) = context_vector(req.environment, snapshot, &params.eta, opts.tau_c);
            diagnostics = diags;
            let ctx = ctx.ok();
            let preceding = preceding_lines(snapshot, req.environment, INPUT_WINDOW);
            let input = req.input_text.or(preceding.as_deref()).unwrap_or("");
            let scope = match (model, req.environment.cursor_file()) {
                (ModelConfig::FileContext, Some(f)) => CandidateScope::Files(BTreeSet::from([f])),
                _ => CandidateScope::All,
            };
            let ro = RetrievalOptions {
                fusion: opts.fusion,
                scope,
                exclude_cursor_unit: true,
            };
            match retrieve_with(snapshot, ctx.as_ref(), input, Some(req.query), &params.h, opts.k, &ro) {
                Ok(r) => {
                    components.push(PromptComponent::from_parts(ComponentKind::RetrievedContent, retrieved_parts(snapshot, &r), tok));
                    retrieval = Some(r);
                }
                // the open file may hold nothing besides the cursor's own unit
                Err(RetrievalError::NoCandidates) => {}
                Err(e) => return Err(e.into()),
            }
            if let Some(text) = ctx.as_ref().and_then(|c| context_system_prompt(req.environment, snapshot, c)) {
                components.push(PromptComponent::new(ComponentKind::ContextSystemPrompt, text, tok));
            }
            context = ctx;
        }
    }
    components.retain(|c| c.token_count() > 0 || c.kind() == ComponentKind::NewMessage);
    let plan = construct(components, &ordering, opts.budget, tok)?;
    let payload = serialize(&plan, opts.dialect);
    Ok(BuiltPrompt {
        plan,
        payload,
        retrieval,
        context,
        diagnostics,
    })
}
