//! Priority-ordered prompt assembly under a token budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("at least one high-priority component is required")]
    NoHighPriority,
    #[error("component kind {0} appears more than once")]
    DuplicateKind(ComponentKind),
    #[error("budget too small for request: new message needs {needed} tokens, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("malformed flat-text prompt: {0}")]
    MalformedFlatText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    ContextSystemPrompt,
    RetrievedContent,
    NewMessage,
    MessageHistory,
    SystemPrompt,
}

impl ComponentKind {
    /// In descending default priority.
    pub const ALL: [ComponentKind; 5] = [
        ComponentKind::ContextSystemPrompt,
        ComponentKind::RetrievedContent,
        ComponentKind::NewMessage,
        ComponentKind::MessageHistory,
        ComponentKind::SystemPrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::ContextSystemPrompt => "context_system_prompt",
            ComponentKind::RetrievedContent => "retrieved_content",
            ComponentKind::NewMessage => "new_message",
            ComponentKind::MessageHistory => "message_history",
            ComponentKind::SystemPrompt => "system_prompt",
        }
    }

    pub fn default_priority(self) -> Priority {
        match self {
            ComponentKind::ContextSystemPrompt | ComponentKind::RetrievedContent | ComponentKind::NewMessage => {
                Priority::High
            }
            ComponentKind::MessageHistory => Priority::Medium,
            ComponentKind::SystemPrompt => Priority::Low,
        }
    }

    pub fn chat_role(self) -> &'static str {
        match self {
            ComponentKind::ContextSystemPrompt | ComponentKind::SystemPrompt => "system",
            ComponentKind::RetrievedContent | ComponentKind::NewMessage => "user",
            ComponentKind::MessageHistory => "assistant",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.code() == c)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown component kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Low,
    Medium,
    High,
}

/// Word/punctuation token counter; words longer than `chars_per_token`
/// count one token per started chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub chars_per_token: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self { chars_per_token: 4 }
    }
}

impl Tokenizer {
    pub fn new(chars_per_token: usize) -> Self {
        Self {
            chars_per_token: chars_per_token.max(1),
        }
    }

    /// Byte offsets just past each token, in order.
    fn token_ends(&self, text: &str) -> Vec<usize> {
        let cpt = self.chars_per_token.max(1);
        let mut ends = Vec::new();
        let mut word_chars = 0usize;
        let mut in_word = false;
        for (i, c) in text.char_indices() {
            let next = i + c.len_utf8();
            if c.is_alphanumeric() || c == '_' {
                if !in_word || word_chars == cpt {
                    ends.push(next);
                    word_chars = 0;
                } else {
                    *ends.last_mut().unwrap() = next;
                }
                in_word = true;
                word_chars += 1;
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    ends.push(next);
                }
            }
        }
        ends
    }

    pub fn count(&self, text: &str) -> usize {
        self.token_ends(text).len()
    }

    /// Longest prefix holding at most `max_tokens` tokens.
    pub fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let ends = self.token_ends(text);
        match ends.get(max_tokens - 1) {
            Some(&e) if ends.len() > max_tokens => &text[..e],
            _ => text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptComponent {
    kind: ComponentKind,
    /// Messages for history; retrieved items for content; otherwise one part.
    parts: Vec<String>,
    priority: Priority,
    token_count: usize,
}

impl PromptComponent {
    pub fn new(kind: ComponentKind, text: impl Into<String>, tok: &Tokenizer) -> Self {
        Self::from_parts(kind, vec![text.into()], tok)
    }

    /// Message history, oldest message first.
    pub fn history(messages: Vec<String>, tok: &Tokenizer) -> Self {
        Self::from_parts(ComponentKind::MessageHistory, messages, tok)
    }

    pub fn from_parts(kind: ComponentKind, parts: Vec<String>, tok: &Tokenizer) -> Self {
        let token_count = parts.iter().map(|p| tok.count(p)).sum();
        Self {
            kind,
            parts,
            priority: kind.default_priority(),
            token_count,
        }
    }

    pub fn with_priority(mut self, priority: Priority) -> Self {
        self.priority = priority;
        self
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn priority(&self) -> Priority {
        self.priority
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn parts(&self) -> &[String] {
        &self.parts
    }

    pub fn text(&self) -> String {
        self.parts.join("\n")
    }

    /// Removes at least `excess` tokens from the component; returns how many were removed.
    fn shed(&mut self, excess: usize, tok: &Tokenizer) -> usize {
        let before = self.token_count;
        if self.kind == ComponentKind::MessageHistory {
            // whole messages, oldest first
            let mut removed = 0;
            while removed < excess && !self.parts.is_empty() {
                removed += tok.count(&self.parts.remove(0));
            }
        } else {
            let mut left = excess;
            while left > 0 {
                let Some(last) = self.parts.last_mut() else { break };
                let n = tok.count(last);
                if n <= left {
                    self.parts.pop();
                    left -= n;
                } else {
                    let kept = tok.truncate(last, n - left).to_string();
                    *last = kept;
                    left = 0;
                }
            }
        }
        self.token_count = self.parts.iter().map(|p| tok.count(p)).sum();
        before - self.token_count
    }
}

/// Permutation of component kinds; position 0 comes first in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentOrder(Vec<ComponentKind>);

impl Default for ComponentOrder {
    fn default() -> Self {
        Self(ComponentKind::ALL.to_vec())
    }
}

impl ComponentOrder {
    /// Kinds not listed keep their default relative order after the listed ones.
    pub fn new(kinds: &[ComponentKind]) -> Result<Self, PromptError> {
        let mut out: Vec<ComponentKind> = Vec::with_capacity(5);
        for &k in kinds {
            if out.contains(&k) {
                return Err(PromptError::DuplicateKind(k));
            }
            out.push(k);
        }
        for k in ComponentKind::ALL {
            if !out.contains(&k) {
                out.push(k);
            }
        }
        Ok(Self(out))
    }

    pub fn kinds(&self) -> &[ComponentKind] {
        &self.0
    }

    pub fn position(&self, k: ComponentKind) -> usize {
        self.0.iter().position(|&x| x == k).expect("order is a full permutation")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub kind: ComponentKind,
    pub from_tokens: usize,
    pub to_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub ordered: Vec<PromptComponent>,
    pub ordering: ComponentOrder,
    pub budget: usize,
    pub total_tokens: usize,
    /// Components that lost tokens, including ones dropped entirely (`to_tokens == 0`).
    pub truncations: Vec<Truncation>,
}

impl PromptPlan {
    pub fn kinds(&self) -> Vec<ComponentKind> {
        self.ordered.iter().map(|c| c.kind).collect()
    }

    pub fn component(&self, kind: ComponentKind) -> Option<&PromptComponent> {
        self.ordered.iter().find(|c| c.kind == kind)
    }
}

/// Orders components by `ordering` and sheds tokens, lowest priority first,
/// until the plan fits `budget`. The new message is never shortened.
pub fn construct(
    components: Vec<PromptComponent>,
    ordering: &ComponentOrder,
    budget: usize,
    tok: &Tokenizer,
) -> Result<PromptPlan, PromptError> {
    if budget == 0 {
        return Err(PromptError::ZeroBudget);
    }
    if !components.iter().any(|c| c.priority == Priority::High) {
        return Err(PromptError::NoHighPriority);
    }
    let mut seen = Vec::new();
    for c in &components {
        if seen.contains(&c.kind) {
            return Err(PromptError::DuplicateKind(c.kind));
        }
        seen.push(c.kind);
    }
    if let Some(m) = components.iter().find(|c| c.kind == ComponentKind::NewMessage) {
        if m.token_count > budget {
            return Err(PromptError::BudgetTooSmall {
                needed: m.token_count,
                budget,
            });
        }
    }
    let mut ordered = components;
    ordered.sort_by_key(|c| ordering.position(c.kind));
    let mut total: usize = ordered.iter().map(|c| c.token_count).sum();
    let mut truncations = Vec::new();

    'tiers: for tier in [Priority::Low, Priority::Medium, Priority::High] {
        // tail-first: the component placed last loses tokens first
        for i in (0..ordered.len()).rev() {
            if total <= budget {
                break 'tiers;
            }
            let c = &mut ordered[i];
            if c.priority != tier || c.kind == ComponentKind::NewMessage || c.token_count == 0 {
                continue;
            }
            let from = c.token_count;
            total -= c.shed(total - budget, tok);
            truncations.push(Truncation {
                kind: c.kind,
                from_tokens: from,
                to_tokens: c.token_count,
            });
        }
    }
    ordered.retain(|c| c.token_count > 0 || c.kind == ComponentKind::NewMessage);
    debug_assert!(total <= budget);
    Ok(PromptPlan {
        ordered,
        ordering: ordering.clone(),
        budget,
        total_tokens: total,
        truncations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    ChatMessages,
    FlatText,
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chat" | "chat_messages" => Ok(Dialect::ChatMessages),
            "flat" | "flat_text" => Ok(Dialect::FlatText),
            _ => Err(format!("unknown dialect {s:?} (expected chat or flat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptPayload {
    Chat(Vec<ChatMessage>),
    Flat(String),
}

impl PromptPayload {
    /// All text a model would see, in order.
    pub fn full_text(&self) -> String {
        match self {
            PromptPayload::Chat(m) => m.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n"),
            PromptPayload::Flat(s) => s.clone(),
        }
    }
}

pub fn serialize(plan: &PromptPlan, dialect: Dialect) -> PromptPayload {
    match dialect {
        Dialect::ChatMessages => PromptPayload::Chat(
            plan.ordered
                .iter()
                .map(|c| ChatMessage {
                    role: c.kind.chat_role().to_string(),
                    content: c.text(),
                })
                .collect(),
        ),
        Dialect::FlatText => {
            let mut out = String::new();
            for c in &plan.ordered {
                let text = c.text();
                out.push_str(&format!("<<<{} {}>>>\n", c.kind, text.len()));
                out.push_str(&text);
                out.push('\n');
            }
            PromptPayload::Flat(out)
        }
    }
}

/// Recovers `(kind, text)` sections from flat-text output.
pub fn parse_flat_text(s: &str) -> Result<Vec<(ComponentKind, String)>, PromptError> {
    let bad = |m: &str| PromptError::MalformedFlatText(m.to_string());
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        let (header, body) = rest.split_once('\n').ok_or_else(|| bad("missing header newline"))?;
        let inner = header
            .strip_prefix("<<<")
            .and_then(|h| h.strip_suffix(">>>"))
            .ok_or_else(|| bad("bad header"))?;
        let (kind, len) = inner.split_once(' ').ok_or_else(|| bad("bad header fields"))?;
        let kind: ComponentKind = kind.parse().map_err(|e: String| PromptError::MalformedFlatText(e))?;
        let len: usize = len.parse().map_err(|_| bad("bad length"))?;
        if body.len() < len + 1 || !body.is_char_boundary(len) || body.as_bytes()[len] != b'\n' {
            return Err(bad("section length does not match"));
        }
        out.push((kind, body[..len].to_string()));
        rest = &body[len + 1..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn tokenizer_counts_words_punct_and_long_words() {
        let t = Tokenizer::default();
        assert_eq!(t.count("a b  c"), 3);
        assert_eq!(t.count("f(x);"), 5);
        assert_eq!(t.count("abcdefghij"), 3);
        assert_eq!(t.count(""), 0);
        assert_eq!(t.truncate("abcdefghij k", 2), "abcdefgh");
        assert_eq!(t.truncate("a, b", 2), "a,");
        assert_eq!(t.truncate("a b", 5), "a b");
    }

    #[test]
    fn default_priorities() {
        use ComponentKind::*;
        let p: Vec<Priority> = ComponentKind::ALL.iter().map(|k| k.default_priority()).collect();
        assert_eq!(p, [Priority::High, Priority::High, Priority::High, Priority::Medium, Priority::Low]);
        assert_eq!(ComponentOrder::default().kinds(), &[ContextSystemPrompt, RetrievedContent, NewMessage, MessageHistory, SystemPrompt]);
    }

    #[test]
    fn everything_fits() {
        let t = Tokenizer::default();
        let cs = vec![
            PromptComponent::new(ComponentKind::SystemPrompt, "be brief", &t),
            PromptComponent::new(ComponentKind::NewMessage, "write add", &t),
        ];
        let plan = construct(cs, &ComponentOrder::default(), 100, &t).unwrap();
        assert_eq!(plan.kinds(), [ComponentKind::NewMessage, ComponentKind::SystemPrompt]);
        assert!(plan.truncations.is_empty());
        // "brief" and "write" are five characters, two tokens each
        assert_eq!(plan.total_tokens, 6);
    }

    fn three_tiers(t: &Tokenizer) -> Vec<PromptComponent> {
        vec![
            PromptComponent::new(ComponentKind::ContextSystemPrompt, words(50), t),
            PromptComponent::new(ComponentKind::RetrievedContent, words(40), t).with_priority(Priority::Medium),
            PromptComponent::new(ComponentKind::SystemPrompt, words(30), t),
        ]
    }

    #[test]
    fn low_tier_absorbs_small_excess() {
        let t = Tokenizer::default();
        let plan = construct(three_tiers(&t), &ComponentOrder::default(), 100, &t).unwrap();
        assert_eq!(plan.total_tokens, 100);
        assert_eq!(plan.component(ComponentKind::SystemPrompt).unwrap().token_count(), 10);
        assert_eq!(plan.component(ComponentKind::RetrievedContent).unwrap().token_count(), 40);
    }

    #[test]
    fn low_dropped_then_medium_truncated() {
        let t = Tokenizer::default();
        let plan = construct(three_tiers(&t), &ComponentOrder::default(), 60, &t).unwrap();
        assert_eq!(plan.total_tokens, 60);
        assert!(plan.component(ComponentKind::SystemPrompt).is_none());
        assert_eq!(plan.component(ComponentKind::RetrievedContent).unwrap().token_count(), 10);
        assert_eq!(plan.component(ComponentKind::ContextSystemPrompt).unwrap().token_count(), 50);
    }

    #[test]
    fn history_drops_oldest_whole_messages() {
        let t = Tokenizer::default();
        let cs = vec![
            PromptComponent::new(ComponentKind::NewMessage, words(5), &t),
            PromptComponent::history(vec![words(4), words(4), "newest msg".into()], &t),
        ];
        let plan = construct(cs, &ComponentOrder::default(), 10, &t).unwrap();
        let h = plan.component(ComponentKind::MessageHistory).unwrap();
        assert_eq!(h.parts(), &["newest msg".to_string()]);
        assert_eq!(plan.total_tokens, 8);
    }

    #[test]
    fn new_message_over_budget_errors() {
        let t = Tokenizer::default();
        let cs = vec![PromptComponent::new(ComponentKind::NewMessage, words(11), &t)];
        assert_eq!(
            construct(cs, &ComponentOrder::default(), 10, &t).unwrap_err(),
            PromptError::BudgetTooSmall { needed: 11, budget: 10 }
        );
    }

    #[test]
    fn precondition_errors() {
        let t = Tokenizer::default();
        let low = vec![PromptComponent::new(ComponentKind::SystemPrompt, "x", &t)];
        assert_eq!(construct(low, &ComponentOrder::default(), 10, &t).unwrap_err(), PromptError::NoHighPriority);
        let dup = vec![
            PromptComponent::new(ComponentKind::NewMessage, "x", &t),
            PromptComponent::new(ComponentKind::NewMessage, "y", &t),
        ];
        assert!(matches!(construct(dup, &ComponentOrder::default(), 10, &t), Err(PromptError::DuplicateKind(_))));
        assert!(ComponentOrder::new(&[ComponentKind::NewMessage, ComponentKind::NewMessage]).is_err());
    }

    #[test]
    fn ordering_is_visible_in_serialization() {
        use ComponentKind::*;
        let t = Tokenizer::default();
        let make = || {
            vec![
                PromptComponent::new(RetrievedContent, "fn helper() {}", &t),
                PromptComponent::history(vec!["earlier".into()], &t),
                PromptComponent::new(NewMessage, "call helper", &t),
            ]
        };
        let before = construct(make(), &ComponentOrder::default(), 100, &t).unwrap();
        let after_order = ComponentOrder::new(&[MessageHistory, NewMessage, RetrievedContent]).unwrap();
        let after = construct(make(), &after_order, 100, &t).unwrap();
        let roles = |p: &PromptPlan| match serialize(p, Dialect::ChatMessages) {
            PromptPayload::Chat(m) => m.into_iter().map(|m| m.role).collect::<Vec<_>>(),
            _ => unreachable!(),
        };
        assert_eq!(roles(&before), ["user", "user", "assistant"]);
        assert_eq!(roles(&after), ["assistant", "user", "user"]);
        assert_ne!(serialize(&before, Dialect::FlatText), serialize(&after, Dialect::FlatText));
    }

    #[test]
    fn chat_has_one_entry_per_kind() {
        let t = Tokenizer::default();
        let cs: Vec<_> = ComponentKind::ALL
            .iter()
            .rev()
            .map(|&k| PromptComponent::new(k, format!("text for {k}"), &t))
            .collect();
        let plan = construct(cs, &ComponentOrder::default(), 1000, &t).unwrap();
        let PromptPayload::Chat(m) = serialize(&plan, Dialect::ChatMessages) else { panic!() };
        assert_eq!(m.len(), 5);
        assert_eq!(m[0].content, "text for context_system_prompt");
        assert_eq!(m[4].role, "system");
    }

    #[test]
    fn flat_text_survives_header_lookalikes() {
        let t = Tokenizer::default();
        let cs = vec![
            PromptComponent::new(ComponentKind::NewMessage, "<<<system_prompt 3>>>\nabc\n", &t),
            PromptComponent::new(ComponentKind::SystemPrompt, "", &t),
        ];
        let plan = construct(cs, &ComponentOrder::default(), 100, &t).unwrap();
        let PromptPayload::Flat(s) = serialize(&plan, Dialect::FlatText) else { panic!() };
        let back = parse_flat_text(&s).unwrap();
        assert_eq!(back, vec![(ComponentKind::NewMessage, "<<<system_prompt 3>>>\nabc\n".to_string())]);
        assert!(parse_flat_text("<<<nope 1>>>\nx\n").is_err());
        assert!(parse_flat_text("<<<new_message 5>>>\nx\n").is_err());
    }
}
