//! Synthetic benchmark fixtures for the three runnable levels.
//!
//! Every task asks for code that must call a "needle" function. The needle
//! calls the same two helpers as the code around the cursor, while a random
//! number of decoys repeat the request's wording but call other helpers.
//! Where the needle lives decides the level: a sibling method in the cursor's
//! class, a function elsewhere in the cursor's file, or a function in another
//! file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_manifest, EvalCase, EvalError, Level, Verifier};
use crate::context::{Cursor, EnvironmentState};
use crate::llm::{MockRules, DEFAULT_BASE_RATE};

const VERBS: [&str; 10] = ["aggregate", "compute", "resolve", "merge", "validate", "collect", "render", "encode", "normalize", "reconcile"];
const NOUNS: [&str; 12] = ["ledger", "invoice", "order", "sensor", "packet", "report", "session", "profile", "route", "batch", "metric", "shipment"];
const QUALS: [&str; 8] = ["totals", "window", "summary", "offsets", "headers", "weights", "limits", "balances"];
const HELPER_WORDS: [&str; 10] = ["stage", "prune", "fold", "scan", "tally", "clip", "split", "pack", "sift", "blend"];

/// Decoys per task, inclusive range.
const DECOYS: (usize, usize) = (4, 12);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub tasks_per_level: usize,
    pub seed: u64,
    pub base_rate: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            tasks_per_level: 30,
            seed: 0,
            base_rate: DEFAULT_BASE_RATE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSuite {
    pub manifest: PathBuf,
    /// Mock backend rules mapping each task to its needle.
    pub rules: PathBuf,
    pub cases: Vec<EvalCase>,
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

struct Names {
    used: BTreeSet<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
        loop {
            let n = make(rng);
            if self.used.insert(n.clone()) {
                return n;
            }
        }
    }
}

struct TaskFiles {
    files: BTreeMap<String, String>,
    cursor_file: String,
    cursor_line: u32,
    cursor_col: u32,
    needle: String,
    query: String,
}

fn function(name: &str, doc: &str, a: &str, b: &str, indent: &str, method: bool) -> String {
    let params = if method { "self, records" } else { "records" };
    format!("{indent}def {name}({params}):\n{indent}    \"\"\"{doc}\"\"\"\n{indent}    staged = {a}(records)\n{indent}    return {b}(staged)\n")
}

fn make_task(level: Level, rng: &mut ChaCha8Rng) -> TaskFiles {
    let verb = *VERBS.choose(rng).unwrap();
    let noun = *NOUNS.choose(rng).unwrap();
    let qual = *QUALS.choose(rng).unwrap();
    let doc = format!("{} the {qual} for each {noun} entry.", title(verb));
    let query = format!("{verb} the {qual} for each {noun} entry");
    let mut names = Names { used: BTreeSet::new() };

    let helper = |rng: &mut ChaCha8Rng| format!("{}_{}_{}", HELPER_WORDS.choose(rng).unwrap(), NOUNS.choose(rng).unwrap(), rng.gen_range(0..100));
    let h1 = names.fresh(rng, helper);
    let h2 = names.fresh(rng, helper);
    let decoy_helpers: Vec<(String, String)> = (0..3).map(|_| (names.fresh(rng, helper), names.fresh(rng, helper))).collect();

    let mut helpers = String::from("\"\"\"Shared helpers.\"\"\"\n\n");
    for h in [&h1, &h2].into_iter().chain(decoy_helpers.iter().flat_map(|(a, b)| [a, b])) {
        let _ = write!(helpers, "\ndef {h}(values):\n    \"\"\"Internal step.\"\"\"\n    return [v for v in values if v is not None]\n\n");
    }
    let import_line = format!(
        "from core.helpers import {}\n",
        [h1.clone(), h2.clone()].into_iter().chain(decoy_helpers.iter().flat_map(|(a, b)| [a.clone(), b.clone()])).collect::<Vec<_>>().join(", ")
    );

    let func_name = |rng: &mut ChaCha8Rng| format!("{verb}_{noun}_{}_{:03}", QUALS.choose(rng).unwrap(), rng.gen_range(0..1000));
    let needle = names.fresh(rng, func_name);
    let n_decoys = rng.gen_range(DECOYS.0..=DECOYS.1);
    let decoys: Vec<String> = (0..n_decoys).map(|_| names.fresh(rng, func_name)).collect();

    // decoys and (project level) the needle are shuffled across two module files
    let mut placed: Vec<(String, bool)> = decoys.into_iter().map(|d| (d, false)).collect();
    if level == Level::ProjectRunnable {
        placed.push((needle.clone(), true));
    }
    placed.shuffle(rng);
    let mod_names = [format!("pkg/{noun}_tools.py"), format!("pkg/{noun}_extra.py")];
    let mut modules = [import_line.clone(), import_line.clone()];
    for (i, (name, is_needle)) in placed.iter().enumerate() {
        let (a, b) = if *is_needle {
            (h1.clone(), h2.clone())
        } else {
            decoy_helpers[i % decoy_helpers.len()].clone()
        };
        let m = rng.gen_range(0..2);
        modules[m].push_str("\n\n");
        modules[m].push_str(&function(name, &doc, &a, &b, "", false));
    }

    let class = format!("{}Service", title(noun));
    let mut app = format!("from core.helpers import {h1}, {h2}\n\n\nclass {class}:\n    def __init__(self, store):\n        self.store = store\n");
    if level == Level::ClassRunnable {
        app.push('\n');
        app.push_str(&function(&needle, &doc, &h1, &h2, "    ", true));
    }
    app.push_str(&format!(
        "\n    def run(self, items):\n        \"\"\"Process pending {noun} items.\"\"\"\n        staged = {h1}(items)\n        merged = {h2}(staged)\n"
    ));
    let cursor_line = app.lines().count() as u32;
    app.push_str("        # TODO\n        return merged\n");
    if level == Level::FileRunnable {
        app.push_str("\n\n");
        app.push_str(&function(&needle, &doc, &h1, &h2, "", false));
    }

    let cursor_file = format!("app/{noun}_service.py");
    let mut files = BTreeMap::new();
    files.insert("core/helpers.py".to_string(), helpers);
    files.insert(cursor_file.clone(), app);
    for (p, m) in mod_names.into_iter().zip(modules) {
        files.insert(p, m);
    }
    TaskFiles {
        files,
        cursor_file,
        cursor_line,
        cursor_col: 8,
        needle,
        query,
    }
}

/// Writes fixtures, a JSONL manifest and mock rules under `dir`.
pub fn generate_suite(dir: &Path, spec: &SuiteSpec) -> Result<GeneratedSuite, EvalError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = String::new();
    let mut rules = MockRules {
        base_rate: spec.base_rate,
        seed: spec.seed,
        ..MockRules::default()
    };
    for level in Level::ALL {
        let prefix = level.as_str().split('-').next().unwrap();
        for i in 0..spec.tasks_per_level {
            let task_id = format!("{prefix}-{i:03}");
            let t = make_task(level, &mut rng);
            let rel = PathBuf::from("fixtures").join(&task_id);
            for (p, text) in &t.files {
                let full = dir.join(&rel).join(p);
                std::fs::create_dir_all(full.parent().unwrap()).map_err(io(&full))?;
                std::fs::write(&full, text).map_err(io(&full))?;
            }
            let case = EvalCase {
                task_id: task_id.clone(),
                level,
                repo_fixture: rel.clone(),
                environment: EnvironmentState {
                    repo_root: rel,
                    cursor: Some(Cursor {
                        file: t.cursor_file,
                        line: t.cursor_line,
                        col: t.cursor_col,
                    }),
                    artifacts: None,
                },
                query: t.query,
                verifier: Verifier::NeedleMatch {
                    needle: t.needle.clone(),
                    regex: false,
                },
            };
            manifest.push_str(&serde_json::to_string(&case).expect("case serializes"));
            manifest.push('\n');
            rules.needles.insert(task_id, t.needle);
        }
    }
    let manifest_path = dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest).map_err(io(&manifest_path))?;
    let rules_path = dir.join("mock_rules.json");
    std::fs::write(&rules_path, serde_json::to_string_pretty(&rules).expect("rules serialize") + "\n").map_err(io(&rules_path))?;
    let cases = load_manifest(&manifest_path)?;
    Ok(GeneratedSuite {
        manifest: manifest_path,
        rules: rules_path,
        cases,
    })
}
