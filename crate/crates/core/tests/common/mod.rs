//! Oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use camp::context::ContextSource;
use camp::index::{build_from_sources, build_index, FileEdit, IndexConfig};
use camp::prompt::{construct, parse_flat_text, serialize, ComponentKind, ComponentOrder, Dialect, PromptComponent, PromptError, PromptPayload, Priority, Tokenizer};
use camp::retrieval::FusionWeights;
use camp::train::{train_ordering, ProblemExample, RetrievalProblem, N_SOURCES};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---- index fuzzing ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flavor {
    Brace,
    Indent,
    Mixed,
}

pub fn random_function(rng: &mut ChaCha8Rng, names: &[&str], py: bool) -> String {
    let name = names.choose(rng).unwrap();
    let callee = names.choose(rng).unwrap();
    let k = rng.gen_range(0..100);
    if py {
        format!("\ndef {name}_{k}(v):\n    return {callee}(v) + {k}\n")
    } else {
        format!("\nfn {name}_{k}(v: i64) -> i64 {{\n    {callee}(v) + {k}\n}}\n")
    }
}

fn is_py(path: &str) -> bool {
    path.ends_with(".py")
}

fn random_edit(rng: &mut ChaCha8Rng, files: &BTreeMap<String, String>, flavor: Flavor) -> FileEdit {
    let names = ["load", "store", "merge", "split", "scan", "emit"];
    let paths: Vec<&String> = files.keys().collect();
    match rng.gen_range(0..10) {
        // append a definition
        0..=2 if !paths.is_empty() => {
            let path = paths.choose(rng).unwrap().to_string();
            let len = files[&path].len();
            let text = random_function(rng, &names, is_py(&path));
            FileEdit::Replace {
                path,
                start: len,
                end: len,
                text,
            }
        }
        // rename one identifier occurrence
        3..=4 if !paths.is_empty() => {
            let path = paths.choose(rng).unwrap().to_string();
            let text = &files[&path];
            let hits: Vec<(usize, &str)> = names.iter().flat_map(|n| text.match_indices(n)).collect();
            match hits.choose(rng) {
                Some(&(at, n)) => FileEdit::Replace {
                    path,
                    start: at,
                    end: at + n.len(),
                    text: names.choose(rng).unwrap().to_string(),
                },
                None => {
                    let text = random_function(rng, &names, is_py(&path));
                    FileEdit::Write { path, text }
                }
            }
        }
        // arbitrary byte-range deletion (may leave a file unparseable)
        5 if !paths.is_empty() => {
            let path = paths.choose(rng).unwrap().to_string();
            let len = files[&path].len();
            let start = rng.gen_range(0..=len);
            let end = rng.gen_range(start..=len.min(start + 40));
            FileEdit::Replace {
                path,
                start,
                end,
                text: String::new(),
            }
        }
        6 if paths.len() > 1 => FileEdit::Delete {
            path: paths.choose(rng).unwrap().to_string(),
        },
        7 if !paths.is_empty() => {
            let path = paths.choose(rng).unwrap().to_string();
            FileEdit::Replace {
                start: 0,
                end: files[&path].len(),
                text: files[&path].clone(),
                path,
            }
        }
        _ => {
            let py = match flavor {
                Flavor::Brace => false,
                Flavor::Indent => true,
                Flavor::Mixed => rng.gen_bool(0.5),
            };
            let ext = if py { "py" } else { "rs" };
            FileEdit::Write {
                path: format!("m{}/f{}.{ext}", rng.gen_range(0..2), rng.gen_range(0..6)),
                text: (0..rng.gen_range(1..4)).map(|_| random_function(rng, &names, py)).collect(),
            }
        }
    }
}

pub fn apply_to_tree(files: &mut BTreeMap<String, String>, e: &FileEdit) {
    match e {
        FileEdit::Replace { path, start, end, text } => {
            files.get_mut(path).unwrap().replace_range(*start..*end, text);
        }
        FileEdit::Write { path, text } => {
            files.insert(path.clone(), text.clone());
        }
        FileEdit::Delete { path } => {
            files.remove(path);
        }
    }
}

pub fn write_tree(root: &Path, files: &BTreeMap<String, String>) {
    for (p, t) in files {
        let full = root.join(p);
        std::fs::create_dir_all(full.parent().unwrap()).unwrap();
        std::fs::write(full, t).unwrap();
    }
}

/// Replays `edits` random edits; after each one the incremental snapshot must
/// match a from-scratch build of the edited sources, and at the end a build
/// from disk.
pub fn fuzz_repo(seed: u64, flavor: Flavor, edits: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = BTreeMap::new();
    for i in 0..3 {
        let py = match flavor {
            Flavor::Brace => false,
            Flavor::Indent => true,
            Flavor::Mixed => i % 2 == 1,
        };
        let names = ["load", "store", "merge"];
        let body: String = (0..3).map(|_| random_function(&mut rng, &names, py)).collect();
        files.insert(format!("src/file{i}.{}", if py { "py" } else { "rs" }), body);
    }
    let cfg = IndexConfig {
        d_emb: 64,
        ..IndexConfig::default()
    };
    let mut snap = build_from_sources(&cfg, files.clone()).map_err(|e| e.to_string())?;
    for step in 0..edits {
        let edit = random_edit(&mut rng, &files, flavor);
        let rev = snap.revision();
        snap = snap.apply_edit(&edit).map_err(|e| format!("step {step}: {edit:?}: {e}"))?;
        apply_to_tree(&mut files, &edit);
        ensure!(snap.revision() == rev + 1, "step {step}: revision did not advance");
        let rebuilt = build_from_sources(&cfg, files.clone()).map_err(|e| e.to_string())?;
        ensure!(snap.content_hash_hex() == rebuilt.content_hash_hex(), "step {step}: hash differs after {edit:?}");
        ensure!(snap.dangling_edges() == 0, "step {step}: {} dangling edges", snap.dangling_edges());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_tree(dir.path(), &files);
    let from_disk = build_index(dir.path(), &cfg).map_err(|e| e.to_string())?;
    ensure!(snap.content_hash_hex() == from_disk.content_hash_hex(), "final snapshot differs from a build from disk");
    Ok(())
}

// ---- gradients ----

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random problem with d in 4..=16, 3..=10 documents and up to four distinct
/// context sources per example, so no source is ever capped away.
pub fn random_problem(rng: &mut ChaCha8Rng) -> RetrievalProblem {
    let d = rng.gen_range(4..=16);
    let n_docs = rng.gen_range(3..=10);
    let docs = DMatrix::from_fn(n_docs, d, |_, _| rng.gen_range(-1.0..1.0));
    let n_ex = rng.gen_range(1..=5);
    let examples = (0..n_ex)
        .map(|_| {
            let mut sources = ContextSource::ALL.to_vec();
            sources.shuffle(rng);
            sources.truncate(rng.gen_range(1..=N_SOURCES));
            let candidates: Vec<usize> = (0..n_docs).filter(|_| rng.gen_bool(0.8)).collect();
            let candidates = if candidates.is_empty() { vec![0] } else { candidates };
            ProblemExample {
                input: Some(uniform(rng, d)),
                user_query: rng.gen_bool(0.5).then(|| uniform(rng, d)),
                signals: sources.into_iter().map(|s| (s, uniform(rng, d))).collect(),
                positive: rng.gen_range(0..candidates.len()),
                candidates,
            }
        })
        .collect();
    RetrievalProblem {
        d,
        docs,
        examples,
        fusion: FusionWeights::default(),
        tau_c: N_SOURCES,
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
    diff / scale
}

/// Relative errors of the analytic H and η gradients against central
/// differences with step 1e-5, at a random H and an interior η.
pub fn gradient_errors(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let step = 1e-5;
    let p = random_problem(rng);
    let h = DMatrix::from_fn(p.d, p.d, |_, _| rng.gen_range(-1.0..1.0));
    let raw: Vec<f64> = (0..N_SOURCES).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let eta: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let got = p.loss_and_grads(&h, &eta).unwrap();

    let mut fd_h = Vec::with_capacity(p.d * p.d);
    let mut an_h = Vec::with_capacity(p.d * p.d);
    for i in 0..p.d {
        for j in 0..p.d {
            let mut hp = h.clone();
            hp[(i, j)] += step;
            let mut hm = h.clone();
            hm[(i, j)] -= step;
            fd_h.push((p.loss(&hp, &eta).unwrap() - p.loss(&hm, &eta).unwrap()) / (2.0 * step));
            an_h.push(got.grad_h[(i, j)]);
        }
    }
    let fd_eta: Vec<f64> = (0..N_SOURCES)
        .map(|k| {
            let mut ep = eta.clone();
            ep[k] += step;
            let mut em = eta.clone();
            em[k] -= step;
            (p.loss(&h, &ep).unwrap() - p.loss(&h, &em).unwrap()) / (2.0 * step)
        })
        .collect();
    (rel_err(&an_h, &fd_h), rel_err(&got.grad_eta, &fd_eta))
}

// ---- singular values ----

/// One-sided Jacobi: rotate column pairs until they are orthogonal; the
/// singular values are the final column norms and `A V` holds `U Σ`.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = (0..m).map(|i| u[(i, p)] * u[(i, p)]).sum();
                let beta: f64 = (0..m).map(|i| u[(i, q)] * u[(i, q)]).sum();
                let gamma: f64 = (0..m).map(|i| u[(i, p)] * u[(i, q)]).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    for (j, s) in sigma.iter().enumerate() {
        if *s > 0.0 {
            let col = u.column(j) / *s;
            u.set_column(j, &col);
        }
    }
    (u, sigma, v)
}

pub fn oracle_svt(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let (u, sigma, v) = jacobi_svd(a);
    let shrunk = DMatrix::from_diagonal(&DVector::from_iterator(sigma.len(), sigma.iter().map(|s| (s - tau).max(0.0))));
    u * shrunk * v.transpose()
}

/// Random tall-or-square matrix up to 64x64.
pub fn random_matrix(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rng.gen_range(1..=64);
    let m = rng.gen_range(n..=64);
    DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
}

// ---- ordering ----

pub fn permutations<T: Copy>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// One random separable trial: item `i` costs `w_i · position`, with weights
/// at least 0.01 apart so every swap clears the 1e-3 threshold. The search
/// must reach the exhaustive optimum using exactly C(k,2) swaps.
pub fn ordering_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let k = rng.gen_range(2..=6);
    let items: Vec<u8> = (0..k as u8).collect();
    let weights: Vec<f64> = loop {
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut s = w.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|p| p[1] - p[0] >= 0.01) {
            break w;
        }
    };
    let loss = |arr: &[u8]| arr.iter().enumerate().map(|(pos, &it)| weights[it as usize] * pos as f64).sum::<f64>();
    let mut calls = 0;
    let out = train_ordering(
        &items,
        |arr| {
            calls += 1;
            loss(arr)
        },
        1e-3,
        8,
    )
    .map_err(|e| e.to_string())?;
    let pairs = k * (k - 1) / 2;
    ensure!(out.swap_evaluations == pairs, "k={k}: {} swaps, want {pairs}", out.swap_evaluations);
    ensure!(calls == 1 + pairs, "k={k}: {calls} loss calls");
    let best = permutations(&items).into_iter().min_by(|a, b| loss(a).total_cmp(&loss(b))).unwrap();
    ensure!(out.order == best, "k={k}: learned {:?}, optimum {best:?}", out.order);
    Ok(())
}

// ---- prompts ----

/// Token counter written independently of the library: runs of word
/// characters split into chunks of `cpt`, every other non-space char is one token.
pub fn count_tokens(text: &str, cpt: usize) -> usize {
    let mut n = 0;
    let mut run = 0usize;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            run += 1;
        } else {
            n += run.div_ceil(cpt);
            run = 0;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n + run.div_ceil(cpt)
}

#[derive(Debug, Clone)]
pub struct PromptCase {
    pub parts: Vec<(ComponentKind, Vec<String>, Priority)>,
    pub order: Vec<ComponentKind>,
    pub budget: usize,
    pub cpt: usize,
}

const ALPHABET: &[char] = &['a', 'b', 'Z', 'q', '0', '7', '_', ' ', ' ', ',', '.', ';', '(', ')', '{', '}', 'é', '\n'];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..=120);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

pub fn random_prompt_case(rng: &mut ChaCha8Rng) -> PromptCase {
    let mut parts = Vec::new();
    for k in ComponentKind::ALL {
        if !rng.gen_bool(0.5) {
            continue;
        }
        let n = if matches!(k, ComponentKind::MessageHistory | ComponentKind::RetrievedContent) { rng.gen_range(0..6) } else { 1 };
        let texts = (0..n).map(|_| random_text(rng)).collect();
        let p = if rng.gen_bool(0.3) {
            *[Priority::Low, Priority::Medium, Priority::High].choose(rng).unwrap()
        } else {
            k.default_priority()
        };
        parts.push((k, texts, p));
    }
    let mut order = ComponentKind::ALL.to_vec();
    order.shuffle(rng);
    PromptCase {
        parts,
        order,
        budget: rng.gen_range(1..300),
        cpt: rng.gen_range(1..6),
    }
}

/// Budget safety, priority-respecting truncation, order fidelity and
/// serialization round trips for one constructed plan.
pub fn check_prompt_case(case: &PromptCase) -> Result<(), String> {
    let tok = Tokenizer::new(case.cpt);
    let comps: Vec<PromptComponent> = case
        .parts
        .iter()
        .map(|(k, parts, p)| PromptComponent::from_parts(*k, parts.clone(), &tok).with_priority(*p))
        .collect();
    let order = ComponentOrder::new(&case.order).map_err(|e| e.to_string())?;
    let original: Vec<(ComponentKind, usize, Priority, String, Vec<String>)> =
        comps.iter().map(|c| (c.kind(), c.token_count(), c.priority(), c.text(), c.parts().to_vec())).collect();
    for (k, n, _, t, _) in &original {
        ensure!(*n == count_tokens(t, case.cpt), "{k}: library counts {n} tokens");
    }
    let has_high = original.iter().any(|o| o.2 == Priority::High);
    let msg = original.iter().find(|o| o.0 == ComponentKind::NewMessage);

    let plan = match construct(comps, &order, case.budget, &tok) {
        Ok(p) => p,
        Err(PromptError::NoHighPriority) => {
            ensure!(!has_high, "rejected a set with a high-priority component");
            return Ok(());
        }
        Err(PromptError::BudgetTooSmall { needed, budget }) => {
            ensure!(has_high && Some(needed) == msg.map(|m| m.1) && needed > budget, "spurious BudgetTooSmall");
            return Ok(());
        }
        Err(e) => return Err(format!("unexpected error {e}")),
    };
    ensure!(has_high, "accepted a set without a high-priority component");

    // budget safety, recounted independently
    let recount: usize = plan.ordered.iter().map(|c| count_tokens(&c.text(), case.cpt)).sum();
    ensure!(recount == plan.total_tokens, "plan reports {} tokens, recount {recount}", plan.total_tokens);
    ensure!(recount <= case.budget, "{recount} tokens over budget {}", case.budget);

    // order fidelity: surviving kinds follow the requested permutation
    let pos: Vec<usize> = plan.kinds().iter().map(|k| case.order.iter().position(|o| o == k).unwrap()).collect();
    ensure!(pos.windows(2).all(|w| w[0] < w[1]), "order {:?} breaks {:?}", plan.kinds(), case.order);

    let after = |k: ComponentKind| plan.component(k).map(|c| c.token_count()).unwrap_or(0);
    let lost = |p: Priority| original.iter().any(|o| o.2 == p && after(o.0) < o.1);
    // the new message is never shortened, whatever its priority
    let all_gone = |p: Priority| original.iter().filter(|o| o.2 == p && o.0 != ComponentKind::NewMessage).all(|o| after(o.0) == 0);
    if lost(Priority::Medium) {
        ensure!(all_gone(Priority::Low), "medium truncated while low content remains");
    }
    if lost(Priority::High) {
        ensure!(all_gone(Priority::Low) && all_gone(Priority::Medium), "high truncated while lower content remains");
    }
    let before_total: usize = original.iter().map(|o| o.1).sum();
    if before_total <= case.budget {
        ensure!(plan.truncations.is_empty(), "truncated a set that fit");
    }
    for (k, n, _, t, parts) in &original {
        let Some(c) = plan.component(*k) else { continue };
        match k {
            ComponentKind::NewMessage => ensure!(c.token_count() == *n && &c.text() == t, "new message changed"),
            // oldest messages go first, survivors stay whole
            ComponentKind::MessageHistory => ensure!(parts.ends_with(c.parts()), "history lost a recent message"),
            _ => ensure!(t.starts_with(&c.text()), "{k} is not a prefix of its original"),
        }
    }

    let PromptPayload::Flat(flat) = serialize(&plan, Dialect::FlatText) else { unreachable!() };
    let parsed = parse_flat_text(&flat).map_err(|e| e.to_string())?;
    let want: Vec<(ComponentKind, String)> = plan.ordered.iter().map(|c| (c.kind(), c.text())).collect();
    ensure!(parsed == want, "flat text round trip lost content");

    let PromptPayload::Chat(msgs) = serialize(&plan, Dialect::ChatMessages) else { unreachable!() };
    ensure!(msgs.len() == plan.ordered.len(), "chat message count");
    for (m, c) in msgs.iter().zip(&plan.ordered) {
        ensure!(m.content == c.text() && m.role == c.kind().chat_role(), "chat message for {} differs", c.kind());
    }
    Ok(())
}
