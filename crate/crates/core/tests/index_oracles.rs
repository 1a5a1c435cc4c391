mod common;

use std::collections::{BTreeMap, BTreeSet};

use camp::index::{build_from_sources, build_index, FileEdit, Fragment, IndexConfig, IndexError, IndexSnapshot, SymbolKind};
use common::{fuzz_repo, random_function, Flavor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sources(files: &[(&str, &str)]) -> BTreeMap<String, String> {
    files.iter().map(|(p, t)| (p.to_string(), t.to_string())).collect()
}

const KEYWORDS: [&str; 6] = ["fn", "let", "return", "pub", "i64", "mut"];

/// Every identifier occurrence in Rust-like code: (file, line, col, name, is_definition).
fn identifier_table(files: &BTreeMap<String, String>) -> Vec<(String, u32, u32, String, bool)> {
    let ident = regex::Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap();
    let mut out = Vec::new();
    for (path, text) in files {
        for (ln, line) in text.lines().enumerate() {
            for m in ident.find_iter(line) {
                let name = m.as_str();
                if KEYWORDS.contains(&name) {
                    continue;
                }
                let is_def = line[..m.start()].trim_end().ends_with("fn");
                out.push((path.clone(), ln as u32, m.start() as u32, name.to_string(), is_def));
            }
        }
    }
    out
}

/// Reference site `(file, line, col)` to the definitions `(file, line, name)` it resolves to.
type EdgeMap = BTreeMap<(String, u32, u32), BTreeSet<(String, u32, String)>>;

#[test]
fn cross_file_call_resolves_like_a_two_pass_name_table() {
    let files = sources(&[
        ("a.rs", "fn main_entry() -> i64 {\n    let x = helper();\n    twice(x) + local_only()\n}\n\nfn local_only() -> i64 {\n    helper()\n}\n"),
        ("b.rs", "pub fn helper() -> i64 {\n    41\n}\n\npub fn twice(v: i64) -> i64 {\n    v + v\n}\n"),
        ("c.rs", "fn unrelated() -> i64 {\n    let y = 3;\n    y\n}\n\nfn twice(v: i64) -> i64 {\n    helper() * v\n}\n"),
    ]);
    let snap = build_from_sources(&IndexConfig::default(), files.clone()).unwrap();

    // pass 1: definitions by name; pass 2: every non-definition occurrence
    let table = identifier_table(&files);
    let mut defs: BTreeMap<&str, Vec<(&str, u32, &str)>> = BTreeMap::new();
    for (f, l, _, n, is_def) in &table {
        if *is_def {
            defs.entry(n).or_default().push((f, *l, n));
        }
    }
    // call sites are keyed by position, definitions by (file, line, name)
    let mut expected: EdgeMap = BTreeMap::new();
    for (f, l, c, n, is_def) in &table {
        if *is_def {
            continue;
        }
        let Some(cands) = defs.get(n.as_str()) else { continue };
        let local: BTreeSet<_> = cands.iter().filter(|d| d.0 == f).map(|d| (d.0.to_string(), d.1, d.2.to_string())).collect();
        let targets = if local.is_empty() {
            cands.iter().filter(|d| d.0 != f).map(|d| (d.0.to_string(), d.1, d.2.to_string())).collect()
        } else {
            local
        };
        expected.insert((f.clone(), *l, *c), targets);
    }

    let def = |id: &camp::index::SymbolId| {
        let r = snap.record(id).unwrap();
        (r.file.clone(), r.span.start_line, r.name.clone())
    };
    let mut actual: EdgeMap = BTreeMap::new();
    for r in snap.records().values() {
        if !r.dependencies.is_empty() {
            actual.insert((r.file.clone(), r.span.start_line, r.span.start_col), r.dependencies.iter().map(def).collect());
        }
    }
    assert_eq!(actual, expected);

    // the headline edge: a.rs calls helper defined in b.rs
    let call = snap
        .records()
        .values()
        .find(|r| r.file == "a.rs" && r.name == "helper" && r.span.start_line == 1)
        .unwrap();
    let target = snap.record(&call.dependencies[0]).unwrap();
    assert_eq!((target.file.as_str(), target.kind), ("b.rs", SymbolKind::Function));
    assert_eq!(snap.dangling_edges(), 0);
}

#[test]
fn empty_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = build_index(dir.path(), &IndexConfig::default()).unwrap_err();
    assert!(matches!(err, IndexError::NoIndexableFiles(_)), "{err:?}");
}

#[test]
fn single_function_file_has_a_covering_function_record() {
    let src = "fn area(w: i64, h: i64) -> i64 {\n    w * h\n}\n";
    let snap = build_from_sources(&IndexConfig::default(), sources(&[("geo.rs", src)])).unwrap();
    let f = snap.records().values().find(|r| r.kind == SymbolKind::Function).unwrap();
    assert_eq!(f.name, "area");
    assert_eq!(f.span.start_line, 0);
    assert_eq!(f.span.end_line, 2);
}

#[test]
fn hundred_edit_fuzz_matches_rebuild_brace_repo() {
    fuzz_repo(1, Flavor::Brace, 100).unwrap();
}

#[test]
fn hundred_edit_fuzz_matches_rebuild_indent_repo() {
    fuzz_repo(2, Flavor::Indent, 100).unwrap();
}

#[test]
fn out_of_range_edit_is_rejected_and_snapshot_kept() {
    let snap = build_from_sources(&IndexConfig::default(), sources(&[("a.rs", "fn f() {}\n")])).unwrap();
    let before = snap.content_hash_hex();
    let bad = FileEdit::Replace {
        path: "a.rs".into(),
        start: 3,
        end: 400,
        text: String::new(),
    };
    assert!(snap.apply_edit(&bad).is_err());
    assert_eq!(snap.content_hash_hex(), before);
    assert_eq!(snap.revision(), 0);
}

#[test]
fn deleting_a_file_removes_its_symbols_and_incoming_edges() {
    let snap = build_from_sources(
        &IndexConfig::default(),
        sources(&[("a.rs", "fn caller() {\n    callee();\n}\n"), ("b.rs", "fn callee() {}\n")]),
    )
    .unwrap();
    let next = snap.apply_edit(&FileEdit::Delete { path: "b.rs".into() }).unwrap();
    assert!(next.records().values().all(|r| r.file != "b.rs"));
    assert!(next.records().values().all(|r| r.dependencies.is_empty()));
    assert_eq!(next.dangling_edges(), 0);
}

/// Independent FNV-1a, signed buckets and exact sparse cosine.
fn oracle_cosine(a: &[&str], b: &[&str], dim: u64) -> f64 {
    fn fnv(s: &str) -> u64 {
        s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    }
    let vec = |toks: &[&str]| {
        let mut m: BTreeMap<u64, i64> = BTreeMap::new();
        for t in toks {
            let h = fnv(&format!("tok:{t}"));
            *m.entry(h % dim).or_default() += if h >> 63 == 1 { -1 } else { 1 };
        }
        m
    };
    let (va, vb) = (vec(a), vec(b));
    let dot: i64 = va.iter().map(|(k, v)| v * vb.get(k).copied().unwrap_or(0)).sum();
    let norm = |m: &BTreeMap<u64, i64>| (m.values().map(|v| v * v).sum::<i64>() as f64).sqrt();
    dot as f64 / (norm(&va) * norm(&vb))
}

#[test]
fn half_shared_fragments_match_bag_of_features_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vocab: Vec<String> = (0..40).map(|i| format!("ident_{i:02}")).collect();
    for dim in [16usize, 64, 256] {
        let cfg = IndexConfig {
            d_emb: dim,
            ..IndexConfig::default()
        };
        let snap = build_from_sources(&cfg, sources(&[("z.rs", "fn zz() {}\n")])).unwrap();
        for _ in 0..50 {
            let picked: Vec<&str> = vocab.choose_multiple(&mut rng, 8).map(|s| s.as_str()).collect();
            let a = [picked[0], picked[1], picked[2], picked[3]];
            let b = [picked[0], picked[1], picked[4], picked[5]];
            let ea = snap.embed(Fragment::Text(&a.join(" "))).unwrap();
            let eb = snap.embed(Fragment::Text(&b.join(" "))).unwrap();
            let want = oracle_cosine(&a, &b, dim as u64);
            assert!((ea.dot(&eb) - want).abs() < 1e-12, "dim {dim}: {} vs {want}", ea.dot(&eb));
        }
    }
}

#[test]
fn self_similarity_beats_disjoint_vocabulary() {
    let snap = build_from_sources(&IndexConfig::default(), sources(&[("z.rs", "fn zz() {}\n")])).unwrap();
    let a = snap.embed_text("alpha beta gamma").unwrap();
    let b = snap.embed_text("delta epsilon zeta").unwrap();
    assert!((a.dot(&a) - 1.0).abs() < 1e-12);
    assert!(a.dot(&b) < a.dot(&a));
    assert!(matches!(snap.embed_text("  ;; "), Err(IndexError::EmptyFragment)));
}

fn stored_units_are_unit_norm(snap: &IndexSnapshot) -> bool {
    snap.doc_units().iter().all(|u| {
        let n: f64 = u.embedding.as_slice().iter().map(|v| v * v).sum();
        (n.sqrt() - 1.0).abs() < 1e-9 && u.embedding.dim() == snap.d_emb()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_is_deterministic_and_unit_norm(words in prop::collection::vec("[a-z][a-z0-9_]{1,8}", 1..12), dim in 2usize..128) {
        let cfg = IndexConfig { d_emb: dim, ..IndexConfig::default() };
        let snap = build_from_sources(&cfg, sources(&[("z.py", "def zz():\n    pass\n")])).unwrap();
        let text = words.join(" ");
        let a = snap.embed_text(&text).unwrap();
        let b = snap.embed_text(&text).unwrap();
        prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let n: f64 = a.as_slice().iter().map(|v| v * v).sum();
        prop_assert!((n.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stored_units_keep_invariants(nfuncs in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = ["load", "store", "merge", "split"];
        let body: String = (0..nfuncs).map(|_| random_function(&mut rng, &names, false)).collect();
        let snap = build_from_sources(&IndexConfig { d_emb: 32, ..IndexConfig::default() }, sources(&[("a.rs", &body)])).unwrap();
        prop_assert!(stored_units_are_unit_norm(&snap));
        prop_assert_eq!(snap.dangling_edges(), 0);
        // doc units partition the symbols
        let mut seen = BTreeSet::new();
        for u in snap.doc_units() {
            for s in &u.symbols {
                prop_assert!(seen.insert(s.clone()));
            }
        }
        prop_assert_eq!(seen.len(), snap.records().len());
        for r in snap.records().values() {
            prop_assert!((r.span.start_line, r.span.start_col) <= (r.span.end_line, r.span.end_col));
        }
    }
}
