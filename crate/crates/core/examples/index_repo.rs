//! Builds a DCSI index over a small repository, applies an edit
//! incrementally and checks it against a full rebuild.
//!
//! cargo run --example index_repo

use camp::index::{build_from_sources, build_index, FileEdit, IndexConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    std::fs::write(
        dir.path().join("ledger.rs"),
        "pub fn total(xs: &[i64]) -> i64 {\n    xs.iter().sum()\n}\n\npub fn average(xs: &[i64]) -> f64 {\n    total(xs) as f64 / xs.len() as f64\n}\n",
    )?;
    std::fs::write(
        dir.path().join("report.py"),
        "class Report:\n    def render(self, rows):\n        return '\\n'.join(rows)\n\ndef summary(rows):\n    return Report().render(rows)\n",
    )?;

    let config = IndexConfig::default();
    let snap = build_index(dir.path(), &config)?;
    println!("{} symbols, {} units, hash {}", snap.records().len(), snap.doc_units().len(), snap.content_hash_hex());
    for unit in snap.doc_units() {
        println!("  {:<8} {} lines {}..{}, {} symbols", unit.name, unit.file, unit.start_line, unit.end_line, unit.symbols.len());
    }
    for (name, defs) in snap.definitions() {
        let at: Vec<String> = defs.iter().map(|d| d.to_string()).collect();
        println!("  {name} defined at {}", at.join(", "));
    }

    let edit = FileEdit::Write {
        path: "ledger.rs".into(),
        text: "pub fn total(xs: &[i64]) -> i64 {\n    xs.iter().sum()\n}\n\npub fn spread(xs: &[i64]) -> i64 {\n    xs.iter().max().unwrap_or(&0) - xs.iter().min().unwrap_or(&0)\n}\n".into(),
    };
    let next = snap.apply_edit(&edit)?;
    let rebuilt = build_from_sources(&config, next.sources())?;
    println!(
        "revision {} -> {}, incremental == rebuild: {}, dangling edges {}",
        snap.revision(),
        next.revision(),
        next.content_hash() == rebuilt.content_hash(),
        next.dangling_edges()
    );
    Ok(())
}
