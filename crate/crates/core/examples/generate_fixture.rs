//! Regenerates the bundled synthetic corpus.
//!
//! cargo run -p slime-core --example generate_fixture

use std::path::Path;

use slime_core::fixture::{generate_corpus, FIXTURE_DOCS, FIXTURE_SEED};

fn main() -> slime_core::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic/corpus.jsonl");
    generate_corpus(FIXTURE_DOCS, FIXTURE_SEED).write_jsonl(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
