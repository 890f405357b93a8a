//! Regenerates the checked-in fixture tree.
//!
//! `cargo run -p mtjrd --example gen_fixtures -- fixtures`

use std::path::PathBuf;

fn main() {
    let root = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());
    if let Err(e) = mtjrd::fixtures::write_all(&root) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("fixtures written to {}", root.display());
}
