use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use snngbp_core::config::Params;
use snngbp_core::Error;

/// Process exit codes.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_MISSING: u8 = 4;
pub const EXIT_TOLERANCE: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            Error::NotTrained => EXIT_MISSING,
            _ => EXIT_USAGE,
        };
        Self::new(code, e.to_string())
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// First 16 hex digits of the SHA-256 of the canonical config text.
pub fn config_hash(params: &Params) -> String {
    Sha256::digest(params.to_text().as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `# snngbp <version> config=<hash> seed=<seed>`
pub fn provenance(params: &Params, seed: u64) -> String {
    format!("# snngbp {} config={} seed={seed}\n", env!("CARGO_PKG_VERSION"), config_hash(params))
}

/// Writes `body` under a provenance line to `path`, or to stdout.
pub fn emit(path: Option<&Path>, params: &Params, seed: u64, body: &str) -> CmdResult {
    let text = format!("{}{body}", provenance(params, seed));
    match path {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

/// `out.csv` -> `out.svg`, next to the CSV.
pub fn sibling_svg(csv: &Path) -> PathBuf {
    csv.with_extension("svg")
}
