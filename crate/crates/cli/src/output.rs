//! Output files: `#`-prefixed provenance headers and atomic writes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::embed;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SCHEMA_HISTOGRAM: &str = "qpkr-histogram/1";
pub const SCHEMA_SHAPE: &str = "qpkr-shape/1";
pub const SCHEMA_SUMMARY: &str = "qpkr-summary/1";
pub const SCHEMA_SWEEP: &str = "qpkr-sweep/1";
pub const SCHEMA_SWEEP_PART: &str = "qpkr-sweep-part/1";
pub const SCHEMA_COLLAPSE: &str = "qpkr-collapse/1";
pub const SCHEMA_SNAPSHOT: &str = "qpkr-snapshot/1";

/// Header block: version, schema, extra `key = value` lines, then the
/// embedded config if any.
pub fn header(schema: &str, meta: &[(&str, String)], config: Option<&str>) -> String {
    let mut out = format!("# qpkr {VERSION}\n# schema = {schema}\n");
    for (k, v) in meta {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    if let Some(text) = config {
        out.push_str(&embed(text));
    }
    out
}

/// Value of a `# key = value` header line, if present before the data.
pub fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.strip_prefix("# ")?.split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

/// Data lines after the header comments.
pub fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().skip_while(|l| l.starts_with('#'))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lookup() {
        let text = format!("{}a,b\n1,2\n", header(SCHEMA_SWEEP, &[("normalization", "0.5".into())], Some("[run]\nseed = 1\n")));
        assert_eq!(header_value(&text, "schema"), Some(SCHEMA_SWEEP));
        assert_eq!(header_value(&text, "normalization"), Some("0.5"));
        assert_eq!(header_value(&text, "seed"), Some("1"));
        assert_eq!(data_lines(&text).collect::<Vec<_>>(), vec!["a,b", "1,2"]);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
