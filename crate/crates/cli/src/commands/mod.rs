//! One module per subcommand.

pub mod crop;
pub mod eval;
pub mod generate;
pub mod pairs;
pub mod synth;
pub mod train;
pub mod verifier;

use std::fs;
use std::path::{Path, PathBuf};

use facedepth_core::{Error, Result};

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Files under `root` whose name ends in `suffix`, as sorted paths
/// relative to `root`.
pub(crate) fn find_files(root: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, suffix: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, suffix, out)?;
            } else if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, suffix, &mut out)?;
    out.sort();
    Ok(out)
}

/// `a/b/0003` for `a/b/0003_gray.pgm` and suffix `_gray.pgm`.
pub(crate) fn strip_suffix(rel: &Path, suffix: &str) -> PathBuf {
    let name = rel.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    rel.with_file_name(name.strip_suffix(suffix).unwrap_or(name))
}

/// Forward-slash form used in pair lists.
pub(crate) fn key_of(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
