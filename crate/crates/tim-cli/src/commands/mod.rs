pub mod bench;
pub mod sample;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

/// Resolves an output directory under the `TIM_RUN_ROOT` environment
/// variable (current directory when unset); absolute paths pass through.
pub fn resolve_run_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    let root = std::env::var_os("TIM_RUN_ROOT").map(PathBuf::from).unwrap_or_else(|| ".".into());
    root.join(out)
}
