//! Atomic output writing with cleanup on failure.
//!
//! Every file is written to a temp file in its target directory and renamed
//! into place, so readers never observe partial content. If a command fails
//! before `commit`, everything written so far (and any directory this run
//! created) is removed again.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Provenance header for text outputs: toolkit version, seed, config hash.
/// Commands without a seed or config print `-` for the missing field.
pub fn provenance_line(seed: Option<u64>, config: Option<&[u8]>) -> String {
    let seed = seed.map_or_else(|| "-".to_string(), |s| s.to_string());
    let hash = config.map_or_else(
        || "-".to_string(),
        |bytes| {
            Sha256::digest(bytes)
                .iter()
                .take(6)
                .map(|b| format!("{b:02x}"))
                .collect()
        },
    );
    format!("# sedkit {} seed={seed} config={hash}\n", sedkit_core::VERSION)
}

#[derive(Default)]
pub struct OutputGuard {
    written: Vec<PathBuf>,
    made_dirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        OutputGuard::default()
    }

    /// Creates `dir` if needed; a directory created here is removed again on
    /// failure (only if it ends up empty, so pre-existing content is safe).
    pub fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating output directory {}", dir.display()))?;
            self.made_dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    fn parent_of(path: &Path) -> &Path {
        match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        }
    }

    /// Atomically writes a text or byte blob.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.stage(path, |tmp| {
            let mut file = fs::File::create(tmp)?;
            file.write_all(bytes)?;
            Ok(())
        })
    }

    /// Runs a writer function against a temp path, then renames the result
    /// into place.
    pub fn stage<F>(&mut self, path: &Path, writer: F) -> Result<()>
    where
        F: FnOnce(&Path) -> sedkit_core::Result<()>,
    {
        let parent = Self::parent_of(path);
        let tmp = tempfile::NamedTempFile::new_in(parent)
            .with_context(|| format!("creating temp file in {}", parent.display()))?
            .into_temp_path();
        writer(&tmp).with_context(|| format!("writing {}", path.display()))?;
        tmp.persist(path)
            .with_context(|| format!("moving output into place at {}", path.display()))?;
        // Temp files are created 0600; widen to the conventional mode.
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o644));
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        // Deepest first so nested created directories unwind.
        for dir in self.made_dirs.iter().rev() {
            let _ = fs::remove_dir(dir);
        }
    }
}
