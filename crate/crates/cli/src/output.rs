//! Staged file output: everything is written under temporary names and renamed only once all
//! files are complete, so a failed run leaves nothing behind.

use anyhow::{Context, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let name = path.file_name().context("output path has no file name")?.to_string_lossy();
        let tmp = path.with_file_name(format!(".{name}.partial"));
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        self.files.push((tmp.clone(), path.to_path_buf()));
        f.write_all(bytes).with_context(|| format!("writing {}", tmp.display()))?;
        f.sync_all()?;
        Ok(())
    }

    pub fn commit(mut self) -> Result<()> {
        for (tmp, dst) in std::mem::take(&mut self.files) {
            fs::rename(&tmp, &dst).with_context(|| format!("renaming {} to {}", tmp.display(), dst.display()))?;
        }
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
    }
}

/// Writes one file atomically, or prints to stdout when no path is given.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            let mut s = Staged::default();
            s.write(p, bytes)?;
            s.commit()
        }
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}
