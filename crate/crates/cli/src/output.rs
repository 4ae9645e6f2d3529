//! Output-directory helpers: CSV files with a header row and LF endings.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use csv::{Terminator, Writer, WriterBuilder};

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn csv<S: AsRef<str>>(&self, name: &str, header: &[S]) -> Result<Csv> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(file);
        w.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Csv { w, path })
    }
}

pub struct Csv {
    w: Writer<File>,
    path: PathBuf,
}

impl Csv {
    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.w
            .write_record(fields.iter().map(|f| f.as_ref()))
            .with_context(|| format!("cannot write {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().with_context(|| format!("cannot write {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn f(v: f64) -> String {
    format!("{v:?}")
}

/// `prefix0, prefix1, …` column names.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}
