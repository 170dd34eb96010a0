use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// One command's output directory. Every file written through it is listed
/// in the manifest.
pub struct RunDir {
    root: PathBuf,
    command: String,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    created_utc: String,
    version: &'static str,
    files: &'a [String],
}

impl RunDir {
    /// Creates `{out}/{command}-{UTC timestamp}` (with a numeric suffix if
    /// that exists) and points `{out}/latest` at it.
    pub fn create(out: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S").to_string();
        let mut name = format!("{command}-{stamp}");
        let mut n = 1;
        while out.join(&name).exists() {
            n += 1;
            name = format!("{command}-{stamp}-{n}");
        }
        let root = out.join(&name);
        fs::create_dir(&root).with_context(|| format!("creating {}", root.display()))?;
        fs::write(out.join("latest"), format!("{name}\n")).context("writing latest pointer")?;
        Ok(RunDir {
            root,
            command: command.to_string(),
            files: Vec::new(),
        })
    }

    /// Absolute-or-relative path of `rel` inside the run, registered in the
    /// manifest. Parent directories are created.
    pub fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.file(rel)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn writer(&mut self, rel: &str) -> Result<BufWriter<fs::File>> {
        let p = self.file(rel)?;
        Ok(BufWriter::new(
            fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    /// Writes `manifest.json`; call last.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        self.files.dedup();
        let manifest = Manifest {
            command: &self.command,
            created_utc: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION"),
            files: &self.files,
        };
        let mut w = BufWriter::new(fs::File::create(self.root.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(self.root)
    }
}
