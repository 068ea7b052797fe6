use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};

pub const OUT_DIR_ENV: &str = "MISSIONMAC_OUT_DIR";

/// Output directory plus the key = value summary printed at the end.
pub struct Output {
    dir: PathBuf,
    summary: Vec<(String, String)>,
}

impl Output {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        let dir = dir
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            summary: Vec::new(),
        })
    }

    pub fn kv(&mut self, key: impl Into<String>, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, kvs: impl IntoIterator<Item = (String, String)>) {
        self.summary.extend(kvs);
    }

    /// Writes `name` through a temporary file in the same directory, so a
    /// reader never sees a partial file.
    pub fn write(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("creating temporary file in {}", self.dir.display()))?;
        {
            let mut w = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        self.kv(format!("file_{}", name.replace('.', "_")), name);
        Ok(path)
    }

    /// The summary as `key = value` lines, also written to `name`.
    pub fn finish(mut self, name: &str) -> Result<()> {
        let text = render(&self.summary);
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))?;
        print!("{text}");
        Ok(())
    }
}

fn render(kvs: &[(String, String)]) -> String {
    kvs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
