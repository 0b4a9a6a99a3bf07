//! `manifest.txt`: what a run read, how it was configured, how long each
//! stage took and what it wrote.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub stages: Vec<(String, f64)>,
    pub outputs: Vec<PathBuf>,
}

fn file_sha256(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn render(&self) -> io::Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "tool = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        s.push_str("\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[inputs]\n");
        for p in &self.inputs {
            let _ = writeln!(s, "{}  {}", file_sha256(p)?, p.display());
        }
        s.push_str("\n[stages]\n");
        for (name, secs) in &self.stages {
            let _ = writeln!(s, "{name} = {secs:.3}");
        }
        s.push_str("\n[outputs]\n");
        for p in &self.outputs {
            let _ = writeln!(s, "{}", p.display());
        }
        Ok(s)
    }

    /// Writes `manifest.txt` into `dir` through a temporary file and rename.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        if let Some(missing) = self.outputs.iter().find(|p| !p.exists()) {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("listed output {} does not exist", missing.display()),
            ));
        }
        let path = dir.join(FILE_NAME);
        let tmp = dir.join(format!("{FILE_NAME}.tmp"));
        fs::write(&tmp, self.render()?)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
