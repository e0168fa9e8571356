//! Run manifests: what ran, with what inputs, producing which bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;

use channelfx::Result;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    bytes: usize,
    fnv1a64: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    outputs: Vec<OutputRecord>,
}

/// Collects emitted files and writes `manifest.json` beside them. No clocks
/// or hostnames: identical runs produce identical manifests.
pub struct RunWriter {
    dir: PathBuf,
    written: Vec<OutputRecord>,
}

impl RunWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunWriter { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.written.push(OutputRecord {
            path: name.to_string(),
            bytes: bytes.len(),
            fnv1a64: format!("{:016x}", fnv1a64(bytes)),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, command: &str, config: &impl Serialize) -> Result<()> {
        let manifest = Manifest {
            tool: "channelfx",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            outputs: self.written,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}
