//! Flat key=value record of one command invocation, written beside the
//! command's primary output so results stay traceable to their inputs.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    /// Starts with the command name and the wall-clock unix time.
    pub fn new(command: &str) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut m = Self { entries: Vec::new() };
        m.push("command", command);
        m.push("timestamp_unix", ts);
        m
    }

    /// Appends one entry; insertion order is the file order.
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// `<output>.manifest` next to the file it describes.
    pub fn sibling_path(output: &Path) -> PathBuf {
        let mut os = output.as_os_str().to_owned();
        os.push(".manifest");
        PathBuf::from(os)
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        f.flush()
    }
}
