use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rationing::session::{write_jsonl, SessionEvent};

use crate::wire::SessionDescriptor;

pub fn session_dir(root: &Path, id: &str) -> PathBuf {
    root.join("sessions").join(id)
}

pub fn log_path(root: &Path, id: &str) -> PathBuf {
    session_dir(root, id).join("events.jsonl")
}

/// Append-only event log plus a descriptor snapshot for one session.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    events: BufWriter<File>,
}

impl Store {
    pub fn create(root: &Path, id: &str) -> io::Result<Self> {
        let dir = session_dir(root, id);
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new().create(true).append(true).open(dir.join("events.jsonl"))?;
        Ok(Self {
            dir,
            events: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, events: &[SessionEvent]) -> io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        write_jsonl(events, &mut self.events)?;
        self.events.flush()
    }

    pub fn write_descriptor(&self, d: &SessionDescriptor) -> io::Result<()> {
        let text = serde_json::to_string_pretty(d).map_err(io::Error::other)?;
        write_atomic(&self.dir.join("session.json"), text.as_bytes())
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
