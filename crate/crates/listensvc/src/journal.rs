//! Append-only JSONL event journal.
//!
//! Each event is one line, flushed with `sync_data` before `append`
//! returns. A torn final line (crash mid-write) is dropped on open; any
//! other unreadable line is an error.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::StudyError;
use crate::model::{Response, Screen, StudyConfig};
use crate::study::Registration;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        study_id: String,
        config: StudyConfig,
        screens: Vec<Screen>,
    },
    ListenerRegistered {
        study_id: String,
        #[serde(flatten)]
        registration: Registration,
    },
    ResponseReceived {
        study_id: String,
        response: Response,
    },
    StudyClosed {
        study_id: String,
    },
}

impl Event {
    pub fn study_id(&self) -> &str {
        match self {
            Event::StudyCreated { study_id, .. }
            | Event::ListenerRegistered { study_id, .. }
            | Event::ResponseReceived { study_id, .. }
            | Event::StudyClosed { study_id } => study_id,
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> StudyError {
    StudyError::Journal(format!("{}: {e}", path.display()))
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    events: usize,
}

impl Journal {
    /// Opens or creates the journal and returns every intact event.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>), StudyError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| io_err(path, e))?;

        let mut events = Vec::new();
        let mut valid_len = 0usize;
        let mut offset = 0usize;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            // only the final line can lack its newline
            if !line.ends_with('\n') {
                log::warn!("{}: dropping torn final line", path.display());
                break;
            }
            offset += line.len();
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() {
                let ev = serde_json::from_str::<Event>(body)
                    .map_err(|e| StudyError::Journal(format!("{}: line {}: {e}", path.display(), i + 1)))?;
                events.push(ev);
            }
            valid_len = offset;
        }
        if valid_len < text.len() {
            file.set_len(valid_len as u64).map_err(|e| io_err(path, e))?;
            file.sync_data().map_err(|e| io_err(path, e))?;
        }
        file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
        let n = events.len();
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                events: n,
            },
            events,
        ))
    }

    /// Writes one event durably.
    pub fn append(&mut self, event: &Event) -> Result<(), StudyError> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| io_err(&self.path, e))?;
        self.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        self.events += 1;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Events written or replayed through this handle.
    pub fn len(&self) -> usize {
        self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events == 0
    }
}
