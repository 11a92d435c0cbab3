//! Pin boards: one append-only JSON-lines file per board.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pin {
    #[serde(rename = "ref")]
    pub image_ref: String,
    pub timestamp_ms: u64,
    pub session: String,
}

pub fn valid_board_name(name: &str) -> bool {
    (1..=64).contains(&name.len()) && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub struct BoardStore {
    dir: PathBuf,
    /// Serialises appends and creation; reads go straight to the files.
    writer: Mutex<()>,
}

impl BoardStore {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: Mutex::new(()),
        })
    }

    fn path(&self, board: &str) -> Result<PathBuf, ServiceError> {
        if !valid_board_name(board) {
            return Err(ServiceError::BadRequest(format!("invalid board name `{board}`")));
        }
        Ok(self.dir.join(format!("{board}.jsonl")))
    }

    /// Creates an empty board; returns false if it already existed.
    pub fn create(&self, board: &str) -> Result<bool, ServiceError> {
        let path = self.path(board)?;
        let _guard = self.writer.lock().expect("board writer poisoned");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => {
                f.sync_all()?;
                Ok(true)
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    pub fn exists(&self, board: &str) -> Result<bool, ServiceError> {
        Ok(self.path(board)?.is_file())
    }

    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        let mut names: Vec<String> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".jsonl").map(str::to_string))
            .filter(|n| valid_board_name(n))
            .collect();
        names.sort();
        Ok(names)
    }

    /// Pins in insertion order. A final line without a newline (an append
    /// cut short) is ignored.
    pub fn read(&self, board: &str) -> Result<Vec<Pin>, ServiceError> {
        let path = self.path(board)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::UnknownBoard(board.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let complete = text.rfind('\n').map_or("", |i| &text[..i]);
        complete
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::CorruptBoard(format!("{board}: {e}"))))
            .collect()
    }

    /// Appends and syncs the entry to disk before returning the board.
    pub fn append(&self, board: &str, pin: Pin) -> Result<Vec<Pin>, ServiceError> {
        let path = self.path(board)?;
        {
            let _guard = self.writer.lock().expect("board writer poisoned");
            if !path.is_file() {
                return Err(ServiceError::UnknownBoard(board.to_string()));
            }
            let mut line = serde_json::to_string(&pin).expect("pin serialises");
            line.push('\n');
            let existing = std::fs::read(&path)?;
            let keep = existing.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < existing.len() {
                OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
            }
            let mut f = OpenOptions::new().append(true).open(&path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.read(board)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pin(r: &str) -> Pin {
        Pin {
            image_ref: r.into(),
            timestamp_ms: 1,
            session: "s".into(),
        }
    }

    #[test]
    fn names() {
        assert!(valid_board_name("moodboard_1-a"));
        assert!(!valid_board_name(""));
        assert!(!valid_board_name("../x"));
        assert!(!valid_board_name(&"a".repeat(65)));
    }

    #[test]
    fn append_only_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let store = BoardStore::open(dir.path()).unwrap();
        assert!(matches!(store.append("b", pin("x")), Err(ServiceError::UnknownBoard(_))));
        assert!(store.create("b").unwrap());
        assert!(!store.create("b").unwrap());
        assert_eq!(store.append("b", pin("x")).unwrap().len(), 1);
        assert_eq!(store.append("b", pin("x")).unwrap().len(), 2);
        drop(store);
        let store = BoardStore::open(dir.path()).unwrap();
        assert_eq!(store.read("b").unwrap(), vec![pin("x"), pin("x")]);
        assert_eq!(store.list().unwrap(), vec!["b".to_string()]);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = BoardStore::open(dir.path()).unwrap();
        store.create("b").unwrap();
        store.append("b", pin("x")).unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.path().join("b.jsonl")).unwrap();
        f.write_all(b"{\"ref\":\"y\",\"times").unwrap();
        assert_eq!(store.read("b").unwrap(), vec![pin("x")]);
        assert_eq!(store.append("b", pin("z")).unwrap(), vec![pin("x"), pin("z")]);
    }
}
