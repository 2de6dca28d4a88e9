//! One JSON document per session under a state directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sketchloop_core::session::{FrameStatus, Session};

#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Writes through a temporary file so readers never see a torn document.
    pub fn save(&self, session: &Session) -> io::Result<()> {
        let path = self.path_for(&session.id);
        let tmp = self.dir.join(format!(".{}.json.tmp", session.id));
        fs::write(&tmp, session.to_json())?;
        fs::rename(tmp, path)
    }

    pub fn load(&self, id: &str) -> io::Result<Session> {
        let text = fs::read_to_string(self.path_for(id))?;
        Session::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Loads every session document. A frame persisted mid-run cannot be
    /// resumed, so it comes back as a draft carrying an error.
    pub fn load_all(&self) -> io::Result<Vec<Session>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let is_doc = path.extension().is_some_and(|e| e == "json")
                && !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
            if !is_doc {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let mut session = Session::from_json(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            for f in &mut session.frames {
                if f.status == FrameStatus::Running {
                    f.status = FrameStatus::Draft;
                    f.error = Some("run interrupted by a server restart".into());
                }
            }
            out.push(session);
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}
