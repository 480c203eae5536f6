use std::fs;
use std::path::PathBuf;

use crate::error::{Result, StudyError};
use crate::state::ImageKind;

/// Case renderings laid out as `<root>/<kind>/<case_id>/<view>.png`, e.g.
/// `tdce/P0001_L/CC.png`.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    root: Option<PathBuf>,
}

fn safe(component: &str) -> bool {
    !component.is_empty()
        && component != "."
        && component != ".."
        && component.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl ImageStore {
    pub fn new(root: Option<PathBuf>) -> Self {
        ImageStore { root }
    }

    /// View names available for a case, sorted.
    pub fn views(&self, kind: ImageKind, case_id: &str) -> Vec<String> {
        let Some(root) = &self.root else {
            return Vec::new();
        };
        if !safe(case_id) {
            return Vec::new();
        }
        let Ok(dir) = fs::read_dir(root.join(kind.as_str()).join(case_id)) else {
            return Vec::new();
        };
        let mut out: Vec<String> = dir
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "png").then(|| p.file_stem()?.to_str().map(String::from))?
            })
            .filter(|v| safe(v))
            .collect();
        out.sort();
        out
    }

    pub fn read(&self, kind: ImageKind, case_id: &str, view: &str) -> Result<Vec<u8>> {
        let missing = || StudyError::NotFound(format!("{} image {case_id}/{view}", kind.as_str()));
        let root = self.root.as_ref().ok_or_else(missing)?;
        if !safe(case_id) || !safe(view) {
            return Err(missing());
        }
        let path = root.join(kind.as_str()).join(case_id).join(format!("{view}.png"));
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(missing()),
            Err(e) => Err(StudyError::Io { path, source: e }),
        }
    }
}
