//! Pipeline manifest: the subjects a multi-subject stage works on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub id: String,
    pub t1: PathBuf,
    pub flair: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gm: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wm: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_dir: Option<PathBuf>,
}

/// Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub subjects: Vec<Subject>,
}

impl PipelineManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::MissingInput(path.into()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut m: Self = toml::from_str(&text)
            .map_err(|e| lesiongen::Error::Parse { path: path.into(), detail: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = m.model.as_mut() {
            fix(p);
        }
        for s in &mut m.subjects {
            fix(&mut s.t1);
            fix(&mut s.flair);
            for p in [&mut s.gm, &mut s.brain, &mut s.wm, &mut s.lesion, &mut s.bank_dir, &mut s.fill_dir].into_iter().flatten() {
                fix(p);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string_pretty(self).map_err(|e| lesiongen::Error::InvalidConfig(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
