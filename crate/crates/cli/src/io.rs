use std::fs;
use std::path::{Path, PathBuf};

use feeder_envelope::{load_feeder, FeederModel, ScenarioFile};
use serde::Serialize;

use crate::error::CliError;

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_feeder(path: &Path) -> Result<FeederModel, CliError> {
    let model = load_feeder(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(model.order_radial())
}

pub fn read_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    ScenarioFile::parse(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Output directory, created on first use.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("output serialises");
        text.push('\n');
        self.text(name, &text)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let fail = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(fail)?;
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row).map_err(fail)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v}")
}
