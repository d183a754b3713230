//! JSON sidecars written next to stacks and reconstructions.

use std::path::{Path, PathBuf};

use ghostsim::io::write_atomic;
use ghostsim::{Error, Result, SourceParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// `probe.gfs` -> `probe.gfs.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub params: SourceParams,
    pub scene: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub t_bar: f64,
    pub t2_bar: f64,
    pub epsilon: Option<f64>,
    pub t_plus: Option<f64>,
    pub t_minus: Option<f64>,
    pub regime: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgmLevels {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconMeta {
    pub protocol: String,
    pub k_source: String,
    /// One entry per tile, row-major.
    pub k_used: Vec<f64>,
    pub tiles: [usize; 2],
    pub frames_used: usize,
    pub width: usize,
    pub height: usize,
    /// Present for PGM output: `value = offset + scale * level`.
    pub pgm: Option<PgmLevels>,
    pub simulation: Option<SimulationMeta>,
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Malformed {
        what: "metadata",
        detail: format!("{}: {e}", path.display()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| json_error(path, e))?;
        std::io::Write::write_all(w, b"\n").map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Read a sidecar if one exists next to `data`.
pub fn read_sidecar<T: DeserializeOwned>(data: &Path) -> Result<Option<T>> {
    let p = sidecar_path(data);
    if p.exists() {
        read_json(&p).map(Some)
    } else {
        Ok(None)
    }
}
