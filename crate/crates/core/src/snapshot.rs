//! Versioned, deterministic persistence of the complete engine state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct SnapshotRef<'a> {
    format_version: u32,
    engine: &'a Engine,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
}

#[derive(Deserialize)]
struct SnapshotOwned {
    #[allow(dead_code)]
    format_version: u32,
    engine: Engine,
}

pub fn to_bytes(engine: &Engine) -> Vec<u8> {
    serde_json::to_vec(&SnapshotRef {
        format_version: FORMAT_VERSION,
        engine,
    })
    .expect("engine state always serialises")
}

pub fn from_bytes(bytes: &[u8]) -> Result<Engine> {
    let header: Header =
        serde_json::from_slice(bytes).map_err(|e| Error::RejectedInput(format!("snapshot header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let snap: SnapshotOwned =
        serde_json::from_slice(bytes).map_err(|e| Error::RejectedInput(format!("snapshot body: {e}")))?;
    snap.engine.config().validate()?;
    Ok(snap.engine)
}

pub fn save_snapshot(engine: &Engine, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(engine))?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Engine> {
    from_bytes(&fs::read(path)?)
}
