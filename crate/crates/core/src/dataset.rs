//! JSON-lines persistence for trajectory datasets.
//!
//! Layout, one JSON document per line:
//!
//! ```text
//! {"format":"diffbid-trajectories","version":1,"count":N,"feature_stats":{..},"return_stats":{..}}
//! {trajectory 0}
//! ...
//! {trajectory N-1}
//! {"end":true,"count":N,"crc32":C}
//! ```
//!
//! `crc32` covers the bytes of the trajectory lines including their newlines.
//! A missing or unparsable trailer is reported as truncation.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FeatureStats, ReturnStats, Trajectory, TrajectoryDataset};

pub const DATASET_FORMAT: &str = "diffbid-trajectories";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
    feature_stats: FeatureStats,
    return_stats: ReturnStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct Trailer {
    end: bool,
    count: usize,
    crc32: u32,
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn encode_dataset(ds: &TrajectoryDataset) -> Result<String> {
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        count: ds.trajectories.len(),
        feature_stats: ds.feature_stats,
        return_stats: ds.return_stats,
    };
    let mut out = to_line(&header)?;
    out.push('\n');
    let mut hasher = crc32fast::Hasher::new();
    for traj in &ds.trajectories {
        let mut line = to_line(traj)?;
        line.push('\n');
        hasher.update(line.as_bytes());
        out.push_str(&line);
    }
    let trailer = Trailer {
        end: true,
        count: ds.trajectories.len(),
        crc32: hasher.finalize(),
    };
    out.push_str(&to_line(&trailer)?);
    out.push('\n');
    Ok(out)
}

pub fn decode_dataset(text: &str) -> Result<TrajectoryDataset> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    let first = lines
        .first()
        .ok_or_else(|| Error::Truncated("missing header".into()))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| Error::Malformed(format!("header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Malformed(format!("unknown format `{}`", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: header.version,
        });
    }
    if lines.len() != header.count + 2 {
        return Err(Error::Truncated(format!(
            "expected {} lines, found {}",
            header.count + 2,
            lines.len()
        )));
    }
    let trailer: Trailer = serde_json::from_str(lines[lines.len() - 1])
        .map_err(|e| Error::Truncated(format!("trailer unreadable: {e}")))?;
    if !trailer.end || trailer.count != header.count {
        return Err(Error::Truncated("trailer does not close the dataset".into()));
    }

    let mut hasher = crc32fast::Hasher::new();
    for line in &lines[1..lines.len() - 1] {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    let computed = hasher.finalize();
    if computed != trailer.crc32 {
        return Err(Error::Checksum {
            stored: trailer.crc32,
            computed,
        });
    }

    let trajectories = lines[1..lines.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<Trajectory>(line)
                .map_err(|e| Error::Malformed(format!("trajectory {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = TrajectoryDataset::new(trajectories);
    if ds.feature_stats != header.feature_stats || ds.return_stats != header.return_stats {
        return Err(Error::Malformed(
            "stored statistics do not match the stored trajectories".into(),
        ));
    }
    Ok(ds)
}

pub fn dataset_save(ds: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = encode_dataset(ds)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn dataset_load(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&text)
}
