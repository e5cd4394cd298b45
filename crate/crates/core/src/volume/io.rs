//! LSV1 volume files: magic, a length-prefixed JSON header, then the voxel
//! payload as little-endian f32 in x-fastest order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledVolume;
use crate::error::{Error, Result};
use crate::pose_graph::{Landmark, NUM_LANDMARKS};

const MAGIC: &[u8; 4] = b"LSV1";
const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 16 << 20;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    landmarks: Vec<LandmarkEntry>,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkEntry {
    name: String,
    coord: [f64; 3],
}

pub fn write_volume<W: Write>(v: &LabeledVolume, mut w: W) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        dims: v.dims,
        spacing_mm: v.spacing_mm,
        landmarks: Landmark::ALL
            .iter()
            .map(|l| LandmarkEntry {
                name: l.name().to_string(),
                coord: v.landmarks[l.index()],
            })
            .collect(),
        meta: v.meta.clone(),
    };
    let text = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let mut buf = Vec::with_capacity(v.voxels.len() * 4);
    for x in &v.voxels {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_volume<R: Read>(mut r: R) -> Result<LabeledVolume> {
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    read_exact_or_format(&mut r, &mut len, "header length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER {
        return Err(Error::Format(format!("header length {len} too large")));
    }
    let mut text = vec![0u8; len];
    read_exact_or_format(&mut r, &mut text, "header")?;
    let header: Header = serde_json::from_slice(&text).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    if header.landmarks.len() != NUM_LANDMARKS {
        return Err(Error::Format(format!("expected {NUM_LANDMARKS} landmarks, got {}", header.landmarks.len())));
    }
    let mut landmarks = [[0.0; 3]; NUM_LANDMARKS];
    let mut seen = [false; NUM_LANDMARKS];
    for entry in &header.landmarks {
        let id: Landmark = entry.name.parse()?;
        if seen[id.index()] {
            return Err(Error::Format(format!("duplicate landmark {}", entry.name)));
        }
        seen[id.index()] = true;
        landmarks[id.index()] = entry.coord;
    }
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "header dims {:?} need {} payload bytes, found {}",
            header.dims,
            count * 4,
            payload.len()
        )));
    }
    let voxels = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let v = LabeledVolume {
        dims: header.dims,
        spacing_mm: header.spacing_mm,
        voxels,
        landmarks,
        meta: header.meta,
    };
    v.validate()?;
    Ok(v)
}

pub fn save_volume(v: &LabeledVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(v, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<LabeledVolume> {
    read_volume(BufReader::new(File::open(path)?))
}
