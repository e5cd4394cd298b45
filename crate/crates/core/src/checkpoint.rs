//! "LSC1" checkpoint container: magic, version, length-prefixed config text,
//! named parameter blocks, optimizer blocks, then named byte blobs (RNG and
//! run state). All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSC1";
pub const FORMAT_VERSION: u32 = 1;
const MAX_NAME: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        TensorBlock {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointFile {
    pub config_text: String,
    pub params: Vec<TensorBlock>,
    pub optimizer: Vec<TensorBlock>,
    pub blobs: Vec<(String, Vec<u8>)>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_blocks<W: Write>(w: &mut W, blocks: &[TensorBlock]) -> Result<()> {
    put_u32(w, blocks.len() as u32)?;
    for b in blocks {
        if b.shape.iter().product::<usize>() != b.data.len() {
            return Err(Error::ShapeMismatch(format!("block {} shape {:?} vs {} values", b.name, b.shape, b.data.len())));
        }
        put_str(w, &b.name)?;
        put_u32(w, b.shape.len() as u32)?;
        for &d in &b.shape {
            put_u64(w, d as u64)?;
        }
        let mut buf = Vec::with_capacity(b.data.len() * 8);
        for v in &b.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn exact(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str, limit: usize) -> Result<String> {
        let n = self.u32(what)? as usize;
        if n > limit {
            return Err(Error::Format(format!("{what} length {n} exceeds limit")));
        }
        String::from_utf8(self.exact(n, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn blocks(&mut self, what: &str) -> Result<Vec<TensorBlock>> {
        let count = self.u32(what)?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string("block name", MAX_NAME)?;
            let ndim = self.u32("block rank")? as usize;
            if ndim > 8 {
                return Err(Error::Format(format!("block {name} has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u64("block shape")? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Format(format!("block {name} shape overflows")))?;
            let raw = self.exact(len, &name)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            out.push(TensorBlock { name, shape, data });
        }
        Ok(out)
    }
}

impl CheckpointFile {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, FORMAT_VERSION)?;
        put_str(&mut w, &self.config_text)?;
        put_blocks(&mut w, &self.params)?;
        put_blocks(&mut w, &self.optimizer)?;
        put_u32(&mut w, self.blobs.len() as u32)?;
        for (name, bytes) in &self.blobs {
            put_str(&mut w, name)?;
            put_u64(&mut w, bytes.len() as u64)?;
            w.write_all(bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut c = Cursor { inner: r };
        if c.exact(4, "magic")? != MAGIC {
            return Err(Error::Format("not an LSC1 checkpoint (bad magic)".into()));
        }
        let version = c.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_text = c.string("config text", 1 << 24)?;
        let params = c.blocks("parameter blocks")?;
        let optimizer = c.blocks("optimizer blocks")?;
        let n_blobs = c.u32("blob count")?;
        let mut blobs = Vec::new();
        for _ in 0..n_blobs {
            let name = c.string("blob name", MAX_NAME)?;
            let len = c.u64("blob length")? as usize;
            blobs.push((name.clone(), c.exact(len, &name)?));
        }
        let mut rest = [0u8; 1];
        if c.inner.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(CheckpointFile {
            config_text,
            params,
            optimizer,
            blobs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn param(&self, name: &str) -> Result<&TensorBlock> {
        self.params
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter block {name:?}")))
    }

    pub fn optimizer_block(&self, name: &str) -> Result<&TensorBlock> {
        self.optimizer
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer block {name:?}")))
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| &b[..])
            .ok_or_else(|| Error::Format(format!("checkpoint lacks blob {name:?}")))
    }

    pub fn has_blob(&self, name: &str) -> bool {
        self.blobs.iter().any(|(n, _)| n == name)
    }
}

/// Little-endian byte packing for blob payloads.
#[derive(Debug, Default)]
pub struct BlobWriter {
    pub bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes.extend_from_slice(b);
    }
}

#[derive(Debug)]
pub struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BlobReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated blob".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format("trailing bytes in blob".into()));
        }
        Ok(())
    }
}
