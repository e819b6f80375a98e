//! Binary model snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ESLMSNAP"  u32 version  string variant
//! u64 × 7     vocab dim heads head_dim hidden0 hidden1 seq_cap
//! u32 count   then per tensor: string name, u64 rows, u64 cols, f64 × rows·cols
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Values are stored as raw
//! IEEE-754 bits, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use eslm_core::model::{ModelParams, ModelShape};
use eslm_core::objectives::Variant;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ESLMSNAP";
pub const VERSION: u32 = 1;

const MAX_STRING: u32 = 1 << 16;

/// A trained model together with the variant that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub variant: Variant,
    pub params: ModelParams,
}

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_string<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()?;
    if len > MAX_STRING {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "string too long",
        ));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

impl Snapshot {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let s = &self.params.shape;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_string(w, self.variant.as_str())?;
        for v in [
            s.vocab,
            s.dim,
            s.heads,
            s.head_dim,
            s.hidden[0],
            s.hidden[1],
            s.seq_cap,
        ] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        let tensors = self.params.named_tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, t) in tensors {
            write_string(w, &name)?;
            w.write_u64::<LittleEndian>(t.rows as u64)?;
            w.write_u64::<LittleEndian>(t.cols as u64)?;
            for &x in &t.data {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    /// Parses a snapshot; `path` is only used in error messages.
    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Snapshot {
            path: path.to_path_buf(),
            reason,
        };
        let io = |e: std::io::Error| fail(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fail("not a model snapshot".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let name = read_string(r).map_err(io)?;
        let variant =
            Variant::parse(&name).ok_or_else(|| fail(format!("unknown variant `{name}`")))?;
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        }
        let shape = ModelShape {
            vocab: dims[0],
            dim: dims[1],
            heads: dims[2],
            head_dim: dims[3],
            hidden: [dims[4], dims[5]],
            seq_cap: dims[6],
        };
        let mut params = ModelParams::zeros(shape).map_err(|e| fail(e.to_string()))?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        if count != names.len() {
            return Err(fail(format!("{count} tensors, expected {}", names.len())));
        }
        for (expected, t) in names.iter().zip(params.tensors_mut()) {
            let name = read_string(r).map_err(io)?;
            if &name != expected {
                return Err(fail(format!(
                    "tensor `{name}` where `{expected}` was expected"
                )));
            }
            let rows = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            let cols = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            if (rows, cols) != (t.rows, t.cols) {
                return Err(fail(format!(
                    "tensor `{name}` is {rows}×{cols}, shape header implies {}×{}",
                    t.rows, t.cols
                )));
            }
            for x in &mut t.data {
                *x = r.read_f64::<LittleEndian>().map_err(io)?;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(fail("trailing bytes after the last tensor".into()));
        }
        Ok(Self { variant, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(Error::io(path))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(Error::io(path))?;
        w.flush().map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(path))?;
        Self::read_from(&mut BufReader::new(file), path)
    }
}
