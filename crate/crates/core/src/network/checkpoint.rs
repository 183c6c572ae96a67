//! Versioned binary weight checkpoints.
//!
//! Layout: magic bytes, format version, a hash of the network spec, then the
//! parameter tensors in flattening order as length-prefixed little-endian
//! f32 dumps. Values are up-converted to f64 on load.

use crate::error::{Error, Result};
use crate::network::params::Parameters;
use crate::network::spec::NetworkSpec;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FSERCKPT";
const VERSION: u32 = 1;

/// FNV-1a over the canonical JSON encoding of the spec.
pub fn spec_hash(spec: &NetworkSpec) -> u64 {
    let encoded = serde_json::to_string(spec).expect("spec serialises");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in encoded.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&spec_hash(spec).to_le_bytes())?;
    for layer in &params.layers {
        for t in layer.tensors() {
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, spec: &NetworkSpec) -> Result<Parameters> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic bytes", path.display())));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let hash = u64::from_le_bytes(buf8);
    let expect = spec_hash(spec);
    if hash != expect {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint was written for a different network spec",
            path.display()
        )));
    }
    // Template gives the tensor layout; seed value is irrelevant.
    let template = Parameters::init(spec, 0)?;
    let mut out = template.clone();
    for layer in &mut out.layers {
        for t in layer.tensors_mut() {
            r.read_exact(&mut buf8)?;
            let n = u64::from_le_bytes(buf8) as usize;
            if n != t.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor length {n} does not match layout ({})",
                    path.display(),
                    t.len()
                )));
            }
            for v in t.data_mut() {
                r.read_exact(&mut buf4)?;
                *v = f32::from_le_bytes(buf4) as f64;
            }
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint(format!("{}: trailing bytes after weights", path.display())));
    }
    Ok(out)
}
