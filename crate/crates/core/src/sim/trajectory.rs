//! Binary trajectory dumps: a 16-byte header (`MXDT`, version, n_states, T;
//! little-endian u32s) followed by `T + 1` little-endian u32 state indices.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MXDT";
const VERSION: u32 = 1;

pub fn write_trajectory(path: &Path, n_states: usize, states: &[usize]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * states.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n_states as u32).to_le_bytes());
    buf.extend_from_slice(&(states.len().saturating_sub(1) as u32).to_le_bytes());
    for &s in states {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile_in(dir)?;
    tmp.1.write_all(&buf)?;
    tmp.1.sync_all()?;
    drop(tmp.1);
    std::fs::rename(&tmp.0, path)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<(usize, Vec<usize>)> {
    let mut f = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[0..4] != MAGIC {
        return Err(Error::Parse { line: 0, msg: "not a trajectory dump".into() });
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Parse { line: 0, msg: format!("unsupported version {}", word(4)) });
    }
    let n_states = word(8) as usize;
    let len = word(12) as usize + 1;
    if buf.len() != 16 + 4 * len {
        return Err(Error::Parse { line: 0, msg: "truncated trajectory".into() });
    }
    Ok((n_states, (0..len).map(|k| word(16 + 4 * k) as usize).collect()))
}

pub(crate) fn tempfile_in(dir: &Path) -> Result<(std::path::PathBuf, std::fs::File)> {
    for k in 0..1000u32 {
        let p = dir.join(format!(".mixdecomp-{}-{k}.tmp", std::process::id()));
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(f) => return Ok((p, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::Io("could not create a temporary file".into()))
}
