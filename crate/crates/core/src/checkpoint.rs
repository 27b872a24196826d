//! Versioned, checksummed checkpoint files.
//!
//! Layout (all integers little endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `ENSRLCKP` |
//! | 4 | format version |
//! | 32 | SHA-256 of the config TOML |
//! | 8 + n | config TOML |
//! | 8 + m | bincode trainer state |
//! | 32 | SHA-256 of everything above |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::runner::{Trainer, TrainerState};

pub const MAGIC: &[u8; 8] = b"ENSRLCKP";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(config: &RunConfig, state: &TrainerState) -> Result<Vec<u8>> {
    let toml = config.to_toml_string();
    let body = bincode::serialize(state).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(100 + toml.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config.hash());
    for section in [toml.as_bytes(), &body] {
        out.extend_from_slice(&(section.len() as u64).to_le_bytes());
        out.extend_from_slice(section);
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn section(&mut self) -> Result<&'a [u8]> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        self.take(usize::try_from(len).map_err(|_| Error::Checkpoint("section too large".into()))?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(RunConfig, TrainerState)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let found = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if found != FORMAT_VERSION {
        return Err(Error::Version { found, expected: FORMAT_VERSION });
    }
    if bytes.len() < 32 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (payload, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(payload).as_slice() != sum {
        return Err(Error::Checksum);
    }
    let mut r = Reader { bytes: payload, pos: 12 };
    let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let toml = std::str::from_utf8(r.section()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let config = RunConfig::from_toml_str(toml)?;
    if config.hash() != hash {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    let state = bincode::deserialize(r.section()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if r.pos != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after the state section".into()));
    }
    Ok((config, state))
}

pub fn save(path: &Path, trainer: &Trainer) -> Result<()> {
    let bytes = encode(trainer.config(), &trainer.snapshot())?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Load a trainer. With `expected` set, a checkpoint written under a
/// different config is refused.
pub fn load(path: &Path, expected: Option<&RunConfig>) -> Result<Trainer> {
    let bytes = std::fs::read(path)?;
    let (config, state) = decode(&bytes)?;
    if let Some(want) = expected {
        if want.hash() != config.hash() {
            return Err(Error::Checkpoint(format!(
                "{} was written with a different config; refusing to resume",
                path.display()
            )));
        }
    }
    Trainer::from_parts(config, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Algorithm;
    use crate::envs::EnvConfig;

    fn trainer() -> Trainer {
        let mut c = RunConfig::new(Algorithm::BootDqn, EnvConfig::chain(4), 200);
        c.ensemble.members = Some(2);
        c.network.hidden = vec![8];
        c.replay.batch_size = 4;
        c.eval.period = 50;
        c.eval.episodes = 1;
        let mut t = Trainer::new(c, 9).unwrap();
        t.run_until(77).unwrap();
        t
    }

    #[test]
    fn byte_identical_round_trip() {
        let t = trainer();
        let bytes = encode(t.config(), &t.snapshot()).unwrap();
        let (config, state) = decode(&bytes).unwrap();
        assert_eq!(&config, t.config());
        assert_eq!(state, t.snapshot());
        assert_eq!(encode(&config, &state).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let t = trainer();
        let bytes = encode(t.config(), &t.snapshot()).unwrap();
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Checksum)));
        let mut bumped = bytes.clone();
        bumped[8] += 1;
        assert!(matches!(decode(&bumped), Err(Error::Version { found: 2, expected: 1 })));
        assert!(matches!(decode(&bytes[..20]), Err(Error::Checksum | Error::Checkpoint(_))));
        assert!(matches!(decode(b"garbage!and more"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn refuses_other_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let t = trainer();
        save(&path, &t).unwrap();
        assert!(load(&path, Some(t.config())).is_ok());
        let mut other = t.config().clone();
        other.replay.batch_size = 5;
        assert!(matches!(load(&path, Some(&other)), Err(Error::Checkpoint(_))));
    }
}
