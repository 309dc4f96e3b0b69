//! GSPL checkpoint files.
//!
//! Little-endian throughout:
//!
//! | offset | size        | content                                       |
//! |--------|-------------|-----------------------------------------------|
//! | 0      | 4           | magic `GSPL`                                  |
//! | 4      | 4           | version (u32) = 1                             |
//! | 8      | 4           | wave count N (u32)                            |
//! | 12     | 4           | primitive count P (u32)                       |
//! | 16     | 4           | mode tag (u32): 0 gabor, 1 baselineA, 2 baselineB, 3 baselineC, 4 gaussian_only |
//! | 20     | 4·P·(16+3N) | raw parameters (f32), one record per primitive |
//! | end-4  | 4           | CRC32 (IEEE) of all preceding bytes           |
//!
//! Record field order: position xyz, quaternion wxyz, log scale u v, opacity
//! logit, color A logits rgb, color B logits rgb, weights w_0..w_{N-1},
//! frequencies f_0.., phases phi_0...

use std::path::Path;

use crate::error::{Error, Result};
use crate::gabor::{Mode, MAX_WAVES};
use crate::scene::{stride, Scene};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GSPL";
const HEADER: usize = 20;

/// Serializes `scene`. Parameters are written as f32; scenes whose values
/// are already f32-representable round-trip exactly.
pub fn encode_checkpoint(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * scene.params.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.n_waves as u32).to_le_bytes());
    out.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    out.extend_from_slice(&scene.mode.tag().to_le_bytes());
    for &p in &scene.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "unexpected end at offset {} (need {n} more bytes, file has {})",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic at offset 0 (expected GSPL)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch at offset 4: file has {version}, reader supports {CHECKPOINT_VERSION}"
        )));
    }
    let n_waves = r.u32()? as usize;
    if n_waves == 0 || n_waves > MAX_WAVES {
        return Err(Error::Checkpoint(format!(
            "wave count {n_waves} at offset 8 outside 1..={MAX_WAVES}"
        )));
    }
    let count = r.u32()? as usize;
    let tag = r.u32()?;
    let mode = Mode::from_tag(tag)
        .ok_or_else(|| Error::Checkpoint(format!("unknown mode tag {tag} at offset 16")))?;
    let floats = count * stride(n_waves);
    let body = r.take(4 * floats)?;
    let stored_crc = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes at offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if computed != stored_crc {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored_crc:08x}, computed {computed:08x}"
        )));
    }
    let mut scene = Scene::new(n_waves, mode)?;
    scene.params = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if let Some(k) = scene.params.iter().position(|x| !x.is_finite()) {
        return Err(Error::Checkpoint(format!(
            "non-finite value at offset {}",
            HEADER + 4 * k
        )));
    }
    Ok(scene)
}

pub fn save_checkpoint(scene: &Scene, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::to_storage;

    fn sample() -> Scene {
        let mut s = Scene::new(2, Mode::BaselineC).unwrap();
        s.params = (0..3 * stride(2)).map(|i| to_storage(i as f64 * 0.37 - 5.0)).collect();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn header_layout() {
        let b = encode_checkpoint(&sample());
        assert_eq!(&b[..4], b"GSPL");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(b.len(), 20 + 4 * 3 * 22 + 4);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let b = encode_checkpoint(&sample());
        let err = decode_checkpoint(&b[..b.len() - 10]).unwrap_err().to_string();
        assert!(err.contains("unexpected end at offset"), "{err}");
    }

    #[test]
    fn flipped_payload_bit_fails_crc() {
        let mut b = encode_checkpoint(&sample());
        b[40] ^= 0x04;
        let err = decode_checkpoint(&b).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut b = encode_checkpoint(&sample());
        b[4] = 2;
        let err = decode_checkpoint(&b).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
