//! Little-endian binary container for feature maps and descriptors.
//!
//! Layout:
//! - magic: `b"MMFT"`
//! - version: `u8` (currently 1)
//! - height, width, channels, source width px, source height px: `u32` each
//! - payload: `height * width * channels` `f32`, row-major, channel-last
//!
//! Descriptors use the same container with `height = width = 1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DescriptorVector, FeatureMap};

pub const MAGIC: &[u8; 4] = b"MMFT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 5 * 4;

pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let (h, w, c) = fm.shape();
    let (sw, sh) = fm.source_dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + fm.values().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    for d in [h as u32, w as u32, c as u32, sw, sh] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in fm.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_feature_map(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let field = |i: usize| {
        let o = 5 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let (h, w, c, sw, sh) = (field(0), field(1), field(2), field(3), field(4));
    if h == 0 || w == 0 || c == 0 || sw == 0 || sh == 0 {
        return Err(Error::InvalidDims(format!(
            "{}: header declares {h}x{w}x{c} over a {sw}x{sh} image",
            path.display()
        )));
    }
    let count = (h as usize)
        .checked_mul(w as usize)
        .and_then(|n| n.checked_mul(c as usize))
        .ok_or_else(|| Error::InvalidDims(format!("{}: dims overflow", path.display())))?;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(path.to_path_buf()));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanPayload(path.to_path_buf()));
    }
    FeatureMap::new(h as usize, w as usize, c as usize, values, (sw, sh))
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes, path)
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_feature_map(fm))
}

/// Loads a descriptor file; the container must be `1 x 1 x C`.
pub fn load_descriptor(path: impl AsRef<Path>) -> Result<DescriptorVector> {
    let path = path.as_ref();
    let fm = load_feature_map(path)?;
    if fm.height() != 1 || fm.width() != 1 {
        return Err(Error::InvalidDims(format!(
            "{}: descriptor container must be 1x1xC, found {}x{}x{}",
            path.display(),
            fm.height(),
            fm.width(),
            fm.channels()
        )));
    }
    Ok(DescriptorVector::new(
        fm.values().iter().map(|&v| f64::from(v)).collect(),
    ))
}

/// Stores a descriptor as `f32`; `source_dims` records the originating image size.
pub fn save_descriptor(
    desc: &DescriptorVector,
    source_dims: (u32, u32),
    path: impl AsRef<Path>,
) -> Result<()> {
    let values: Vec<f32> = desc.values().iter().map(|&v| v as f32).collect();
    let fm = FeatureMap::new(1, 1, values.len(), values, source_dims)?;
    save_feature_map(&fm, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize, c: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        FeatureMap::from_fn(h, w, c, (512, 384), |_, _, _| rng.random_range(-3.0..3.0)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.bin");
        let fm = sample(24, 32, 64);
        save_feature_map(&fm, &path).unwrap();
        let back = load_feature_map(&path).unwrap();
        assert_eq!(back.shape(), (24, 32, 64));
        assert_eq!(back.source_dims(), (512, 384));
        assert!(fm
            .values()
            .iter()
            .zip(back.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(fs::read(&path).unwrap(), encode_feature_map(&back));
    }

    #[test]
    fn decode_errors_are_distinct() {
        let p = Path::new("x.bin");
        let good = encode_feature_map(&sample(2, 3, 4));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_feature_map(&bad, p), Err(Error::BadMagic(_))));

        assert!(matches!(
            decode_feature_map(&good[..good.len() - 3], p),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_feature_map(&good[..10], p),
            Err(Error::TruncatedPayload { .. })
        ));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_feature_map(&long, p), Err(Error::TrailingBytes(_))));

        let mut zero_c = good.clone();
        zero_c[13..17].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_feature_map(&zero_c, p), Err(Error::InvalidDims(_))));

        let mut nan = good.clone();
        nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_feature_map(&nan, p), Err(Error::NanPayload(_))));

        let mut ver = good;
        ver[4] = 9;
        assert!(matches!(
            decode_feature_map(&ver, p),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));
    }

    #[test]
    fn descriptor_container() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = DescriptorVector::new(vec![0.25, -0.5, 1.0]);
        save_descriptor(&d, (640, 480), &path).unwrap();
        assert_eq!(load_descriptor(&path).unwrap().values(), d.values());

        save_feature_map(&sample(2, 1, 3), &path).unwrap();
        assert!(matches!(load_descriptor(&path), Err(Error::InvalidDims(_))));
    }
}
