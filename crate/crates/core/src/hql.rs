//! The `.hql` latent file format.
//!
//! ```text
//! "HQL1" | u8 version | u32 C | u32 H | u32 W | y plane | mu plane | sigma plane [| importance plane]
//! ```
//!
//! Planes hold `C*H*W` little-endian `f32` values in channel-major order.
//! The low bits of the version byte are 1; bit 7 signals the optional
//! importance plane.

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::latent::{GaussianParams, LatentTensor, Shape};
use crate::selection::ImportanceMap;

pub const HQL_MAGIC: &[u8; 4] = b"HQL1";
const VERSION: u8 = 1;
const IMPORTANCE_FLAG: u8 = 0x80;
const WHAT: &str = "latent file";

/// Contents of a latent file.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub latent: LatentTensor,
    pub params: GaussianParams,
    pub importance: Option<ImportanceMap>,
}

/// Serializes a latent. Values are narrowed to 32 bits; pass f32-exact
/// values for a bit-exact round trip.
pub fn store_latent(
    latent: &LatentTensor,
    params: &GaussianParams,
    importance: Option<&ImportanceMap>,
) -> Result<Vec<u8>> {
    let shape = latent.shape();
    if params.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape.len(),
            found: params.shape().len(),
        });
    }
    if let Some(im) = importance {
        shape.check_len(im.values().len())?;
    }
    let planes = 3 + importance.is_some() as usize;
    let mut out = Vec::with_capacity(17 + planes * 4 * shape.len());
    out.extend_from_slice(HQL_MAGIC);
    out.push(VERSION | if importance.is_some() { IMPORTANCE_FLAG } else { 0 });
    for d in [shape.channels, shape.height, shape.width] {
        out.extend_from_slice(&dim_u32(d)?.to_le_bytes());
    }
    put_f32s(&mut out, latent.values(), WHAT)?;
    put_f32s(&mut out, params.mu(), WHAT)?;
    put_f32s(&mut out, params.sigma(), WHAT)?;
    if let Some(im) = importance {
        put_f32s(&mut out, im.values(), WHAT)?;
    }
    Ok(out)
}

pub(crate) fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Config(format!("dimension {d} exceeds u32")))
}

/// Parses a latent file, validating every invariant before returning.
pub fn load_latent(bytes: &[u8]) -> Result<LatentFile> {
    let mut r = Reader::new(bytes, WHAT);
    r.magic(HQL_MAGIC)?;
    let version = r.u8()?;
    if version & !IMPORTANCE_FLAG != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version:#04x}")));
    }
    let shape = read_shape(&mut r)?;
    let n = shape.len();
    let planes = 3 + (version & IMPORTANCE_FLAG != 0) as usize;
    if r.remaining() != planes * 4 * n {
        return Err(Error::format(
            WHAT,
            format!("expected {} payload bytes, found {}", planes * 4 * n, r.remaining()),
        ));
    }
    let latent = LatentTensor::new(shape, r.f32_plane(n)?)?;
    let mu = r.f32_plane(n)?;
    let sigma = r.f32_plane(n)?;
    let params = GaussianParams::new(shape, mu, sigma)?;
    let importance = if planes == 4 {
        Some(ImportanceMap::new(shape, r.f32_plane(n)?)?)
    } else {
        None
    };
    Ok(LatentFile {
        latent,
        params,
        importance,
    })
}

pub(crate) fn read_shape(r: &mut Reader<'_>) -> Result<Shape> {
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    c.checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .filter(|&n| n <= (1 << 34))
        .ok_or_else(|| Error::format("shape", format!("{c}x{h}x{w} is too large")))?;
    Shape::new(c, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{sample_source, SourceConfig};

    fn sample() -> (LatentTensor, GaussianParams) {
        sample_source(&SourceConfig {
            shape: Shape::new(2, 3, 5).unwrap(),
            ..SourceConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (y, p) = sample();
        let bytes = store_latent(&y, &p, None).unwrap();
        assert_eq!(bytes.len(), 17 + 3 * 4 * 30);
        let f = load_latent(&bytes).unwrap();
        assert_eq!(f.latent, y);
        assert_eq!(f.params, p);
        assert!(f.importance.is_none());
    }

    #[test]
    fn importance_plane_round_trips() {
        let (y, p) = sample();
        let im = ImportanceMap::from_sigma(&p);
        let bytes = store_latent(&y, &p, Some(&im)).unwrap();
        assert_eq!(bytes[4], 0x81);
        let f = load_latent(&bytes).unwrap();
        let back = f.importance.unwrap();
        for (a, b) in back.values().iter().zip(im.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let (y, p) = sample();
        let bytes = store_latent(&y, &p, None).unwrap();
        for cut in [0, 3, 4, 16, bytes.len() - 1] {
            assert!(matches!(load_latent(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load_latent(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(load_latent(&long).is_err());
    }

    #[test]
    fn rejects_zero_sigma_and_nan() {
        let (y, p) = sample();
        let bytes = store_latent(&y, &p, None).unwrap();
        let sigma_at = 17 + 2 * 4 * 30;
        let mut zero = bytes.clone();
        zero[sigma_at..sigma_at + 4].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(load_latent(&zero), Err(Error::NonPositiveSigma { index: 0, .. })));
        let mut nan = bytes;
        nan[17..21].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(load_latent(&nan), Err(Error::NonFinite { index: 0 })));
    }

    #[test]
    fn rejects_values_that_overflow_f32() {
        let s = Shape::new(1, 1, 1).unwrap();
        let y = LatentTensor::new(s, vec![1e300]).unwrap();
        let p = GaussianParams::new(s, vec![0.0], vec![1.0]).unwrap();
        assert!(store_latent(&y, &p, None).is_err());
    }
}
