//! The `.hqs` progressive container.
//!
//! ```text
//! "HQS1" | u8 version | u32 C, H, W | u8 L | u32 K | f32 T
//! | delta (L x C f32) | delta_inv (L x C f32) | gamma (L f32)
//! | mu plane | sigma plane | u8 flags [| importance plane]
//! | L x (u64 segment length | segment bytes)
//! ```
//!
//! All integers and floats are little-endian. Flag bit 0 marks the optional
//! importance plane. Any byte prefix that contains the whole header can be
//! parsed; segments past the cut are reported as partial or absent.

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::hql::{dim_u32, read_shape};
use crate::latent::{GaussianParams, Shape};
use crate::quant::QuantConfig;
use crate::schedule::StepSchedule;
use crate::selection::ImportanceMap;

pub const HQS_MAGIC: &[u8; 4] = b"HQS1";
pub const HQS_VERSION: u8 = 1;
const FLAG_IMPORTANCE: u8 = 1;
const WHAT: &str = "container";

/// Everything the decoder needs besides the layer segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub shape: Shape,
    pub quant: QuantConfig,
    pub schedule: StepSchedule,
    pub params: GaussianParams,
    pub importance: Option<ImportanceMap>,
}

impl Header {
    pub fn layers(&self) -> usize {
        self.schedule.layers()
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        let (l, c, n) = (self.layers(), self.shape.channels, self.shape.len());
        let planes = 2 + self.importance.is_some() as usize;
        4 + 1 + 12 + 1 + 4 + 4 + 4 * (2 * l * c + l) + 4 * planes * n + 1
    }

    pub fn write(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(HQS_MAGIC);
        out.push(HQS_VERSION);
        for d in [self.shape.channels, self.shape.height, self.shape.width] {
            out.extend_from_slice(&dim_u32(d)?.to_le_bytes());
        }
        out.push(self.layers() as u8);
        out.extend_from_slice(&self.quant.k.to_le_bytes());
        put_f32s(out, &[self.quant.threshold], WHAT)?;
        put_f32s(out, self.schedule.flat_delta(), WHAT)?;
        put_f32s(out, self.schedule.flat_delta_inv(), WHAT)?;
        put_f32s(out, self.schedule.gammas(), WHAT)?;
        put_f32s(out, self.params.mu(), WHAT)?;
        put_f32s(out, self.params.sigma(), WHAT)?;
        match &self.importance {
            Some(im) => {
                out.push(FLAG_IMPORTANCE);
                put_f32s(out, im.values(), WHAT)?;
            }
            None => out.push(0),
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Header> {
        r.magic(HQS_MAGIC)?;
        let version = r.u8()?;
        if version != HQS_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let shape = read_shape(r)?;
        let layers = r.u8()? as usize;
        if layers == 0 {
            return Err(Error::format(WHAT, "zero layers"));
        }
        let k = r.u32()?;
        let threshold = r.f32()?;
        let quant = QuantConfig::new(k, threshold).map_err(|e| Error::format(WHAT, e.to_string()))?;
        let c = shape.channels;
        let delta = r.f32_plane(layers * c)?;
        let delta_inv = r.f32_plane(layers * c)?;
        let gamma = r.f32_plane(layers)?;
        let schedule = StepSchedule::from_flat(layers, c, delta, delta_inv, gamma)?;
        let n = shape.len();
        let mu = r.f32_plane(n)?;
        let sigma = r.f32_plane(n)?;
        let params = GaussianParams::new(shape, mu, sigma)?;
        let flags = r.u8()?;
        if flags & !FLAG_IMPORTANCE != 0 {
            return Err(Error::format(WHAT, format!("unknown flags {flags:#04x}")));
        }
        let importance = if flags & FLAG_IMPORTANCE != 0 {
            Some(ImportanceMap::new(shape, r.f32_plane(n)?)?)
        } else {
            None
        };
        Ok(Header {
            shape,
            quant,
            schedule,
            params,
            importance,
        })
    }
}

/// A complete container held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub segments: Vec<Vec<u8>>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload: usize = self.segments.iter().map(|s| 8 + s.len()).sum();
        let mut out = Vec::with_capacity(self.header.byte_len() + payload);
        self.header.write(&mut out)?;
        for s in &self.segments {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s);
        }
        Ok(out)
    }

    /// Parses a complete container; truncated input is an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let view = ContainerView::parse(bytes)?;
        if view.segments.len() != view.header.layers() || view.segments.iter().any(|s| !s.is_complete()) {
            return Err(Error::format(WHAT, "truncated layer segments"));
        }
        Ok(Container {
            segments: view.segments.iter().map(|s| s.payload.to_vec()).collect(),
            header: view.header,
        })
    }

    pub fn header_len(&self) -> usize {
        self.header.byte_len()
    }

    pub fn total_len(&self) -> usize {
        self.header_len() + self.segments.iter().map(|s| 8 + s.len()).sum::<usize>()
    }
}

/// One layer segment as present in a (possibly truncated) byte string.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    /// Offset of the segment's length field.
    pub offset: usize,
    pub declared: u64,
    pub payload: &'a [u8],
}

impl SegmentView<'_> {
    pub fn is_complete(&self) -> bool {
        self.payload.len() as u64 == self.declared
    }

    /// Offset one past the last available byte.
    pub fn end(&self) -> usize {
        self.offset + 8 + self.payload.len()
    }
}

/// A parsed header plus whatever segments a byte prefix contains. Segments
/// whose length field is cut are absent.
#[derive(Debug, Clone)]
pub struct ContainerView<'a> {
    pub header: Header,
    pub header_len: usize,
    pub segments: Vec<SegmentView<'a>>,
}

impl<'a> ContainerView<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, WHAT);
        let header = Header::read(&mut r)?;
        let header_len = r.pos();
        let mut segments = Vec::with_capacity(header.layers());
        let mut cut = false;
        for _ in 0..header.layers() {
            if r.remaining() < 8 {
                // a cut length field leaves the segment absent
                cut = true;
                break;
            }
            let offset = r.pos();
            let declared = r.u64()?;
            let take = declared.min(r.remaining() as u64) as usize;
            let payload = r.take(take)?;
            let seg = SegmentView {
                offset,
                declared,
                payload,
            };
            segments.push(seg);
            if !seg.is_complete() {
                break;
            }
        }
        if !cut && r.remaining() > 0 {
            return Err(Error::format(WHAT, format!("{} trailing bytes", r.remaining())));
        }
        Ok(ContainerView {
            header,
            header_len,
            segments,
        })
    }

    /// True if every layer segment is present and complete.
    pub fn is_complete(&self) -> bool {
        self.segments.len() == self.header.layers() && self.segments.iter().all(SegmentView::is_complete)
    }
}
