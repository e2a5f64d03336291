//! Binary weight file, all integers and reals little-endian:
//!
//! ```text
//! magic            4 bytes  "WAWE"
//! version          u16      1
//! input_channels   u32
//! channels         u32
//! outputs          u32
//! input_len        u32
//! sections         u32
//! per section      u8 kind (0 = plain, 1 = padded), u32 pool
//! bn_epsilon       f64
//! bn_momentum      f64
//! param_count      u64      trainable values
//! buffer_count     u64      running statistics
//! payload          f32 × (param_count + buffer_count)
//!                  per section: conv weights, conv offsets, gamma, beta,
//!                  running mean, running variance; then dense weights and
//!                  dense offsets
//! checksum         u32      CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::dsp::{ConvWeights, NormParams};
use crate::error::{Error, Result};
use crate::model::{DenseHead, ModelConfig, Section, SectionKind, WaweNet};
use crate::scalar::Scalar;

pub const WEIGHT_MAGIC: &[u8; 4] = b"WAWE";
pub const WEIGHT_VERSION: u16 = 1;

/// Serializes `net` (as 32-bit reals).
pub fn write_weights<T: Scalar>(net: &WaweNet<T>) -> Vec<u8> {
    let cfg = net.config();
    let mut b = Vec::new();
    b.extend_from_slice(WEIGHT_MAGIC);
    b.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    for v in [cfg.input_channels, cfg.channels, cfg.outputs, cfg.input_len, cfg.sections.len()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in &cfg.sections {
        b.push(match s.kind {
            SectionKind::ConvA => 0,
            SectionKind::PConvA => 1,
        });
        b.extend_from_slice(&(s.pool as u32).to_le_bytes());
    }
    b.extend_from_slice(&cfg.bn_epsilon.to_le_bytes());
    b.extend_from_slice(&cfg.bn_momentum.to_le_bytes());
    b.extend_from_slice(&(cfg.param_count() as u64).to_le_bytes());
    b.extend_from_slice(&(cfg.buffer_count() as u64).to_le_bytes());
    let mut put = |v: &[T]| v.iter().for_each(|x| b.extend_from_slice(&(x.f64() as f32).to_le_bytes()));
    for s in &net.sections {
        put(&s.conv.weights);
        put(&s.conv.offsets);
        put(&s.norm.gamma);
        put(&s.norm.beta);
        put(&s.norm.running_mean);
        put(&s.norm.running_var);
    }
    put(&net.head.weights);
    put(&net.head.offsets);
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile("truncated weight file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.array()?)).map_err(|_| Error::CorruptFile("count overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::CorruptFile("size overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

/// Parses a weight file image.
pub fn read_weights<T: Scalar>(bytes: &[u8]) -> Result<WaweNet<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = r.u16()?;
    if version != WEIGHT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(Error::CorruptFile("truncated weight file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: r.pos };

    let input_channels = r.u32()?;
    let channels = r.u32()?;
    let outputs = r.u32()?;
    let input_len = r.u32()?;
    let count = r.u32()?;
    let mut layout = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => SectionKind::ConvA,
            1 => SectionKind::PConvA,
            k => return Err(Error::CorruptFile(format!("unknown section kind {k}"))),
        };
        layout.push((kind, r.u32()?));
    }
    let epsilon = r.f64()?;
    let momentum = r.f64()?;
    let params = r.u64()?;
    let buffers = r.u64()?;

    let mut cfg = ModelConfig::custom(input_channels, channels, outputs, input_len, &layout)
        .map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    cfg.bn_epsilon = epsilon;
    cfg.bn_momentum = momentum;
    cfg.validate().map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    if params != cfg.param_count() || buffers != cfg.buffer_count() {
        return Err(Error::CorruptFile(format!(
            "declared {params} parameters and {buffers} buffers, the header geometry implies {} and {}",
            cfg.param_count(),
            cfg.buffer_count()
        )));
    }
    if body.len() - r.pos != 4 * (params + buffers) {
        return Err(Error::CorruptFile(format!(
            "payload holds {} bytes, expected {}",
            body.len() - r.pos,
            4 * (params + buffers)
        )));
    }

    let c = channels;
    let mut sections = Vec::with_capacity(count);
    for (i, spec) in cfg.sections.iter().enumerate() {
        let ic = cfg.section_in_channels(i);
        let conv = ConvWeights {
            in_channels: ic,
            out_channels: c,
            weights: r.reals(c * ic * crate::dsp::TAPS)?,
            offsets: r.reals(c)?,
        };
        let norm = NormParams {
            gamma: r.reals(c)?,
            beta: r.reals(c)?,
            running_mean: r.reals(c)?,
            running_var: r.reals(c)?,
            epsilon,
            momentum,
        };
        sections.push(Section {
            spec: spec.clone(),
            conv,
            norm,
        });
    }
    let head = DenseHead {
        inputs: c,
        outputs,
        weights: r.reals(outputs * c)?,
        offsets: r.reals(outputs)?,
    };
    WaweNet::from_parts(cfg, sections, head)
}

pub fn save_weights<T: Scalar>(path: impl AsRef<Path>, net: &WaweNet<T>) -> Result<()> {
    fs::write(path, write_weights(net))?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<WaweNet<T>> {
    read_weights(&fs::read(path)?)
}
