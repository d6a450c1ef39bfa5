//! Binary parameter frame shared by snapshot transport and checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! u32 magic = 0xD4504706
//! u64 version
//! u32 layer_count
//! per layer: u32 rows (fan-in), u32 cols (fan-out),
//!            rows*cols f64 (transposed weight, row-major), cols f64 bias
//! u64 checksum = FNV-1a over every preceding byte of the frame
//! ```

use std::hash::Hasher;
use std::io::{Read, Write};

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::nn::{DenseNet, Layer, NetSpec};
use crate::scalar::Scalar;

pub const FRAME_MAGIC: u32 = 0xD450_4706;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Decoded frame; layers are kept in f64 until bound to an architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub version: u64,
    pub layers: Vec<Layer<f64>>,
}

impl Frame {
    pub fn from_net<T: Scalar>(version: u64, net: &DenseNet<T>) -> Self {
        Self::from_layers(version, net.layers())
    }

    pub fn from_layers<T: Scalar>(version: u64, layers: &[Layer<T>]) -> Self {
        let layers = layers
            .iter()
            .map(|l| {
                Layer::from_parts(
                    l.inputs(),
                    l.outputs(),
                    l.weight().iter().map(|w| w.as_f64()).collect(),
                    l.bias().iter().map(|b| b.as_f64()).collect(),
                )
                .expect("layer shapes are consistent")
            })
            .collect();
        Self { version, layers }
    }

    /// Convert to layers of the given sizes, naming the first layer whose
    /// shape disagrees.
    pub fn into_layers<T: Scalar>(self, sizes: &[usize]) -> Result<Vec<Layer<T>>> {
        if self.layers.len() + 1 != sizes.len() {
            return Err(Error::Load(format!(
                "frame has {} layers, architecture expects {}",
                self.layers.len(),
                sizes.len().saturating_sub(1)
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            if l.inputs() != sizes[i] || l.outputs() != sizes[i + 1] {
                return Err(Error::Load(format!(
                    "layer {i}: frame holds {}x{} (fan-in x fan-out), architecture expects {}x{}",
                    l.inputs(),
                    l.outputs(),
                    sizes[i],
                    sizes[i + 1]
                )));
            }
            layers.push(Layer::from_parts(
                l.inputs(),
                l.outputs(),
                l.weight().iter().map(|&w| T::of(w)).collect(),
                l.bias().iter().map(|&b| T::of(b)).collect(),
            )?);
        }
        Ok(layers)
    }

    /// Bind to `spec`, naming the first layer whose shape disagrees.
    pub fn into_net<T: Scalar>(self, spec: &NetSpec) -> Result<DenseNet<T>> {
        let layers = self.into_layers(spec.layer_sizes())?;
        DenseNet::from_layers(spec.clone(), layers)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&FRAME_MAGIC.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let (rows, cols) = (l.inputs(), l.outputs());
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            for r in 0..rows {
                for c in 0..cols {
                    out.extend_from_slice(&l.weight()[c * rows + r].to_le_bytes());
                }
            }
            for b in l.bias() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        let checksum = fnv1a(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    /// Decode one frame from the front of `bytes`; returns it with the number
    /// of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.u32()?;
        if magic != FRAME_MAGIC {
            return Err(Error::Load(format!("bad frame magic {magic:#010x}")));
        }
        let version = cur.u64()?;
        let count = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for i in 0..count {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let transposed = cur.f64s(rows.checked_mul(cols).ok_or_else(|| Error::Load(format!("layer {i}: size overflow")))?)?;
            let bias = cur.f64s(cols)?;
            let mut weight = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    weight[c * rows + r] = transposed[r * cols + c];
                }
            }
            layers.push(Layer::from_parts(rows, cols, weight, bias)?);
        }
        let body_end = cur.pos;
        let checksum = cur.u64()?;
        if fnv1a(&bytes[..body_end]) != checksum {
            return Err(Error::Load("frame checksum mismatch".into()));
        }
        Ok((Self { version, layers }, cur.pos))
    }
}

/// Write one frame to a stream (e.g. a socket for a cross-process actor).
pub fn write_frame<W: Write>(mut w: W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode())?;
    Ok(())
}

/// Read one frame from a stream.
pub fn read_frame<R: Read>(mut r: R) -> Result<Frame> {
    let mut buf = vec![0u8; 16];
    r.read_exact(&mut buf)?;
    let count = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    for _ in 0..count {
        let at = buf.len();
        buf.resize(at + 8, 0);
        r.read_exact(&mut buf[at..])?;
        let rows = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(buf[at + 4..at + 8].try_into().unwrap()) as usize;
        let at = buf.len();
        buf.resize(at + 8 * (rows * cols + cols), 0);
        r.read_exact(&mut buf[at..])?;
    }
    let at = buf.len();
    buf.resize(at + 8, 0);
    r.read_exact(&mut buf[at..])?;
    Frame::decode(&buf).map(|(f, _)| f)
}

pub struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl Cursor<'_> {
    pub fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Load("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Load("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
