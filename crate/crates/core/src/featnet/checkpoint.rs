//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "TNAVCKPT"
//! 8       4           format version (u32, currently 1)
//! 12      56          network spec, 14 x u32:
//!                       input_channels input_size
//!                       conv1.filters conv1.kernel conv1.stride
//!                       pool1.window pool1.stride
//!                       conv2.filters conv2.kernel conv2.stride
//!                       pool2.window pool2.stride
//!                       hidden output_classes
//! 68      12          mean RGB, 3 x f32
//! 80      4           tensor count (u32, always 8)
//! 84      ...         tensors in order conv1.weight conv1.bias conv2.weight
//!                     conv2.bias fc1.weight fc1.bias fc2.weight fc2.bias,
//!                     each: rank (u32), rank x dim (u32),
//!                     element count (u64), element count x f32
//! ```
//!
//! The file must end exactly after the last tensor.

use std::path::Path;

use thiserror::Error;

use super::{ConvSpec, Network, NetworkSpec, Params, PoolSpec, PARAM_NAMES};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TNAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated at byte {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("checkpoint spec is invalid: {0}")]
    InvalidSpec(String),
    #[error("checkpoint holds {0} tensors, expected 8")]
    TensorCount(u32),
    #[error("tensor {name}: declared {declared} elements but dimensions {dims:?} hold {actual}")]
    SizeMismatch {
        name: &'static str,
        dims: Vec<usize>,
        declared: u64,
        actual: usize,
    },
    #[error("tensor {name}: shape {found:?} does not match the spec's {expected:?}")]
    ShapeMismatch {
        name: &'static str,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("{0} unexpected trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

fn spec_fields(s: &NetworkSpec) -> [usize; 14] {
    [
        s.input_channels,
        s.input_size,
        s.conv1.filters,
        s.conv1.kernel,
        s.conv1.stride,
        s.pool1.window,
        s.pool1.stride,
        s.conv2.filters,
        s.conv2.kernel,
        s.conv2.stride,
        s.pool2.window,
        s.pool2.stride,
        s.hidden,
        s.output_classes,
    ]
}

fn spec_from_fields(f: [usize; 14]) -> NetworkSpec {
    NetworkSpec {
        input_channels: f[0],
        input_size: f[1],
        conv1: ConvSpec { filters: f[2], kernel: f[3], stride: f[4] },
        pool1: PoolSpec { window: f[5], stride: f[6] },
        conv2: ConvSpec { filters: f[7], kernel: f[8], stride: f[9] },
        pool2: PoolSpec { window: f[10], stride: f[11] },
        hidden: f[12],
        output_classes: f[13],
    }
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 4 * net.params().count() + 8 * 40);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in spec_fields(net.spec()) {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in net.mean_rgb() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&8u32.to_le_bytes());
    for t in net.params().tensors() {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { offset: self.pos, what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let mut fields = [0usize; 14];
    for f in &mut fields {
        *f = r.u32("spec")? as usize;
    }
    let spec = spec_from_fields(fields);
    let expected = spec
        .param_shapes()
        .map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
    let mut mean = [0.0f32; 3];
    for m in &mut mean {
        *m = r.f32("mean")?;
    }
    let count = r.u32("tensor count")?;
    if count != 8 {
        return Err(CheckpointError::TensorCount(count));
    }
    let mut tensors = Vec::with_capacity(8);
    for (name, shape) in PARAM_NAMES.iter().zip(&expected) {
        let rank = r.u32("tensor rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let declared = r.u64("element count")?;
        let actual: usize = dims.iter().product();
        if declared != actual as u64 {
            return Err(CheckpointError::SizeMismatch { name, dims, declared, actual });
        }
        if &dims != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: dims,
                expected: shape.clone(),
            });
        }
        let raw = r.take(actual * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&dims, data).expect("dims were validated"));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    let tensors: [Tensor; 8] = tensors.try_into().expect("eight tensors");
    Network::from_parts(spec, Params::from_tensors(tensors), mean)
        .map_err(|e| CheckpointError::InvalidSpec(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}
