//! Binary weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "LDQW"
//! version    u32      1
//! dtype      u8       0 = f32, 1 = f64
//! input      3 x u32  height, width, channels
//! n_conv     u32, then n_conv x u32 filter counts
//! n_hidden   u32, then n_hidden x u32 widths
//! outputs    u32
//! n_tensors  u32
//! per tensor:
//!   name_len u16, name (utf-8)
//!   ndim     u8, ndim x u32 dims
//!   data     numel x dtype, little-endian
//! crc32      u32 over every preceding byte
//! ```

use std::path::Path;

use crate::nn::{NetSpec, NnError, PolicyNet, Tensor};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"LDQW";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode<T: Scalar>(net: &PolicyNet<T>) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::with_capacity(64 + spec.param_count() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(T::DTYPE as u8);
    for d in spec.input {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, spec.conv_filters.len() as u32);
    for &f in &spec.conv_filters {
        put_u32(&mut out, f as u32);
    }
    put_u32(&mut out, spec.hidden.len() as u32);
    for &h in &spec.hidden {
        put_u32(&mut out, h as u32);
    }
    put_u32(&mut out, spec.outputs as u32);
    put_u32(&mut out, net.params().len() as u32);
    for ((name, _), t) in spec.param_layout().iter().zip(net.params()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Corrupt("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str) -> Result<usize, NnError> {
        let n = self.u32()? as usize;
        if n > 1 << 16 {
            return Err(NnError::Corrupt(format!("implausible {what} count {n}")));
        }
        Ok(n)
    }
}

/// Parse only the architecture header (after validating magic and checksum).
pub fn peek_spec(bytes: &[u8]) -> Result<(DType, NetSpec), NnError> {
    let mut r = open(bytes)?;
    read_header(&mut r)
}

fn open(bytes: &[u8]) -> Result<Reader<'_>, NnError> {
    if bytes.len() < 8 {
        return Err(NnError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(NnError::Checksum);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    Ok(r)
}

fn read_header(r: &mut Reader<'_>) -> Result<(DType, NetSpec), NnError> {
    let code = r.u8()?;
    let dtype = DType::from_code(code).ok_or_else(|| NnError::Corrupt(format!("unknown dtype {code}")))?;
    let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n_conv = r.count("conv")?;
    let conv_filters = (0..n_conv).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
    let n_hidden = r.count("hidden")?;
    let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
    let outputs = r.u32()? as usize;
    Ok((dtype, NetSpec { input, conv_filters, hidden, outputs }))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<PolicyNet<T>, NnError> {
    let mut r = open(bytes)?;
    let (dtype, spec) = read_header(&mut r)?;
    if dtype != T::DTYPE {
        return Err(NnError::DTypeMismatch { expected: T::DTYPE, found: dtype });
    }
    spec.validate()?;
    let layout = spec.param_layout();
    let n = r.count("tensor")?;
    if n != layout.len() {
        return Err(NnError::Corrupt(format!("expected {} tensors, found {n}", layout.len())));
    }
    let mut params = Vec::with_capacity(n);
    for (want_name, want_shape) in &layout {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| NnError::Corrupt("tensor name is not utf-8".into()))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        if name != want_name || &shape != want_shape {
            return Err(NnError::Corrupt(format!(
                "tensor table entry {name} {shape:?} does not match architecture ({want_name} {want_shape:?})"
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * dtype.size())?;
        let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
        params.push(Tensor::from_vec(&shape, data)?);
    }
    if r.pos != r.buf.len() {
        return Err(NnError::Corrupt("trailing bytes after tensor table".into()));
    }
    PolicyNet::from_parts(spec, params)
}

impl<T: Scalar> PolicyNet<T> {
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, encode(self))?;
        Ok(())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self, NnError> {
        decode(&std::fs::read(path)?)
    }

    /// Load a checkpoint, requiring it to match `expected`.
    pub fn load_matching(path: impl AsRef<Path>, expected: &NetSpec) -> Result<Self, NnError> {
        let net = Self::load_weights(path)?;
        if net.spec() != expected {
            return Err(NnError::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", net.spec()),
            });
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let net = PolicyNet::<f32>::new(NetSpec::desk(), 11).unwrap();
        let back: PolicyNet<f32> = decode(&encode(&net)).unwrap();
        assert_eq!(back.spec(), net.spec());
        for (a, b) in back.params().iter().zip(net.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&back), encode(&net));
    }

    #[test]
    fn truncation_is_checksum_error() {
        let bytes = encode(&PolicyNet::<f32>::new(NetSpec::mlp(3, vec![4], 2), 1).unwrap());
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(decode::<f32>(&bytes[..cut]), Err(NnError::Checksum)), "cut {cut}");
        }
    }

    #[test]
    fn flipped_byte_is_checksum_error() {
        let mut bytes = encode(&PolicyNet::<f32>::new(NetSpec::mlp(3, vec![4], 2), 1).unwrap());
        bytes[20] ^= 0x40;
        assert!(matches!(decode::<f32>(&bytes), Err(NnError::Checksum)));
    }

    #[test]
    fn dtype_mismatch() {
        let bytes = encode(&PolicyNet::<f64>::new(NetSpec::mlp(3, vec![], 2), 1).unwrap());
        assert!(matches!(decode::<f32>(&bytes), Err(NnError::DTypeMismatch { .. })));
    }

    #[test]
    fn desk_file_rejected_by_paper_net() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("desk.ldqw");
        PolicyNet::<f32>::new(NetSpec::desk(), 2).unwrap().save_weights(&path).unwrap();
        assert!(PolicyNet::<f32>::load_matching(&path, &NetSpec::desk()).is_ok());
        assert!(matches!(
            PolicyNet::<f32>::load_matching(&path, &NetSpec::paper()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
