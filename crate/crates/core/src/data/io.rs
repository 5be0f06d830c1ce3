use std::fs;
use std::path::Path;

use crate::error::{MptError, Result};
use crate::network::{ParameterStore, StoreMeta};
use crate::tensor::{DType, Element, Tensor};

pub const MPTT_MAGIC: &[u8; 4] = b"MPTT";
pub const MPTT_VERSION: u16 = 1;
/// `ndim` byte marking a named-entry table instead of a bare tensor.
const STORE_MARKER: u8 = 0xFF;
const MAX_NDIM: usize = 8;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MptError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MptError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| MptError::io(path, e))
}

fn bad(detail: impl Into<String>) -> MptError {
    MptError::Format(detail.into())
}

// ---------------------------------------------------------------- images

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(bad("image header ends early")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("image {} is not a number", what)))
}

/// Parses a binary PGM (P5) or PPM (P6) image to `[h, w, 1]` or `[h, w, 3]` in `[0, 1]`.
pub fn decode_image<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("not a binary PGM/PPM image")),
    };
    let mut pos = 2;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(bad("missing separator after image magic"));
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(bad(format!("maxval {} unsupported, expected 255", maxval)));
    }
    if w == 0 || h == 0 {
        return Err(bad("image has a zero extent"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing whitespace before pixel data"));
    }
    pos += 1;
    let len = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| bad("image extents overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < len {
        return Err(bad(format!("pixel data truncated: {} of {} bytes", payload.len(), len)));
    }
    if payload.len() > len {
        return Err(bad(format!("{} trailing bytes after pixel data", payload.len() - len)));
    }
    let data = payload.iter().map(|&b| T::from_f64c(b as f64 / 255.0)).collect();
    Tensor::new(vec![h, w, channels], data)
}

/// Quantizes an image to 8 bits, clamping to `[0, 1]`.
pub fn encode_image<T: Element>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, h, w, c) = img.nhwc()?;
    if n != 1 || !(c == 1 || c == 3) {
        return Err(MptError::shape("save_image", format!("cannot store {:?} as PGM/PPM", img.shape())));
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{}\n{} {}\n255\n", magic, w, h).into_bytes();
    out.extend(img.data().iter().map(|v| {
        let v = v.to_f64c();
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn load_image<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_image(&read_file(path)?).map_err(|e| match e {
        MptError::Format(d) => MptError::Format(format!("{}: {}", path.display(), d)),
        e => e,
    })
}

pub fn save_image<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    write_file(path, &encode_image(img)?)
}

// ---------------------------------------------------------------- MPTT

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("file truncated while reading {}", what)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| bad(format!("{} is not UTF-8", what)))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn write_header(out: &mut Vec<u8>, dtype: DType, ndim: u8) {
    out.extend_from_slice(MPTT_MAGIC);
    out.extend_from_slice(&MPTT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(ndim);
}

/// Returns the dtype and the `ndim` byte.
fn read_header(r: &mut Reader<'_>) -> Result<(DType, u8)> {
    if r.take(4, "magic")? != MPTT_MAGIC {
        return Err(bad("bad magic, not an MPTT file"));
    }
    let version = r.u16("version")?;
    if version != MPTT_VERSION {
        return Err(bad(format!("unsupported MPTT version {}", version)));
    }
    let code = r.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| bad(format!("unknown dtype code {}", code)))?;
    Ok((dtype, r.u8("ndim")?))
}

fn write_tensor_body<T: Element>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor_body<T: Element>(r: &mut Reader<'_>, ndim: usize, dtype: DType) -> Result<Tensor<T>> {
    if ndim > MAX_NDIM {
        return Err(bad(format!("{} dimensions exceed the limit of {}", ndim, MAX_NDIM)));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for _ in 0..ndim {
        let d = usize::try_from(r.u64("shape")?).map_err(|_| bad("extent does not fit in memory"))?;
        numel = numel.checked_mul(d).ok_or_else(|| bad("shape overflows"))?;
        shape.push(d);
    }
    let size = dtype.size();
    let len = numel.checked_mul(size).ok_or_else(|| bad("payload size overflows"))?;
    if len > r.remaining() {
        return Err(bad(format!(
            "payload truncated: shape {:?} needs {} bytes, {} left",
            shape,
            len,
            r.remaining()
        )));
    }
    let raw = r.take(len, "payload")?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|b| T::from_f64c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|b| T::from_f64c(f64::from_le_bytes(b.try_into().unwrap())))
            .collect(),
    };
    Tensor::new(shape, data)
}

pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.ndim() > MAX_NDIM {
        return Err(MptError::shape("encode_tensor", format!("{} dimensions", t.ndim())));
    }
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + t.numel() * T::DTYPE.size());
    write_header(&mut out, T::DTYPE, t.ndim() as u8);
    write_tensor_body(&mut out, t);
    Ok(out)
}

/// Decodes a bare tensor; the stored dtype must match `T`.
pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let (dtype, ndim) = read_header(&mut r)?;
    if ndim == STORE_MARKER {
        return Err(bad("file holds a parameter store, not a tensor"));
    }
    if dtype != T::DTYPE {
        return Err(bad(format!("file stores {}, requested {}", dtype, T::DTYPE)));
    }
    let t = read_tensor_body(&mut r, ndim as usize, dtype)?;
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(t)
}

/// Encodes a store as a named-entry table preceded by its metadata.
pub fn encode_store<T: Element>(store: &ParameterStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, T::DTYPE, STORE_MARKER);
    let m = &store.meta;
    out.extend_from_slice(&m.config_hash.to_le_bytes());
    out.extend_from_slice(&m.seed.to_le_bytes());
    out.extend_from_slice(&m.step.to_le_bytes());
    let text = m.config_text.as_bytes();
    out.extend_from_slice(&u32::try_from(text.len()).map_err(|_| bad("config text too long"))?.to_le_bytes());
    out.extend_from_slice(text);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        let nl = u16::try_from(nb.len()).map_err(|_| bad(format!("parameter name too long: {}", name)))?;
        if t.ndim() > MAX_NDIM {
            return Err(MptError::shape("encode_store", format!("{} has {} dimensions", name, t.ndim())));
        }
        out.extend_from_slice(&nl.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.ndim() as u8);
        write_tensor_body(&mut out, t);
    }
    Ok(out)
}

pub fn decode_store<T: Element>(bytes: &[u8]) -> Result<ParameterStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let (dtype, marker) = read_header(&mut r)?;
    if marker != STORE_MARKER {
        return Err(bad("file holds a bare tensor, not a parameter store"));
    }
    let config_hash = r.u64("config hash")?;
    let seed = r.u64("seed")?;
    let step = r.u64("step")?;
    let text_len = r.u32("config length")? as usize;
    let config_text = r.string(text_len, "config text")?;
    let count = r.u32("entry count")?;
    let mut store = ParameterStore::new();
    store.meta = StoreMeta {
        config_hash,
        seed,
        step,
        config_text,
    };
    for _ in 0..count {
        let nl = r.u16("name length")? as usize;
        let name = r.string(nl, "parameter name")?;
        let ndim = r.u8("ndim")? as usize;
        let t = read_tensor_body(&mut r, ndim, dtype)?;
        store
            .insert(name.clone(), t)
            .map_err(|_| bad(format!("duplicate parameter {}", name)))?;
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    Ok(store)
}

pub fn write_tensor<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_file(path, &encode_tensor(t)?)
}

pub fn read_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_tensor(&read_file(path)?)
}

pub fn write_store<T: Element>(path: &Path, store: &ParameterStore<T>) -> Result<()> {
    write_file(path, &encode_store(store)?)
}

/// Reads a store; entries stored in the other precision are converted.
pub fn read_store<T: Element>(path: &Path) -> Result<ParameterStore<T>> {
    decode_store(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_map_to_unit_range() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 128, 64]);
        let t: Tensor<f64> = decode_image(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2, 1]);
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(encode_image(&t).unwrap(), bytes);
    }

    #[test]
    fn ppm_keeps_rgb_order() {
        let t = Tensor::<f32>::from_f64([1, 2, 3], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode_image(&t).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # note\n# another\n1 1 255\n".to_vec();
        bytes.push(51);
        let t: Tensor<f32> = decode_image(&bytes).unwrap();
        assert_eq!(t.data(), &[0.2]);
    }

    #[test]
    fn malformed_images_rejected() {
        let cases: [&[u8]; 7] = [
            b"P3\n1 1\n255\n\x00",
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n2 2\n255\n\x00",
            b"P5\n1 1\n255\n\x00\x00",
            b"P5\n0 1\n255\n",
            b"P5\n1 x\n255\n\x00",
            b"P5\n1 1",
        ];
        for c in cases {
            assert!(matches!(decode_image::<f32>(c), Err(MptError::Format(_))), "{:?}", c);
        }
    }

    #[test]
    fn tensor_roundtrip_is_bit_exact() {
        let t = Tensor::<f32>::from_fn([2, 3, 1], |i| (i as f32 * 0.37).sin() / 7.0);
        let back: Tensor<f32> = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = ParameterStore::<f64>::new();
        let bytes = encode_store(&s).unwrap();
        assert_eq!(bytes.len(), 8 + 24 + 4 + 4);
        assert_eq!(decode_store::<f64>(&bytes).unwrap(), s);
    }

    #[test]
    fn corrupted_files_rejected() {
        let t = Tensor::<f32>::ones([4]);
        let good = encode_tensor(&t).unwrap();
        let mut magic = good.clone();
        magic[0] = b'X';
        let mut version = good.clone();
        version[4] = 9;
        let mut dtype = good.clone();
        dtype[6] = 7;
        let truncated = &good[..good.len() - 1];
        let mut long = good.clone();
        long.push(0);
        for (what, bytes) in [
            ("magic", magic.as_slice()),
            ("version", &version),
            ("dtype", &dtype),
            ("truncated", truncated),
            ("trailing", &long),
        ] {
            assert!(matches!(decode_tensor::<f32>(bytes), Err(MptError::Format(_))), "{}", what);
        }
        assert!(decode_tensor::<f64>(&good).is_err());
        assert!(decode_store::<f32>(&good).is_err());
    }

    #[test]
    fn huge_declared_shape_is_rejected_without_allocating() {
        let mut bytes = Vec::new();
        write_header(&mut bytes, DType::F32, 2);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        assert!(decode_tensor::<f32>(&bytes).is_err());
        let mut bytes = Vec::new();
        write_header(&mut bytes, DType::F32, 1);
        bytes.extend_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(decode_tensor::<f32>(&bytes).is_err());
    }
}
