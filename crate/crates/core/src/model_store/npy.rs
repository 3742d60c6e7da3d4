//! Reading and writing NPY v1.0 array files.
//!
//! Only little-endian `<f4`/`<f8` (weights) and `<i4`/`<i8` (labels) payloads in
//! C order are supported. Writers always emit `<f8` or `<i8`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// A dense C-order array of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!("shape {:?} needs {} values, got {}", shape, expected, data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Converts a flat index into a multi-index for error messages.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (slot, &dim) in idx.iter_mut().zip(&self.shape).rev() {
            if dim > 0 {
                *slot = flat % dim;
                flat /= dim;
            }
        }
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    I4,
    I8,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<i4" => Ok(Dtype::I4),
            "<i8" => Ok(Dtype::I8),
            other => Err(Error::Unsupported(format!("dtype {other:?}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 | Dtype::I4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

/// Minimal parser for the Python-literal header dictionary.
struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
}

#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Format(format!("expected '{}' at header offset {}", c as char, self.pos)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = self.peek().ok_or_else(|| Error::Format("unexpected end of header".into()))?;
        if quote != b'\'' && quote != b'"' {
            return Err(Error::Format(format!("expected string at header offset {}", self.pos)));
        }
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(Error::Format("unterminated string in header".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'') | Some(b'"') => self.string().map(Value::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(b',') => {
                            self.pos += 1;
                        }
                        Some(c) if c.is_ascii_digit() => {
                            let w = self.word();
                            let w = std::str::from_utf8(w).unwrap_or("");
                            // numpy may write long literals such as `3L`
                            let w = w.trim_end_matches('L');
                            dims.push(w.parse().map_err(|_| Error::Format(format!("bad shape entry {w:?}")))?);
                        }
                        _ => return Err(Error::Format("malformed shape tuple".into())),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => match self.word() {
                b"True" => Ok(Value::Bool(true)),
                b"False" => Ok(Value::Bool(false)),
                other => Err(Error::Format(format!("unexpected header token {:?}", String::from_utf8_lossy(other)))),
            },
        }
    }
}

fn parse_header_dict(text: &[u8]) -> Result<Header> {
    let mut lx = Lexer { s: text, pos: 0 };
    lx.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        match lx.peek() {
            Some(b'}') => break,
            Some(b',') => {
                lx.pos += 1;
                continue;
            }
            None => return Err(Error::Format("unterminated header dict".into())),
            _ => {}
        }
        let key = lx.string()?;
        lx.expect(b':')?;
        let value = lx.value()?;
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => return Err(Error::Format(format!("unexpected header entry {k:?}: {v:?}"))),
        }
    }
    let descr = descr.ok_or_else(|| Error::Format("header lacks 'descr'".into()))?;
    let fortran = fortran.ok_or_else(|| Error::Format("header lacks 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::Format("header lacks 'shape'".into()))?;
    if fortran {
        return Err(Error::Unsupported("Fortran-order arrays".into()));
    }
    Ok(Header { dtype: Dtype::parse(&descr)?, shape })
}

fn parse(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing \\x93NUMPY magic".into()));
    }
    if (bytes[6], bytes[7]) != (1, 0) {
        return Err(Error::Unsupported(format!("NPY version {}.{}", bytes[6], bytes[7])));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = 10 + hlen;
    if bytes.len() < end {
        return Err(Error::Format("truncated header".into()));
    }
    let header = parse_header_dict(&bytes[10..end])?;
    let count: usize = header.shape.iter().product();
    let payload = &bytes[end..];
    if payload.len() != count * header.dtype.size() {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            count * header.dtype.size()
        )));
    }
    Ok((header, payload))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Decodes an in-memory NPY image into a float tensor.
pub fn decode_array(bytes: &[u8]) -> Result<Tensor> {
    let (header, payload) = parse(bytes)?;
    let data: Vec<f64> = match header.dtype {
        Dtype::F4 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F8 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::I4 | Dtype::I8 => return Err(Error::Unsupported("integer dtype where float array expected".into())),
    };
    let tensor = Tensor::new(header.shape, data)?;
    if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value {} at index {:?}", tensor.data[i], tensor.unravel(i))));
    }
    Ok(tensor)
}

/// Reads a float NPY file; 32-bit values are widened to 64-bit.
pub fn read_array_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_array(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads a 1-D integer NPY file (class labels).
pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (header, payload) = parse(&bytes)?;
    if header.shape.len() != 1 {
        return Err(Error::Shape(format!("labels must be 1-D, got shape {:?}", header.shape)));
    }
    match header.dtype {
        Dtype::I8 => Ok(payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::I4 => Ok(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64).collect()),
        _ => Err(Error::Unsupported("labels must be <i8 or <i4".into())),
    }
}

fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Encodes a tensor as an `<f8` NPY image.
pub fn encode_array(tensor: &Tensor) -> Vec<u8> {
    let mut out = header_bytes("<f8", &tensor.shape);
    out.reserve(tensor.data.len() * 8);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(|e| Error::io(path, e))
}

pub fn write_array_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_array(tensor))
}

pub fn write_label_file(path: impl AsRef<Path>, labels: &[i64]) -> Result<()> {
    let mut out = header_bytes("<i8", &[labels.len()]);
    for v in labels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}
