// Copyright 2026 The EdgeLinker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Canonical byte encoding used for hashing, signing and every wire format.
//!
//! Layout: fields in declaration order; unsigned integers as 8-byte
//! big-endian; byte strings (and text) as a 4-byte big-endian length followed
//! by the bytes; lists as a 4-byte big-endian count followed by the elements;
//! enums as a 1-byte tag followed by the variant payload. `Option<T>` is an
//! enum with tag 0 for `None` and 1 for `Some`. Maps and sets are encoded as
//! lists in ascending key order.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("expected {expected} bytes, length prefix says {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid tag {tag} for {ty}")]
    BadTag { ty: &'static str, tag: u8 },
    #[error("integer {0} out of range")]
    IntOutOfRange(u64),
    #[error("invalid utf-8 text")]
    InvalidUtf8,
    #[error("{0}")]
    Invalid(&'static str),
}

pub trait Encode {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a value that must span the whole input.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_len(out: &mut Vec<u8>, len: usize) {
    let len = u32::try_from(len).expect("length exceeds u32");
    out.extend_from_slice(&len.to_be_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_len(out, bytes.len());
    out.extend_from_slice(bytes);
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

pub fn put_tag(out: &mut Vec<u8>, tag: u8) {
    out.push(tag);
}

pub fn put_list<T: Encode>(out: &mut Vec<u8>, items: &[T]) {
    put_len(out, items.len());
    for item in items {
        item.encode_to(out);
    }
}

pub fn put_option<T: Encode>(out: &mut Vec<u8>, v: Option<&T>) {
    match v {
        None => put_tag(out, 0),
        Some(v) => {
            put_tag(out, 1);
            v.encode_to(out);
        }
    }
}

impl Encode for u64 {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, *self);
    }
}

impl Decode for u64 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.u64()
    }
}

impl Encode for String {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_str(out, self);
    }
}

impl Decode for String {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.string()
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let v = self.u64()?;
        u32::try_from(v).map_err(|_| DecodeError::IntOutOfRange(v))
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        let v = self.u64()?;
        u16::try_from(v).map_err(|_| DecodeError::IntOutOfRange(v))
    }

    pub fn tag(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&mut self) -> Result<usize, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let n = self.len()?;
        if n != N {
            return Err(DecodeError::LengthMismatch { expected: N, found: n });
        }
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?).map_err(|_| DecodeError::InvalidUtf8)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let n = self.len()?;
        // Every element takes at least one byte; refuse absurd counts early.
        if n > self.remaining() {
            return Err(DecodeError::UnexpectedEnd);
        }
        (0..n).map(|_| T::decode_from(self)).collect()
    }

    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, DecodeError> {
        match self.tag()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(self)?)),
            tag => Err(DecodeError::BadTag { ty: "Option", tag }),
        }
    }
}
