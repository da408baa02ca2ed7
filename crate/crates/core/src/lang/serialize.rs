//! Compact binary form of a program, as shipped to workers.
//!
//! Layout (little-endian):
//! `LPPROG01`, u32 param count, then per param: u16 name length, name bytes,
//! u8 has-value flag, i64 value; then u32 source length and the canonical
//! source text without parameter values. The size depends only on the source
//! text and the parameter names, never on parameter values.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use super::ast::Program;
use super::{parse_program, ParseError};

const MAGIC: &[u8; 8] = b"LPPROG01";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated program image")]
    Truncated,
    #[error("program source is not UTF-8")]
    Utf8,
    #[error("embedded source does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("parameter `{0}` is not declared in the embedded source")]
    UnknownParam(String),
}

impl Program {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode().0
    }

    /// Byte ranges of the parameter value fields within [`Program::to_bytes`].
    pub fn param_value_ranges(&self) -> Vec<Range<usize>> {
        self.encode().1
    }

    fn encode(&self) -> (Vec<u8>, Vec<Range<usize>>) {
        let mut out = Vec::new();
        let mut ranges = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let start = out.len();
            out.push(p.value.is_some() as u8);
            out.extend_from_slice(&p.value.unwrap_or(0).to_le_bytes());
            ranges.push(start..out.len());
        }
        let src = self.to_source(false);
        out.extend_from_slice(&(src.len() as u32).to_le_bytes());
        out.extend_from_slice(src.as_bytes());
        (out, ranges)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Program, DecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut values = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = core::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::Utf8)?;
            let has = r.take(1)?[0] != 0;
            let v = i64::from_le_bytes(r.take(8)?.try_into().unwrap());
            values.push((String::from(name), has.then_some(v)));
        }
        let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let src = core::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::Utf8)?;
        let mut p = parse_program(src)?;
        for (name, v) in values {
            let param = p.params.iter_mut().find(|q| q.name == name).ok_or(DecodeError::UnknownParam(name))?;
            param.value = v;
        }
        Ok(p)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
}
