//! Little-endian readers that track the byte offset for error reporting.

use std::io::Read;

use crate::error::{ParseError, Result};

pub(crate) struct ByteReader<R> {
    inner: R,
    pub(crate) offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        ByteReader { inner, offset: 0 }
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &'static str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(ParseError::Truncated {
                        offset: self.offset + got as u64,
                        needed: (buf.len() - got) as u64,
                        what,
                    }
                    .into())
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn magic(&mut self, expected: &'static [u8; 8], name: &'static str) -> Result<()> {
        let mut magic = [0u8; 8];
        self.fill(&mut magic, "magic")?;
        if &magic != expected {
            return Err(ParseError::BadMagic { expected: name }.into());
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Fails unless the input is exhausted.
    pub(crate) fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(ParseError::TrailingBytes { offset: self.offset }.into()),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
