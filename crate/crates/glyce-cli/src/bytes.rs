//! Little-endian byte cursor shared by the binary file formats.
//!
//! Every read error names the field it wanted, the byte offset it
//! started at, and how many bytes were actually left, so a truncated
//! file diagnoses itself.

/// Forward-only reader over a fully loaded file.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> ByteReader<'a> {
        ByteReader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err(format!(
                "wanted {n} bytes for {what} at byte {}, found {}",
                self.pos,
                self.remaining()
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn u128(&mut self, what: &str) -> Result<u128, String> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    /// f64 stored as raw IEEE bits; roundtrips every value unchanged.
    pub fn f64(&mut self, what: &str) -> Result<f64, String> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    /// Length-prefixed UTF-8: u32 byte count, then the bytes.
    pub fn string(&mut self, what: &str) -> Result<String, String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| format!("{what} at byte {} is not UTF-8", self.pos - len))
    }

    /// A count prefix that something sized will be allocated from; capped
    /// against the bytes actually present so a corrupt count cannot
    /// demand absurd memory.
    pub fn count(&mut self, what: &str, min_elem_bytes: usize) -> Result<usize, String> {
        let n = self.u64(what)? as usize;
        if n.saturating_mul(min_elem_bytes.max(1)) > self.remaining() {
            return Err(format!(
                "{what} of {n} at byte {} cannot fit in the {} bytes that follow",
                self.pos - 8,
                self.remaining()
            ));
        }
        Ok(n)
    }

    pub fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>, String> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    pub fn expect_done(&self, what: &str) -> Result<(), String> {
        if self.remaining() != 0 {
            return Err(format!(
                "{what} has {} trailing bytes after byte {}",
                self.remaining(),
                self.pos
            ));
        }
        Ok(())
    }
}

pub fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

pub fn push_string(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn push_f64_slice(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        push_f64(out, x);
    }
}
