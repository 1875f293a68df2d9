//! Bit-level integer coders for the postings format.
//!
//! Doc-id gaps are Golomb coded with a per-term parameter derived from the
//! term's document frequency; term frequencies are Elias-gamma coded and
//! interleaved after each gap. Bits are written MSB-first within each byte.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    /// Gaps must be >= 1; a zero gap would make the posting list ambiguous.
    #[error("invalid gap {0}: gaps must be >= 1")]
    InvalidGap(u64),
    /// Gamma codes are defined for positive integers only.
    #[error("invalid gamma value {0}: must be >= 1")]
    InvalidValue(u64),
    /// The bitstream ended in the middle of a codeword.
    #[error("truncated bitstream at bit {0}")]
    TruncatedStream(usize),
    /// A Golomb parameter was requested for a term with zero document frequency.
    #[error("undefined Golomb parameter: document frequency is zero")]
    UndefinedParameter,
}

/// Appends bits MSB-first into a growable byte buffer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    buf: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        let byte = self.bit_len / 8;
        if byte == self.buf.len() {
            self.buf.push(0);
        }
        if bit {
            self.buf[byte] |= 0x80 >> (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    /// Pushes the low `count` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        for i in (0..count).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    /// Final byte buffer; the unused tail of the last byte is zero.
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads bits MSB-first from a byte slice.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool, CodecError> {
        let byte = self.pos / 8;
        if byte >= self.buf.len() {
            return Err(CodecError::TruncatedStream(self.pos));
        }
        let bit = self.buf[byte] & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64, CodecError> {
        debug_assert!(count <= 64);
        let mut value = 0u64;
        for _ in 0..count {
            value = (value << 1) | u64::from(self.read_bit()?);
        }
        Ok(value)
    }

    /// Bits consumed so far.
    pub fn bit_pos(&self) -> usize {
        self.pos
    }
}

/// Per-term Golomb parameter: `b = max(1, ceil(0.69 * doc_count / doc_freq))`.
pub fn golomb_parameter(doc_count: u64, doc_freq: u64) -> Result<u64, CodecError> {
    if doc_freq == 0 {
        return Err(CodecError::UndefinedParameter);
    }
    let b = (0.69 * doc_count as f64 / doc_freq as f64).ceil() as u64;
    Ok(b.max(1))
}

// Truncated binary: values below the cutoff take one bit fewer.
fn remainder_widths(b: u64) -> (u32, u64) {
    let hi = 64 - (b - 1).leading_zeros(); // ceil(log2 b), 0 when b == 1
    let cutoff = (1u64 << hi) - b;
    (hi, cutoff)
}

/// Writes one gap (>= 1): quotient in unary, remainder in truncated binary.
pub fn write_golomb(w: &mut BitWriter, gap: u64, b: u64) -> Result<(), CodecError> {
    if gap == 0 {
        return Err(CodecError::InvalidGap(gap));
    }
    debug_assert!(b >= 1);
    let x = gap - 1;
    let q = x / b;
    let r = x % b;
    for _ in 0..q {
        w.push_bit(true);
    }
    w.push_bit(false);
    let (hi, cutoff) = remainder_widths(b);
    if r < cutoff {
        w.push_bits(r, hi - 1);
    } else {
        w.push_bits(r + cutoff, hi);
    }
    Ok(())
}

/// Reads one gap written by [`write_golomb`] with the same `b`.
pub fn read_golomb(r: &mut BitReader<'_>, b: u64) -> Result<u64, CodecError> {
    debug_assert!(b >= 1);
    let mut q = 0u64;
    while r.read_bit()? {
        q += 1;
    }
    let (hi, cutoff) = remainder_widths(b);
    let rem = if hi == 0 {
        0
    } else {
        let head = r.read_bits(hi - 1)?;
        if head < cutoff {
            head
        } else {
            (head << 1 | u64::from(r.read_bit()?)) - cutoff
        }
    };
    Ok(q * b + rem + 1)
}

/// Elias-gamma code for `value >= 1`.
pub fn write_gamma(w: &mut BitWriter, value: u64) -> Result<(), CodecError> {
    if value == 0 {
        return Err(CodecError::InvalidValue(value));
    }
    let width = 63 - value.leading_zeros(); // floor(log2 value)
    for _ in 0..width {
        w.push_bit(false);
    }
    w.push_bits(value, width + 1);
    Ok(())
}

pub fn read_gamma(r: &mut BitReader<'_>) -> Result<u64, CodecError> {
    let mut width = 0u32;
    while !r.read_bit()? {
        width += 1;
        if width > 63 {
            return Err(CodecError::TruncatedStream(r.bit_pos()));
        }
    }
    let tail = r.read_bits(width)?;
    Ok(1u64 << width | tail)
}

/// Encodes a whole gap list into a byte-aligned stream.
pub fn golomb_encode(gaps: &[u64], b: u64) -> Result<Vec<u8>, CodecError> {
    let mut w = BitWriter::new();
    for &gap in gaps {
        write_golomb(&mut w, gap, b)?;
    }
    Ok(w.into_bytes())
}

/// Decodes exactly `count` gaps from a stream produced by [`golomb_encode`].
pub fn golomb_decode(bytes: &[u8], b: u64, count: usize) -> Result<Vec<u64>, CodecError> {
    let mut r = BitReader::new(bytes);
    let mut gaps = Vec::with_capacity(count);
    for _ in 0..count {
        gaps.push(read_golomb(&mut r, b)?);
    }
    Ok(gaps)
}
