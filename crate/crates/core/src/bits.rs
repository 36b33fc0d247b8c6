//! MSB-first bit packing for feedback codewords.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Type2,
    Neural,
}

/// Fixed-length packed bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodewordBits {
    bytes: Vec<u8>,
    len: usize,
    pub scheme: Scheme,
}

impl CodewordBits {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] >> (7 - i % 8) & 1 == 1
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: self, pos: 0 }
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn put(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value < (1u64 << width), "{value} does not fit in {width} bits");
        for k in (0..width).rev() {
            if self.len % 8 == 0 {
                self.bytes.push(0);
            }
            if value >> k & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 1 << (7 - self.len % 8);
            }
            self.len += 1;
        }
    }

    pub fn finish(self, scheme: Scheme) -> CodewordBits {
        CodewordBits { bytes: self.bytes, len: self.len, scheme }
    }
}

pub struct BitReader<'a> {
    bits: &'a CodewordBits,
    pos: usize,
}

impl BitReader<'_> {
    pub fn take(&mut self, width: u32) -> Result<u64> {
        if self.pos + width as usize > self.bits.len {
            return Err(Error::Truncated("codeword"));
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = v << 1 | self.bits.bit(self.pos) as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.bits.len - self.pos
    }
}

/// `⌈log₂ n⌉`, with `bits_for(1) == 0`.
pub fn bits_for(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_layout() {
        let mut w = BitWriter::new();
        w.put(0b101, 3);
        w.put(0b01, 2);
        let b = w.finish(Scheme::Type2);
        assert_eq!(b.len(), 5);
        assert_eq!(b.to_bit_string(), "10101");
        assert_eq!(b.bytes(), &[0b1010_1000]);
    }

    #[test]
    fn ceil_log2() {
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(4), 2);
        assert_eq!(bits_for(5), 3);
        assert_eq!(bits_for(70), 7);
    }

    proptest! {
        #[test]
        fn fields_round_trip(fields in proptest::collection::vec((0u64..1 << 20, 1u32..21), 0..12)) {
            let mut w = BitWriter::new();
            let fields: Vec<_> = fields.into_iter().map(|(v, k)| (v & ((1 << k) - 1), k)).collect();
            for &(v, k) in &fields {
                w.put(v, k);
            }
            let b = w.finish(Scheme::Neural);
            prop_assert_eq!(b.len(), fields.iter().map(|f| f.1 as usize).sum::<usize>());
            let mut r = b.reader();
            for &(v, k) in &fields {
                prop_assert_eq!(r.take(k).unwrap(), v);
            }
            prop_assert!(r.take(1).is_err());
        }
    }
}
