//! Sparse byte-addressed memory backed by fixed 64-byte chunks.
//!
//! Unwritten bytes read as zero. Chunk granularity is an internal storage
//! detail and is independent of the configured cache line size.

use std::collections::BTreeMap;

const CHUNK: u32 = 64;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseMem {
    chunks: BTreeMap<u32, Box<[u8; CHUNK as usize]>>,
}

impl SparseMem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes<'a>(bytes: impl IntoIterator<Item = (&'a u32, &'a u8)>) -> Self {
        let mut m = Self::new();
        for (&addr, &b) in bytes {
            m.write_u8(addr, b);
        }
        m
    }

    pub fn read_u8(&self, addr: u32) -> u8 {
        match self.chunks.get(&(addr / CHUNK)) {
            Some(c) => c[(addr % CHUNK) as usize],
            None => 0,
        }
    }

    pub fn write_u8(&mut self, addr: u32, val: u8) {
        let chunk = self
            .chunks
            .entry(addr / CHUNK)
            .or_insert_with(|| Box::new([0; CHUNK as usize]));
        chunk[(addr % CHUNK) as usize] = val;
    }

    /// Little-endian word read; `addr` need not be aligned here, callers
    /// enforce their own alignment rules.
    pub fn read_u32(&self, addr: u32) -> u32 {
        u32::from_le_bytes(std::array::from_fn(|i| self.read_u8(addr.wrapping_add(i as u32))))
    }

    pub fn write_u32(&mut self, addr: u32, val: u32) {
        for (i, b) in val.to_le_bytes().into_iter().enumerate() {
            self.write_u8(addr.wrapping_add(i as u32), b);
        }
    }

    /// Copy of `len` bytes starting at `addr`.
    pub fn read_range(&self, addr: u32, len: u32) -> Vec<u8> {
        (0..len).map(|i| self.read_u8(addr.wrapping_add(i))).collect()
    }

    /// Nonzero bytes in address order. Zero writes may or may not appear
    /// depending on chunk history, so compare via [`Self::semantic_eq`].
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.chunks.iter().flat_map(|(&ci, chunk)| {
            chunk
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(move |(off, &b)| (ci * CHUNK + off as u32, b))
        })
    }

    /// Equality of content, ignoring which all-zero chunks are materialized.
    pub fn semantic_eq(&self, other: &Self) -> bool {
        self.iter_nonzero().eq(other.iter_nonzero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_default_to_zero() {
        let m = SparseMem::new();
        assert_eq!(m.read_u8(0), 0);
        assert_eq!(m.read_u32(0xdead_0000), 0);
    }

    #[test]
    fn word_roundtrip_is_little_endian() {
        let mut m = SparseMem::new();
        m.write_u32(0x100, 0x0403_0201);
        assert_eq!(m.read_u8(0x100), 0x01);
        assert_eq!(m.read_u8(0x103), 0x04);
        assert_eq!(m.read_u32(0x100), 0x0403_0201);
    }

    #[test]
    fn cross_chunk_word() {
        let mut m = SparseMem::new();
        m.write_u32(62, 0xaabb_ccdd);
        assert_eq!(m.read_u32(62), 0xaabb_ccdd);
        assert_eq!(m.read_u8(63), 0xcc);
        assert_eq!(m.read_u8(64), 0xbb);
    }

    #[test]
    fn semantic_eq_ignores_zero_chunks() {
        let mut a = SparseMem::new();
        let mut b = SparseMem::new();
        a.write_u8(10, 7);
        b.write_u8(10, 7);
        b.write_u8(5000, 1);
        b.write_u8(5000, 0);
        assert!(a.semantic_eq(&b));
        assert_ne!(a, b);
    }
}
