//! Canonical Huffman codes and MSB-first bit packing.
//!
//! Encoder and decoder rebuild the same book from the quantizer's cell
//! probabilities, so no code table travels with the data.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Error, Result};

/// Longest codeword we can hold in a `u64`.
pub const MAX_CODE_LEN: u8 = 64;

/// Packed bits, most significant bit first; unused trailing bits are zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(bytes: Vec<u8>, bit_len: usize) -> Result<Self> {
        if bit_len > bytes.len() * 8 || bytes.len() != bit_len.div_ceil(8) {
            return Err(Error::Format(format!(
                "{} payload bytes cannot hold exactly {bit_len} bits",
                bytes.len()
            )));
        }
        if !bit_len.is_multiple_of(8) {
            let mask = 0xFFu8 >> (bit_len % 8);
            if bytes[bytes.len() - 1] & mask != 0 {
                return Err(Error::Format("nonzero padding bits".into()));
            }
        }
        Ok(Self { bytes, bit_len })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn push_bits(&mut self, value: u64, len: u8) {
        for i in (0..len).rev() {
            let bit = (value >> i) & 1;
            if self.bit_len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bit_len % 8);
            }
            self.bit_len += 1;
        }
    }

    pub fn bit(&self, pos: usize) -> Option<bool> {
        if pos >= self.bit_len {
            return None;
        }
        Some(self.bytes[pos / 8] & (0x80 >> (pos % 8)) != 0)
    }
}

/// Canonical Huffman code over `L` symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanBook {
    lengths: Vec<u8>,
    codes: Vec<u64>,
    // decode tables, indexed by code length
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    count: Vec<usize>,
    // symbols sorted by (length, symbol)
    sorted: Vec<usize>,
}

#[derive(PartialEq)]
struct Node {
    weight: f64,
    min_symbol: usize,
    id: usize,
}

impl Eq for Node {}

impl Ord for Node {
    // reversed: BinaryHeap is a max-heap and we pop the lightest node,
    // breaking weight ties toward the smaller minimum symbol
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.min_symbol.cmp(&self.min_symbol))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Build a canonical Huffman book from symbol probabilities.
///
/// Zero-probability symbols still receive codewords: they take a tiny common
/// weight so they gather in one subtree hanging off the least likely symbol.
pub fn build_huffman(probabilities: &[f64]) -> Result<HuffmanBook> {
    let l = probabilities.len();
    if l == 0 {
        return Err(invalid("huffman alphabet is empty"));
    }
    if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid("probabilities must be finite and nonnegative"));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("probabilities sum to {total}, not 1")));
    }
    if l == 1 {
        return HuffmanBook::from_lengths(vec![1]);
    }

    let min_pos = probabilities.iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min);
    let floor = min_pos * 1e-9 / l as f64;

    let mut parent = vec![usize::MAX; 2 * l - 1];
    let mut heap: BinaryHeap<Node> = probabilities
        .iter()
        .enumerate()
        .map(|(i, &p)| Node { weight: if p > 0.0 { p } else { floor }, min_symbol: i, id: i })
        .collect();
    let mut next = l;
    while heap.len() > 1 {
        let a = heap.pop().expect("heap has two nodes");
        let b = heap.pop().expect("heap has two nodes");
        parent[a.id] = next;
        parent[b.id] = next;
        heap.push(Node {
            weight: a.weight + b.weight,
            min_symbol: a.min_symbol.min(b.min_symbol),
            id: next,
        });
        next += 1;
    }
    let root = next - 1;
    let mut lengths = Vec::with_capacity(l);
    for s in 0..l {
        let mut depth = 0usize;
        let mut n = s;
        while n != root {
            n = parent[n];
            depth += 1;
        }
        if depth > MAX_CODE_LEN as usize {
            return Err(invalid(format!("code length {depth} exceeds {MAX_CODE_LEN}")));
        }
        lengths.push(depth as u8);
    }
    HuffmanBook::from_lengths(lengths)
}

impl HuffmanBook {
    /// Assign canonical codewords: shorter codes first, ties by symbol index.
    pub fn from_lengths(lengths: Vec<u8>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(invalid("no code lengths"));
        }
        if lengths.iter().any(|&len| len == 0 || len > MAX_CODE_LEN) {
            return Err(invalid(format!("code lengths must be in 1..={MAX_CODE_LEN}")));
        }
        let max_len = *lengths.iter().max().expect("nonempty") as usize;
        let mut count = vec![0usize; max_len + 1];
        for &len in &lengths {
            count[len as usize] += 1;
        }
        let mut sorted: Vec<usize> = (0..lengths.len()).collect();
        sorted.sort_by_key(|&s| (lengths[s], s));

        let mut first_code = vec![0u64; max_len + 1];
        let mut first_index = vec![0usize; max_len + 1];
        let mut code = 0u64;
        let mut index = 0usize;
        for len in 1..=max_len {
            first_code[len] = code;
            first_index[len] = index;
            index += count[len];
            code = code
                .checked_add(count[len] as u64)
                .filter(|&c| len == 64 || c <= 1u64 << len)
                .ok_or_else(|| invalid("code lengths violate the Kraft inequality"))?;
            if len < max_len {
                code <<= 1;
            }
        }
        let mut codes = vec![0u64; lengths.len()];
        for (rank, &s) in sorted.iter().enumerate() {
            let len = lengths[s] as usize;
            codes[s] = first_code[len] + (rank - first_index[len]) as u64;
        }
        Ok(Self { lengths, codes, first_code, first_index, count, sorted })
    }

    pub fn symbol_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    /// Codeword for `symbol`, right-aligned in the low `len` bits.
    pub fn code(&self, symbol: usize) -> Option<(u64, u8)> {
        Some((*self.codes.get(symbol)?, self.lengths[symbol]))
    }

    /// Expected bits per symbol under `probabilities`.
    pub fn average_length(&self, probabilities: &[f64]) -> f64 {
        probabilities.iter().zip(&self.lengths).map(|(p, &l)| p * l as f64).sum()
    }

    /// Kraft sum `sum 2^-len`; exactly 1 for a complete code with L >= 2.
    pub fn kraft_sum(&self) -> f64 {
        self.lengths.iter().map(|&l| 0.5f64.powi(l as i32)).sum()
    }

    pub fn encode(&self, indices: &[usize]) -> Result<BitStream> {
        let mut out = BitStream::new();
        self.encode_into(indices, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, indices: &[usize], out: &mut BitStream) -> Result<()> {
        for &s in indices {
            let (code, len) = self.code(s).ok_or(Error::Range { index: s, len: self.symbol_count() })?;
            out.push_bits(code, len);
        }
        Ok(())
    }

    /// Decode exactly `count` symbols from the start of `stream`.
    pub fn decode(&self, stream: &BitStream, count: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        let mut pos = 0usize;
        let max_len = self.count.len() - 1;
        while out.len() < count {
            let mut code = 0u64;
            let mut found = None;
            for len in 1..=max_len {
                let bit = stream.bit(pos).ok_or(Error::Truncated { decoded: out.len(), expected: count })?;
                pos += 1;
                code = (code << 1) | bit as u64;
                let n = self.count[len] as u64;
                if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n {
                    found = Some(self.sorted[self.first_index[len] + (code - self.first_code[len]) as usize]);
                    break;
                }
            }
            match found {
                Some(s) => out.push(s),
                None => return Err(Error::Format(format!("invalid codeword ending at bit {pos}"))),
            }
        }
        Ok(out)
    }
}

/// Shannon entropy in bits.
pub fn entropy_bits(probabilities: &[f64]) -> f64 {
    // written as a difference so a certain outcome gives +0, not -0
    0.0 - probabilities.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum expected length over every prefix code with lengths up to
    /// `max_len`, by enumerating length vectors satisfying Kraft.
    fn exhaustive_min_length(p: &[f64], max_len: u8) -> f64 {
        let mut best = f64::INFINITY;
        let mut lens = vec![1u8; p.len()];
        loop {
            let kraft: f64 = lens.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
            if kraft <= 1.0 + 1e-12 {
                let avg: f64 = p.iter().zip(&lens).map(|(q, &l)| q * l as f64).sum();
                best = best.min(avg);
            }
            let mut i = 0;
            loop {
                if i == lens.len() {
                    return best;
                }
                if lens[i] < max_len {
                    lens[i] += 1;
                    break;
                }
                lens[i] = 1;
                i += 1;
            }
        }
    }

    fn is_prefix_free(book: &HuffmanBook) -> bool {
        let n = book.symbol_count();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (ca, la) = book.code(a).unwrap();
                let (cb, lb) = book.code(b).unwrap();
                if la <= lb && (cb >> (lb - la)) == ca {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn dyadic_distribution_is_optimal() {
        let p = [0.5, 0.25, 0.125, 0.125];
        let book = build_huffman(&p).unwrap();
        assert_eq!(book.lengths(), &[1, 2, 3, 3]);
        assert!((book.average_length(&p) - 1.75).abs() < 1e-15);
        assert!((entropy_bits(&p) - 1.75).abs() < 1e-15);
        assert!((exhaustive_min_length(&p, 4) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn matches_exhaustive_search_on_small_alphabets() {
        for p in [[0.4, 0.3, 0.2, 0.1], [0.25; 4], [0.7, 0.1, 0.1, 0.1], [0.35, 0.35, 0.2, 0.1]] {
            let book = build_huffman(&p).unwrap();
            let best = exhaustive_min_length(&p, 4);
            assert!((book.average_length(&p) - best).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn degenerate_alphabets() {
        let one = build_huffman(&[1.0]).unwrap();
        assert_eq!(one.code(0), Some((0, 1)));
        let two = build_huffman(&[0.5, 0.5]).unwrap();
        assert_eq!(two.lengths(), &[1, 1]);
        assert_eq!(two.code(0), Some((0, 1)));
        assert_eq!(two.code(1), Some((1, 1)));
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(build_huffman(&[]).is_err());
        assert!(build_huffman(&[0.5, 0.4]).is_err());
        assert!(build_huffman(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn zero_probability_symbols_get_codes() {
        let p = [0.5, 0.0, 0.5, 0.0, 0.0];
        let book = build_huffman(&p).unwrap();
        assert!((book.kraft_sum() - 1.0).abs() < 1e-15);
        assert!(is_prefix_free(&book));
        let s = book.encode(&[1, 3, 4, 0, 2]).unwrap();
        assert_eq!(book.decode(&s, 5).unwrap(), vec![1, 3, 4, 0, 2]);
    }

    #[test]
    fn empty_sequence_round_trips() {
        let book = build_huffman(&[0.5, 0.5]).unwrap();
        let s = book.encode(&[]).unwrap();
        assert_eq!(s.bit_len(), 0);
        assert!(s.bytes().is_empty());
        assert!(book.decode(&s, 0).unwrap().is_empty());
    }

    #[test]
    fn single_bit_symbols_pack_densely() {
        let book = build_huffman(&[0.5, 0.25, 0.25]).unwrap();
        let s = book.encode(&[0; 13]).unwrap();
        assert_eq!(s.bit_len(), 13);
        assert_eq!(s.bytes().len(), 2);
    }

    #[test]
    fn range_and_truncation_errors() {
        let book = build_huffman(&[0.5, 0.25, 0.25]).unwrap();
        assert!(matches!(book.encode(&[3]), Err(Error::Range { index: 3, len: 3 })));
        let s = book.encode(&[1, 2]).unwrap();
        assert!(matches!(book.decode(&s, 3), Err(Error::Truncated { decoded: 2, expected: 3 })));
    }

    #[test]
    fn bitstream_padding_checked() {
        assert!(BitStream::from_parts(vec![0b1010_0000], 3).is_ok());
        assert!(BitStream::from_parts(vec![0b1010_0001], 3).is_err());
        assert!(BitStream::from_parts(vec![0, 0], 3).is_err());
    }

    fn dirichlet(seed: u64, l: usize) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Exp1};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..l).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
        let s: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
        // force the exact sum the builder checks
        let tail: f64 = p[..l - 1].iter().sum();
        p[l - 1] = 1.0 - tail;
        p
    }

    proptest! {
        #[test]
        fn canonical_book_properties(seed in any::<u64>(), l in 2usize..64) {
            let p = dirichlet(seed, l);
            let book = build_huffman(&p).unwrap();
            let h = entropy_bits(&p);
            let avg = book.average_length(&p);
            prop_assert!(h <= avg + 1e-12 && avg < h + 1.0);
            prop_assert!((book.kraft_sum() - 1.0).abs() < 1e-12);
            prop_assert!(is_prefix_free(&book));
            prop_assert_eq!(&build_huffman(&p).unwrap(), &book);
        }

        #[test]
        fn encode_decode_round_trip(
            seed in any::<u64>(),
            l in 1usize..40,
            raw in prop::collection::vec(any::<usize>(), 0..500),
        ) {
            let p = if l == 1 { vec![1.0] } else { dirichlet(seed, l) };
            let book = build_huffman(&p).unwrap();
            let idx: Vec<usize> = raw.iter().map(|v| v % l).collect();
            let s = book.encode(&idx).unwrap();
            let bits: usize = idx.iter().map(|&i| book.lengths()[i] as usize).sum();
            prop_assert_eq!(s.bit_len(), bits);
            prop_assert_eq!(book.decode(&s, idx.len()).unwrap(), idx);
        }
    }
}
