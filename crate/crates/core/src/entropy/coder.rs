//! Byte-oriented range coder over a 16-bit cumulative frequency grid.
//!
//! The encoder keeps a 64-bit `low` so carries can be propagated into
//! already-produced bytes through a cache byte and a run of pending `0xFF`s.
//! The always-zero leading byte is not written. Symbol intervals are split
//! multiply-first, `(range * cum) >> 16`, which wastes no code space.

/// Precision of cumulative frequency tables.
pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
const TOP: u32 = 1 << 24;

#[inline]
fn split(range: u32, cum: u32) -> u32 {
    ((range as u64 * cum as u64) >> FREQ_BITS) as u32
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    symbols: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            started: false,
            symbols: 0,
            out: Vec::new(),
        }
    }

    /// Codes the symbol occupying `[cum_lo, cum_hi)` of a table summing to
    /// [`FREQ_TOTAL`].
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= FREQ_TOTAL);
        let lo = split(self.range, cum_lo);
        let hi = split(self.range, cum_hi);
        self.low += lo as u64;
        self.range = hi - lo;
        self.symbols += 1;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        if self.started {
            self.out.push(byte);
        } else {
            debug_assert_eq!(byte, 0);
            self.started = true;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Bytes produced so far (not counting unflushed state).
    pub fn bytes_so_far(&self) -> usize {
        self.out.len()
    }

    /// Flushes the coder state. A stream with no symbols is empty.
    pub fn finish(mut self) -> Vec<u8> {
        if self.symbols == 0 {
            return Vec::new();
        }
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

/// Decoder matching [`RangeEncoder`].
///
/// Bytes past the end of the input are replaced by `pad`; `overrun` counts
/// how many were needed.
#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    pad: u8,
    overrun: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self::with_padding(input, 0)
    }

    pub fn with_padding(input: &'a [u8], pad: u8) -> Self {
        let mut d = RangeDecoder {
            input,
            pos: 0,
            code: 0,
            range: u32::MAX,
            pad,
            overrun: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        match self.input.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overrun += 1;
                self.pad
            }
        }
    }

    /// Number of padding bytes consumed so far.
    pub fn overrun(&self) -> usize {
        self.overrun
    }

    /// Decodes one symbol against cumulative table `cum` (length n+1,
    /// `cum[0] = 0`, `cum[n] = FREQ_TOTAL`). Returns `None` if the code value
    /// is inconsistent with the table, which only happens on corrupt or
    /// padded input.
    pub fn decode(&mut self, cum: &[u32]) -> Option<usize> {
        if self.code >= self.range {
            return None;
        }
        let n = cum.len() - 1;
        // largest s with split(range, cum[s]) <= code
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if split(self.range, cum[mid]) <= self.code {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = lo;
        let a = split(self.range, cum[s]);
        let b = split(self.range, cum[s + 1]);
        if self.code >= b {
            return None;
        }
        self.code -= a;
        self.range = b - a;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        Some(s)
    }
}

/// Decodes from a possibly truncated stream, reporting only symbols that
/// every continuation of the available bytes would agree on.
///
/// Runs two decoders in lockstep, one padding with `0x00` and one with
/// `0xFF`; the true code value always lies between theirs.
#[derive(Debug, Clone)]
pub struct PrefixDecoder<'a> {
    low: RangeDecoder<'a>,
    high: RangeDecoder<'a>,
    stuck: bool,
}

impl<'a> PrefixDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        PrefixDecoder {
            low: RangeDecoder::with_padding(input, 0x00),
            high: RangeDecoder::with_padding(input, 0xFF),
            stuck: false,
        }
    }

    /// Next symbol if the available bytes determine it. Once a symbol is
    /// undetermined every later call returns `None` as well.
    pub fn decode(&mut self, cum: &[u32]) -> Option<usize> {
        if self.stuck {
            return None;
        }
        let a = self.low.decode(cum);
        let b = self.high.decode(cum);
        match (a, b) {
            (Some(x), Some(y)) if x == y => Some(x),
            _ => {
                self.stuck = true;
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: u32) -> Vec<u32> {
        (0..=n).map(|i| i * FREQ_TOTAL / n).collect()
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
        let mut cuts: Vec<u32> = (0..n - 1).map(|_| rng.random_range(1..FREQ_TOTAL)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut cum = vec![0];
        cum.extend(cuts);
        cum.push(FREQ_TOTAL);
        cum
    }

    fn encode_all(syms: &[(usize, Vec<u32>)]) -> Vec<u8> {
        let mut e = RangeEncoder::new();
        for (s, cum) in syms {
            e.encode(cum[*s], cum[*s + 1]);
        }
        e.finish()
    }

    fn random_stream(seed: u64, len: usize) -> Vec<(usize, Vec<u32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let n = rng.random_range(2..40);
                let cum = random_table(&mut rng, n);
                let s = rng.random_range(0..cum.len() - 1);
                (s, cum)
            })
            .collect()
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(RangeEncoder::new().finish().is_empty());
    }

    #[test]
    fn certain_symbol_costs_only_the_flush() {
        let mut e = RangeEncoder::new();
        e.encode(0, FREQ_TOTAL);
        let out = e.finish();
        assert!(out.len() <= 8, "{}", out.len());
    }

    #[test]
    fn uniform_ternary_stream_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cum = uniform(3);
        let syms: Vec<(usize, Vec<u32>)> = (0..10_000).map(|_| (rng.random_range(0..3), cum.clone())).collect();
        let bytes = encode_all(&syms);
        let ideal: f64 = syms
            .iter()
            .map(|(s, c)| -(((c[s + 1] - c[*s]) as f64) / FREQ_TOTAL as f64).log2())
            .sum();
        let bits = 8.0 * bytes.len() as f64;
        assert!(bits >= ideal && bits <= ideal * 1.01 + 64.0, "{bits} vs {ideal}");
    }

    #[test]
    fn carries_propagate() {
        // symbols at the very top of the range force long 0xFF runs
        let cum = vec![0, 1, FREQ_TOTAL - 1, FREQ_TOTAL];
        let syms: Vec<(usize, Vec<u32>)> = (0..2000).map(|i| (if i % 7 == 0 { 1 } else { 2 }, cum.clone())).collect();
        let bytes = encode_all(&syms);
        let mut d = RangeDecoder::new(&bytes);
        for (s, c) in &syms {
            assert_eq!(d.decode(c), Some(*s));
        }
        assert_eq!(d.overrun(), 0);
    }

    #[test]
    fn full_stream_decodes_without_padding() {
        for seed in 0..20 {
            let syms = random_stream(seed, 500);
            let bytes = encode_all(&syms);
            let mut d = RangeDecoder::new(&bytes);
            for (s, c) in &syms {
                assert_eq!(d.decode(c), Some(*s));
            }
            assert_eq!(d.overrun(), 0);
        }
    }

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), len in 1usize..300) {
            let syms = random_stream(seed, len);
            let bytes = encode_all(&syms);
            let mut d = RangeDecoder::new(&bytes);
            for (s, c) in &syms {
                prop_assert_eq!(d.decode(c), Some(*s));
            }
        }

        #[test]
        fn prefixes_decode_a_correct_monotone_prefix(seed in any::<u64>(), len in 1usize..120) {
            let syms = random_stream(seed, len);
            let bytes = encode_all(&syms);
            let mut last = 0;
            for cut in 0..=bytes.len() {
                let mut d = PrefixDecoder::new(&bytes[..cut]);
                let mut n = 0;
                for (s, c) in &syms {
                    match d.decode(c) {
                        Some(x) => {
                            prop_assert_eq!(x, *s);
                            n += 1;
                        }
                        None => break,
                    }
                }
                prop_assert!(n >= last);
                last = n;
            }
            prop_assert_eq!(last, syms.len());
        }
    }
}
