//! Stack-like rANS coder: 64-bit state, 32-bit renormalisation words,
//! 24-bit frequency precision.
//!
//! Sixteen bits are too coarse for the bits-back chain: every symbol of a
//! finely gridded Gaussian needs a slot, and the slots spent on far tails
//! get sampled when latents are popped.

use crate::error::{Error, Result};

/// Frequency precision in bits; every table sums to `1 << PRECISION`.
pub const PRECISION: u32 = 24;
pub const TOTAL: u32 = 1 << PRECISION;
const LOWER: u64 = 1 << 31;

/// A symbol interval `[start, start + freq)` of a table summing to [`TOTAL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub start: u32,
    pub freq: u32,
}

/// Anything that can map symbols to intervals and back.
pub trait SymbolTable {
    type Symbol;
    fn interval(&self, symbol: &Self::Symbol) -> Result<Interval>;
    /// Symbol whose interval contains `slot < TOTAL`.
    fn lookup(&self, slot: u32) -> Result<(Self::Symbol, Interval)>;
}

/// rANS state plus the stack of emitted words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnsState {
    state: u64,
    words: Vec<u32>,
}

impl Default for AnsState {
    fn default() -> Self {
        Self::new()
    }
}

impl AnsState {
    /// Empty coder; popping from it underflows immediately.
    pub fn new() -> Self {
        Self { state: LOWER, words: Vec::new() }
    }

    /// Restores a coder from its parts. `state` must lie in `[2^31, 2^63)`.
    pub fn from_parts(state: u64, words: Vec<u32>) -> Result<Self> {
        if !(LOWER..LOWER << 32).contains(&state) {
            return Err(Error::Format(format!("ANS state {state:#x} outside the normalised range")));
        }
        Ok(Self { state, words })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// Information content held by the coder, in bits.
    pub fn bits(&self) -> f64 {
        32.0 * self.words.len() as f64 + (self.state as f64).log2()
    }

    pub fn push_interval(&mut self, iv: Interval) -> Result<()> {
        if iv.freq == 0 || iv.start.checked_add(iv.freq).is_none_or(|end| end > TOTAL) {
            return Err(Error::InvalidArgument(format!("invalid interval {iv:?}")));
        }
        let freq = u64::from(iv.freq);
        if self.state >= (LOWER >> PRECISION << 32) * freq {
            self.words.push(self.state as u32);
            self.state >>= 32;
        }
        self.state = ((self.state / freq) << PRECISION) + self.state % freq + u64::from(iv.start);
        Ok(())
    }

    /// Decodes one slot with `lookup`, which returns the symbol and its interval.
    pub fn pop_with<S>(&mut self, lookup: impl FnOnce(u32) -> Result<(S, Interval)>) -> Result<S> {
        let slot = (self.state & u64::from(TOTAL - 1)) as u32;
        let (symbol, iv) = lookup(slot)?;
        if !(iv.start..iv.start + iv.freq).contains(&slot) {
            return Err(Error::State(format!("lookup returned {iv:?} for slot {slot}")));
        }
        let next = u64::from(iv.freq) * (self.state >> PRECISION) + u64::from(slot - iv.start);
        if next < LOWER {
            let word = self.words.pop().ok_or(Error::Underflow)?;
            self.state = (next << 32) | u64::from(word);
        } else {
            self.state = next;
        }
        Ok(symbol)
    }

    pub fn push<T: SymbolTable>(&mut self, table: &T, symbol: &T::Symbol) -> Result<()> {
        self.push_interval(table.interval(symbol)?)
    }

    pub fn pop<T: SymbolTable>(&mut self, table: &T) -> Result<T::Symbol> {
        self.pop_with(|slot| table.lookup(slot))
    }

    /// Pushes `value` uniformly distributed over `0..n`, `1 ≤ n ≤ TOTAL`.
    pub fn push_uniform(&mut self, value: u32, n: u32) -> Result<()> {
        self.push_interval(uniform_interval(value, n)?)
    }

    pub fn pop_uniform(&mut self, n: u32) -> Result<u32> {
        if n == 0 || n > TOTAL {
            return Err(Error::InvalidArgument(format!("uniform range {n} outside 1..={TOTAL}")));
        }
        self.pop_with(|slot| {
            // Largest v with floor(v·TOTAL/n) ≤ slot.
            let v = ((u64::from(slot) * u64::from(n) + u64::from(n) - 1) / u64::from(TOTAL)) as u32;
            let v = if uniform_start(v, n) > slot { v - 1 } else { v };
            Ok((v, uniform_interval(v, n)?))
        })
    }
}

fn uniform_start(v: u32, n: u32) -> u32 {
    (u64::from(v) * u64::from(TOTAL) / u64::from(n)) as u32
}

fn uniform_interval(value: u32, n: u32) -> Result<Interval> {
    if n == 0 || n > TOTAL || value >= n {
        return Err(Error::InvalidArgument(format!("uniform symbol {value} of {n}")));
    }
    let start = uniform_start(value, n);
    Ok(Interval { start, freq: uniform_start(value + 1, n) - start })
}

/// Explicit frequency table over symbols `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    /// Frequencies must be positive and sum to [`TOTAL`].
    pub fn new(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() || freqs.contains(&0) {
            return Err(Error::InvalidArgument("frequencies must be nonempty and positive".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &f in freqs {
            acc += u64::from(f);
            cum.push(acc.min(u64::from(u32::MAX)) as u32);
        }
        if acc != u64::from(TOTAL) {
            return Err(Error::InvalidArgument(format!("frequencies sum to {acc}, expected {TOTAL}")));
        }
        Ok(Self { cum })
    }

    /// Quantises probabilities, giving every symbol at least one slot.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n > TOTAL as usize || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("probabilities sum to zero".into()));
        }
        let spare = f64::from(TOTAL - n as u32);
        let mut freqs: Vec<u32> = probs.iter().map(|p| 1 + (p / total * spare).floor() as u32).collect();
        let assigned: u32 = freqs.iter().sum();
        // Rounding leftovers go to the most likely symbol.
        let top = (0..n).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        freqs[top] += TOTAL - assigned;
        Self::new(&freqs)
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        f64::from(self.cum[symbol + 1] - self.cum[symbol]) / f64::from(TOTAL)
    }
}

impl SymbolTable for FreqTable {
    type Symbol = usize;

    fn interval(&self, symbol: &usize) -> Result<Interval> {
        if *symbol >= self.len() {
            return Err(Error::Range(format!("symbol {symbol} outside table of {}", self.len())));
        }
        Ok(Interval { start: self.cum[*symbol], freq: self.cum[symbol + 1] - self.cum[*symbol] })
    }

    fn lookup(&self, slot: u32) -> Result<(usize, Interval)> {
        let s = self.cum.partition_point(|&c| c <= slot) - 1;
        Ok((s, self.interval(&s)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn push_pop_restores_state() {
        let table = FreqTable::from_probs(&[0.5, 0.25, 0.125, 0.125]).unwrap();
        let mut rng = Rng::new(1);
        let mut ans = AnsState::new();
        for _ in 0..100 {
            ans.push_uniform(rng.below(1000) as u32, 1000).unwrap();
        }
        let before = ans.clone();
        ans.push(&table, &2).unwrap();
        assert_eq!(ans.pop(&table).unwrap(), 2);
        assert_eq!(ans, before);
    }

    #[test]
    fn pops_return_pushes_in_reverse() {
        let mut rng = Rng::new(2);
        let table = FreqTable::from_probs(&[0.7, 0.2, 0.1]).unwrap();
        let symbols: Vec<usize> = (0..5000).map(|_| rng.below(3)).collect();
        let mut ans = AnsState::new();
        for s in &symbols {
            ans.push(&table, s).unwrap();
        }
        for s in symbols.iter().rev() {
            assert_eq!(ans.pop(&table).unwrap(), *s);
        }
        assert_eq!(ans, AnsState::new());
        assert!(matches!(ans.pop(&table), Err(Error::Underflow)));
    }

    #[test]
    fn uniform_bytes_cost_eight_bits() {
        let mut rng = Rng::new(3);
        let mut ans = AnsState::new();
        let start = ans.bits();
        let n = 100_000;
        for _ in 0..n {
            ans.push_uniform(rng.below(256) as u32, 256).unwrap();
        }
        let bits = ans.bits() - start;
        assert!((bits / (8.0 * n as f64) - 1.0).abs() < 1e-3, "{bits}");
    }

    #[test]
    fn skewed_binary_source_reaches_entropy() {
        let p = 0.9f64;
        let h = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        let table = FreqTable::from_probs(&[p, 1.0 - p]).unwrap();
        let mut rng = Rng::new(4);
        let mut ans = AnsState::new();
        let n = 200_000;
        for _ in 0..n {
            let s = usize::from(rng.uniform() >= p);
            ans.push(&table, &s).unwrap();
        }
        let rate = ans.bits() / n as f64;
        assert!((rate / h - 1.0).abs() < 0.01, "{rate} vs {h}");
    }

    #[test]
    fn uniform_pop_inverts_push() {
        for n in [1u32, 2, 3, 7, 255, 1000, 65535, 65536, TOTAL] {
            let mut ans = AnsState::from_parts(0x1234_5678_9abc, vec![7, 8, 9]).unwrap();
            let before = ans.clone();
            for v in [0, n / 2, n - 1] {
                ans.push_uniform(v, n).unwrap();
                assert_eq!(ans.pop_uniform(n).unwrap(), v);
                assert_eq!(ans, before);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let table = FreqTable::from_probs(&[0.5, 0.5]).unwrap();
        let mut ans = AnsState::new();
        assert!(ans.push(&table, &2).is_err());
        assert!(ans.push_uniform(5, 5).is_err());
        assert!(FreqTable::new(&[1, 2]).is_err());
        assert!(FreqTable::new(&[TOTAL - 1, 0, 1]).is_err());
        assert!(AnsState::from_parts(5, vec![]).is_err());
    }
}
