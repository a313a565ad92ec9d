//! Fixed-length dense bitset backing the grid sets.

const WORD: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Bits {
    len: usize,
    words: Vec<u64>,
}

impl Bits {
    pub fn new(len: usize) -> Self {
        Bits {
            len,
            words: vec![0; len.div_ceil(WORD)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut b = Bits {
            len,
            words: vec![!0; len.div_ceil(WORD)],
        };
        b.mask_tail();
        b
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[allow(dead_code)]
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] &= !(1 << (i % WORD));
    }

    /// Sets every bit in `lo..hi`.
    pub fn set_range(&mut self, lo: usize, hi: usize) {
        let hi = hi.min(self.len);
        if lo >= hi {
            return;
        }
        let (wl, wh) = (lo / WORD, (hi - 1) / WORD);
        for w in wl..=wh {
            let start = if w == wl { lo % WORD } else { 0 };
            let end = if w == wh { (hi - 1) % WORD + 1 } else { WORD };
            let mask = if end - start == WORD {
                !0
            } else {
                ((1u64 << (end - start)) - 1) << start
            };
            self.words[w] |= mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    pub fn union_with(&mut self, other: &Bits) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &Bits) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    pub fn difference_with(&mut self, other: &Bits) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn complement(&mut self) {
        for w in &mut self.words {
            *w = !*w;
        }
        self.mask_tail();
    }

    pub fn is_subset(&self, other: &Bits) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn intersection_count(&self, other: &Bits) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + t)
            })
        })
    }

    /// `self |= other << shift`, dropping bits that land past `self.len()`.
    pub fn or_shifted(&mut self, other: &Bits, shift: usize) {
        let (ws, bs) = (shift / WORD, shift % WORD);
        let n = self.words.len();
        for (k, &w) in other.words.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let t = k + ws;
            if t >= n {
                break;
            }
            self.words[t] |= w << bs;
            if bs != 0 && t + 1 < n {
                self.words[t + 1] |= w >> (WORD - bs);
            }
        }
        self.mask_tail();
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_range_matches_individual_sets() {
        for len in [1usize, 63, 64, 65, 200] {
            for lo in 0..len.min(70) {
                for hi in [lo, lo + 1, lo + 63, lo + 64, lo + 130] {
                    let mut a = Bits::new(len);
                    a.set_range(lo, hi);
                    let mut b = Bits::new(len);
                    for i in lo..hi.min(len) {
                        b.set(i);
                    }
                    assert_eq!(a, b, "len={len} lo={lo} hi={hi}");
                }
            }
        }
    }

    #[test]
    fn or_shifted_matches_naive() {
        let mut src = Bits::new(100);
        for i in [0, 1, 31, 63, 64, 99] {
            src.set(i);
        }
        for shift in [0usize, 1, 63, 64, 65, 130] {
            let mut a = Bits::new(230);
            a.or_shifted(&src, shift);
            let want: Vec<usize> = src.iter_ones().map(|i| i + shift).filter(|&i| i < 230).collect();
            assert_eq!(a.iter_ones().collect::<Vec<_>>(), want);
        }
    }

    #[test]
    fn complement_masks_tail() {
        let mut b = Bits::new(70);
        b.set(3);
        b.complement();
        assert_eq!(b.count_ones(), 69);
        assert!(!b.get(3));
    }

    #[test]
    fn iter_ones_in_order() {
        let mut b = Bits::new(300);
        for i in [0, 5, 64, 127, 128, 299] {
            b.set(i);
        }
        assert_eq!(b.iter_ones().collect::<Vec<_>>(), vec![0, 5, 64, 127, 128, 299]);
    }
}
