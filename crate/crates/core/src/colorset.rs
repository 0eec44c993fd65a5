//! Fixed-width sets of sub-bands.
//!
//! A sub-band (color) is an index in `0..64`. Every per-node and per-link
//! band set in the crate is a [`ColorSet`].

use std::fmt;

/// Largest number of sub-bands a [`ColorSet`] can hold.
pub const MAX_BANDS: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ColorSet(u64);

impl ColorSet {
    pub const EMPTY: ColorSet = ColorSet(0);

    pub const fn from_bits(bits: u64) -> Self {
        ColorSet(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(band: usize) -> Self {
        assert!(band < MAX_BANDS, "band {band} out of range");
        ColorSet(1 << band)
    }

    /// The set `{0, .., q-1}`.
    pub fn full(q: usize) -> Self {
        assert!(q <= MAX_BANDS, "band count {q} out of range");
        if q == MAX_BANDS {
            ColorSet(u64::MAX)
        } else {
            ColorSet((1u64 << q) - 1)
        }
    }

    pub fn from_bands<I: IntoIterator<Item = usize>>(bands: I) -> Self {
        bands.into_iter().fold(ColorSet::EMPTY, |acc, b| acc.with(b))
    }

    pub fn with(self, band: usize) -> Self {
        self.union(ColorSet::singleton(band))
    }

    pub fn without(self, band: usize) -> Self {
        self.difference(ColorSet::singleton(band))
    }

    pub fn contains(self, band: usize) -> bool {
        band < MAX_BANDS && self.0 & (1 << band) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: ColorSet) -> Self {
        ColorSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ColorSet) -> Self {
        ColorSet(self.0 & other.0)
    }

    pub fn difference(self, other: ColorSet) -> Self {
        ColorSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: ColorSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Mutual non-containment: both differences are nonempty.
    pub fn incomparable(self, other: ColorSet) -> bool {
        !self.difference(other).is_empty() && !other.difference(self).is_empty()
    }

    /// Largest band index plus one, or 0 for the empty set.
    pub fn span(self) -> usize {
        (64 - self.0.leading_zeros()) as usize
    }

    pub fn iter(self) -> Bands {
        Bands(self.0)
    }
}

/// Ascending iterator over the bands of a [`ColorSet`].
#[derive(Clone, Debug)]
pub struct Bands(u64);

impl Iterator for Bands {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Bands {}

impl IntoIterator for ColorSet {
    type Item = usize;
    type IntoIter = Bands;

    fn into_iter(self) -> Bands {
        self.iter()
    }
}

impl FromIterator<usize> for ColorSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        ColorSet::from_bands(iter)
    }
}

impl fmt::Debug for ColorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for ColorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, b) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        f.write_str("}")
    }
}

/// All subsets of `{0..q-1}` with exactly `k` elements, in increasing
/// numeric order of their bit patterns.
pub fn subsets_of_size(q: usize, k: usize) -> impl Iterator<Item = ColorSet> {
    let limit = if q == MAX_BANDS { u64::MAX } else { (1u64 << q) - 1 };
    let first = if k == 0 {
        Some(0)
    } else if k > q {
        None
    } else {
        Some(ColorSet::full(k).bits())
    };
    std::iter::successors(first, move |&v| {
        if v == 0 {
            return None;
        }
        // Gosper's hack
        let c = v & v.wrapping_neg();
        let r = v.checked_add(c)?;
        let next = (((r ^ v) >> 2) / c) | r;
        (next <= limit && next.count_ones() as usize == k).then_some(next)
    })
    .take_while(move |&v| v <= limit)
    .map(ColorSet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_algebra() {
        let a = ColorSet::from_bands([0, 2, 5]);
        let b = ColorSet::from_bands([2, 3]);
        assert_eq!(a.union(b), ColorSet::from_bands([0, 2, 3, 5]));
        assert_eq!(a.intersection(b), ColorSet::singleton(2));
        assert_eq!(a.difference(b), ColorSet::from_bands([0, 5]));
        assert!(a.incomparable(b));
        assert!(!ColorSet::singleton(2).incomparable(b));
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![0, 2, 5]);
        assert_eq!(a.to_string(), "{0,2,5}");
        assert_eq!(ColorSet::full(64).len(), 64);
        assert_eq!(a.span(), 6);
    }

    #[test]
    fn subset_enumeration_counts() {
        assert_eq!(subsets_of_size(4, 2).count(), 6);
        assert_eq!(subsets_of_size(5, 0).count(), 1);
        assert_eq!(subsets_of_size(3, 4).count(), 0);
        assert_eq!(subsets_of_size(6, 6).count(), 1);
        assert!(subsets_of_size(6, 3).all(|s| s.len() == 3 && s.is_subset(ColorSet::full(6))));
        assert_eq!(subsets_of_size(64, 63).count(), 64);
    }
}
