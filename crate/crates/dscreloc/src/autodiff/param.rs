//! Flat parameter vector with named, non-overlapping slices.

use std::ops::Range;

/// Handle to one named slice of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceId(usize);

/// All optimizable parameters as one flat vector.
///
/// Slices are appended once, never resized, and cover the vector exactly;
/// optimizer updates act on the whole vector while model code addresses its
/// per-frame grids through the slice handles.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    values: Vec<f64>,
    slices: Vec<(String, Range<usize>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a named slice initialized by `init(local_index)`.
    pub fn push_slice(
        &mut self,
        name: impl Into<String>,
        len: usize,
        mut init: impl FnMut(usize) -> f64,
    ) -> SliceId {
        let start = self.values.len();
        self.values.extend((0..len).map(&mut init));
        self.slices.push((name.into(), start..start + len));
        SliceId(self.slices.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn range(&self, id: SliceId) -> Range<usize> {
        self.slices[id.0].1.clone()
    }

    pub fn name(&self, id: SliceId) -> &str {
        &self.slices[id.0].0
    }

    pub fn slice(&self, id: SliceId) -> &[f64] {
        &self.values[self.range(id)]
    }

    pub fn slice_mut(&mut self, id: SliceId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.values[r]
    }

    pub fn find(&self, name: &str) -> Option<SliceId> {
        self.slices.iter().position(|(n, _)| n == name).map(SliceId)
    }

    pub fn slice_ids(&self) -> impl Iterator<Item = SliceId> {
        (0..self.slices.len()).map(SliceId)
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_are_disjoint_and_covering() {
        let mut store = ParamStore::new();
        let a = store.push_slice("a", 3, |i| i as f64);
        let b = store.push_slice("b", 2, |_| 7.0);
        assert_eq!(store.len(), 5);
        assert_eq!(store.range(a), 0..3);
        assert_eq!(store.range(b), 3..5);
        assert_eq!(store.slice(a), &[0.0, 1.0, 2.0]);
        assert_eq!(store.slice(b), &[7.0, 7.0]);
        let covered: usize = store.slice_ids().map(|id| store.range(id).len()).sum();
        assert_eq!(covered, store.len());
        assert_eq!(store.find("b"), Some(b));
        assert_eq!(store.find("missing"), None);
    }
}
