use std::fmt;

use crate::block::NodeId;

/// Dense bitset over node ids.
#[derive(Clone, Default)]
pub struct NodeSet {
    words: Vec<u64>,
    len: usize,
}

impl NodeSet {
    pub fn new() -> NodeSet {
        NodeSet::default()
    }

    pub fn with_capacity(nodes: usize) -> NodeSet {
        NodeSet { words: vec![0; nodes.div_ceil(64)], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, v: NodeId) -> bool {
        let (w, b) = (usize::from(v) / 64, v % 64);
        self.words.get(w).is_some_and(|x| x >> b & 1 == 1)
    }

    /// Returns true when `v` was not present.
    pub fn insert(&mut self, v: NodeId) -> bool {
        let (w, b) = (usize::from(v) / 64, v % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        let fresh = self.words[w] >> b & 1 == 0;
        self.words[w] |= 1 << b;
        self.len += usize::from(fresh);
        fresh
    }

    pub fn remove(&mut self, v: NodeId) -> bool {
        let (w, b) = (usize::from(v) / 64, v % 64);
        match self.words.get_mut(w) {
            Some(x) if *x >> b & 1 == 1 => {
                *x &= !(1 << b);
                self.len -= 1;
                true
            }
            _ => false,
        }
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.words
            .iter()
            .enumerate()
            .all(|(i, w)| w & !other.words.get(i).copied().unwrap_or(0) == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            (0..64u16).filter(move |b| w >> b & 1 == 1).map(move |b| (i as u16) * 64 + b)
        })
    }
}

impl PartialEq for NodeSet {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.is_subset(other)
    }
}

impl Eq for NodeSet {}

impl FromIterator<NodeId> for NodeSet {
    fn from_iter<T: IntoIterator<Item = NodeId>>(iter: T) -> Self {
        let mut s = NodeSet::new();
        for v in iter {
            s.insert(v);
        }
        s
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_remove_subset() {
        let mut a: NodeSet = [1, 70, 3].into_iter().collect();
        assert_eq!(a.len(), 3);
        assert!(!a.insert(70));
        let b: NodeSet = [1, 3].into_iter().collect();
        assert!(b.is_subset(&a));
        assert!(!a.is_subset(&b));
        assert!(a.remove(70));
        assert!(a.is_subset(&b) && b.is_subset(&a));
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![1, 3]);
        // Trailing zero words do not affect equality semantics of subset.
        assert!(NodeSet::with_capacity(200).is_subset(&b));
    }
}
