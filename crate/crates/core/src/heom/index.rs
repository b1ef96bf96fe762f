//! Multi-index bookkeeping for the hierarchy.

use std::collections::HashMap;

pub const NONE: u32 = u32::MAX;

/// All multi-indices `n` over `m` terms with `sum n <= depth`, in
/// lexicographic order, with raise/lower neighbour tables.
#[derive(Debug, Clone)]
pub struct IndexSet {
    m: usize,
    depth: usize,
    indices: Vec<Vec<u8>>,
    plus: Vec<u32>,
    minus: Vec<u32>,
}

fn enumerate(m: usize, remaining: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == m {
        out.push(prefix.clone());
        return;
    }
    for v in 0..=remaining {
        prefix.push(v as u8);
        enumerate(m, remaining - v, prefix, out);
        prefix.pop();
    }
}

/// `(depth + m) choose m`.
pub fn index_count(m: usize, depth: usize) -> u128 {
    let mut r: u128 = 1;
    for k in 1..=m as u128 {
        r = r * (depth as u128 + k) / k;
    }
    r
}

impl IndexSet {
    pub fn new(m: usize, depth: usize) -> Self {
        assert!(depth < 256, "depth must fit in a byte");
        let mut indices = Vec::new();
        enumerate(m, depth, &mut Vec::with_capacity(m), &mut indices);
        let lookup: HashMap<&[u8], u32> = indices.iter().enumerate().map(|(k, n)| (n.as_slice(), k as u32)).collect();
        let mut plus = vec![NONE; indices.len() * m];
        let mut minus = vec![NONE; indices.len() * m];
        let mut probe = vec![0u8; m];
        for (k, n) in indices.iter().enumerate() {
            let level: usize = n.iter().map(|&x| x as usize).sum();
            for j in 0..m {
                probe.copy_from_slice(n);
                if level < depth {
                    probe[j] += 1;
                    plus[k * m + j] = lookup[probe.as_slice()];
                    probe[j] -= 1;
                }
                if n[j] > 0 {
                    probe[j] -= 1;
                    minus[k * m + j] = lookup[probe.as_slice()];
                }
            }
        }
        Self { m, depth, indices, plus, minus }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_terms(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn get(&self, k: usize) -> &[u8] {
        &self.indices[k]
    }

    pub fn level(&self, k: usize) -> usize {
        self.indices[k].iter().map(|&x| x as usize).sum()
    }

    pub fn plus(&self, k: usize, j: usize) -> Option<usize> {
        let v = self.plus[k * self.m + j];
        (v != NONE).then_some(v as usize)
    }

    pub fn minus(&self, k: usize, j: usize) -> Option<usize> {
        let v = self.minus[k * self.m + j];
        (v != NONE).then_some(v as usize)
    }

    pub fn position(&self, n: &[u8]) -> Option<usize> {
        self.indices.binary_search_by(|probe| probe.as_slice().cmp(n)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_order() {
        let set = IndexSet::new(2, 2);
        assert_eq!(set.len(), 6);
        assert_eq!(index_count(2, 2), 6);
        assert_eq!(index_count(16, 4), 4845);
        assert_eq!(set.get(0), &[0, 0]);
        for k in 1..set.len() {
            assert!(set.get(k - 1) < set.get(k));
        }
    }

    #[test]
    fn neighbours_are_consistent() {
        let set = IndexSet::new(3, 3);
        for k in 0..set.len() {
            for j in 0..3 {
                if let Some(p) = set.plus(k, j) {
                    assert_eq!(set.minus(p, j), Some(k));
                    assert_eq!(set.level(p), set.level(k) + 1);
                }
                if let Some(q) = set.minus(k, j) {
                    assert_eq!(set.plus(q, j), Some(k));
                }
            }
            assert_eq!(set.position(set.get(k)), Some(k));
        }
        // Closed under lowering.
        assert!((0..set.len()).all(|k| (0..3).all(|j| set.get(k)[j] == 0 || set.minus(k, j).is_some())));
    }
}
