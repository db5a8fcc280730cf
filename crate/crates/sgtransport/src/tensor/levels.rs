//! Level-pair bookkeeping for the sparse space in combination representation.

/// A pair of per-factor refinement levels `(l1, l2)`, both >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LevelPair {
    pub l1: usize,
    pub l2: usize,
}

impl LevelPair {
    pub fn new(l1: usize, l2: usize) -> Self {
        debug_assert!(l1 >= 1 && l2 >= 1);
        LevelPair { l1, l2 }
    }

    pub fn sum(&self) -> usize {
        self.l1 + self.l2
    }
}

impl std::fmt::Display for LevelPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.l1, self.l2)
    }
}

/// The active set `{ l : |l|_1 = L + 1 }` in lexicographic order. Functions of
/// the sparse space of level `L` are stored on exactly these blocks.
pub fn active_levels(level: usize) -> Vec<LevelPair> {
    assert!(level >= 1);
    (1..=level).map(|l1| LevelPair::new(l1, level + 1 - l1)).collect()
}

/// The additional preconditioner set `{ l : |l|_1 = L }`; empty for `L = 1`.
pub fn precond_levels(level: usize) -> Vec<LevelPair> {
    assert!(level >= 1);
    (1..level).map(|l1| LevelPair::new(l1, level - l1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerations() {
        assert_eq!(active_levels(1), vec![LevelPair::new(1, 1)]);
        assert!(precond_levels(1).is_empty());
        assert_eq!(
            active_levels(3),
            vec![LevelPair::new(1, 3), LevelPair::new(2, 2), LevelPair::new(3, 1)]
        );
        assert_eq!(precond_levels(3), vec![LevelPair::new(1, 2), LevelPair::new(2, 1)]);
    }

    #[test]
    fn deterministic_sorted_order() {
        for l in 1..8 {
            let a = active_levels(l);
            let mut b = a.clone();
            b.sort();
            assert_eq!(a, b);
            assert!(a.iter().all(|p| p.sum() == l + 1));
        }
    }
}
