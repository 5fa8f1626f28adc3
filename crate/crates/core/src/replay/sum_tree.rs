/// Binary tree where each internal node holds the sum of its children.
///
/// Internal nodes are recomputed as `left + right` on every write instead of
/// being adjusted by a delta, so the tree is a pure function of its leaves:
/// no drift accumulates and two trees with equal leaves are bit-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.nodes[self.leaves + index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        debug_assert!(value >= 0.0 && value.is_finite());
        let mut i = self.leaves + index;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`.
    ///
    /// The descent never enters a zero-mass subtree, so the returned leaf has
    /// positive priority whenever the total is positive, even when rounding
    /// pushes `mass` past the end of the range.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.max(0.0);
        let mut i = 1;
        while i < self.leaves {
            let left = 2 * i;
            if mass < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                i = left;
            } else {
                mass -= self.nodes[left];
                i = left + 1;
            }
        }
        i - self.leaves
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.nodes[self.leaves..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_sum_and_find_walks_prefixes() {
        let mut t = SumTree::new(8);
        for i in 0..8 {
            t.set(i, i as f64);
        }
        assert_eq!(t.total(), 28.0);
        assert_eq!(t.find(0.0), 1);
        assert_eq!(t.find(4.0), 3);
        assert_eq!(t.find(18.0), 6);
        assert_eq!(t.find(27.9), 7);
        assert_eq!(t.find(1e9), 7);
    }

    #[test]
    fn zero_leaves_never_selected() {
        let mut t = SumTree::new(5);
        t.set(2, 1.0);
        for m in [0.0, 0.5, 0.999_999, 1.0, 2.0] {
            assert_eq!(t.find(m), 2);
        }
    }

    #[test]
    fn single_leaf() {
        let mut t = SumTree::new(1);
        t.set(0, 3.0);
        assert_eq!(t.total(), 3.0);
        assert_eq!(t.find(2.0), 0);
    }
}
