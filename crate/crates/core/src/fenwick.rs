/// Binary indexed tree over per-site rates.
///
/// Supports point updates, prefix sums and weighted sampling in `O(log n)`.
#[derive(Debug, Clone)]
pub struct RateIndex {
    tree: Vec<f64>,
    values: Vec<f64>,
    top: usize,
}

impl RateIndex {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let mut index = Self {
            tree: vec![0.0; n + 1],
            values,
            top: if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) },
        };
        index.rebuild();
        index
    }

    /// Recomputes the tree from the stored values in `O(n)`.
    pub fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree[0] = 0.0;
        self.tree[1..].copy_from_slice(&self.values);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let delta = value - self.values[i];
        self.values[i] = value;
        if delta == 0.0 {
            return;
        }
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    /// Sum of `values[0..i]`.
    pub fn prefix(&self, mut i: usize) -> f64 {
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    pub fn total(&self) -> f64 {
        self.prefix(self.values.len())
    }

    /// Smallest `i` with `prefix(i + 1) > target`, or `None` if `target`
    /// is at or beyond the total.
    pub fn find(&self, target: f64) -> Option<usize> {
        let n = self.values.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        (pos < n).then_some(pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn find_skips_zero_rates() {
        let idx = RateIndex::new(vec![0.0, 2.0, 0.0, 1.0]);
        assert_eq!(idx.total(), 3.0);
        assert_eq!(idx.find(0.0), Some(1));
        assert_eq!(idx.find(1.999), Some(1));
        assert_eq!(idx.find(2.0), Some(3));
        assert_eq!(idx.find(3.0), None);
    }

    proptest! {
        #[test]
        fn prefix_sums_match_naive(
            init in proptest::collection::vec(0u32..5, 1..70),
            updates in proptest::collection::vec((0usize..70, 0u32..5), 0..200),
        ) {
            let mut naive: Vec<f64> = init.iter().map(|&v| f64::from(v)).collect();
            let mut idx = RateIndex::new(naive.clone());
            for (i, v) in updates {
                let i = i % naive.len();
                naive[i] = f64::from(v);
                idx.set(i, f64::from(v));
            }
            for i in 0..=naive.len() {
                prop_assert_eq!(idx.prefix(i), naive[..i].iter().sum::<f64>());
            }
            let total: f64 = naive.iter().sum();
            for t in 0..(total as usize) {
                let site = idx.find(t as f64 + 0.5).unwrap();
                prop_assert!(naive[site] > 0.0);
                prop_assert!(idx.prefix(site) <= t as f64 + 0.5);
                prop_assert!(idx.prefix(site + 1) > t as f64 + 0.5);
            }
        }
    }
}
