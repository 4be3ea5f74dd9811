//! Sum and min segment trees over a fixed number of leaves.

#[derive(Debug, Clone)]
pub struct SumMinTree {
    cap: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
}

impl SumMinTree {
    pub fn new(n: usize) -> Self {
        let cap = n.next_power_of_two().max(1);
        Self {
            cap,
            sum: vec![0.0; 2 * cap],
            min: vec![f64::INFINITY; 2 * cap],
        }
    }

    fn write(&mut self, i: usize, s: f64, m: f64) {
        let mut k = i + self.cap;
        self.sum[k] = s;
        self.min[k] = m;
        while k > 1 {
            k /= 2;
            self.sum[k] = self.sum[2 * k] + self.sum[2 * k + 1];
            self.min[k] = self.min[2 * k].min(self.min[2 * k + 1]);
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value >= 0.0);
        self.write(i, value, value);
    }

    /// Remove leaf `i` from both the sum and the minimum.
    pub fn clear(&mut self, i: usize) {
        self.write(i, 0.0, f64::INFINITY);
    }

    pub fn get(&self, i: usize) -> f64 {
        self.sum[i + self.cap]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    /// Smallest live leaf value.
    pub fn min(&self) -> f64 {
        self.min[1]
    }

    /// Leaf whose prefix-sum interval contains `u`, skipping empty leaves.
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.cap {
            let left = 2 * k;
            if u < self.sum[left] || self.sum[left + 1] == 0.0 {
                k = left;
            } else {
                u -= self.sum[left];
                k = left + 1;
            }
        }
        k - self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_search_and_min() {
        let mut t = SumMinTree::new(5);
        for (i, v) in [1.0, 0.0, 2.0, 3.0, 0.5].iter().enumerate() {
            t.set(i, *v);
        }
        t.clear(1);
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.min(), 0.5);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.4), 4);
        t.clear(4);
        assert_eq!(t.min(), 1.0);
    }
}
