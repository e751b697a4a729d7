//! Small enumeration helpers shared by the oracle and the breakdown probes.

/// `C(n, k)` as a float, so guards never overflow.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Lexicographic iterator over the `k`-subsets of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let k = self.current.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.n - k + i {
                self.current[i] += 1;
                for j in (i + 1)..k {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

pub fn combinations(n: usize, k: usize) -> Combinations {
    Combinations::new(n, k)
}

/// Visits every labeling of `len` slots with labels in `0..g` (base-`g`
/// counting, first slot fastest). Stops early when `visit` returns `false`.
pub fn for_each_labeling(len: usize, g: usize, mut visit: impl FnMut(&[usize]) -> bool) {
    let mut labels = vec![0usize; len];
    loop {
        if !visit(&labels) {
            return;
        }
        let mut pos = 0;
        loop {
            if pos == len {
                return;
            }
            labels[pos] += 1;
            if labels[pos] < g {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

/// All permutations of `0..k` (Heap's algorithm), for small `k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
        heap(k - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    heap(k, &mut a, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 8), 45.0);
        assert_eq!(binomial(14, 11), 364.0);
        assert_eq!(binomial(3, 4), 0.0);
        assert_eq!(binomial(5, 0), 1.0);
    }

    #[test]
    fn combinations_are_lexicographic_and_complete() {
        let all: Vec<_> = combinations(5, 3).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[9], vec![2, 3, 4]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
        assert_eq!(combinations(4, 0).count(), 1);
        assert_eq!(combinations(2, 3).count(), 0);
    }

    #[test]
    fn labelings_count() {
        let mut count = 0;
        for_each_labeling(4, 3, |_| {
            count += 1;
            true
        });
        assert_eq!(count, 81);
    }

    #[test]
    fn permutation_count() {
        let p = permutations(4);
        assert_eq!(p.len(), 24);
        let mut s = p.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 24);
    }
}
