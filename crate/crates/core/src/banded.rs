//! Symmetric envelope storage with reverse Cuthill-McKee ordering and an
//! unpivoted `L D L^T` factorization.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("singular or indefinite-to-breakdown system (pivot {pivot:e} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },
}

/// Reverse Cuthill-McKee ordering of an undirected graph. Returns `order`
/// with `order[new] = old`. Disconnected components are handled in turn.
pub fn rcm_order(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (adjacency[i].len(), i))
            .expect("unvisited node exists");
        let start = pseudo_peripheral(adjacency, seed, &visited);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adjacency[w].len(), w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].expect("queued nodes have a level");
        for &w in &adjacency[v] {
            if !blocked[w] && level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], seed: usize, blocked: &[bool]) -> usize {
    let mut current = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, current, blocked);
        let max = levels.iter().flatten().copied().max().unwrap_or(0);
        if max <= depth && current != seed {
            break;
        }
        depth = max;
        let candidate = (0..adjacency.len())
            .filter(|&i| levels[i] == Some(max))
            .min_by_key(|&i| (adjacency[i].len(), i))
            .expect("deepest level is non-empty");
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Symmetric matrix holding the lower envelope (variable band) in permuted
/// numbering.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    /// `perm[old] = new`.
    perm: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each row in `data`; row `i` holds columns `first[i] ..= i`.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl BandMatrix {
    /// Zero matrix for unknowns whose coupling graph is `adjacency`, ordered
    /// by reverse Cuthill-McKee.
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        Self::with_order(adjacency, &rcm_order(adjacency))
    }

    /// Zero matrix with an explicit elimination order, `order[new] = old`.
    pub fn with_order(adjacency: &[Vec<usize>], order: &[usize]) -> Self {
        let n = adjacency.len();
        assert_eq!(order.len(), n, "order must be a permutation of the unknowns");
        let mut perm = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, nb) in adjacency.iter().enumerate() {
            for &j in nb {
                let (a, b) = (perm[i].max(perm[j]), perm[i].min(perm[j]));
                first[a] = first[a].min(b);
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut len = 0;
        for i in 0..n {
            start.push(len);
            len += i - first[i] + 1;
        }
        start.push(len);
        Self {
            n,
            perm,
            first,
            start,
            data: vec![0.0; len],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Largest distance of a stored entry from the diagonal.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).map(|i| i - self.first[i]).max().unwrap_or(0)
    }

    /// Number of stored entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        (j >= self.first[i]).then(|| self.start[i] + j - self.first[i])
    }

    /// Adds `v` at `(i, j)` of a full symmetric matrix given in original
    /// numbering. Callers add both `(i, j)` and `(j, i)`; only one lands.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = (self.perm[i], self.perm[j]);
        if a >= b {
            let s = self.slot(a, b).expect("entry outside the declared sparsity");
            self.data[s] += v;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.perm[i], self.perm[j]);
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        self.slot(a, b).map_or(0.0, |s| self.data[s])
    }

    /// Replaces row and column `i` with the identity.
    pub fn constrain(&mut self, i: usize) {
        let a = self.perm[i];
        for s in self.start[a]..self.start[a + 1] {
            self.data[s] = 0.0;
        }
        for c in a + 1..self.n {
            if let Some(s) = self.slot(c, a) {
                self.data[s] = 0.0;
            }
        }
        let s = self.start[a + 1] - 1;
        self.data[s] = 1.0;
    }

    /// `y = A x` in original numbering.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut xp = vec![0.0; self.n];
        for (old, &new) in self.perm.iter().enumerate() {
            xp[new] = x[old];
        }
        let mut yp = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[self.start[i]..self.start[i + 1]];
            for (off, &v) in row.iter().enumerate() {
                let j = self.first[i] + off;
                yp[i] += v * xp[j];
                if i != j {
                    yp[j] += v * xp[i];
                }
            }
        }
        self.perm.iter().map(|&new| yp[new]).collect()
    }

    /// In-place `L D L^T` factorization.
    pub fn factor(mut self) -> Result<Factored, SolveError> {
        let n = self.n;
        let scale = (0..n).map(|i| self.data[self.start[i + 1] - 1].abs()).fold(0.0, f64::max);
        let tiny = 1e-13 * scale.max(f64::MIN_POSITIVE);
        let mut d = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let (before, rest) = self.data.split_at_mut(self.start[i]);
            let row = &mut rest[..i - fi + 1];
            // row i of L D, computed column by column in place
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let rj = &before[self.start[j] + k0 - fj..self.start[j] + j - fj];
                let ri = &row[k0 - fi..j - fi];
                row[j - fi] -= dot(ri, rj);
            }
            let mut dii = row[i - fi];
            for j in fi..i {
                let t = row[j - fi];
                let lij = t / d[j];
                dii -= lij * t;
                row[j - fi] = lij;
            }
            if !(dii.abs() > tiny) || !dii.is_finite() {
                return Err(SolveError::SingularSystem { row: i, pivot: dii });
            }
            row[i - fi] = 1.0;
            d[i] = dii;
        }
        Ok(Factored { m: self, d })
    }
}

/// Factorized matrix, reusable for several right-hand sides.
#[derive(Debug, Clone)]
pub struct Factored {
    m: BandMatrix,
    d: Vec<f64>,
}

impl Factored {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let mut y = vec![0.0; n];
        for (old, &new) in m.perm.iter().enumerate() {
            y[new] = b[old];
        }
        for i in 0..n {
            let fi = m.first[i];
            let row = &m.data[m.start[i]..m.start[i + 1] - 1];
            y[i] -= dot(row, &y[fi..i]);
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = m.first[i];
            let yi = y[i];
            let row = &m.data[m.start[i]..m.start[i + 1] - 1];
            for (l, x) in row.iter().zip(&mut y[fi..i]) {
                *x -= l * yi;
            }
        }
        m.perm.iter().map(|&new| y[new]).collect()
    }

    /// Number of negative pivots (inertia of the matrix).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&x| x < 0.0).count()
    }
}
