//! Two-pass connected-component labeling with union-find.

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn push(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.size.push(1);
        id
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
    }
}

/// Label 4-connected regions of equal nonzero value.
///
/// Returns per-pixel component labels (0 for background, 1..=n otherwise,
/// numbered in row-major order of each component's first pixel) and `n`.
pub fn connected_components(ids: &[u16], width: usize, height: usize) -> (Vec<u32>, usize) {
    assert_eq!(ids.len(), width * height);
    let mut provisional = vec![u32::MAX; ids.len()];
    let mut uf = UnionFind::new(0);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let v = ids[i];
            if v == 0 {
                continue;
            }
            let left = (x > 0 && ids[i - 1] == v).then(|| provisional[i - 1]);
            let up = (y > 0 && ids[i - width] == v).then(|| provisional[i - width]);
            provisional[i] = match (left, up) {
                (Some(l), Some(u)) => {
                    uf.union(l, u);
                    l
                }
                (Some(l), None) => l,
                (None, Some(u)) => u,
                (None, None) => uf.push(),
            };
        }
    }
    let mut relabel = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; ids.len()];
    for (o, &p) in out.iter_mut().zip(&provisional) {
        if p == u32::MAX {
            continue;
        }
        let root = uf.find(p) as usize;
        if relabel[root] == 0 {
            next += 1;
            relabel[root] = next;
        }
        *o = relabel[root];
    }
    (out, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Breadth-first flood fill, numbering components in scan order.
    fn flood(ids: &[u16], w: usize, h: usize) -> (Vec<u32>, usize) {
        let mut out = vec![0u32; ids.len()];
        let mut n = 0;
        for start in 0..ids.len() {
            if ids[start] == 0 || out[start] != 0 {
                continue;
            }
            n += 1;
            let mut queue = std::collections::VecDeque::from([start]);
            out[start] = n;
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % w, i / w);
                let mut nb = Vec::new();
                if x > 0 {
                    nb.push(i - 1);
                }
                if x + 1 < w {
                    nb.push(i + 1);
                }
                if y > 0 {
                    nb.push(i - w);
                }
                if y + 1 < h {
                    nb.push(i + w);
                }
                for j in nb {
                    if out[j] == 0 && ids[j] == ids[i] {
                        out[j] = n;
                        queue.push_back(j);
                    }
                }
            }
        }
        (out, n as usize)
    }

    #[test]
    fn diagonal_pixels_stay_apart() {
        let ids = [1, 0, 0, 1];
        let (labels, n) = connected_components(&ids, 2, 2);
        assert_eq!(n, 2);
        assert_eq!(labels, vec![1, 0, 0, 2]);
    }

    #[test]
    fn u_shape_merges() {
        #[rustfmt::skip]
        let ids = [
            1, 0, 1,
            1, 0, 1,
            1, 1, 1,
        ];
        let (labels, n) = connected_components(&ids, 3, 3);
        assert_eq!(n, 1);
        assert!(labels.iter().zip(&ids).all(|(l, &v)| (*l == 1) == (v == 1)));
    }

    proptest! {
        #[test]
        fn matches_flood_fill((w, h, ids) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (
            Just(w), Just(h), prop::collection::vec(0u16..3, w * h)
        ))) {
            prop_assert_eq!(connected_components(&ids, w, h), flood(&ids, w, h));
        }
    }
}
