//! Static 3D kd-tree for k-nearest-neighbour queries.

use alloc::vec::Vec;

use crate::math::Vec3;

pub(crate) struct KdTree<'a> {
    points: &'a [Vec3],
    /// Point indices permuted so every subtree is a contiguous range with its
    /// median at the midpoint.
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub(crate) fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        split(points, &mut order, 0);
        Self { points, order }
    }

    /// The `k` nearest points to `q` as `(squared distance, index)`, nearest
    /// first, ties broken by index. `skip` excludes one index (the query
    /// point itself).
    pub(crate) fn nearest(
        &self,
        q: Vec3,
        k: usize,
        skip: Option<usize>,
        out: &mut Vec<(f64, usize)>,
    ) {
        out.clear();
        if k > 0 {
            self.search(q, k, skip, 0, self.order.len(), 0, out);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        q: Vec3,
        k: usize,
        skip: Option<usize>,
        lo: usize,
        hi: usize,
        depth: usize,
        out: &mut Vec<(f64, usize)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        if Some(idx) != skip {
            offer(out, k, ((p - q).norm_squared(), idx));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, skip, near.0, near.1, depth + 1, out);
        if out.len() < k || diff * diff <= out[out.len() - 1].0 {
            self.search(q, k, skip, far.0, far.1, depth + 1, out);
        }
    }
}

fn offer(out: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    let less = |a: &(f64, usize), b: &(f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if out.len() == k && !less(&cand, &out[k - 1]) {
        return;
    }
    let pos = out.iter().position(|e| less(&cand, e)).unwrap_or(out.len());
    out.insert(pos, cand);
    out.truncate(k);
}

fn split(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    split(points, left, depth + 1);
    split(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen::<f64>() * 0.1))
            .collect();
        let tree = KdTree::build(&pts);
        let mut got = Vec::new();
        for (i, &q) in pts.iter().enumerate().step_by(7) {
            tree.nearest(q, 5, Some(i), &mut got);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &p)| ((p - q).norm_squared(), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(got, all[..5].to_vec());
        }
    }
}
