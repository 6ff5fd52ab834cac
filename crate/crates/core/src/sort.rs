//! Parallel merge sort, and the entropy sort that folds equal items into
//! bundles while merging.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::batch::Batch;
use crate::cost::{ceil_log2, Cost, GRAIN};

enum Node<T> {
    Leaf(T),
    Pair {
        left: Arc<Node<T>>,
        right: Arc<Node<T>>,
        size: usize,
        height: usize,
    },
}

impl<T> Node<T> {
    fn size(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Pair { size, .. } => *size,
        }
    }

    fn height(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Pair { height, .. } => *height,
        }
    }
}

/// A binary tree whose leaves are equal items, in their original order.
pub struct Bundle<T> {
    root: Arc<Node<T>>,
    first: Arc<Node<T>>,
    last: Arc<Node<T>>,
}

impl<T> Clone for Bundle<T> {
    fn clone(&self) -> Self {
        Bundle {
            root: Arc::clone(&self.root),
            first: Arc::clone(&self.first),
            last: Arc::clone(&self.last),
        }
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Bundle<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.leaves()).finish()
    }
}

fn leaf_of<T>(n: &Arc<Node<T>>) -> &T {
    match &**n {
        Node::Leaf(x) => x,
        Node::Pair { .. } => unreachable!("bundle end pointers always name leaves"),
    }
}

impl<T> Bundle<T> {
    pub fn singleton(item: T) -> Self {
        let leaf = Arc::new(Node::Leaf(item));
        Bundle {
            root: Arc::clone(&leaf),
            first: Arc::clone(&leaf),
            last: leaf,
        }
    }

    /// New root over `a` and `b`; all of `a`'s leaves precede `b`'s.
    pub fn combine(a: Bundle<T>, b: Bundle<T>) -> Self {
        let size = a.size() + b.size();
        let height = a.height().max(b.height()) + 1;
        Bundle {
            root: Arc::new(Node::Pair {
                left: a.root,
                right: b.root,
                size,
                height,
            }),
            first: a.first,
            last: b.last,
        }
    }

    /// The shared item, represented by the first leaf.
    pub fn item(&self) -> &T {
        leaf_of(&self.first)
    }

    pub fn last(&self) -> &T {
        leaf_of(&self.last)
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn height(&self) -> usize {
        self.root.height()
    }

    pub fn leaves(&self) -> Leaves<'_, T> {
        Leaves {
            stack: vec![&*self.root],
        }
    }
}

pub struct Leaves<'a, T> {
    stack: Vec<&'a Node<T>>,
}

impl<'a, T> Iterator for Leaves<'a, T> {
    type Item = &'a T;

    fn next(&mut self) -> Option<&'a T> {
        while let Some(n) = self.stack.pop() {
            match n {
                Node::Leaf(x) => return Some(x),
                Node::Pair { left, right, .. } => {
                    self.stack.push(right);
                    self.stack.push(left);
                }
            }
        }
        None
    }
}

fn collect_leaves<T: Clone + Send + Sync>(n: &Node<T>, out: &mut [Option<T>], cost: &mut Cost) {
    cost.step(1);
    match n {
        Node::Leaf(x) => out[0] = Some(x.clone()),
        Node::Pair { left, right, size, .. } => {
            let (lo, hi) = out.split_at_mut(left.size());
            cost.join(
                *size >= GRAIN,
                |c| collect_leaves(left, lo, c),
                |c| collect_leaves(right, hi, c),
            );
        }
    }
}

/// Flattens a bundle into a batch of its leaves in order. Work is linear in
/// the size and the span is linear in the height.
///
/// Bundles are never empty, so there is no empty-input case to reject.
pub fn bundle_balance<T: Clone + Send + Sync>(g: &Bundle<T>, cost: &mut Cost) -> Batch<T> {
    let mut out: Vec<Option<T>> = vec![None; g.size()];
    collect_leaves(&g.root, &mut out, cost);
    out.into_iter().map(|x| x.expect("every slot filled")).collect()
}

/// Stable parallel merge sort.
pub fn pmsort<T, F>(b: &Batch<T>, cmp: &F, cost: &mut Cost) -> Batch<T>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> Ordering + Sync,
{
    if b.len() <= 1 {
        return b.clone();
    }
    let (l, r) = b.split(b.len() / 2, cost).expect("midpoint is in range");
    let (l, r) = cost.join(b.len() >= GRAIN, |c| pmsort(&l, cmp, c), |c| pmsort(&r, cmp, c));
    Batch::merge(&l, &r, cmp, cost)
}

/// Counters from one entropy sort.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SortStats {
    pub comparisons: u64,
    /// Σ qᵢ·log₂(n/qᵢ) over the multiplicities qᵢ of the distinct items.
    pub entropy_budget: f64,
}

impl SortStats {
    pub fn entropy_of<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
        let counts: Vec<usize> = counts.into_iter().collect();
        let n: usize = counts.iter().sum();
        counts
            .iter()
            .filter(|&&q| q > 0)
            .map(|&q| q as f64 * (n as f64 / q as f64).log2())
            .sum()
    }
}

/// Sorts and folds equal items (under `cmp`) into bundles, one per distinct
/// item, keeping the original input order among the leaves of each bundle.
pub fn pesort<T, F>(b: &Batch<T>, cmp: &F, cost: &mut Cost) -> Batch<Bundle<T>>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> Ordering + Sync,
{
    if b.len() <= 1 {
        cost.step(1);
        return b.iter().cloned().map(Bundle::singleton).collect();
    }
    let (l, r) = b.split(b.len() / 2, cost).expect("midpoint is in range");
    let (l, r) = cost.join(b.len() >= GRAIN, |c| pesort(&l, cmp, c), |c| pesort(&r, cmp, c));
    Batch::merge_with(
        &l,
        &r,
        |x: &Bundle<T>, y: &Bundle<T>| cmp(x.item(), y.item()),
        Bundle::combine,
        cost,
    )
}

/// [`pesort`] plus its comparison count and the entropy of its output.
pub fn pesort_with_stats<T, F>(b: &Batch<T>, cmp: &F) -> (Batch<Bundle<T>>, SortStats, Cost)
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> Ordering + Sync,
{
    let counter = std::sync::atomic::AtomicU64::new(0);
    let counting = |x: &T, y: &T| {
        counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        cmp(x, y)
    };
    let mut cost = Cost::ZERO;
    let out = pesort(b, &counting, &mut cost);
    let stats = SortStats {
        comparisons: counter.into_inner(),
        entropy_budget: SortStats::entropy_of(out.iter().map(|g| g.size())),
    };
    (out, stats, cost)
}

/// Number of nodes with a marked leaf below them, in the balanced tree whose
/// root covers leaves `0..n` and every node splits its range at the middle
/// (the tree shape of a recursively halved batch). `marked` must be sorted.
pub fn marked_node_count(n: usize, marked: &[usize]) -> usize {
    fn go(lo: usize, hi: usize, marked: &[usize]) -> usize {
        if marked.is_empty() {
            return 0;
        }
        if hi - lo == 1 {
            return 1;
        }
        let mid = lo + (hi - lo) / 2;
        let cut = marked.partition_point(|&m| m < mid);
        1 + go(lo, mid, &marked[..cut]) + go(mid, hi, &marked[cut..])
    }
    if n == 0 {
        return 0;
    }
    debug_assert!(marked.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(marked.last().map_or(true, |&m| m < n));
    go(0, n, marked)
}

/// Height of the bundle trees `pesort` can build for `n` inputs.
pub fn input_tree_height(n: usize) -> usize {
    ceil_log2(n) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(a: &i64, b: &i64) -> Ordering {
        a.cmp(b)
    }

    #[test]
    fn pmsort_small() {
        let mut c = Cost::ZERO;
        assert_eq!(pmsort(&Batch::from(vec![3i64, 1, 2]), &cmp, &mut c).to_vec(), vec![1, 2, 3]);
        assert!(pmsort(&Batch::<i64>::empty(), &cmp, &mut c).is_empty());
    }

    #[test]
    fn pesort_all_equal_is_one_bundle() {
        let input: Batch<(i64, u32)> = vec![(5, 0), (5, 1), (5, 2)].into();
        let by_key = |a: &(i64, u32), b: &(i64, u32)| a.0.cmp(&b.0);
        let (out, stats, _) = pesort_with_stats(&input, &by_key);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].size(), 3);
        assert_eq!(stats.entropy_budget, 0.0);
        let order: Vec<u32> = out[0].leaves().map(|x| x.1).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(stats.comparisons <= 3);
    }

    #[test]
    fn pesort_distinct_gives_singletons() {
        let (out, _, _) = pesort_with_stats(&Batch::from(vec![2i64, 3, 1]), &cmp);
        let items: Vec<i64> = out.iter().map(|g| *g.item()).collect();
        assert_eq!(items, vec![1, 2, 3]);
        assert!(out.iter().all(|g| g.size() == 1));
    }

    #[test]
    fn bundle_balance_keeps_leaf_order() {
        let mut c = Cost::ZERO;
        let one = Bundle::singleton(9i64);
        assert_eq!(bundle_balance(&one, &mut c).to_vec(), vec![9]);

        let leaves: Vec<Bundle<u32>> = (0..7).map(Bundle::singleton).collect();
        let mut it = leaves.into_iter();
        let left = Bundle::combine(
            Bundle::combine(it.next().unwrap(), it.next().unwrap()),
            Bundle::combine(it.next().unwrap(), it.next().unwrap()),
        );
        let right = Bundle::combine(
            Bundle::combine(it.next().unwrap(), it.next().unwrap()),
            it.next().unwrap(),
        );
        let g = Bundle::combine(left, right);
        assert_eq!(g.height(), 3);
        let mut c = Cost::ZERO;
        assert_eq!(bundle_balance(&g, &mut c).to_vec(), (0..7).collect::<Vec<u32>>());
        assert_eq!(c.work, 13);
        assert_eq!(c.span, 4);
        assert_eq!(*g.item(), 0);
        assert_eq!(*g.last(), 6);
    }

    #[test]
    fn marked_nodes_small_cases() {
        assert_eq!(marked_node_count(8, &[]), 0);
        // One leaf marks its root-to-leaf path.
        assert_eq!(marked_node_count(8, &[3]), 4);
        // All leaves mark the whole tree.
        assert_eq!(marked_node_count(8, &(0..8).collect::<Vec<_>>()), 15);
        assert_eq!(marked_node_count(1, &[0]), 1);
    }
}
