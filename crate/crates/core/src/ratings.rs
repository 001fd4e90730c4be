//! Sparse rating matrices, the malicious rating block and the feasible attack set.
//!
//! Both [`SparseRatings`] (normal users) and [`MaliciousMatrix`] (fake users)
//! keep their entries sorted by `(user, item)` together with a per-item index,
//! so row scans and column scans are both cheap.

use alloc::vec::Vec;
use alloc::{format, vec};
use core::ops::Deref;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One observed rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// A partially observed `num_users x num_items` rating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    num_users: usize,
    num_items: usize,
    entries: Vec<Rating>,
    row_ptr: Vec<usize>,
    col_index: Vec<Vec<usize>>,
}

impl SparseRatings {
    /// Builds a rating matrix from `(user, item, rating)` triples in any order.
    pub fn new<I>(num_users: usize, num_items: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<Rating> = triples
            .into_iter()
            .map(|(user, item, value)| Rating { user, item, value })
            .collect();
        for r in &entries {
            if r.user >= num_users || r.item >= num_items {
                return Err(Error::IndexOutOfRange {
                    user: r.user,
                    item: r.item,
                });
            }
            if !r.value.is_finite() {
                return Err(Error::NonFinite("rating"));
            }
        }
        entries.sort_by(|a, b| (a.user, a.item).cmp(&(b.user, b.item)));
        for w in entries.windows(2) {
            if w[0].user == w[1].user && w[0].item == w[1].item {
                return Err(Error::DuplicateEntry {
                    user: w[0].user,
                    item: w[0].item,
                });
            }
        }
        Ok(Self::from_sorted(num_users, num_items, entries))
    }

    /// A matrix with no observed entries.
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self::from_sorted(num_users, num_items, Vec::new())
    }

    fn from_sorted(num_users: usize, num_items: usize, entries: Vec<Rating>) -> Self {
        let mut row_ptr = vec![0usize; num_users + 1];
        for r in &entries {
            row_ptr[r.user + 1] += 1;
        }
        for i in 0..num_users {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_index = vec![Vec::new(); num_items];
        for (pos, r) in entries.iter().enumerate() {
            col_index[r.item].push(pos);
        }
        Self {
            num_users,
            num_items,
            entries,
            row_ptr,
            col_index,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of observed entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries, sorted by `(user, item)`.
    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    /// Ratings of one user, sorted by item.
    pub fn row(&self, user: usize) -> &[Rating] {
        &self.entries[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    /// Offset of the first entry of `user` in [`entries`](Self::entries).
    pub fn row_offset(&self, user: usize) -> usize {
        self.row_ptr[user]
    }

    /// Items rated by `user` (the row index set).
    pub fn rated_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(user).iter().map(|r| r.item)
    }

    /// Positions in [`entries`](Self::entries) of the ratings for `item`, ordered by user.
    pub fn col_positions(&self, item: usize) -> &[usize] {
        &self.col_index[item]
    }

    /// Ratings given to `item`, ordered by user.
    pub fn col(&self, item: usize) -> impl Iterator<Item = &Rating> + '_ {
        self.col_index[item].iter().map(move |&p| &self.entries[p])
    }

    /// Users who rated `item` (the column index set).
    pub fn raters(&self, item: usize) -> impl Iterator<Item = usize> + '_ {
        self.col(item).map(|r| r.user)
    }

    /// Position of `(user, item)` in [`entries`](Self::entries), if observed.
    pub fn position(&self, user: usize, item: usize) -> Option<usize> {
        if user >= self.num_users {
            return None;
        }
        let row = self.row(user);
        row.binary_search_by(|r| r.item.cmp(&item))
            .ok()
            .map(|k| self.row_ptr[user] + k)
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        self.position(user, item).map(|p| self.entries[p].value)
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.position(user, item).is_some()
    }

    /// Rating values in entry order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|r| r.value)
    }

    /// Same support with new values, given in entry order.
    pub fn with_values<I>(&self, values: I) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
    {
        let mut out = self.clone();
        let mut n = 0;
        for (r, v) in out.entries.iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::NonFinite("rating"));
            }
            r.value = v;
            n += 1;
        }
        if n != self.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {n}",
                self.entries.len()
            )));
        }
        Ok(out)
    }

    /// Same support with every value passed through `f`.
    pub fn map_values(&self, mut f: impl FnMut(&Rating) -> f64) -> Self {
        let mut out = self.clone();
        for r in out.entries.iter_mut() {
            r.value = f(r);
        }
        out
    }

    /// Keeps the entries for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Rating) -> bool) -> Self {
        let entries = self.entries.iter().copied().filter(|r| keep(r)).collect();
        Self::from_sorted(self.num_users, self.num_items, entries)
    }

    /// Dense copy with unobserved entries set to zero.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.num_users, self.num_items);
        for r in &self.entries {
            d[(r.user, r.item)] = r.value;
        }
        d
    }

    /// Mask of observed entries.
    pub fn observed_mask(&self) -> Mask {
        let mut mask = Mask::new(self.num_users, self.num_items, false);
        for r in &self.entries {
            mask.set(r.user, r.item, true);
        }
        mask
    }
}

/// Boolean `rows x cols` mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            bits: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.cols + col] = value;
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// `(row, col)` pairs that are set, row-major.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(k, _)| (k / cols, k % cols))
    }
}

/// Attacker capabilities: how many fake users, how many items each, and how extreme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget {
    /// Fraction of fake users relative to the normal population.
    pub alpha: f64,
    /// Maximum number of items each fake user may rate (`B`).
    pub max_items: usize,
    /// Rating magnitude bound (`Λ`).
    pub bound: f64,
}

impl AttackBudget {
    pub fn new(alpha: f64, max_items: usize, bound: f64, num_items: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidBudget(format!("alpha must be positive, got {alpha}")));
        }
        if max_items == 0 || max_items > num_items {
            return Err(Error::InvalidBudget(format!(
                "items per fake user must be in 1..={num_items}, got {max_items}"
            )));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidBudget(format!("rating bound must be positive, got {bound}")));
        }
        Ok(Self {
            alpha,
            max_items,
            bound,
        })
    }

    /// `floor(alpha * num_users)`, at least one.
    pub fn num_malicious(&self, num_users: usize) -> usize {
        let m = libm::floor(self.alpha * num_users as f64) as usize;
        m.max(1)
    }
}

/// Ratings reported by the fake users.
#[derive(Debug, Clone, PartialEq)]
pub struct MaliciousMatrix(SparseRatings);

impl MaliciousMatrix {
    pub fn new<I>(num_malicious: usize, num_items: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        SparseRatings::new(num_malicious, num_items, triples).map(Self)
    }

    /// No fake users at all.
    pub fn empty(num_items: usize) -> Self {
        Self(SparseRatings::empty(0, num_items))
    }

    /// Every entry of `dense` becomes a rated entry (full support).
    pub fn from_dense(dense: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = dense.shape();
        let triples = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j, dense[(i, j)])));
        Self::new(rows, cols, triples)
    }

    pub fn num_malicious(&self) -> usize {
        self.0.num_users()
    }

    pub fn as_ratings(&self) -> &SparseRatings {
        &self.0
    }

    pub fn with_values<I>(&self, values: I) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
    {
        self.0.with_values(values).map(Self)
    }

    pub fn map_values(&self, f: impl FnMut(&Rating) -> f64) -> Self {
        Self(self.0.map_values(f))
    }

    /// Frobenius distance between two matrices with identical support.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        let s: f64 = self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(s)
    }
}

impl Deref for MaliciousMatrix {
    type Target = SparseRatings;

    fn deref(&self) -> &SparseRatings {
        &self.0
    }
}

impl From<SparseRatings> for MaliciousMatrix {
    fn from(r: SparseRatings) -> Self {
        Self(r)
    }
}

/// True iff every fake user rates at most `B` items and every rating is within `±Λ`.
pub fn check_feasible(mm: &MaliciousMatrix, budget: &AttackBudget) -> bool {
    let rows_ok = (0..mm.num_malicious()).all(|i| mm.row(i).len() <= budget.max_items);
    rows_ok && mm.values().all(|v| libm::fabs(v) <= budget.bound)
}

/// Clamps every rating into `[-bound, bound]`; the support is unchanged.
pub fn truncate_ratings(mm: &MaliciousMatrix, bound: f64) -> MaliciousMatrix {
    mm.map_values(|r| r.value.clamp(-bound, bound))
}

/// Keeps, per fake user, the `max_items` ratings of largest magnitude.
///
/// Rows whose support already fits are left alone. Otherwise only non-zero
/// ratings compete, and ties go to the lower item index.
pub fn select_top_b(mm: &MaliciousMatrix, max_items: usize) -> MaliciousMatrix {
    let mut kept = Vec::new();
    for i in 0..mm.num_malicious() {
        let row = mm.row(i);
        if row.len() <= max_items {
            kept.extend_from_slice(row);
            continue;
        }
        let mut cands: Vec<Rating> = row.iter().copied().filter(|r| r.value != 0.0).collect();
        cands.sort_by(|a, b| {
            libm::fabs(b.value)
                .total_cmp(&libm::fabs(a.value))
                .then(a.item.cmp(&b.item))
        });
        cands.truncate(max_items);
        cands.sort_by_key(|r| r.item);
        kept.extend(cands);
    }
    MaliciousMatrix(SparseRatings::from_sorted(
        mm.num_malicious(),
        mm.num_items(),
        kept,
    ))
}

/// Random initial attack: each fake user rates exactly `max_items` distinct
/// items drawn uniformly without replacement, with ratings uniform in `[-bound, bound]`.
pub fn sample_support(
    num_malicious: usize,
    num_items: usize,
    max_items: usize,
    bound: f64,
    seed: u64,
) -> Result<MaliciousMatrix> {
    if max_items > num_items {
        return Err(Error::InvalidBudget(format!(
            "cannot rate {max_items} distinct items out of {num_items}"
        )));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidBudget(format!("rating bound must be positive, got {bound}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(num_malicious * max_items);
    for user in 0..num_malicious {
        let mut items = index::sample(&mut rng, num_items, max_items).into_vec();
        items.sort_unstable();
        for item in items {
            let value = rng.random_range(-bound..=bound);
            entries.push(Rating { user, item, value });
        }
    }
    Ok(MaliciousMatrix(SparseRatings::from_sorted(
        num_malicious,
        num_items,
        entries,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(items: &[(usize, f64)], n: usize) -> MaliciousMatrix {
        MaliciousMatrix::new(1, n, items.iter().map(|&(j, v)| (0, j, v))).unwrap()
    }

    #[test]
    fn feasibility_bounds() {
        let b = AttackBudget::new(0.1, 2, 2.0, 5).unwrap();
        assert!(check_feasible(&row(&[(0, 1.0), (3, -1.0)], 5), &b));
        assert!(!check_feasible(&row(&[(0, 3.0)], 5), &b));
        assert!(!check_feasible(&row(&[(0, 1.0), (1, 1.0), (2, 1.0)], 5), &b));
    }

    #[test]
    fn truncation_clamps() {
        let mm = row(&[(0, 3.0), (1, -5.0), (2, 1.5)], 3);
        let t = truncate_ratings(&mm, 2.0);
        assert_eq!(t.values().collect::<Vec<_>>(), vec![2.0, -2.0, 1.5]);
    }

    #[test]
    fn top_b_by_magnitude() {
        let mm = row(&[(0, 2.0), (1, -1.0), (2, 0.5)], 3);
        let t = select_top_b(&mm, 2);
        assert_eq!(t.rated_items(0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(select_top_b(&mm, 3), mm);
    }

    #[test]
    fn top_b_tie_prefers_lower_item() {
        let mm = row(&[(3, 1.0), (7, 1.0)], 10);
        let t = select_top_b(&mm, 1);
        assert_eq!(t.rated_items(0).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn top_b_skips_zeros() {
        let mm = row(&[(0, 0.0), (1, 0.0), (2, 0.5)], 3);
        let t = select_top_b(&mm, 2);
        assert_eq!(t.rated_items(0).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn support_exhaustive_and_seeded() {
        let a = sample_support(3, 6, 6, 2.0, 11).unwrap();
        for i in 0..3 {
            assert_eq!(a.rated_items(i).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        }
        assert_eq!(a, sample_support(3, 6, 6, 2.0, 11).unwrap());
        assert!(a.values().all(|v| (-2.0..=2.0).contains(&v)));
        assert!(matches!(
            sample_support(1, 3, 4, 2.0, 0),
            Err(Error::InvalidBudget(_))
        ));
    }

    #[test]
    fn support_is_uniform() {
        // n = 10, B = 1, 10^4 rows: each count ~ Binomial(10^4, 0.1).
        let mm = sample_support(10_000, 10, 1, 1.0, 0).unwrap();
        let mut counts = [0usize; 10];
        for r in mm.entries() {
            counts[r.item] += 1;
        }
        let expected = 1000.0;
        let sd = libm::sqrt(10_000.0 * 0.1 * 0.9);
        for c in counts {
            assert!(libm::fabs(c as f64 - expected) <= 3.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SparseRatings::new(2, 2, [(0, 0, 1.0), (0, 0, 2.0)]),
            Err(Error::DuplicateEntry { .. })
        ));
        assert!(matches!(
            SparseRatings::new(2, 2, [(2, 0, 1.0)]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(SparseRatings::new(2, 2, [(0, 1, f64::NAN)]).is_err());
        assert!(AttackBudget::new(0.0, 1, 1.0, 3).is_err());
        assert!(AttackBudget::new(0.1, 4, 1.0, 3).is_err());
        assert!(AttackBudget::new(0.1, 1, 0.0, 3).is_err());
    }

    #[test]
    fn malicious_count_rounds_down_with_floor_of_one() {
        let b = AttackBudget::new(0.03, 1, 1.0, 1).unwrap();
        assert_eq!(b.num_malicious(200), 6);
        assert_eq!(b.num_malicious(10), 1);
        let b = AttackBudget::new(0.005, 1, 1.0, 1).unwrap();
        assert_eq!(b.num_malicious(999), 4);
    }

    fn triples() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
        (1usize..8, 1usize..8).prop_flat_map(|(m, n)| {
            let cells = proptest::sample::subsequence(
                (0..m * n).collect::<Vec<_>>(),
                0..=m * n,
            );
            (Just(m), Just(n), cells, proptest::collection::vec(-5.0f64..5.0, m * n))
                .prop_map(|(m, n, cells, vals)| {
                    let t = cells.into_iter().map(|c| (c / n, c % n, vals[c])).collect();
                    (m, n, t)
                })
        })
    }

    fn indexes_consistent(r: &SparseRatings) -> bool {
        let rebuilt = SparseRatings::new(
            r.num_users(),
            r.num_items(),
            r.entries().iter().map(|e| (e.user, e.item, e.value)),
        )
        .unwrap();
        let rows_ok = (0..r.num_users()).all(|i| r.row(i).iter().all(|e| e.user == i));
        let cols_ok = (0..r.num_items()).all(|j| {
            r.col(j).all(|e| e.item == j)
                && r.raters(j).eq(rebuilt.raters(j))
        });
        let count: usize = (0..r.num_items()).map(|j| r.col_positions(j).len()).sum();
        rows_ok && cols_ok && count == r.len() && rebuilt == *r
    }

    proptest! {
        #[test]
        fn truncate_is_idempotent((m, n, t) in triples(), bound in 0.1f64..4.0) {
            let mm = MaliciousMatrix::new(m, n, t).unwrap();
            let once = truncate_ratings(&mm, bound);
            prop_assert_eq!(truncate_ratings(&once, bound), once.clone());
            prop_assert!(indexes_consistent(&once));
        }

        #[test]
        fn projection_is_feasible((m, n, t) in triples(), b in 1usize..8, bound in 0.1f64..4.0) {
            let b = b.min(n);
            let mm = MaliciousMatrix::new(m, n, t).unwrap();
            let proj = truncate_ratings(&select_top_b(&mm, b), bound);
            let budget = AttackBudget::new(0.5, b, bound, n).unwrap();
            prop_assert!(check_feasible(&proj, &budget));
            prop_assert!(indexes_consistent(&proj));
        }

        #[test]
        fn index_consistency_after_mutation((m, n, t) in triples()) {
            let r = SparseRatings::new(m, n, t.clone()).unwrap();
            prop_assert!(indexes_consistent(&r));
            let mut rev = t;
            rev.reverse();
            prop_assert_eq!(SparseRatings::new(m, n, rev).unwrap(), r.clone());
            let f = r.filter(|e| e.value > 0.0);
            prop_assert!(indexes_consistent(&f));
            for e in r.entries() {
                prop_assert_eq!(r.get(e.user, e.item), Some(e.value));
            }
        }
    }
}
