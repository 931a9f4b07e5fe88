//! Shapley-value attribution over groups of encoded dimensions.
//!
//! Players are disjoint dimension groups. A coalition keeps the instance's
//! values on its members and splices in background rows everywhere else; the
//! coalition's value is the payoff averaged over the background set. Exact
//! attribution enumerates all coalitions; the sampled path solves the
//! kernel-weighted regression with the efficiency constraint eliminated.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::EncodingMap;

/// Enumeration beyond this many players is refused outright.
pub const MAX_EXACT_PLAYERS: usize = 20;
/// Coalition masks are `u128`, so the sampled path carries at most this many
/// players.
pub const MAX_PLAYERS: usize = 127;
/// Tikhonov damping added to the regression normal equations.
const DAMPING: f64 = 1e-10;

/// Disjoint groups of encoded dimensions acting as the game's players.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerGrouping {
    players: Vec<Vec<usize>>,
}

impl PlayerGrouping {
    pub fn new(players: Vec<Vec<usize>>) -> Result<Self> {
        if players.is_empty() {
            return Err(Error::Shapley("no players".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut sorted = Vec::with_capacity(players.len());
        for (j, mut dims) in players.into_iter().enumerate() {
            if dims.is_empty() {
                return Err(Error::Shapley(format!("player {j} owns no dimensions")));
            }
            dims.sort_unstable();
            for &d in &dims {
                if !seen.insert(d) {
                    return Err(Error::Shapley(format!(
                        "dimension {d} assigned to more than one player"
                    )));
                }
            }
            sorted.push(dims);
        }
        Ok(Self { players: sorted })
    }

    /// One player per attribute, owning that attribute's dimension slice.
    pub fn from_attribute_slices(map: &EncodingMap) -> Self {
        let players = map.slices().iter().map(|s| s.range().collect()).collect();
        Self { players }
    }

    /// One single-dimension player per listed dimension.
    pub fn singletons(dims: &[usize]) -> Result<Self> {
        Self::new(dims.iter().map(|&d| vec![d]).collect())
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn players(&self) -> &[Vec<usize>] {
        &self.players
    }

    fn max_dim(&self) -> usize {
        self.players.iter().flat_map(|p| p.iter()).copied().max().unwrap_or(0)
    }
}

/// Reference rows that stand in for the switched-off players.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Array2<f64>,
    /// Seed the rows were sampled with, if they were sampled.
    pub seed: Option<u64>,
}

impl BackgroundSet {
    pub fn from_rows(rows: Array2<f64>, seed: Option<u64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Shapley("background set is empty".into()));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shapley("background set holds non-finite values".into()));
        }
        Ok(Self { rows, seed })
    }

    /// Samples `eta` of the candidate rows without replacement.
    pub fn sample(
        data: ArrayView2<'_, f64>,
        candidates: &[usize],
        eta: usize,
        seed: u64,
    ) -> Result<Self> {
        if eta == 0 {
            return Err(Error::Shapley("eta must be positive".into()));
        }
        if eta > candidates.len() {
            return Err(Error::Shapley(format!(
                "eta {eta} exceeds the {} candidate rows",
                candidates.len()
            )));
        }
        if let Some(&bad) = candidates.iter().find(|&&i| i >= data.nrows()) {
            return Err(Error::Shapley(format!("candidate row {bad} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), eta)
            .iter()
            .map(|p| candidates[p])
            .collect();
        picked.sort_unstable();
        Ok(Self { rows: data.select(Axis(0), &picked), seed: Some(seed) })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }
}

/// Scalar function of a composite row; the game's payoff.
pub trait PayoffFn: Sync {
    fn evaluate_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64>;

    fn evaluate(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.evaluate_batch(row.insert_axis(Axis(0)))[0]
    }
}

/// Adapts a per-row closure into a payoff.
pub struct RowPayoff<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync>(pub F);

impl<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync> PayoffFn for RowPayoff<F> {
    fn evaluate_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        rows.outer_iter().map(|r| (self.0)(r)).collect()
    }
}

/// Attribution of one game: one value per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub players: Vec<Vec<usize>>,
    pub phi: Vec<f64>,
    /// Value of the empty coalition.
    pub base_value: f64,
    /// Payoff of the unmasked instance.
    pub explained_value: f64,
    /// `explained - base - sum(phi)`.
    #[serde(rename = "residual")]
    pub efficiency_residual: f64,
    /// Distinct coalitions whose value was evaluated.
    pub n_coalitions: usize,
    /// Sampling seed; absent for exact enumeration.
    pub seed: Option<u64>,
}

struct Game<'a> {
    instance: ArrayView1<'a, f64>,
    grouping: &'a PlayerGrouping,
    payoff: &'a dyn PayoffFn,
    background: &'a BackgroundSet,
}

impl<'a> Game<'a> {
    fn new(
        instance: ArrayView1<'a, f64>,
        grouping: &'a PlayerGrouping,
        payoff: &'a dyn PayoffFn,
        background: &'a BackgroundSet,
    ) -> Result<Self> {
        if grouping.len() > MAX_PLAYERS {
            return Err(Error::Shapley(format!(
                "{} players exceed the supported {MAX_PLAYERS}",
                grouping.len()
            )));
        }
        if instance.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shapley("instance holds non-finite values".into()));
        }
        if background.rows.ncols() != instance.len() {
            return Err(Error::Shapley(format!(
                "background rows have {} dims, instance has {}",
                background.rows.ncols(),
                instance.len()
            )));
        }
        if grouping.max_dim() >= instance.len() {
            return Err(Error::Shapley(format!(
                "player dimension {} outside the {}-dim instance",
                grouping.max_dim(),
                instance.len()
            )));
        }
        Ok(Self { instance, grouping, payoff, background })
    }

    fn full_mask(&self) -> u128 {
        if self.grouping.len() == 128 {
            u128::MAX
        } else {
            (1u128 << self.grouping.len()) - 1
        }
    }

    /// Values of the given coalitions, each averaged over the background
    /// set. The full coalition shortcuts to the plain instance payoff so it
    /// is exact rather than a mean of identical summands.
    fn coalition_values(&self, masks: &[u128]) -> Vec<f64> {
        let eta = self.background.len();
        let d = self.instance.len();
        let full = self.full_mask();
        let chunk_len = (4096 / eta).max(1);

        let chunks: Vec<Vec<f64>> = masks
            .par_chunks(chunk_len)
            .map(|chunk| {
                let mut composite = Array2::zeros((chunk.len() * eta, d));
                for (ci, &mask) in chunk.iter().enumerate() {
                    for b in 0..eta {
                        let mut row = composite.row_mut(ci * eta + b);
                        row.assign(&self.instance);
                        for (j, dims) in self.grouping.players.iter().enumerate() {
                            if mask & (1u128 << j) == 0 {
                                for &dim in dims {
                                    row[dim] = self.background.rows[[b, dim]];
                                }
                            }
                        }
                    }
                }
                let values = self.payoff.evaluate_batch(composite.view());
                chunk
                    .iter()
                    .enumerate()
                    .map(|(ci, &mask)| {
                        if mask == full {
                            self.payoff.evaluate(self.instance.view())
                        } else {
                            values[ci * eta..(ci + 1) * eta].iter().sum::<f64>() / eta as f64
                        }
                    })
                    .collect()
            })
            .collect();
        chunks.into_iter().flatten().collect()
    }
}

/// Value of one coalition given by the switched-on player indices.
pub fn masked_payoff(
    instance: ArrayView1<'_, f64>,
    on_players: &[usize],
    grouping: &PlayerGrouping,
    payoff: &dyn PayoffFn,
    background: &BackgroundSet,
) -> Result<f64> {
    let game = Game::new(instance, grouping, payoff, background)?;
    let mut mask = 0u128;
    for &j in on_players {
        if j >= grouping.len() {
            return Err(Error::Shapley(format!("player {j} out of range")));
        }
        if mask & (1u128 << j) != 0 {
            return Err(Error::Shapley(format!("player {j} listed twice")));
        }
        mask |= 1u128 << j;
    }
    Ok(game.coalition_values(&[mask])[0])
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 1..=k {
        out = out * (n - k + i) as f64 / i as f64;
    }
    out
}

/// Exact binomial count; saturates at `u128::MAX` instead of overflowing.
fn binomial_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 1..=k {
        // the running product is itself a binomial, so the division is exact
        out = match out.checked_mul((n - k + i) as u128) {
            Some(v) => v / i as u128,
            None => return u128::MAX,
        };
    }
    out
}

/// All masks over `m` bits with exactly `s` bits set, ascending.
struct SizeMasks {
    next: Option<u128>,
    limit: u128,
}

impl SizeMasks {
    fn new(m: usize, s: usize) -> Self {
        debug_assert!(s >= 1 && s <= m && m <= MAX_PLAYERS);
        Self { next: Some((1u128 << s) - 1), limit: 1u128 << m }
    }
}

impl Iterator for SizeMasks {
    type Item = u128;

    fn next(&mut self) -> Option<u128> {
        let mask = self.next?;
        if mask >= self.limit {
            self.next = None;
            return None;
        }
        // Gosper's hack: next larger integer with the same popcount
        let c = mask & mask.wrapping_neg();
        let r = mask.wrapping_add(c);
        self.next = Some((((r ^ mask) >> 2) / c) | r);
        Some(mask)
    }
}

/// Weight of one coalition of size `s` in the exact enumeration:
/// `1 / (m * C(m-1, s))`, the binomial form of `s!(m-1-s)!/m!`.
fn exact_weight(m: usize, s: usize) -> f64 {
    1.0 / (m as f64 * binomial(m - 1, s))
}

/// Kernel weight of one proper coalition of size `s` among `m` players.
fn kernel_weight(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * (s * (m - s)) as f64)
}

/// Exact Shapley values by enumerating all `2^m` coalitions.
pub fn exact_shapley(
    instance: ArrayView1<'_, f64>,
    grouping: &PlayerGrouping,
    payoff: &dyn PayoffFn,
    background: &BackgroundSet,
) -> Result<Attribution> {
    let m = grouping.len();
    if m > MAX_EXACT_PLAYERS {
        return Err(Error::Shapley(format!(
            "{m} players exceed the exact-enumeration guard of {MAX_EXACT_PLAYERS}"
        )));
    }
    let game = Game::new(instance, grouping, payoff, background)?;

    let masks: Vec<u128> = (0..(1u128 << m)).collect();
    let values = game.coalition_values(&masks);
    let weights: Vec<f64> = (0..m).map(|s| exact_weight(m, s)).collect();

    let mut phi = vec![0.0; m];
    for (mask, &v) in values.iter().enumerate() {
        let mask = mask as u128;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask & (1u128 << j) == 0 {
                let with = values[(mask | (1u128 << j)) as usize];
                *p += weights[mask.count_ones() as usize] * (with - v);
            }
        }
    }

    let base_value = values[0];
    let explained_value = values[values.len() - 1];
    let efficiency_residual = explained_value - base_value - phi.iter().sum::<f64>();
    Ok(Attribution {
        players: grouping.players.clone(),
        phi,
        base_value,
        explained_value,
        efficiency_residual,
        n_coalitions: masks.len(),
        seed: None,
    })
}

/// Approximate Shapley values from a kernel-weighted coalition sample.
///
/// Size pairs `(s, m - s)` are enumerated completely, outside-in, while
/// they fit the budget; their coalitions carry exact kernel weights. The
/// remaining budget is spent on draws from the still-open sizes — sizes
/// proportional to kernel mass, members uniform, complements added as
/// antithetic pairs — with draw weights scaled so every stratum keeps its
/// kernel mass. When the whole proper-coalition space fits the budget this
/// reduces to full enumeration. The empty and full coalitions enter as
/// hard constraints: the intercept is pinned to the empty value and the
/// efficiency constraint eliminates the last player from the regression.
pub fn sampled_shapley(
    instance: ArrayView1<'_, f64>,
    grouping: &PlayerGrouping,
    payoff: &dyn PayoffFn,
    background: &BackgroundSet,
    n_coalitions: usize,
    seed: u64,
) -> Result<Attribution> {
    let m = grouping.len();
    if m < 2 {
        return Err(Error::Shapley("the sampled path needs at least 2 players".into()));
    }
    let game = Game::new(instance, grouping, payoff, background)?;

    let proper: u128 = (1u128 << m) - 2;
    let floor = (2 * m).min(proper.min(usize::MAX as u128) as usize);
    if n_coalitions < floor {
        return Err(Error::Shapley(format!(
            "n_coalitions {n_coalitions} below the minimum {floor} for {m} players"
        )));
    }

    // mask -> fit weight (kernel where enumerated, scaled count elsewhere)
    let mut pool: BTreeMap<u128, f64> = BTreeMap::new();
    if proper <= n_coalitions as u128 {
        for mask in 1..=proper {
            pool.insert(mask, kernel_weight(m, mask.count_ones() as usize));
        }
    } else {
        let mut budget = n_coalitions as u128;
        let mut first_open = 0usize;
        for s in 1..=m / 2 {
            let pair =
                if s == m - s { binomial_u128(m, s) } else { 2 * binomial_u128(m, s) };
            if pair > budget {
                first_open = s;
                break;
            }
            for mask in SizeMasks::new(m, s) {
                pool.insert(mask, kernel_weight(m, s));
            }
            if s != m - s {
                for mask in SizeMasks::new(m, m - s) {
                    pool.insert(mask, kernel_weight(m, m - s));
                }
            }
            budget -= pair;
        }

        if first_open != 0 && budget > 0 {
            let (lo, hi) = (first_open, m - first_open);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mass: Vec<f64> =
                (lo..=hi).map(|s| (m - 1) as f64 / ((s * (m - s)) as f64)).collect();
            let total: f64 = mass.iter().sum();
            let mut cumulative = Vec::with_capacity(mass.len());
            let mut acc = 0.0;
            for w in &mass {
                acc += w;
                cumulative.push(acc);
            }
            let full = (1u128 << m) - 1;
            let n_draws = budget.min(usize::MAX as u128) as usize;
            let mut draws: BTreeMap<u128, f64> = BTreeMap::new();
            let mut remaining = n_draws;
            while remaining > 0 {
                let u = rng.random::<f64>() * total;
                let s = lo + cumulative.partition_point(|&c| c < u).min(hi - lo);
                let mut mask = 0u128;
                for j in rand::seq::index::sample(&mut rng, m, s) {
                    mask |= 1u128 << j;
                }
                *draws.entry(mask).or_insert(0.0) += 1.0;
                remaining -= 1;
                if remaining > 0 {
                    // antithetic pair: the kernel is symmetric in s and
                    // m - s, so the complement (also an open size) keeps
                    // the target distribution while cancelling much of the
                    // sampling noise
                    *draws.entry(!mask & full).or_insert(0.0) += 1.0;
                    remaining -= 1;
                }
            }
            // scale so the open strata keep their total kernel mass
            let scale = total / n_draws as f64;
            for (mask, count) in draws {
                *pool.entry(mask).or_insert(0.0) += count * scale;
            }
        }
    }

    let masks: Vec<u128> = pool.keys().copied().collect();
    let weights: Vec<f64> = pool.values().copied().collect();
    let values = game.coalition_values(&masks);
    let base_value = game.coalition_values(&[0])[0];
    let explained_value = game.payoff.evaluate(game.instance.view());
    let delta = explained_value - base_value;

    // Eliminate the last player through the efficiency constraint, damp the
    // normal equations, and solve the reduced system.
    let n = m - 1;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    let mut x = vec![0.0; n];
    for ((&mask, &w), &v) in masks.iter().zip(weights.iter()).zip(values.iter()) {
        let z_last = ((mask >> (m - 1)) & 1) as f64;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = ((mask >> j) & 1) as f64 - z_last;
        }
        let y = v - base_value - z_last * delta;
        for r in 0..n {
            if x[r] == 0.0 {
                continue;
            }
            let wr = w * x[r];
            for c in 0..n {
                a[r][c] += wr * x[c];
            }
            b[r] += wr * y;
        }
    }
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += DAMPING;
    }

    let mut phi = solve_linear(a, b)?;
    let partial: f64 = phi.iter().sum();
    phi.push(delta - partial);

    let efficiency_residual = explained_value - base_value - phi.iter().sum::<f64>();
    Ok(Attribution {
        players: grouping.players.clone(),
        phi,
        base_value,
        explained_value,
        efficiency_residual,
        n_coalitions: masks.len(),
        seed: Some(seed),
    })
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-13 {
            return Err(Error::SingularRegression(format!(
                "pivot {:.3e} at column {col}",
                a[piv][col]
            )));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col][c] * x[c];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}
