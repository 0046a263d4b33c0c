//! Plaintext matrix-factorization math.
//!
//! Predictions, gradients, SGD updates, loss metrics, and the exact-real
//! federated round that the secure protocol is checked against. The gradient
//! formulas are implemented verbatim: regularization sits inside the
//! per-rating term, so the user regularizer is multiplied by the user's
//! rating count and the item regularizer by `n_k` after aggregation.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::seed::derive_rng;

#[derive(Debug, Error, PartialEq)]
pub enum MfError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("rating matrix rejected: {0}")]
    InvalidRatings(String),
    #[error("test set is empty")]
    EmptyTestSet,
}

/// Training hyperparameters. `iterations = 0` is allowed as an
/// initialize-only dry run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub dim: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub iterations: u32,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), MfError> {
        if self.dim == 0 {
            return Err(MfError::InvalidHyperParams("dim must be >= 1".into()));
        }
        if self.gamma <= 0.0 || self.lambda <= 0.0 || self.mu <= 0.0 {
            return Err(MfError::InvalidHyperParams(
                "gamma, lambda, mu must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dense `m x d` item profile matrix, row `k` is the profile of item `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMatrix {
    data: Vec<f64>,
    items: usize,
    dim: usize,
}

impl ItemMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, dim: usize) -> Result<Self, MfError> {
        let items = rows.len();
        let mut data = Vec::with_capacity(items * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(MfError::DimensionMismatch {
                    left: row.len(),
                    right: dim,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, items, dim })
    }

    pub fn zeros(items: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; items * dim],
            items,
            dim,
        }
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: u32) -> &[f64] {
        let k = k as usize;
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: u32) -> &mut [f64] {
        let k = k as usize;
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

/// Sparse user x item ratings with per-item rater lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    users: u32,
    items: u32,
    /// Per user: sorted `(item, rating)` pairs.
    by_user: Vec<Vec<(u32, f64)>>,
    /// Per item: sorted list of users who rated it.
    raters: Vec<Vec<u32>>,
    total: usize,
}

impl RatingMatrix {
    pub fn from_entries(
        users: u32,
        items: u32,
        entries: impl IntoIterator<Item = (u32, u32, f64)>,
    ) -> Result<Self, MfError> {
        let mut map = BTreeMap::new();
        for (i, k, r) in entries {
            if i >= users || k >= items {
                return Err(MfError::InvalidRatings(format!(
                    "entry ({i}, {k}) outside {users} x {items}"
                )));
            }
            if !r.is_finite() {
                return Err(MfError::InvalidRatings(format!(
                    "rating for ({i}, {k}) is not finite"
                )));
            }
            if map.insert((i, k), r).is_some() {
                return Err(MfError::InvalidRatings(format!(
                    "duplicate rating for ({i}, {k})"
                )));
            }
        }
        let mut by_user = vec![Vec::new(); users as usize];
        let mut raters = vec![Vec::new(); items as usize];
        let total = map.len();
        for ((i, k), r) in map {
            by_user[i as usize].push((k, r));
            raters[k as usize].push(i);
        }
        Ok(Self {
            users,
            items,
            by_user,
            raters,
            total,
        })
    }

    pub fn users(&self) -> u32 {
        self.users
    }

    pub fn items(&self) -> u32 {
        self.items
    }

    /// Total number of stored ratings, `M`.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn rating(&self, user: u32, item: u32) -> Option<f64> {
        let row = &self.by_user[user as usize];
        row.binary_search_by_key(&item, |&(k, _)| k)
            .ok()
            .map(|idx| row[idx].1)
    }

    /// Sorted `(item, rating)` pairs held by `user`.
    pub fn user_items(&self, user: u32) -> &[(u32, f64)] {
        &self.by_user[user as usize]
    }

    /// Sorted list of users who rated `item`.
    pub fn raters(&self, item: u32) -> &[u32] {
        &self.raters[item as usize]
    }

    /// `n_k`, the number of users who rated `item`.
    pub fn rater_count(&self, item: u32) -> u32 {
        self.raters[item as usize].len() as u32
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(k, r)| (i as u32, k, r)))
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), MfError> {
    if left != right {
        Err(MfError::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

/// Predicted rating `<u, v>`.
pub fn predict(user: &[f64], item: &[f64]) -> Result<f64, MfError> {
    check_dims(user.len(), item.len())?;
    Ok(user.iter().zip(item).map(|(a, b)| a * b).sum())
}

/// User-side gradient: the sum over the user's rated items of
/// `gamma * (-2 v_k (r - <u, v_k>) + 2 lambda u)`.
///
/// A user with no ratings gets a zero gradient (no update).
pub fn user_gradient(
    user: &[f64],
    items: &ItemMatrix,
    rated: &[(u32, f64)],
    hp: &HyperParams,
) -> Result<Vec<f64>, MfError> {
    check_dims(user.len(), items.dim())?;
    let mut grad = vec![0.0; user.len()];
    for &(k, rating) in rated {
        let item = items.row(k);
        let residual = rating - predict(user, item)?;
        for ((g, &v), &u) in grad.iter_mut().zip(item).zip(user) {
            *g += hp.gamma * (-2.0 * v * residual + 2.0 * hp.lambda * u);
        }
    }
    Ok(grad)
}

/// Per-rating item gradient `gamma * (-2 u (r - <u, v>) + 2 mu v)`.
pub fn item_gradient(
    user: &[f64],
    item: &[f64],
    rating: f64,
    hp: &HyperParams,
) -> Result<Vec<f64>, MfError> {
    check_dims(user.len(), item.len())?;
    let residual = rating - predict(user, item)?;
    Ok(user
        .iter()
        .zip(item)
        .map(|(&u, &v)| hp.gamma * (-2.0 * u * residual + 2.0 * hp.mu * v))
        .collect())
}

/// Gradient-descent update `x - g`.
pub fn sgd_step(x: &[f64], g: &[f64]) -> Result<Vec<f64>, MfError> {
    check_dims(x.len(), g.len())?;
    Ok(x.iter().zip(g).map(|(a, b)| a - b).collect())
}

/// Root mean squared prediction error over a held-out rating set.
pub fn rmse(
    profiles: &[Vec<f64>],
    items: &ItemMatrix,
    test: &RatingMatrix,
) -> Result<f64, MfError> {
    if test.is_empty() {
        return Err(MfError::EmptyTestSet);
    }
    let mut sum = 0.0;
    for (i, k, r) in test.iter_entries() {
        let err = r - predict(&profiles[i as usize], items.row(k))?;
        sum += err * err;
    }
    Ok((sum / test.len() as f64).sqrt())
}

/// One full federated iteration in exact real arithmetic: every user updates
/// its own profile, the server sums the per-user item gradients and applies
/// the SGD step to each item row. Items nobody rated are unchanged.
///
/// This is the correctness oracle the secure protocol is measured against.
pub fn plain_fed_round(
    profiles: &[Vec<f64>],
    items: &ItemMatrix,
    ratings: &RatingMatrix,
    hp: &HyperParams,
) -> Result<(Vec<Vec<f64>>, ItemMatrix), MfError> {
    check_dims(profiles.len(), ratings.users() as usize)?;
    check_dims(items.items(), ratings.items() as usize)?;

    let mut next_profiles = Vec::with_capacity(profiles.len());
    let mut item_grads = ItemMatrix::zeros(items.items(), items.dim());

    for (i, profile) in profiles.iter().enumerate() {
        let rated = ratings.user_items(i as u32);
        let grad = user_gradient(profile, items, rated, hp)?;
        next_profiles.push(sgd_step(profile, &grad)?);
        // Item gradients are computed against the pre-update user profile.
        for &(k, rating) in rated {
            let g = item_gradient(profile, items.row(k), rating, hp)?;
            for (acc, gv) in item_grads.row_mut(k).iter_mut().zip(&g) {
                *acc += gv;
            }
        }
    }

    let mut next_items = items.clone();
    for k in 0..items.items() as u32 {
        if ratings.rater_count(k) > 0 {
            let updated = sgd_step(items.row(k), item_grads.row(k))?;
            next_items.row_mut(k).copy_from_slice(&updated);
        }
    }
    Ok((next_profiles, next_items))
}

/// Deterministic profile initialization: entries i.i.d. uniform in
/// `[0, 1/sqrt(d))` so initial predictions land on the rating scale.
pub fn init_user_profiles(users: u32, dim: usize, master_seed: u64) -> Vec<Vec<f64>> {
    (0..users)
        .map(|i| {
            let mut rng = derive_rng(master_seed, "init/user-profile", i as u64);
            sample_profile(dim, &mut rng)
        })
        .collect()
}

/// Deterministic item matrix initialization, same distribution as profiles.
pub fn init_item_matrix(items: u32, dim: usize, master_seed: u64) -> ItemMatrix {
    let rows = (0..items)
        .map(|k| {
            let mut rng = derive_rng(master_seed, "init/item-profile", k as u64);
            sample_profile(dim, &mut rng)
        })
        .collect();
    ItemMatrix::from_rows(rows, dim).expect("rows built with fixed dim")
}

fn sample_profile(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.random::<f64>() * scale).collect()
}
