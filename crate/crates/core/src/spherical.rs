//! Spherical k-means over unit-normalized vectors.
//!
//! Points are normalized on entry, assigned to the center of maximal cosine and
//! centers are recomputed as the normalized mean of their members. Each restart
//! is initialized with k-means++ using `1 - cos` as the sampling weight; the
//! restart with the highest objective (sum of member-to-center cosines) wins.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::vector::{dot, mean_direction, normalized};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("point {0} is the zero vector")]
    ZeroVector(usize),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 100,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Unit-norm center directions.
    pub centers: Vec<Vec<f64>>,
    /// Cluster index of each input point, aligned with the input order.
    pub member_of: Vec<usize>,
    /// Sum over points of the cosine to their own center.
    pub objective: f64,
    /// Objective after the initial assignment and after every Lloyd iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.member_of
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Normalize every input, rejecting zero vectors.
pub fn normalize_all<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<Vec<f64>>, ClusterError> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| normalized(v.as_ref()).ok_or(ClusterError::ZeroVector(i)))
        .collect()
}

/// Spherical k-means with `config.restarts` k-means++ restarts.
pub fn spherical_kmeans<V: AsRef<[f64]>>(
    vectors: &[V],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusterAssignment, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if vectors.len() < k {
        return Err(ClusterError::TooFewPoints {
            n: vectors.len(),
            k,
        });
    }
    let unit = normalize_all(vectors)?;
    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..config.restarts.max(1) {
        let centers = plus_plus_init(&unit, k, restart_seed(seed, restart));
        let run = lloyd(&unit, centers, config.max_iter);
        if best.as_ref().is_none_or(|b| run.objective > b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Seed used by restart `restart` of a run seeded with `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    derive_seed(seed, &[restart as u64])
}

/// k-means++ seeding on the unit sphere: each new center is drawn with
/// probability proportional to `1 - cos` to the nearest chosen center.
/// `unit` must already be normalized.
pub fn plus_plus_init(unit: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = unit.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centers = vec![unit[first].clone()];
    let mut nearest: Vec<f64> = unit
        .iter()
        .map(|x| (1.0 - dot(x, &unit[first])).max(0.0))
        .collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // Every remaining point coincides with a center.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen[next] = true;
        for (d, x) in nearest.iter_mut().zip(unit) {
            *d = d.min((1.0 - dot(x, &unit[next])).max(0.0));
        }
        centers.push(unit[next].clone());
    }
    centers
}

/// Lloyd iterations from explicit starting centers. `unit` must be normalized.
pub fn lloyd(unit: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> ClusterAssignment {
    let k = centers.len();
    let mut member_of = assign(unit, &centers);
    let mut trace = vec![objective(unit, &member_of, &centers)];
    let mut converged = false;
    for _ in 0..max_iter {
        repair_empty(unit, &mut member_of, &mut centers);
        recenter(unit, &member_of, &mut centers);
        let next = assign(unit, &centers);
        let value = objective(unit, &next, &centers);
        debug_assert!(
            value >= trace.last().unwrap() - 1e-9,
            "spherical k-means objective decreased"
        );
        trace.push(value);
        if next == member_of {
            converged = true;
            break;
        }
        member_of = next;
    }
    if !converged {
        repair_empty(unit, &mut member_of, &mut centers);
        recenter(unit, &member_of, &mut centers);
    }
    let objective = objective(unit, &member_of, &centers);
    ClusterAssignment {
        k,
        centers,
        member_of,
        objective,
        trace,
        converged,
    }
}

fn assign(unit: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    unit.iter()
        .map(|x| {
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let cos = dot(x, center);
                if cos > best_cos {
                    best = c;
                    best_cos = cos;
                }
            }
            best
        })
        .collect()
}

fn objective(unit: &[Vec<f64>], member_of: &[usize], centers: &[Vec<f64>]) -> f64 {
    unit.iter()
        .zip(member_of)
        .map(|(x, &c)| dot(x, &centers[c]))
        .sum()
}

/// Give each empty cluster the point with the lowest cosine to its current
/// center, taken only from clusters that keep at least one other member.
fn repair_empty(unit: &[Vec<f64>], member_of: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    let mut sizes = vec![0usize; k];
    for &c in member_of.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, x) in unit.iter().enumerate() {
            let c = member_of[i];
            if sizes[c] < 2 {
                continue;
            }
            let cos = dot(x, &centers[c]);
            if far.is_none_or(|(_, best)| cos < best) {
                far = Some((i, cos));
            }
        }
        let Some((i, _)) = far else { return };
        sizes[member_of[i]] -= 1;
        sizes[empty] += 1;
        member_of[i] = empty;
        centers[empty] = unit[i].clone();
    }
}

fn recenter(unit: &[Vec<f64>], member_of: &[usize], centers: &mut [Vec<f64>]) {
    let dim = unit.first().map_or(0, Vec::len);
    for (c, center) in centers.iter_mut().enumerate() {
        let members = unit
            .iter()
            .zip(member_of)
            .filter(|(_, &m)| m == c)
            .map(|(x, _)| x.as_slice());
        // Members that cancel out leave the previous direction in place.
        if let Some(mean) = mean_direction(dim, members) {
            *center = mean;
        }
    }
}
