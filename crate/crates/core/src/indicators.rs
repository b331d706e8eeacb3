//! Evaluation functions: mean load factor, heterogeneity, adverse-event rate, detour ratio
//! and the calibration error against a reference load-factor matrix.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::sim::TravelRecord;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("no stations")]
    NoStations,
    #[error("heterogeneity needs at least two stations")]
    TooFewStations,
    #[error("stations {0} and {1} are at distance zero")]
    CoincidentStations(usize, usize),
    #[error("occupancy, capacity and distance shapes disagree")]
    ShapeMismatch,
    #[error("no travels recorded")]
    NoTravels,
}

pub fn load_factors<S: Scalar>(occupancy: &[u32], capacities: &[u32]) -> Vec<S> {
    occupancy
        .iter()
        .zip(capacities)
        .map(|(&b, &c)| S::of(b as f64) / S::of(c as f64))
        .collect()
}

/// Mean of `p_b(s) / c(s)` over stations.
pub fn mean_load<S: Scalar>(occupancy: &[u32], capacities: &[u32]) -> Result<S, IndicatorError> {
    if occupancy.is_empty() {
        return Err(IndicatorError::NoStations);
    }
    if occupancy.len() != capacities.len() {
        return Err(IndicatorError::ShapeMismatch);
    }
    let lf: Vec<S> = load_factors(occupancy, capacities);
    Ok(lf.iter().copied().sum::<S>() / S::of_usize(lf.len()))
}

/// Inverse pairwise distances prepared once per network, used for every tick's `h(t)`.
///
/// The sum runs over ordered pairs `s != s'`; the leading factor 2 of the indicator and the
/// identical normalising sum make the result the same as with unordered pairs.
#[derive(Clone, Debug)]
pub struct HeterogeneityWeights<S> {
    n: usize,
    inverse: Vec<S>,
    norm: S,
}

impl<S: Scalar> HeterogeneityWeights<S> {
    /// `distances` is a row-major `n x n` matrix.
    pub fn new(distances: &[S], n: usize) -> Result<Self, IndicatorError> {
        if n < 2 {
            return Err(IndicatorError::TooFewStations);
        }
        if distances.len() != n * n {
            return Err(IndicatorError::ShapeMismatch);
        }
        let mut inverse = vec![S::zero(); n * n];
        let mut total = S::zero();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = distances[i * n + j];
                if d.is_nan() || d <= S::zero() {
                    return Err(IndicatorError::CoincidentStations(i.min(j), i.max(j)));
                }
                inverse[i * n + j] = d.recip();
                total += d.recip();
            }
        }
        Ok(Self {
            n,
            inverse,
            norm: S::of(2.0) / total,
        })
    }

    pub fn station_count(&self) -> usize {
        self.n
    }

    pub fn eval(&self, load: &[S]) -> S {
        let n = self.n;
        let mut acc = S::zero();
        for i in 0..n {
            let row = &self.inverse[i * n..(i + 1) * n];
            for j in 0..n {
                if i != j {
                    acc += (load[i] - load[j]).abs() * row[j];
                }
            }
        }
        self.norm * acc
    }
}

/// `h(t)` from occupancies, capacities and the row-major station distance matrix.
pub fn heterogeneity<S: Scalar>(
    occupancy: &[u32],
    capacities: &[u32],
    distances: &[S],
) -> Result<S, IndicatorError> {
    if occupancy.len() != capacities.len() {
        return Err(IndicatorError::ShapeMismatch);
    }
    let weights = HeterogeneityWeights::new(distances, occupancy.len())?;
    Ok(weights.eval(&load_factors::<S>(occupancy, capacities)))
}

/// `A = |adverse| / |travels|`.
pub fn adverse_rate<S: Scalar>(records: &[TravelRecord]) -> Result<S, IndicatorError> {
    if records.is_empty() {
        return Err(IndicatorError::NoTravels);
    }
    let adverse = records.iter().filter(|r| r.adverse).count();
    Ok(S::of_usize(adverse) / S::of_usize(records.len()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetourRatio<S> {
    pub value: S,
    pub included: usize,
    /// Records skipped because they were never ridden, never completed, or had `d_th = 0`.
    pub excluded: usize,
}

/// Mean of `d_r / d_th` over completed rides with a positive theoretical distance.
pub fn detour_ratio<S: Scalar>(records: &[TravelRecord]) -> Result<DetourRatio<S>, IndicatorError> {
    let mut sum = S::zero();
    let mut included = 0;
    for r in records.iter().filter(|r| r.counts_for_detour()) {
        sum += S::of(r.d_r) / S::of(r.d_th);
        included += 1;
    }
    if included == 0 {
        return Err(IndicatorError::NoTravels);
    }
    Ok(DetourRatio {
        value: sum / S::of_usize(included),
        included,
        excluded: records.len() - included,
    })
}

/// Mean squared difference between two `[station][bin]` load-factor matrices.
pub fn mse<S: Scalar>(simulated: &[Vec<S>], real: &[Vec<S>]) -> Result<S, IndicatorError> {
    if simulated.is_empty() {
        return Err(IndicatorError::NoStations);
    }
    if simulated.len() != real.len() {
        return Err(IndicatorError::ShapeMismatch);
    }
    let bins = simulated[0].len();
    let mut acc = S::zero();
    for (a, b) in simulated.iter().zip(real) {
        if a.len() != bins || b.len() != bins {
            return Err(IndicatorError::ShapeMismatch);
        }
        for (&x, &y) in a.iter().zip(b) {
            acc += (x - y) * (x - y);
        }
    }
    Ok(acc / S::of_usize(simulated.len() * bins))
}
