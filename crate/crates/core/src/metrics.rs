//! OSPA distance and per-path mean squared error.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assign::hungarian;
use crate::error::{Error, Result};
use crate::geometry::PathState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OspaParams {
    pub cutoff_c: f64,
    pub order_p: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            cutoff_c: 0.05,
            order_p: 2.0,
        }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_c > 0.0) {
            return Err(Error::config("ospa.cutoff_c", "must be positive"));
        }
        if !(self.order_p >= 1.0) {
            return Err(Error::config("ospa.order_p", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-dimension divisors applied before taking Euclidean distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateScaler {
    pub delay: f64,
    pub doppler: f64,
}

impl Default for StateScaler {
    fn default() -> Self {
        Self {
            delay: 1.0,
            doppler: 1e-3,
        }
    }
}

impl StateScaler {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay > 0.0 && self.doppler > 0.0) {
            return Err(Error::config("ospa.scaler", "scale factors must be positive"));
        }
        Ok(())
    }

    pub fn distance(&self, x: &PathState, y: &PathState) -> f64 {
        ((x.delay - y.delay) / self.delay).hypot((x.doppler - y.doppler) / self.doppler)
    }
}

/// Cut-off base distances `min(c, d)^p` between every `x` (rows) and `y`.
fn cost_matrix(x: &[PathState], y: &[PathState], params: &OspaParams, scaler: &StateScaler) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| {
            y.iter()
                .map(|b| scaler.distance(a, b).min(params.cutoff_c).powf(params.order_p))
                .collect()
        })
        .collect()
}

/// Optimal sub-pattern assignment distance of order `p` with cut-off `c`.
pub fn ospa(x: &[PathState], y: &[PathState], params: &OspaParams, scaler: &StateScaler) -> f64 {
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return 0.0;
    }
    let cost = cost_matrix(small, large, params, scaler);
    let assignment = hungarian(&cost, n);
    // Summing in sorted order makes the result independent of orientation.
    let mut terms: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).collect();
    terms.sort_by(f64::total_cmp);
    let matched: f64 = terms.iter().sum();
    let total = matched + params.cutoff_c.powf(params.order_p) * (n - m) as f64;
    (total / n as f64).powf(1.0 / params.order_p)
}

/// Squared errors of one epoch after optimal labeling.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochErrors {
    pub sq_delay: f64,
    pub sq_doppler: f64,
    pub matched: usize,
    /// Truth paths with no estimate within the cut-off.
    pub missed: usize,
}

/// Pair estimates with truth through the OSPA-optimal assignment; pairs at
/// or beyond the cut-off count as missed.
pub fn epoch_errors(est: &[PathState], truth: &[PathState], params: &OspaParams, scaler: &StateScaler) -> EpochErrors {
    let mut out = EpochErrors::default();
    if truth.is_empty() {
        return out;
    }
    if est.is_empty() {
        out.missed = truth.len();
        return out;
    }
    let pairs: Vec<(usize, usize)> = if truth.len() <= est.len() {
        let cost = cost_matrix(truth, est, params, scaler);
        hungarian(&cost, est.len()).into_iter().enumerate().collect()
    } else {
        let cost = cost_matrix(est, truth, params, scaler);
        hungarian(&cost, truth.len()).into_iter().enumerate().map(|(i, j)| (j, i)).collect()
    };
    for (t, e) in pairs {
        if scaler.distance(&truth[t], &est[e]) < params.cutoff_c {
            out.sq_delay += (truth[t].delay - est[e].delay).powi(2);
            out.sq_doppler += (truth[t].doppler - est[e].doppler).powi(2);
            out.matched += 1;
        }
    }
    out.missed = truth.len() - out.matched;
    out
}

/// Per-epoch MSE of one trajectory of estimate sets against truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochMse {
    pub epoch: usize,
    pub mse_delay: f64,
    pub mse_doppler: f64,
    pub matched: usize,
    pub missed: usize,
}

/// Pools squared errors and OSPA values per epoch across trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    errors: Vec<EpochErrors>,
    ospa_sum: Vec<f64>,
    trials: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(epochs: usize) -> Self {
        Self {
            errors: vec![EpochErrors::default(); epochs],
            ospa_sum: vec![0.0; epochs],
            trials: vec![0; epochs],
        }
    }

    pub fn epochs(&self) -> usize {
        self.errors.len()
    }

    /// Add one trial's estimates for epoch index `k` (0-based).
    pub fn add(&mut self, k: usize, est: &[PathState], truth: &[PathState], params: &OspaParams, scaler: &StateScaler) {
        let e = epoch_errors(est, truth, params, scaler);
        let acc = &mut self.errors[k];
        acc.sq_delay += e.sq_delay;
        acc.sq_doppler += e.sq_doppler;
        acc.matched += e.matched;
        acc.missed += e.missed;
        self.ospa_sum[k] += ospa(est, truth, params, scaler);
        self.trials[k] += 1;
    }

    pub fn trials(&self, k: usize) -> usize {
        self.trials[k]
    }

    pub fn mean_ospa(&self) -> Vec<f64> {
        self.ospa_sum
            .iter()
            .zip(&self.trials)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
            .collect()
    }

    pub fn mse(&self) -> Vec<EpochMse> {
        self.errors
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let n = e.matched as f64;
                EpochMse {
                    epoch: k + 1,
                    mse_delay: if e.matched > 0 { e.sq_delay / n } else { f64::NAN },
                    mse_doppler: if e.matched > 0 { e.sq_doppler / n } else { f64::NAN },
                    matched: e.matched,
                    missed: e.missed,
                }
            })
            .collect()
    }
}

/// Per-epoch MSE of a single run.
pub fn per_path_mse(
    estimates: &[Vec<PathState>],
    truth: &[Vec<PathState>],
    params: &OspaParams,
    scaler: &StateScaler,
) -> Result<Vec<EpochMse>> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truth.len(),
        });
    }
    let mut acc = MetricAccumulator::new(truth.len());
    for (k, (e, t)) in estimates.iter().zip(truth).enumerate() {
        acc.add(k, e, t, params, scaler);
    }
    Ok(acc.mse())
}

/// One row of the metric CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub metric: String,
    pub source: String,
    pub value: f64,
    pub trials: usize,
}

pub fn write_metric_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
