//! Global contrastive loss.
//!
//! The symmetric bimodal objective over a pool `P = D_t ∪ M_t` of `N` samples
//!
//! ```text
//! L = -(1/N) Σ_i log( exp(s_ii/τ) / g_I(i) ) - (1/N) Σ_i log( exp(s_ii/τ) / g_T(i) )
//! g_I(i) = Σ_{j∈P} exp(s(x_i, y_j)/τ)        g_T(i) = Σ_{j∈P} exp(s(x_j, y_i)/τ)
//! ```
//!
//! is optimized with per-sample moving averages `u_I[i] ≈ g_I(i)` and
//! `u_T[i] ≈ g_T(i)`, so that a mini-batch `B` gives the estimator
//!
//! ```text
//! m = -(1/|B|) Σ_i ∇s_ii + τ/(2|B| u_I[i]) ∇ĝ_I(i, B) + τ/(2|B| u_T[i]) ∇ĝ_T(i, B)
//! ```
//!
//! In-batch sums are rescaled by `N/|B|` so that `ĝ` targets the full-pool
//! normalizer. With `B = P` and exact estimators, `m = (τ/2) ∇L`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::pairs::{log_sum_exp, SimilarityTable};

/// Stored estimator values never go below this.
pub const U_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidConfig(format!("temperature must be > 0, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `Σ_j exp(s(x_anchor, y_j)/τ)` over `negatives`, max-shifted, linear scale.
pub fn g_i(params: &ParamVector, anchor: &Sample, negatives: &[Sample], tau: Temperature) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Empty("negatives"));
    }
    let e1 = params.encode_input(&anchor.x)?;
    let mut logits = Vec::with_capacity(negatives.len());
    for n in negatives {
        logits.push(e1.dot(&params.encode_label(n.class)?) / tau.get());
    }
    Ok(log_sum_exp(logits.iter().copied()).exp())
}

/// `Σ_j exp(s(x_j, y_anchor)/τ)` over `negatives`, max-shifted, linear scale.
pub fn g_t(params: &ParamVector, anchor_label: &Sample, negatives: &[Sample], tau: Temperature) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Empty("negatives"));
    }
    let e2 = params.encode_label(anchor_label.class)?;
    let mut logits = Vec::with_capacity(negatives.len());
    for n in negatives {
        logits.push(params.encode_input(&n.x)?.dot(&e2) / tau.get());
    }
    Ok(log_sum_exp(logits.iter().copied()).exp())
}

/// Exact symmetric contrastive loss over `pool`.
pub fn gcl_loss_full(params: &ParamVector, pool: &[Sample], tau: Temperature) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Empty("pool"));
    }
    let rows: Vec<&Sample> = pool.iter().collect();
    let table = SimilarityTable::new(params, &rows, &[])?;
    let n = pool.len();
    let t = tau.get();
    let mut total = 0.0;
    for i in 0..n {
        let pos = table.sim_rows(i, i) / t;
        let log_gi = log_sum_exp((0..n).map(|j| table.sim_rows(i, j) / t));
        let log_gt = log_sum_exp((0..n).map(|j| table.sim_rows(j, i) / t));
        total += (log_gi - pos) + (log_gt - pos);
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GclEstimatorState {
    gamma: f64,
    u_i: BTreeMap<u64, f64>,
    u_t: BTreeMap<u64, f64>,
}

/// In-batch estimates `(log ĝ_I(i), log ĝ_T(i))` for every row, rescaled to the pool.
fn batch_log_normalizers(table: &SimilarityTable, pool_size: usize, tau: f64) -> Vec<(f64, f64)> {
    let b = table.rows();
    let log_scale = (pool_size as f64 / b as f64).ln();
    (0..b)
        .map(|i| {
            let gi = log_sum_exp((0..b).map(|j| table.sim_rows(i, j) / tau));
            let gt = log_sum_exp((0..b).map(|j| table.sim_rows(j, i) / tau));
            (gi + log_scale, gt + log_scale)
        })
        .collect()
}

fn store(u: f64) -> f64 {
    u.max(U_FLOOR)
}

impl GclEstimatorState {
    /// `gamma` in `[0, 1]`; 0 freezes already-initialized estimators.
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        Ok(Self {
            gamma,
            u_i: BTreeMap::new(),
            u_t: BTreeMap::new(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn u_i(&self, sample_id: u64) -> Option<f64> {
        self.u_i.get(&sample_id).copied()
    }

    pub fn u_t(&self, sample_id: u64) -> Option<f64> {
        self.u_t.get(&sample_id).copied()
    }

    pub fn is_initialized(&self, sample_id: u64) -> bool {
        self.u_i.contains_key(&sample_id) && self.u_t.contains_key(&sample_id)
    }

    pub fn len(&self) -> usize {
        self.u_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_i.is_empty()
    }

    /// Moving-average update for every anchor in `batch`; a sample's first
    /// update stores the batch estimate directly.
    pub fn update(&mut self, params: &ParamVector, batch: &[Sample], pool_size: usize, tau: Temperature) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let rows: Vec<&Sample> = batch.iter().collect();
        let table = SimilarityTable::new(params, &rows, &[])?;
        let est = batch_log_normalizers(&table, pool_size.max(batch.len()), tau.get());
        let g = self.gamma;
        for (s, (log_gi, log_gt)) in batch.iter().zip(est) {
            let (gi, gt) = (log_gi.exp(), log_gt.exp());
            match (self.u_i.get_mut(&s.id), self.u_t.get_mut(&s.id)) {
                (Some(ui), Some(ut)) => {
                    *ui = store((1.0 - g) * *ui + g * gi);
                    *ut = store((1.0 - g) * *ut + g * gt);
                }
                _ => {
                    self.u_i.insert(s.id, store(gi));
                    self.u_t.insert(s.id, store(gt));
                }
            }
        }
        Ok(())
    }

    fn checked(&self, id: u64) -> Result<(f64, f64)> {
        let (ui, ut) = match (self.u_i.get(&id), self.u_t.get(&id)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::UninitializedEstimator(format!("sample {id}"))),
        };
        for v in [ui, ut] {
            if !(v > 0.0) {
                return Err(Error::NonPositiveEstimator {
                    key: format!("sample {id}"),
                    value: v,
                });
            }
        }
        Ok((ui, ut))
    }

    /// Mini-batch gradient estimator `m`.
    pub fn gradient_estimate(
        &self,
        params: &ParamVector,
        batch: &[Sample],
        pool_size: usize,
        tau: Temperature,
    ) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let us = batch.iter().map(|s| self.checked(s.id)).collect::<Result<Vec<_>>>()?;
        let rows: Vec<&Sample> = batch.iter().collect();
        let table = SimilarityTable::new(params, &rows, &[])?;
        let b = batch.len() as f64;
        let t = tau.get();
        let scale = pool_size.max(batch.len()) as f64 / b;
        let mut coef = table.coefficients();
        for (i, &(ui, ut)) in us.iter().enumerate() {
            coef.add(i, table.own_column(i), -1.0 / b);
            let (log_ui, log_ut) = (ui.ln(), ut.ln());
            for j in 0..batch.len() {
                // τ/(2|B|u) * (N/|B|) * exp(s/τ)/τ
                let wi = scale / (2.0 * b) * (table.sim_rows(i, j) / t - log_ui).exp();
                coef.add(i, table.own_column(j), wi);
                let wt = scale / (2.0 * b) * (table.sim_rows(j, i) / t - log_ut).exp();
                coef.add(j, table.own_column(i), wt);
            }
        }
        Ok(table.backprop(params, &rows, &coef))
    }

    /// Loss estimate from the tracked normalizers: mean of `log u_I + log u_T - 2 s_ii/τ`.
    pub fn loss_estimate(&self, params: &ParamVector, batch: &[Sample], tau: Temperature) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let (ui, ut) = self.checked(s.id)?;
            total += ui.ln() + ut.ln() - 2.0 * params.pair_similarity(&s.x, s.class)? / tau.get();
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Text checkpoint: a `gcl-estimators v1` line, a `gamma` line, then
    /// `sample_id u_I u_T` per line in ascending id order.
    pub fn to_text(&self) -> String {
        let mut out = format!("gcl-estimators v1\ngamma {}\n", self.gamma);
        for (id, ui) in &self.u_i {
            let ut = self.u_t.get(id).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{id} {ui} {ut}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedFile(format!("gcl estimator checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("gcl-estimators v1") {
            return Err(bad("missing or unsupported header".into()));
        }
        let gamma = lines
            .next()
            .and_then(|l| l.strip_prefix("gamma "))
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| bad("missing gamma".into()))?;
        let mut state = Self::new(gamma)?;
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f.as_slice() {
                [id, ui, ut] => id.parse::<u64>().ok().zip(ui.parse::<f64>().ok()).zip(ut.parse::<f64>().ok()),
                _ => None,
            };
            let ((id, ui), ut) = parsed.ok_or_else(|| bad(format!("bad record on line {}", n + 3)))?;
            state.u_i.insert(id, ui);
            state.u_t.insert(id, ut);
        }
        Ok(state)
    }
}
