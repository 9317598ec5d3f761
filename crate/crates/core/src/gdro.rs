//! KL-regularized group DRO over per-class contrastive losses.
//!
//! Per-class loss, built from hinge-based normalizers over negatives `N_i`
//! (pool members of a different class):
//!
//! ```text
//! g1(i) = mean_{j∈N_i} exp( max(0, s(x_i,y_j) - s(x_i,y_i) + margin)^2 / τ )
//! g2(i) = mean_{j∈N_i} exp( max(0, s(x_j,y_i) - s(x_i,y_i) + margin)^2 / τ )
//! h_k   = 1/(2 n_k) Σ_{i: y_i = k} ( τ log g1(i) + τ log g2(i) )
//! ```
//!
//! Objective: `F(w) = λ log( (1/K) Σ_k exp(h_k/λ) )`, the value of
//! `max_p Σ p_k h_k - λ KL(p, uniform)`.
//!
//! The stochastic estimator tracks `u_I[i] ≈ g1(i)`, `u_T[i] ≈ g2(i)`,
//! `u_c[k] ≈ h_k` and `v ≈ (1/K) Σ_k exp(u_c[k]/λ)` with moving averages.
//! `v` is stored as `log v` so that small `λ` does not overflow.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::gcl::{Temperature, U_FLOOR};
use crate::model::ParamVector;
use crate::pairs::{log_sum_exp, SimilarityTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdroConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub margin: f64,
    pub tau: Temperature,
    pub batch_classes: usize,
    pub batch_per_class: usize,
}

impl GdroConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("margin must be >= 0, got {}", self.margin)));
        }
        if self.batch_classes == 0 || self.batch_per_class == 0 {
            return Err(Error::InvalidConfig("batch_classes and batch_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values.iter().copied()) - (values.len() as f64).ln()
}

fn hinge_sq(v: f64) -> f64 {
    let h = v.max(0.0);
    h * h
}

pub fn hinge_g1(params: &ParamVector, anchor: &Sample, pool: &[Sample], margin: f64, tau: Temperature) -> Result<f64> {
    let e1 = params.encode_input(&anchor.x)?;
    let pos = e1.dot(&params.encode_label(anchor.class)?);
    let mut terms = Vec::new();
    for n in pool.iter().filter(|n| n.class != anchor.class) {
        let s = e1.dot(&params.encode_label(n.class)?);
        terms.push(hinge_sq(s - pos + margin) / tau.get());
    }
    if terms.is_empty() {
        return Err(Error::NoNegatives(format!("sample {}", anchor.id)));
    }
    Ok(log_mean_exp(&terms).exp())
}

pub fn hinge_g2(params: &ParamVector, anchor: &Sample, pool: &[Sample], margin: f64, tau: Temperature) -> Result<f64> {
    let e2 = params.encode_label(anchor.class)?;
    let pos = params.encode_input(&anchor.x)?.dot(&e2);
    let mut terms = Vec::new();
    for n in pool.iter().filter(|n| n.class != anchor.class) {
        let s = params.encode_input(&n.x)?.dot(&e2);
        terms.push(hinge_sq(s - pos + margin) / tau.get());
    }
    if terms.is_empty() {
        return Err(Error::NoNegatives(format!("label of sample {}", anchor.id)));
    }
    Ok(log_mean_exp(&terms).exp())
}

/// Exact `h_k` over every class-`k` sample in `pool`.
pub fn class_loss_hk(params: &ParamVector, class_id: u32, pool: &[Sample], config: &GdroConfig) -> Result<f64> {
    let members: Vec<&Sample> = pool.iter().filter(|s| s.class == class_id).collect();
    if members.is_empty() {
        return Err(Error::ClassAbsent(class_id));
    }
    let t = config.tau;
    let mut total = 0.0;
    for s in &members {
        let g1 = hinge_g1(params, s, pool, config.margin, t)?;
        let g2 = hinge_g2(params, s, pool, config.margin, t)?;
        total += t.get() * (g1.ln() + g2.ln());
    }
    Ok(total / (2.0 * members.len() as f64))
}

/// Closed-form maximizer of `Σ p_k h_k - λ KL(p, uniform)` over the simplex.
pub fn dro_weights(h: &[f64], lambda: f64) -> Vec<f64> {
    let lse = log_sum_exp(h.iter().map(|v| v / lambda));
    h.iter().map(|v| (v / lambda - lse).exp()).collect()
}

/// `λ log( mean_k exp(h_k/λ) )`.
pub fn dro_objective(h: &[f64], lambda: f64) -> f64 {
    lambda * (log_sum_exp(h.iter().map(|v| v / lambda)) - (h.len() as f64).ln())
}

/// Rows of a GDRO step: every sample of every per-class batch, with the
/// anchors being those whose class is in the class batch.
struct GdroBatch<'a> {
    rows: Vec<&'a Sample>,
    table: SimilarityTable,
    anchors: Vec<usize>,
    /// One entry per anchor, parallel to `anchors`.
    terms: Vec<AnchorTerms>,
}

struct AnchorTerms {
    log_g1: f64,
    log_g2: f64,
    negatives: Vec<usize>,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
}

impl<'a> GdroBatch<'a> {
    fn new(
        params: &ParamVector,
        class_batch: &[u32],
        per_class_batches: &'a BTreeMap<u32, Vec<Sample>>,
        config: &GdroConfig,
    ) -> Result<Self> {
        if class_batch.is_empty() {
            return Err(Error::Empty("class batch"));
        }
        let anchor_classes: BTreeSet<u32> = class_batch.iter().copied().collect();
        for c in &anchor_classes {
            if per_class_batches.get(c).is_none_or(Vec::is_empty) {
                return Err(Error::ClassAbsent(*c));
            }
        }
        let rows: Vec<&Sample> = per_class_batches.values().flatten().collect();
        let table = SimilarityTable::new(params, &rows, &[])?;
        let tau = config.tau.get();
        let mut anchors = Vec::new();
        let mut terms = Vec::new();
        for (i, s) in rows.iter().enumerate() {
            if !anchor_classes.contains(&s.class) {
                continue;
            }
            let pos = table.sim_rows(i, i);
            let negatives: Vec<usize> = (0..rows.len()).filter(|&j| rows[j].class != s.class).collect();
            if negatives.is_empty() {
                return Err(Error::NoNegatives(format!("sample {}", s.id)));
            }
            let fwd: Vec<f64> = negatives
                .iter()
                .map(|&j| (table.sim_rows(i, j) - pos + config.margin).max(0.0))
                .collect();
            let bwd: Vec<f64> = negatives
                .iter()
                .map(|&j| (table.sim_rows(j, i) - pos + config.margin).max(0.0))
                .collect();
            let log_g1 = log_mean_exp(&fwd.iter().map(|a| a * a / tau).collect::<Vec<_>>());
            let log_g2 = log_mean_exp(&bwd.iter().map(|b| b * b / tau).collect::<Vec<_>>());
            anchors.push(i);
            terms.push(AnchorTerms {
                log_g1,
                log_g2,
                negatives,
                fwd,
                bwd,
            });
        }
        Ok(Self {
            rows,
            table,
            anchors,
            terms,
        })
    }

    /// Batch estimate of `h_k` for each anchor class.
    fn class_losses(&self, tau: f64) -> BTreeMap<u32, f64> {
        let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for (&i, t) in self.anchors.iter().zip(&self.terms) {
            let e = sums.entry(self.rows[i].class).or_default();
            e.0 += tau * (t.log_g1 + t.log_g2);
            e.1 += 1;
        }
        sums.into_iter().map(|(c, (s, n))| (c, s / (2.0 * n as f64))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdroEstimatorState {
    gamma: f64,
    lambda: f64,
    u_i: BTreeMap<u64, f64>,
    u_t: BTreeMap<u64, f64>,
    u_c: BTreeMap<u32, f64>,
    log_v: Option<f64>,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    log_sum_exp([a, b])
}

impl GdroEstimatorState {
    /// `gamma` in `[0, 1]`; 0 freezes already-initialized estimators.
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Self {
            gamma,
            lambda,
            u_i: BTreeMap::new(),
            u_t: BTreeMap::new(),
            u_c: BTreeMap::new(),
            log_v: None,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn u_i(&self, sample_id: u64) -> Option<f64> {
        self.u_i.get(&sample_id).copied()
    }

    pub fn u_t(&self, sample_id: u64) -> Option<f64> {
        self.u_t.get(&sample_id).copied()
    }

    pub fn u_c(&self, class_id: u32) -> Option<f64> {
        self.u_c.get(&class_id).copied()
    }

    /// Tracked per-class loss estimates, ascending by class.
    pub fn class_estimates(&self) -> &BTreeMap<u32, f64> {
        &self.u_c
    }

    pub fn v(&self) -> Option<f64> {
        self.log_v.map(f64::exp)
    }

    pub fn log_v(&self) -> Option<f64> {
        self.log_v
    }

    /// Current DRO weights over tracked classes, from the `u_c` estimates.
    pub fn weights(&self) -> BTreeMap<u32, f64> {
        let h: Vec<f64> = self.u_c.values().copied().collect();
        self.u_c.keys().copied().zip(dro_weights(&h, self.lambda)).collect()
    }

    /// Objective estimate `λ log mean exp(u_c/λ)` over tracked classes.
    pub fn objective_estimate(&self) -> Option<f64> {
        if self.u_c.is_empty() {
            return None;
        }
        let h: Vec<f64> = self.u_c.values().copied().collect();
        Some(dro_objective(&h, self.lambda))
    }

    fn blend(&self, old: Option<f64>, new: f64) -> f64 {
        match old {
            Some(o) => (1.0 - self.gamma) * o + self.gamma * new,
            None => new,
        }
    }

    /// Moving-average updates for one step. First touches store the batch
    /// estimate directly.
    pub fn update(
        &mut self,
        params: &ParamVector,
        class_batch: &[u32],
        per_class_batches: &BTreeMap<u32, Vec<Sample>>,
        config: &GdroConfig,
    ) -> Result<()> {
        let batch = GdroBatch::new(params, class_batch, per_class_batches, config)?;
        for (&i, t) in batch.anchors.iter().zip(&batch.terms) {
            let id = batch.rows[i].id;
            let ui = self.blend(self.u_i.get(&id).copied(), t.log_g1.exp()).max(U_FLOOR);
            let ut = self.blend(self.u_t.get(&id).copied(), t.log_g2.exp()).max(U_FLOOR);
            self.u_i.insert(id, ui);
            self.u_t.insert(id, ut);
        }
        for (c, h) in batch.class_losses(config.tau.get()) {
            let u = self.blend(self.u_c.get(&c).copied(), h);
            self.u_c.insert(c, u);
        }
        let k = self.u_c.len() as f64;
        let log_target = log_sum_exp(self.u_c.values().map(|u| u / self.lambda)) - k.ln();
        self.log_v = Some(match self.log_v {
            Some(lv) => log_add_exp((1.0 - self.gamma).ln() + lv, self.gamma.ln() + log_target),
            None => log_target,
        });
        Ok(())
    }

    fn sample_estimates(&self, id: u64) -> Result<(f64, f64)> {
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

    /// Compositional gradient estimator
    /// `1/(v|B_c|) Σ_k exp(u_c[k]/λ) 1/(2|B_k|) Σ_i τ (∇g1/u_I[i] + ∇g2/u_T[i])`.
    pub fn gradient_estimate(
        &self,
        params: &ParamVector,
        class_batch: &[u32],
        per_class_batches: &BTreeMap<u32, Vec<Sample>>,
        config: &GdroConfig,
    ) -> Result<ParamVector> {
        let log_v = self
            .log_v
            .ok_or_else(|| Error::UninitializedEstimator("scalar v".into()))?;
        if !log_v.is_finite() {
            return Err(Error::NonPositiveEstimator {
                key: "scalar v".into(),
                value: log_v.exp(),
            });
        }
        let batch = GdroBatch::new(params, class_batch, per_class_batches, config)?;
        let tau = config.tau.get();
        let n_classes = class_batch.iter().copied().collect::<BTreeSet<_>>().len() as f64;

        let mut per_class_count: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in &batch.anchors {
            *per_class_count.entry(batch.rows[i].class).or_default() += 1;
        }
        let mut class_weight = BTreeMap::new();
        for (&c, &n) in &per_class_count {
            let uc = self
                .u_c
                .get(&c)
                .ok_or_else(|| Error::UninitializedEstimator(format!("class {c}")))?;
            let w = (uc / self.lambda - log_v).exp() / n_classes / (2.0 * n as f64);
            class_weight.insert(c, w);
        }

        let table = &batch.table;
        let mut coef = table.coefficients();
        for (&i, t) in batch.anchors.iter().zip(&batch.terms) {
            let row = batch.rows[i];
            let (ui, ut) = self.sample_estimates(row.id)?;
            let w = class_weight[&row.class];
            let own = table.own_column(i);
            let inv_n = 1.0 / t.negatives.len() as f64;
            let (log_ui, log_ut) = (ui.ln(), ut.ln());
            for ((&j, &a), &b) in t.negatives.iter().zip(&t.fwd).zip(&t.bwd) {
                if a > 0.0 {
                    // τ/u * d/ds exp(a²/τ) = 2a exp(a²/τ)/u
                    let q = w * inv_n * 2.0 * a * (a * a / tau - log_ui).exp();
                    coef.add(i, table.own_column(j), q);
                    coef.add(i, own, -q);
                }
                if b > 0.0 {
                    let q = w * inv_n * 2.0 * b * (b * b / tau - log_ut).exp();
                    coef.add(j, own, q);
                    coef.add(i, own, -q);
                }
            }
        }
        Ok(table.backprop(params, &batch.rows, &coef))
    }

    /// Text checkpoint: header, `gamma`, `lambda`, `log_v` lines, then
    /// `class <id> <u_c>` and `sample <id> <u_I> <u_T>` records.
    pub fn to_text(&self) -> String {
        let mut out = format!("gdro-estimators v1\ngamma {}\nlambda {}\n", self.gamma, self.lambda);
        match self.log_v {
            Some(v) => {
                let _ = writeln!(out, "log_v {v}");
            }
            None => out.push_str("log_v none\n"),
        }
        for (c, u) in &self.u_c {
            let _ = writeln!(out, "class {c} {u}");
        }
        for (id, ui) in &self.u_i {
            let ut = self.u_t.get(id).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "sample {id} {ui} {ut}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedFile(format!("gdro estimator checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("gdro-estimators v1") {
            return Err(bad("missing or unsupported header".into()));
        }
        let mut field = |name: &str| {
            lines
                .next()
                .and_then(|l| l.strip_prefix(name))
                .map(str::trim)
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("missing {name}")))
        };
        let gamma = field("gamma")?.parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let lambda = field("lambda")?.parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let log_v = match field("log_v")?.as_str() {
            "none" => None,
            v => Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
        };
        let mut state = Self::new(gamma, lambda)?;
        state.log_v = log_v;
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["class", c, u] => {
                    let c = c.parse().map_err(|_| bad(format!("bad class record `{line}`")))?;
                    let u = u.parse().map_err(|_| bad(format!("bad class record `{line}`")))?;
                    state.u_c.insert(c, u);
                }
                ["sample", id, ui, ut] => {
                    let id = id.parse().map_err(|_| bad(format!("bad sample record `{line}`")))?;
                    let ui = ui.parse().map_err(|_| bad(format!("bad sample record `{line}`")))?;
                    let ut = ut.parse().map_err(|_| bad(format!("bad sample record `{line}`")))?;
                    state.u_i.insert(id, ui);
                    state.u_t.insert(id, ut);
                }
                _ => return Err(bad(format!("unrecognized record `{line}`"))),
            }
        }
        Ok(state)
    }
}
