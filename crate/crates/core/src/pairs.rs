//! Batched similarity evaluation and gradient accumulation.
//!
//! Every objective here is a function of the pairwise similarities
//! `s(x_i, y_c)` between inputs in a batch and the distinct labels in it.
//! A gradient of the form `sum_{i,c} coef[i][c] * grad s(x_i, y_c)` is
//! accumulated by pulling the coefficients back to each embedding first and
//! running one backward pass per input and per label.

use std::collections::BTreeMap;

use crate::data::Sample;
use crate::error::Result;
use crate::model::{dot, Activation, ParamVector};

pub struct SimilarityTable {
    inputs: Vec<Activation>,
    labels: Vec<Activation>,
    /// Distinct classes in ascending order.
    classes: Vec<u32>,
    /// Column of each row's own class.
    own: Vec<usize>,
    sims: Vec<f64>,
}

impl SimilarityTable {
    /// Encodes the inputs of `rows` against the labels of `rows` plus `extra_classes`.
    pub fn new(params: &ParamVector, rows: &[&Sample], extra_classes: &[u32]) -> Result<Self> {
        let mut col: BTreeMap<u32, usize> = rows
            .iter()
            .map(|s| s.class)
            .chain(extra_classes.iter().copied())
            .map(|c| (c, 0))
            .collect();
        for (i, v) in col.values_mut().enumerate() {
            *v = i;
        }
        let classes: Vec<u32> = col.keys().copied().collect();
        let labels = classes
            .iter()
            .map(|&c| params.forward_label(c))
            .collect::<Result<Vec<_>>>()?;
        let inputs = rows
            .iter()
            .map(|s| params.forward_input(&s.x))
            .collect::<Result<Vec<_>>>()?;
        let own = rows.iter().map(|s| col[&s.class]).collect();
        let k = classes.len();
        let mut sims = vec![0.0; rows.len() * k];
        for (i, a) in inputs.iter().enumerate() {
            for (c, l) in labels.iter().enumerate() {
                sims[i * k + c] = dot(a.unit(), l.unit());
            }
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            own,
            sims,
        })
    }

    pub fn rows(&self) -> usize {
        self.inputs.len()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn column_of(&self, class_id: u32) -> Option<usize> {
        self.classes.binary_search(&class_id).ok()
    }

    pub fn own_column(&self, row: usize) -> usize {
        self.own[row]
    }

    /// Similarity between input `row` and label column `col`.
    pub fn sim(&self, row: usize, col: usize) -> f64 {
        self.sims[row * self.classes.len() + col]
    }

    /// Similarity between input `i` and the label of row `j`.
    pub fn sim_rows(&self, i: usize, j: usize) -> f64 {
        self.sim(i, self.own[j])
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            k: self.classes.len(),
            values: vec![0.0; self.inputs.len() * self.classes.len()],
        }
    }

    /// `sum_{i,c} coef[i][c] * grad s(x_i, y_c)` over all parameters.
    pub fn backprop(&self, params: &ParamVector, rows: &[&Sample], coef: &Coefficients) -> ParamVector {
        let k = self.classes.len();
        let dim = params.config().embed_dim;
        let mut grad = params.zeros_like();
        let mut label_grads = vec![vec![0.0; dim]; k];
        for (i, act) in self.inputs.iter().enumerate() {
            let mut g = vec![0.0; dim];
            let mut any = false;
            for (c, lab) in self.labels.iter().enumerate() {
                let w = coef.values[i * k + c];
                if w == 0.0 {
                    continue;
                }
                any = true;
                for (gd, l) in g.iter_mut().zip(lab.unit()) {
                    *gd += w * l;
                }
                for (gd, a) in label_grads[c].iter_mut().zip(act.unit()) {
                    *gd += w * a;
                }
            }
            if any {
                params.backward_input(&rows[i].x, act, &g, &mut grad);
            }
        }
        for (c, lab) in self.labels.iter().enumerate() {
            if label_grads[c].iter().any(|v| *v != 0.0) {
                params.backward_label(self.classes[c], lab, &label_grads[c], &mut grad);
            }
        }
        grad
    }
}

pub struct Coefficients {
    k: usize,
    values: Vec<f64>,
}

impl Coefficients {
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.k + col] += v;
    }
}

/// `log(sum exp(v))` with a max shift; `-inf` for an empty slice.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.into_iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, EncoderConfig};

    #[test]
    fn backprop_matches_sum_of_pair_gradients() {
        let cfg = EncoderConfig {
            input_dim: 3,
            num_classes_max: 4,
            hidden_dim: 2,
            embed_dim: 3,
            seed: 5,
        };
        let p = init_params(&cfg).unwrap();
        let rows: Vec<Sample> = (0..3)
            .map(|i| Sample {
                id: i,
                x: vec![0.3 * i as f64 + 0.1, -0.2, 0.5],
                class: (i % 2) as u32,
                task: 0,
            })
            .collect();
        let refs: Vec<&Sample> = rows.iter().collect();
        let table = SimilarityTable::new(&p, &refs, &[3]).unwrap();
        assert_eq!(table.classes(), &[0, 1, 3]);
        let mut coef = table.coefficients();
        let mut expected = p.zeros_like();
        for (i, row) in rows.iter().enumerate() {
            for c in 0..3 {
                let w = 0.1 * (i as f64 + 1.0) - 0.07 * c as f64;
                coef.add(i, c, w);
                let g = p.pair_similarity_grad(&row.x, table.classes()[c]).unwrap();
                expected.axpy(w, &g);
                let s = p.pair_similarity(&row.x, table.classes()[c]).unwrap();
                assert!((s - table.sim(i, c)).abs() < 1e-14);
            }
        }
        let got = table.backprop(&p, &refs, &coef);
        for (a, b) in got.values().iter().zip(expected.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
    }
}
