//! Sparse multiclass averaged perceptron with softmax scoring.

use crate::algebra::{RelLabel, ALL_LABELS, LABEL_COUNT};
use crate::{Result, TempRelError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A sparse feature vector. Zero-valued entries are never stored, and
/// iteration is ordered by feature id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(BTreeMap<String, f64>);

impl FeatureVector {
    pub fn new() -> FeatureVector {
        FeatureVector::default()
    }

    /// Indicator features: every id gets value 1.0.
    pub fn indicators<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> FeatureVector {
        let mut fv = FeatureVector::new();
        for id in ids {
            fv.set(id.into(), 1.0);
        }
        fv
    }

    pub fn set(&mut self, id: String, value: f64) {
        if value == 0.0 {
            self.0.remove(&id);
        } else {
            self.0.insert(id, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-label softmax scores; entries sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub [f64; LABEL_COUNT]);

impl ScoreVector {
    pub fn get(&self, l: RelLabel) -> f64 {
        self.0[l.index()]
    }

    /// The highest-scoring label, ties broken by canonical label order.
    /// Ties go to the label latest in canonical order, i.e. the least
    /// committal one (vague beats simultaneous beats ... beats before).
    pub fn argmax(&self) -> RelLabel {
        let mut best = RelLabel::Vague;
        for l in ALL_LABELS.into_iter().rev() {
            if self.0[l.index()] > self.0[best.index()] {
                best = l;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Default)]
struct Cell {
    weight: f64,
    total: f64,
    /// Update step at which `weight` took its current value.
    since: u64,
}

/// Sparse per-label weights with lazily maintained cumulative sums for
/// averaging.
#[derive(Debug, Clone, Default)]
pub struct WeightMatrix {
    cells: [BTreeMap<String, Cell>; LABEL_COUNT],
    averaged: Option<[BTreeMap<String, f64>; LABEL_COUNT]>,
    updates: u64,
}

impl WeightMatrix {
    pub fn new() -> WeightMatrix {
        WeightMatrix::default()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_finalized(&self) -> bool {
        self.averaged.is_some()
    }

    fn raw_dot(&self, l: RelLabel, x: &FeatureVector) -> f64 {
        let map = &self.cells[l.index()];
        x.iter()
            .map(|(id, v)| map.get(id).map_or(0.0, |c| c.weight) * v)
            .sum()
    }

    fn averaged_dot(&self, l: RelLabel, x: &FeatureVector) -> f64 {
        let map = &self.averaged.as_ref().expect("finalized")[l.index()];
        x.iter()
            .map(|(id, v)| map.get(id).copied().unwrap_or(0.0) * v)
            .sum()
    }

    /// Dot products per label: averaged weights once finalized, raw weights
    /// during training.
    pub fn dots(&self, x: &FeatureVector) -> [f64; LABEL_COUNT] {
        let mut out = [0.0; LABEL_COUNT];
        for l in ALL_LABELS {
            out[l.index()] = if self.averaged.is_some() {
                self.averaged_dot(l, x)
            } else {
                self.raw_dot(l, x)
            };
        }
        out
    }

    pub fn predict(&self, x: &FeatureVector) -> RelLabel {
        ScoreVector(self.dots(x)).argmax()
    }

    fn add_to(&mut self, l: RelLabel, x: &FeatureVector, sign: f64) {
        let t = self.updates;
        let map = &mut self.cells[l.index()];
        for (id, v) in x.iter() {
            let cell = map.entry(id.to_string()).or_default();
            // The outgoing value was in effect for steps since..t-1.
            cell.total += cell.weight * (t - cell.since) as f64;
            cell.since = t;
            cell.weight += sign * v;
        }
    }

    /// One mistake-driven update. The averaging clock advances whether or
    /// not the prediction was correct.
    pub fn update(&mut self, x: &FeatureVector, gold: RelLabel) {
        assert!(!self.is_finalized(), "cannot update a finalized model");
        self.updates += 1;
        let pred = self.predict(x);
        if pred != gold {
            self.add_to(gold, x, 1.0);
            self.add_to(pred, x, -1.0);
        }
    }

    /// Freezes the averaged weights: (1/T) * sum of the weight vectors after
    /// each of the T updates.
    pub fn finalize(&mut self) {
        let t = self.updates;
        let mut avg: [BTreeMap<String, f64>; LABEL_COUNT] = Default::default();
        for l in 0..LABEL_COUNT {
            for (id, cell) in &self.cells[l] {
                // The current value has been in effect for steps since..t.
                let total = cell.total + cell.weight * (t + 1 - cell.since) as f64;
                if t > 0 && total != 0.0 {
                    avg[l].insert(id.clone(), total / t as f64);
                }
            }
        }
        self.averaged = Some(avg);
    }

    pub fn averaged_weights(&self) -> &[BTreeMap<String, f64>; LABEL_COUNT] {
        self.averaged.as_ref().expect("model not finalized")
    }
}

/// Softmax over the model's per-label dot products, with max-subtraction.
pub fn score(model: &WeightMatrix, x: &FeatureVector) -> ScoreVector {
    let dots = model.dots(x);
    softmax(&dots)
}

pub fn softmax(dots: &[f64; LABEL_COUNT]) -> ScoreVector {
    let max = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; LABEL_COUNT];
    let mut sum = 0.0;
    for i in 0..LABEL_COUNT {
        out[i] = (dots[i] - max).exp();
        sum += out[i];
    }
    for v in &mut out {
        *v /= sum;
    }
    ScoreVector(out)
}

/// Metadata recorded alongside serialized models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub epochs: u32,
    pub seed: u64,
    pub updates: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    labels: Vec<String>,
    weights: BTreeMap<String, BTreeMap<String, f64>>,
    meta: ModelMeta,
}

/// Serializes the averaged weights as canonical JSON.
pub fn serialize_model(model: &WeightMatrix, epochs: u32, seed: u64) -> String {
    let avg = model.averaged_weights();
    let mut weights = BTreeMap::new();
    for l in ALL_LABELS {
        weights.insert(l.name().to_string(), avg[l.index()].clone());
    }
    let j = ModelJson {
        labels: ALL_LABELS.iter().map(|l| l.name().to_string()).collect(),
        weights,
        meta: ModelMeta {
            epochs,
            seed,
            updates: model.updates(),
        },
    };
    serde_json::to_string_pretty(&j).expect("model serializes")
}

pub fn deserialize_model(s: &str) -> Result<WeightMatrix> {
    let j: ModelJson = serde_json::from_str(s).map_err(|e| TempRelError::Parse {
        locus: "model".into(),
        msg: e.to_string(),
    })?;
    let mut avg: [BTreeMap<String, f64>; LABEL_COUNT] = Default::default();
    for (name, map) in j.weights {
        let l = RelLabel::from_name(&name)
            .ok_or_else(|| TempRelError::Validation(format!("unknown label {name:?}")))?;
        avg[l.index()] = map;
    }
    Ok(WeightMatrix {
        cells: Default::default(),
        averaged: Some(avg),
        updates: j.meta.updates,
    })
}

/// Trains an averaged perceptron: shuffles the examples each epoch with a
/// generator seeded by (seed, epoch), applies mistake-driven updates, and
/// finalizes the average.
pub fn train(
    examples: &[(FeatureVector, RelLabel)],
    epochs: u32,
    seed: u64,
) -> Result<WeightMatrix> {
    if examples.is_empty() {
        return Err(TempRelError::EmptyTrainingSet);
    }
    assert!(epochs >= 1);
    let mut model = WeightMatrix::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(epoch as u64),
        );
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, gold) = &examples[i];
            model.update(x, *gold);
        }
    }
    model.finalize();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelLabel::*;

    fn fv(ids: &[&str]) -> FeatureVector {
        FeatureVector::indicators(ids.iter().copied())
    }

    #[test]
    fn uniform_scores_on_zero_model() {
        let m = WeightMatrix::new();
        let s = score(&m, &fv(&["a", "b"]));
        for l in ALL_LABELS {
            assert!((s.get(l) - 1.0 / 6.0).abs() < 1e-12);
        }
        // Empty vector too.
        let s = score(&m, &FeatureVector::new());
        assert!((s.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_arithmetic_check() {
        // w_before.x = ln 5, all other dots 0: f_before = 5/10.
        let mut dots = [0.0; LABEL_COUNT];
        dots[Before.index()] = 5.0_f64.ln();
        let s = softmax(&dots);
        assert!((s.get(Before) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let dots = [0.3, -1.2, 4.5, 0.0, 2.2, -0.7];
        let shifted: [f64; 6] = core::array::from_fn(|i| dots[i] + 123.4);
        let a = softmax(&dots);
        let b = softmax(&shifted);
        for i in 0..6 {
            assert!((a.0[i] - b.0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn update_rule_by_hand() {
        // Zero model, gold = vague: tie broken to "vague", no update.
        let mut m = WeightMatrix::new();
        m.update(&fv(&["f1"]), Vague);
        assert_eq!(m.updates(), 1);
        assert!(m.cells.iter().all(|c| c.is_empty()));

        // Zero model, gold = after: prediction "vague" by tie-break.
        let mut m = WeightMatrix::new();
        m.update(&fv(&["f1"]), After);
        assert_eq!(m.cells[After.index()]["f1"].weight, 1.0);
        assert_eq!(m.cells[Vague.index()]["f1"].weight, -1.0);
    }

    #[test]
    fn averaging_matches_naive_oracle() {
        // Replay the same update stream through a dense naive accumulator.
        let stream: Vec<(FeatureVector, RelLabel)> = vec![
            (fv(&["a"]), After),
            (fv(&["a", "b"]), Before),
            (fv(&["b"]), Includes),
            (fv(&["a"]), After),
            (fv(&["c", "b"]), Vague),
        ];
        let mut m = WeightMatrix::new();
        let mut naive_sum: [BTreeMap<String, f64>; LABEL_COUNT] = Default::default();
        let mut raw: [BTreeMap<String, f64>; LABEL_COUNT] = Default::default();
        for (x, gold) in &stream {
            // Mirror the update on the naive side.
            let dots: Vec<f64> = (0..LABEL_COUNT)
                .map(|l| x.iter().map(|(id, v)| raw[l].get(id).copied().unwrap_or(0.0) * v).sum())
                .collect();
            let mut pred = LABEL_COUNT - 1;
            for l in (0..LABEL_COUNT).rev() {
                if dots[l] > dots[pred] {
                    pred = l;
                }
            }
            if pred != gold.index() {
                for (id, v) in x.iter() {
                    *raw[gold.index()].entry(id.to_string()).or_default() += v;
                    *raw[pred].entry(id.to_string()).or_default() -= v;
                }
            }
            for l in 0..LABEL_COUNT {
                for (id, w) in &raw[l] {
                    *naive_sum[l].entry(id.clone()).or_default() += w;
                }
            }
            m.update(x, *gold);
        }
        let t = stream.len() as f64;
        m.finalize();
        let avg = m.averaged_weights();
        for l in 0..LABEL_COUNT {
            for (id, total) in &naive_sum[l] {
                let expect = total / t;
                let got = avg[l].get(id).copied().unwrap_or(0.0);
                assert!(
                    (got - expect).abs() < 1e-9,
                    "label {l} feature {id}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let examples: Vec<(FeatureVector, RelLabel)> = ALL_LABELS
            .iter()
            .map(|&l| (fv(&[&format!("only_{}", l.name())]), l))
            .collect();
        let model = train(&examples, 2, 7).unwrap();
        for (x, gold) in &examples {
            assert_eq!(model.predict(x), *gold);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let examples: Vec<(FeatureVector, RelLabel)> = (0..40)
            .map(|i| {
                (
                    fv(&[&format!("f{}", i % 7), &format!("g{}", i % 3)]),
                    ALL_LABELS[i % 6],
                )
            })
            .collect();
        let a = serialize_model(&train(&examples, 5, 42).unwrap(), 5, 42);
        let b = serialize_model(&train(&examples, 5, 42).unwrap(), 5, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_training_set_is_error() {
        assert!(matches!(train(&[], 1, 0), Err(TempRelError::EmptyTrainingSet)));
    }

    #[test]
    fn model_round_trips_through_json() {
        let examples: Vec<(FeatureVector, RelLabel)> = (0..20)
            .map(|i| (fv(&[&format!("f{i}")]), ALL_LABELS[i % 6]))
            .collect();
        let model = train(&examples, 3, 1).unwrap();
        let json = serialize_model(&model, 3, 1);
        let back = deserialize_model(&json).unwrap();
        let x = fv(&["f0", "f7"]);
        assert_eq!(score(&model, &x).0, score(&back, &x).0);
    }
}

