//! Sequence classification from reservoir features.

use std::f64::consts::PI;

use crate::driver::{Driver, LeakyEsnDriver};
use crate::embed::{make_linear_embedding, Embedding};
use crate::forecast::EsnParams;
use crate::error::{check_dim, Error, Result};
use crate::parallel::map_indices;
use crate::readout::LinearReadout;
use crate::rng::{seeded_rng, tags, RngSpec, SeededRng};
use crate::series::{ReservoirState, TimeSeries};
use crate::train::fit_dense_readout;

/// How a sequence of reservoir states is summarized into a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateRepr {
    /// The last state.
    #[default]
    Final,
    /// The mean of the states after the spinup.
    Mean,
}

/// Single-reservoir classifier with a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    embedding: Embedding,
    driver: Driver,
    readout: LinearReadout,
    state_repr: StateRepr,
}

impl ClassifierModel {
    pub fn new(embedding: Embedding, driver: Driver, readout: LinearReadout, state_repr: StateRepr) -> Result<Self> {
        if driver.chunks() != 1 || embedding.chunks() != 1 || readout.chunks() != 1 {
            return Err(Error::InvalidParameter {
                name: "chunks",
                reason: "classifiers use a single reservoir".into(),
            });
        }
        if readout.out_dim() < 2 {
            return Err(Error::InvalidParameter {
                name: "n_classes",
                reason: format!("need at least 2 classes, got {}", readout.out_dim()),
            });
        }
        check_dim("classifier embedding res_dim", driver.res_dim(), embedding.res_dim())?;
        check_dim("classifier readout res_dim", driver.res_dim(), readout.res_dim())?;
        Ok(Self {
            embedding,
            driver,
            readout,
            state_repr,
        })
    }

    /// Untrained single-reservoir leaky-ESN classifier drawn from
    /// `params.seed`; `chunks` and `locality` are ignored.
    pub fn random(data_dim: usize, n_classes: usize, params: &EsnParams, state_repr: StateRepr) -> Result<Self> {
        let rng = seeded_rng(RngSpec::new(params.seed));
        let emb = make_linear_embedding(data_dim, params.res_dim, 1, 0, params.embedding_scaling, &rng)?;
        let driver = LeakyEsnDriver::random(1, params.res_dim, params.leak_rate, params.spectral_radius, params.bias, &rng)?;
        Self::untrained(emb.into(), driver.into(), n_classes, state_repr)
    }

    pub fn untrained(embedding: Embedding, driver: Driver, n_classes: usize, state_repr: StateRepr) -> Result<Self> {
        let readout = LinearReadout::zeros(n_classes, driver.res_dim(), 1)?;
        Self::new(embedding, driver, readout, state_repr)
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn readout(&self) -> &LinearReadout {
        &self.readout
    }

    pub fn state_repr(&self) -> StateRepr {
        self.state_repr
    }

    pub fn n_classes(&self) -> usize {
        self.readout.out_dim()
    }

    pub fn res_dim(&self) -> usize {
        self.driver.res_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.embedding.in_dim()
    }

    pub fn with_readout(&self, readout: LinearReadout) -> Result<Self> {
        Self::new(self.embedding.clone(), self.driver.clone(), readout, self.state_repr)
    }

    pub fn with_state_repr(mut self, state_repr: StateRepr) -> Self {
        self.state_repr = state_repr;
        self
    }
}

/// Feature vector of `seq`: the final state, or the mean of states
/// `spinup..T` in mean mode.
pub fn features(model: &ClassifierModel, seq: &TimeSeries, r0: &ReservoirState, spinup: usize) -> Result<Vec<f64>> {
    check_dim("features input", model.data_dim(), seq.dim())?;
    let n = model.res_dim();
    r0.check_shape("features initial state", 1, n)?;
    if model.state_repr == StateRepr::Mean && spinup >= seq.len() {
        return Err(Error::TooShort {
            needed: spinup + 1,
            got: seq.len(),
        });
    }
    let mut r = r0.clone();
    let mut next = r.clone();
    let mut emb = vec![0.0; n];
    let mut scratch = Vec::new();
    let mut sum = vec![0.0; n];
    for (t, u) in seq.rows().enumerate() {
        model.embedding.embed_into(u, &mut scratch, &mut emb)?;
        model.driver.advance_into(&r, &emb, &mut next)?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: t });
        }
        std::mem::swap(&mut r, &mut next);
        if t >= spinup {
            sum.iter_mut().zip(r.as_slice()).for_each(|(s, v)| *s += v);
        }
    }
    Ok(match model.state_repr {
        StateRepr::Final => r.into_vec(),
        StateRepr::Mean => {
            let count = (seq.len() - spinup) as f64;
            sum.into_iter().map(|s| s / count).collect()
        }
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for `seq`, starting from `r0` (zeros if `None`).
pub fn classify(model: &ClassifierModel, seq: &TimeSeries, r0: Option<&ReservoirState>, spinup: usize) -> Result<Vec<f64>> {
    let zero;
    let r0 = match r0 {
        Some(r) => r,
        None => {
            zero = ReservoirState::zeros(1, model.res_dim());
            &zero
        }
    };
    let f = features(model, seq, r0, spinup)?;
    let mut logits = vec![0.0; model.n_classes()];
    model.readout.read_into(&f, &mut logits);
    Ok(softmax(&logits))
}

/// Classifies each sequence from the zero state.
pub fn classify_batch(model: &ClassifierModel, seqs: &[TimeSeries], spinup: usize) -> Result<Vec<Vec<f64>>> {
    map_indices(seqs.len(), |i| classify(model, &seqs[i], None, spinup)).into_iter().collect()
}

/// Index of the largest probability.
pub fn predicted_class(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, p)| if *p > best.1 { (i, *p) } else { best })
        .0
}

/// Outcome of [`train_classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTraining {
    pub model: ClassifierModel,
    /// Classes with no training example; their readout rows are driven only
    /// by the regularizer.
    pub empty_classes: Vec<usize>,
}

/// Regresses per-sequence features onto one-hot labels.
pub fn train_classifier(
    model: &ClassifierModel,
    train_seqs: &[TimeSeries],
    labels: &[usize],
    spinup: usize,
    beta: f64,
) -> Result<ClassifierTraining> {
    check_dim("train_classifier labels", train_seqs.len(), labels.len())?;
    if train_seqs.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let k = model.n_classes();
    if let Some(bad) = labels.iter().find(|l| **l >= k) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: format!("label {bad} out of range for {k} classes"),
        });
    }
    let (len, dim) = (train_seqs[0].len(), train_seqs[0].dim());
    for s in train_seqs {
        check_dim("train_classifier sequence length", len, s.len())?;
        check_dim("train_classifier sequence dim", dim, s.dim())?;
    }
    if spinup >= len {
        return Err(Error::TooShort { needed: spinup + 1, got: len });
    }
    let n = model.res_dim();
    let r0 = ReservoirState::zeros(1, n);
    let feats: Vec<Vec<f64>> = map_indices(train_seqs.len(), |i| features(model, &train_seqs[i], &r0, spinup))
        .into_iter()
        .collect::<Result<_>>()?;
    let x: Vec<f64> = feats.concat();
    let mut y = vec![0.0; labels.len() * k];
    for (i, l) in labels.iter().enumerate() {
        y[i * k + l] = 1.0;
    }
    let readout = fit_dense_readout(&x, &y, labels.len(), n, k, beta)?;
    let empty_classes = (0..k).filter(|c| !labels.contains(c)).collect();
    Ok(ClassifierTraining {
        model: model.with_readout(readout)?,
        empty_classes,
    })
}

/// Labelled multichannel sinusoids: class `c` oscillates at frequency
/// `0.5 (c + 1)`, channel `j` at `j + 1` times that, plus additive Gaussian
/// noise, sampled on `linspace(0, 4 pi, seq_len)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidTask {
    pub n_classes: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub noise: f64,
}

impl Default for SinusoidTask {
    fn default() -> Self {
        Self {
            n_classes: 3,
            seq_len: 200,
            channels: 3,
            noise: 0.05,
        }
    }
}

impl SinusoidTask {
    /// `per_class` sequences of each class, in class order. `stream`
    /// separates independent draws (e.g. train and test) from one seed.
    pub fn generate(&self, per_class: usize, rng: &SeededRng, stream: u64) -> Result<(Vec<TimeSeries>, Vec<usize>)> {
        if self.seq_len < 2 || self.channels == 0 || self.n_classes < 2 {
            return Err(Error::InvalidParameter {
                name: "sinusoid task",
                reason: "need seq_len >= 2, channels >= 1, n_classes >= 2".into(),
            });
        }
        let mut r = rng.substream(tags::DATASET).child(stream);
        let span = 4.0 * PI;
        let dt = span / (self.seq_len - 1) as f64;
        let mut seqs = Vec::with_capacity(per_class * self.n_classes);
        let mut labels = Vec::with_capacity(per_class * self.n_classes);
        for class in 0..self.n_classes {
            let freq = 0.5 * (class + 1) as f64;
            for _ in 0..per_class {
                let mut values = Vec::with_capacity(self.seq_len * self.channels);
                for i in 0..self.seq_len {
                    let t = i as f64 * dt;
                    for j in 0..self.channels {
                        values.push((freq * (j + 1) as f64 * t).sin() + self.noise * r.normal());
                    }
                }
                seqs.push(TimeSeries::new(values, self.channels, Some(dt), 0.0)?);
                labels.push(class);
            }
        }
        Ok((seqs, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::LeakyEsnDriver;
    use crate::embed::make_linear_embedding;
    use crate::rng::{seeded_rng, RngSpec};

    fn model(n: usize, repr: StateRepr, seed: u64) -> ClassifierModel {
        let rng = seeded_rng(RngSpec::new(seed));
        let emb = make_linear_embedding(2, n, 1, 0, 0.5, &rng).unwrap();
        let drv = LeakyEsnDriver::random(1, n, 0.5, 0.8, 0.2, &rng).unwrap();
        ClassifierModel::untrained(emb.into(), drv.into(), 3, repr).unwrap()
    }

    fn seq(len: usize, f: impl Fn(usize) -> f64) -> TimeSeries {
        TimeSeries::new((0..len * 2).map(f).collect(), 2, Some(0.1), 0.0).unwrap()
    }

    #[test]
    fn zero_readout_is_uniform() {
        let m = model(8, StateRepr::Final, 1);
        let p = classify(&m, &seq(10, |i| i as f64 * 0.1), None, 0).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates_and_is_shift_invariant() {
        let p = softmax(&[1000.0, 0.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-300_f64.max(1e-15));
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_with_last_step_equals_final() {
        let s = seq(12, |i| (i as f64 * 0.3).sin());
        let r0 = ReservoirState::zeros(1, 8);
        let fin = features(&model(8, StateRepr::Final, 2), &s, &r0, 0).unwrap();
        let mean = features(&model(8, StateRepr::Mean, 2), &s, &r0, 11).unwrap();
        assert_eq!(fin, mean);
        assert!(matches!(
            features(&model(8, StateRepr::Mean, 2), &s, &r0, 12),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn features_match_unrolled_loop() {
        let m = model(8, StateRepr::Mean, 3);
        let s = seq(6, |i| (i as f64 * 0.7).cos());
        let mut r = ReservoirState::zeros(1, 8);
        let mut acc = vec![0.0; 8];
        for t in 0..6 {
            r = m.driver().advance(&r, &m.embedding().embed(s.row(t)).unwrap()).unwrap();
            if t >= 2 {
                acc.iter_mut().zip(r.as_slice()).for_each(|(a, v)| *a += v);
            }
        }
        let got = features(&m, &s, &ReservoirState::zeros(1, 8), 2).unwrap();
        for (g, a) in got.iter().zip(acc) {
            assert!((g - a / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_input_final_and_mean_agree() {
        let s = seq(3000, |i| if i % 2 == 0 { 0.4 } else { -0.2 });
        let r0 = ReservoirState::zeros(1, 10);
        let fin = features(&model(10, StateRepr::Final, 4), &s, &r0, 0).unwrap();
        let mean = features(&model(10, StateRepr::Mean, 4), &s, &r0, 1000).unwrap();
        for (a, b) in fin.iter().zip(mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_clusters_train_perfectly() {
        let m = model(20, StateRepr::Final, 5);
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for k in 0..5 {
                let level = c as f64 - 1.0 + 0.02 * k as f64;
                seqs.push(seq(30, |_| level));
                labels.push(c);
            }
        }
        let trained = train_classifier(&m, &seqs, &labels, 0, 1e-8).unwrap();
        assert!(trained.empty_classes.is_empty());
        for (s, l) in seqs.iter().zip(&labels) {
            assert_eq!(predicted_class(&classify(&trained.model, s, None, 0).unwrap()), *l);
        }
        let batch = classify_batch(&trained.model, &seqs, 0).unwrap();
        for (s, p) in seqs.iter().zip(batch) {
            assert_eq!(p, classify(&trained.model, s, None, 0).unwrap());
        }
    }

    #[test]
    fn empty_class_is_reported_not_fatal() {
        let m = model(8, StateRepr::Final, 6);
        let seqs = vec![seq(5, |i| i as f64 * 0.1), seq(5, |i| -(i as f64) * 0.1)];
        let out = train_classifier(&m, &seqs, &[0, 1], 0, 1e-6).unwrap();
        assert_eq!(out.empty_classes, vec![2]);
        assert!(train_classifier(&m, &seqs, &[0, 3], 0, 1e-6).is_err());
    }

    #[test]
    fn dataset_shape() {
        let (seqs, labels) = SinusoidTask::default().generate(4, &seeded_rng(RngSpec::new(42)), 0).unwrap();
        assert_eq!(seqs.len(), 12);
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        assert!(seqs.iter().all(|s| s.len() == 200 && s.dim() == 3));
    }
}
