//! Factor matrices and the SGD update rule.

use std::fmt;
use std::sync::atomic::{AtomicU16, AtomicU32, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::f16::{decode_f16, encode_f16};
use crate::rng::rng_from;
use crate::{Error, Result};

/// One observed rating `r` at row `u`, column `v`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub u: u32,
    pub v: u32,
    pub r: f32,
}

impl Sample {
    pub fn new(u: u32, v: u32, r: f32) -> Self {
        Sample { u, v, r }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k: usize,
    pub lambda_p: f32,
    pub lambda_q: f32,
    pub alpha: f64,
    pub beta: f64,
}

impl Hyperparams {
    pub fn new(k: usize, lambda: f32, alpha: f64, beta: f64) -> Result<Self> {
        let h = Hyperparams {
            k,
            lambda_p: lambda,
            lambda_q: lambda,
            alpha,
            beta,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::usage("rank k must be at least 1"));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_q >= 0.0) {
            return Err(Error::usage("regularizers must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::usage("initial learning rate must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::usage("learning-rate decay must be non-negative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LearningRateSchedule {
        LearningRateSchedule {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// `s_t = alpha / (1 + beta * t^1.5)`, with `t` counted from zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateSchedule {
    pub alpha: f64,
    pub beta: f64,
}

impl LearningRateSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        lr_at_epoch(self, epoch)
    }
}

pub fn lr_at_epoch(schedule: &LearningRateSchedule, t: usize) -> f64 {
    schedule.alpha / (1.0 + schedule.beta * (t as f64).powf(1.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Full32,
    Half16,
}

impl Precision {
    pub fn bytes_per_element(self) -> usize {
        match self {
            Precision::Full32 => 4,
            Precision::Half16 => 2,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Full32 => "full32",
            Precision::Half16 => "half16",
        })
    }
}

enum Storage {
    Full(Box<[AtomicU32]>),
    Half(Box<[AtomicU16]>),
}

/// Dense row-major factor matrix, one length-`k` vector per entity.
///
/// Elements are individually atomic so that lock-free workers sharing a
/// matrix observe stale but never torn values. All accesses use relaxed
/// ordering; cross-thread visibility at epoch boundaries comes from the
/// joins and barriers of the schedulers.
pub struct FeatureMatrix {
    rows: usize,
    k: usize,
    storage: Storage,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, k: usize, precision: Precision) -> Self {
        let len = rows * k;
        let storage = match precision {
            Precision::Full32 => Storage::Full((0..len).map(|_| AtomicU32::new(0)).collect()),
            Precision::Half16 => Storage::Half((0..len).map(|_| AtomicU16::new(0)).collect()),
        };
        FeatureMatrix { rows, k, storage }
    }

    /// Build from row-major values; half16 storage rounds each value.
    pub fn from_values(rows: usize, k: usize, precision: Precision, values: &[f32]) -> Result<Self> {
        if values.len() != rows * k {
            return Err(Error::usage(format!(
                "expected {} values for a {rows}x{k} matrix, got {}",
                rows * k,
                values.len()
            )));
        }
        let m = FeatureMatrix::zeros(rows, k, precision);
        for (i, &x) in values.iter().enumerate() {
            m.store(i, x);
        }
        Ok(m)
    }

    /// Rebuild from words as returned by [`FeatureMatrix::raw_words`].
    pub fn from_raw_words(rows: usize, k: usize, precision: Precision, words: &[u32]) -> Result<Self> {
        if words.len() != rows * k {
            return Err(Error::format(format!(
                "expected {} words for a {rows}x{k} matrix, got {}",
                rows * k,
                words.len()
            )));
        }
        let storage = match precision {
            Precision::Full32 => Storage::Full(words.iter().map(|&w| AtomicU32::new(w)).collect()),
            Precision::Half16 => {
                if words.iter().any(|&w| w > u16::MAX as u32) {
                    return Err(Error::format("half16 word out of range"));
                }
                Storage::Half(words.iter().map(|&w| AtomicU16::new(w as u16)).collect())
            }
        };
        Ok(FeatureMatrix { rows, k, storage })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn precision(&self) -> Precision {
        match self.storage {
            Storage::Full(_) => Precision::Full32,
            Storage::Half(_) => Precision::Half16,
        }
    }

    #[inline]
    fn load(&self, idx: usize) -> f32 {
        match &self.storage {
            Storage::Full(d) => f32::from_bits(d[idx].load(Ordering::Relaxed)),
            Storage::Half(d) => decode_f16(d[idx].load(Ordering::Relaxed)),
        }
    }

    /// Stores `x` and returns whether the stored value is finite.
    #[inline]
    fn store(&self, idx: usize, x: f32) -> bool {
        match &self.storage {
            Storage::Full(d) => {
                d[idx].store(x.to_bits(), Ordering::Relaxed);
                x.is_finite()
            }
            Storage::Half(d) => {
                let h = encode_f16(x);
                d[idx].store(h, Ordering::Relaxed);
                h & 0x7c00 != 0x7c00
            }
        }
    }

    pub fn get(&self, row: usize, d: usize) -> f32 {
        assert!(row < self.rows && d < self.k, "index ({row}, {d}) out of range");
        self.load(row * self.k + d)
    }

    pub fn set(&self, row: usize, d: usize, x: f32) {
        assert!(row < self.rows && d < self.k, "index ({row}, {d}) out of range");
        self.store(row * self.k + d, x);
    }

    /// Widen row `row` into `out` (length `k`).
    #[inline]
    pub fn read_row(&self, row: usize, out: &mut [f32]) {
        let base = row * self.k;
        match &self.storage {
            Storage::Full(d) => {
                for (o, a) in out.iter_mut().zip(&d[base..base + self.k]) {
                    *o = f32::from_bits(a.load(Ordering::Relaxed));
                }
            }
            Storage::Half(d) => {
                for (o, a) in out.iter_mut().zip(&d[base..base + self.k]) {
                    *o = decode_f16(a.load(Ordering::Relaxed));
                }
            }
        }
    }

    /// Write row `row`; returns false if any stored element is non-finite.
    #[inline]
    pub fn write_row(&self, row: usize, vals: &[f32]) -> bool {
        let base = row * self.k;
        let mut finite = true;
        for (d, &x) in vals.iter().enumerate().take(self.k) {
            finite &= self.store(base + d, x);
        }
        finite
    }

    pub fn row(&self, row: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.k];
        self.read_row(row, &mut out);
        out
    }

    pub fn to_vec(&self) -> Vec<f32> {
        (0..self.rows * self.k).map(|i| self.load(i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.rows * self.k).all(|i| self.load(i).is_finite())
    }

    /// Raw storage words, widened to u32 (f32 bits or f16 bits).
    pub fn raw_words(&self) -> Vec<u32> {
        match &self.storage {
            Storage::Full(d) => d.iter().map(|a| a.load(Ordering::Relaxed)).collect(),
            Storage::Half(d) => d.iter().map(|a| a.load(Ordering::Relaxed) as u32).collect(),
        }
    }

    /// True when both matrices have the same shape, precision and bits.
    pub fn bitwise_eq(&self, other: &FeatureMatrix) -> bool {
        self.rows == other.rows
            && self.k == other.k
            && self.precision() == other.precision()
            && self.raw_words() == other.raw_words()
    }

    /// Copy rows `start..start + len` into a new matrix without re-rounding.
    pub fn segment(&self, start: usize, len: usize) -> FeatureMatrix {
        let (lo, hi) = (start * self.k, (start + len) * self.k);
        let storage = match &self.storage {
            Storage::Full(d) => Storage::Full(
                d[lo..hi]
                    .iter()
                    .map(|a| AtomicU32::new(a.load(Ordering::Relaxed)))
                    .collect(),
            ),
            Storage::Half(d) => Storage::Half(
                d[lo..hi]
                    .iter()
                    .map(|a| AtomicU16::new(a.load(Ordering::Relaxed)))
                    .collect(),
            ),
        };
        FeatureMatrix {
            rows: len,
            k: self.k,
            storage,
        }
    }

    /// Overwrite rows `start..start + seg.rows()` with the contents of `seg`.
    pub fn write_segment(&self, start: usize, seg: &FeatureMatrix) {
        assert_eq!(self.k, seg.k);
        assert!(start + seg.rows <= self.rows);
        let lo = start * self.k;
        match (&self.storage, &seg.storage) {
            (Storage::Full(dst), Storage::Full(src)) => {
                for (d, s) in dst[lo..].iter().zip(src.iter()) {
                    d.store(s.load(Ordering::Relaxed), Ordering::Relaxed);
                }
            }
            (Storage::Half(dst), Storage::Half(src)) => {
                for (d, s) in dst[lo..].iter().zip(src.iter()) {
                    d.store(s.load(Ordering::Relaxed), Ordering::Relaxed);
                }
            }
            _ => panic!("segment precision mismatch"),
        }
    }

    pub fn size_bytes(&self) -> usize {
        self.rows * self.k * self.precision().bytes_per_element()
    }
}

impl Clone for FeatureMatrix {
    fn clone(&self) -> Self {
        self.segment(0, self.rows)
    }
}

impl fmt::Debug for FeatureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMatrix")
            .field("rows", &self.rows)
            .field("k", &self.k)
            .field("precision", &self.precision())
            .finish()
    }
}

/// Elements i.i.d. uniform in `[0, scale)`; `scale` defaults to `1/sqrt(k)`.
pub fn init_features(rows: usize, k: usize, seed: u64, scale: Option<f32>, precision: Precision) -> FeatureMatrix {
    let scale = scale.unwrap_or(1.0 / (k as f32).sqrt());
    let mut rng = rng_from(seed);
    let values: Vec<f32> = (0..rows * k)
        .map(|_| {
            if scale == 0.0 {
                0.0
            } else {
                // the product can round up to `scale` itself; keep the interval half-open
                let x = rng.random::<f32>() * scale;
                if x < scale {
                    x
                } else {
                    scale.next_down()
                }
            }
        })
        .collect();
    FeatureMatrix::from_values(rows, k, precision, &values).expect("shape matches")
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict(p: &FeatureMatrix, q: &FeatureMatrix, u: usize, v: usize) -> Result<f32> {
    if p.k != q.k {
        return Err(Error::usage(format!("rank mismatch: P has k={}, Q has k={}", p.k, q.k)));
    }
    if u >= p.rows || v >= q.rows {
        return Err(Error::usage(format!(
            "index ({u}, {v}) out of range for {}x{} model",
            p.rows, q.rows
        )));
    }
    let mut pu = vec![0.0; p.k];
    let mut qv = vec![0.0; q.k];
    p.read_row(u, &mut pu);
    q.read_row(v, &mut qv);
    Ok(dot(&pu, &qv))
}

/// Reusable buffers for the update kernel.
pub struct UpdateKernel {
    pu: Vec<f32>,
    qv: Vec<f32>,
    lambda_p: f32,
    lambda_q: f32,
}

impl UpdateKernel {
    pub fn new(hyper: &Hyperparams) -> Self {
        UpdateKernel {
            pu: vec![0.0; hyper.k],
            qv: vec![0.0; hyper.k],
            lambda_p: hyper.lambda_p,
            lambda_q: hyper.lambda_q,
        }
    }

    /// Apply one SGD step for sample `s`. Error and both gradients come from
    /// the same pre-update snapshot of `p_u` and `q_v`. Returns false if a
    /// written element is non-finite.
    #[inline]
    pub fn apply(&mut self, p: &FeatureMatrix, q: &FeatureMatrix, s: Sample, rate: f32) -> bool {
        let (u, v) = (s.u as usize, s.v as usize);
        p.read_row(u, &mut self.pu);
        q.read_row(v, &mut self.qv);
        let err = s.r - dot(&self.pu, &self.qv);
        let (lp, lq) = (self.lambda_p, self.lambda_q);
        for (a, b) in self.pu.iter_mut().zip(self.qv.iter_mut()) {
            let (pa, qb) = (*a, *b);
            *a = pa + rate * (err * qb - lp * pa);
            *b = qb + rate * (err * pa - lq * qb);
        }
        let ok_p = p.write_row(u, &self.pu);
        let ok_q = q.write_row(v, &self.qv);
        ok_p && ok_q
    }
}

/// Single-sample update; see [`UpdateKernel::apply`].
pub fn sgd_update(p: &FeatureMatrix, q: &FeatureMatrix, s: Sample, rate: f32, hyper: &Hyperparams) -> bool {
    UpdateKernel::new(hyper).apply(p, q, s, rate)
}

/// Apply `sgd_update` to each sample of `order` at a fixed rate.
/// Stops at the first non-finite write and returns `None`.
pub(crate) fn serial_pass(
    order: &[Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    rate: f32,
    hyper: &Hyperparams,
) -> Option<usize> {
    let mut kernel = UpdateKernel::new(hyper);
    for &s in order {
        if !kernel.apply(p, q, s, rate) {
            return None;
        }
    }
    Some(order.len())
}

/// One serial epoch over `order` at `lr_at_epoch(t)`.
pub fn epoch_serial(
    order: &[Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    t: usize,
) -> Result<usize> {
    check_bounds(order, p.rows, q.rows)?;
    let rate = hyper.schedule().rate(t) as f32;
    serial_pass(order, p, q, rate, hyper).ok_or(Error::Diverged { epoch: t, report: None })
}

pub(crate) fn check_bounds(samples: &[Sample], m: usize, n: usize) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.u as usize >= m || s.v as usize >= n) {
        return Err(Error::usage(format!(
            "sample ({}, {}) outside a {m}x{n} matrix",
            s.u, s.v
        )));
    }
    Ok(())
}

/// Root mean squared error of `p_u . q_v` against `r`, in the stored domain.
pub fn rmse(samples: &[Sample], p: &FeatureMatrix, q: &FeatureMatrix) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::usage("rmse of an empty sample list"));
    }
    if p.k != q.k {
        return Err(Error::usage("rank mismatch between P and Q"));
    }
    check_bounds(samples, p.rows, q.rows)?;
    let mut pu = vec![0.0; p.k];
    let mut qv = vec![0.0; q.k];
    let mut sum = 0.0f64;
    for s in samples {
        p.read_row(s.u as usize, &mut pu);
        q.read_row(s.v as usize, &mut qv);
        let e = s.r as f64 - dot(&pu, &qv) as f64;
        sum += e * e;
    }
    Ok((sum / samples.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, k: usize, v: &[f32]) -> FeatureMatrix {
        FeatureMatrix::from_values(rows, k, Precision::Full32, v).unwrap()
    }

    fn hyper(k: usize, lambda: f32) -> Hyperparams {
        Hyperparams::new(k, lambda, 0.08, 0.3).unwrap()
    }

    #[test]
    fn learning_rate_examples() {
        let s = LearningRateSchedule { alpha: 0.08, beta: 0.3 };
        assert_eq!(s.rate(0), 0.08);
        assert!((s.rate(1) - 0.08 / 1.3).abs() < 1e-12);
        assert!((s.rate(1) - 0.0615385).abs() < 1e-7);
        let y = LearningRateSchedule { alpha: 0.08, beta: 0.2 };
        assert!((y.rate(4) - 0.0307692).abs() < 1e-7);
    }

    #[test]
    fn learning_rate_monotone() {
        let dec = LearningRateSchedule { alpha: 0.08, beta: 0.3 };
        let flat = LearningRateSchedule { alpha: 0.08, beta: 0.0 };
        for t in 0..100 {
            assert!(dec.rate(t + 1) < dec.rate(t));
            assert!(dec.rate(t) > 0.0);
            assert_eq!(flat.rate(t), 0.08);
        }
    }

    #[test]
    fn predict_examples() {
        let p = mat(1, 2, &[1.0, 0.0]);
        let q = mat(1, 2, &[0.0, 1.0]);
        assert_eq!(predict(&p, &q, 0, 0).unwrap(), 0.0);
        let ones = mat(1, 2, &[1.0, 1.0]);
        assert_eq!(predict(&ones, &ones, 0, 0).unwrap(), 2.0);
        let p = mat(1, 4, &[0.5; 4]);
        let q = mat(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(predict(&p, &q, 0, 0).unwrap(), 5.0);
        assert_eq!(predict(&q, &p, 0, 0).unwrap(), 5.0);
        assert!(matches!(predict(&p, &q, 1, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn update_hand_calculation() {
        let p = mat(1, 2, &[1.0, 0.0]);
        let q = mat(1, 2, &[0.0, 1.0]);
        assert!(sgd_update(&p, &q, Sample::new(0, 0, 1.0), 0.1, &hyper(2, 0.0)));
        assert_eq!(p.row(0), vec![1.0, 0.1]);
        assert_eq!(q.row(0), vec![0.1, 1.0]);

        let p = mat(1, 2, &[1.0, 0.0]);
        let q = mat(1, 2, &[0.0, 1.0]);
        sgd_update(&p, &q, Sample::new(0, 0, 1.0), 0.1, &hyper(2, 0.05));
        let (pr, qr) = (p.row(0), q.row(0));
        assert!((pr[0] - 0.995).abs() < 1e-7 && (pr[1] - 0.1).abs() < 1e-7);
        assert!((qr[0] - 0.1).abs() < 1e-7 && (qr[1] - 0.995).abs() < 1e-7);
    }

    #[test]
    fn update_is_identity_at_zero_error() {
        let p = mat(1, 3, &[0.5, 0.25, 1.0]);
        let q = mat(1, 3, &[2.0, 4.0, 0.5]);
        let r = predict(&p, &q, 0, 0).unwrap();
        sgd_update(&p, &q, Sample::new(0, 0, r), 0.3, &hyper(3, 0.0));
        assert_eq!(p.row(0), vec![0.5, 0.25, 1.0]);
        assert_eq!(q.row(0), vec![2.0, 4.0, 0.5]);
    }

    #[test]
    fn half_storage_rounds_on_write() {
        let p = FeatureMatrix::from_values(1, 2, Precision::Half16, &[1.0, 0.0]).unwrap();
        let q = FeatureMatrix::from_values(1, 2, Precision::Half16, &[0.0, 1.0]).unwrap();
        sgd_update(&p, &q, Sample::new(0, 0, 1.0), 0.1, &hyper(2, 0.0));
        assert_eq!(p.row(0), vec![1.0, crate::f16::round_f16(0.1)]);
    }

    #[test]
    fn divergence_is_reported() {
        let p = mat(1, 1, &[1.0e30]);
        let q = mat(1, 1, &[1.0e30]);
        assert!(!sgd_update(&p, &q, Sample::new(0, 0, 1.0), 0.5, &hyper(1, 0.0)));
        let p = mat(1, 1, &[1.0e30]);
        let q = mat(1, 1, &[1.0e30]);
        let err = epoch_serial(&[Sample::new(0, 0, 1.0)], &p, &q, &hyper(1, 0.0), 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }));
    }

    #[test]
    fn rmse_examples() {
        let p = mat(2, 1, &[1.0, 0.0]);
        let q = mat(1, 1, &[1.0]);
        assert_eq!(rmse(&[Sample::new(0, 0, 1.0)], &p, &q).unwrap(), 0.0);
        assert_eq!(rmse(&[Sample::new(1, 0, 1.0)], &p, &q).unwrap(), 1.0);
        let two = [Sample::new(0, 0, 4.0), Sample::new(1, 0, 4.0)];
        // errors 3 and 4
        assert!((rmse(&two, &p, &q).unwrap() - 3.5355339).abs() < 1e-6);
        assert!(matches!(rmse(&[], &p, &q), Err(Error::Usage(_))));
    }

    #[test]
    fn epoch_serial_base_cases() {
        let h = hyper(2, 0.05);
        let p = mat(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let q = mat(2, 2, &[0.5, 0.6, 0.7, 0.8]);
        let before = (p.to_vec(), q.to_vec());
        assert_eq!(epoch_serial(&[], &p, &q, &h, 0).unwrap(), 0);
        assert_eq!((p.to_vec(), q.to_vec()), before);

        let s = Sample::new(1, 0, 2.0);
        let p2 = p.clone();
        let q2 = q.clone();
        assert_eq!(epoch_serial(&[s], &p, &q, &h, 0).unwrap(), 1);
        sgd_update(&p2, &q2, s, 0.08, &h);
        assert!(p.bitwise_eq(&p2) && q.bitwise_eq(&q2));
    }

    #[test]
    fn init_features_examples() {
        let a = init_features(4, 128, 7, None, Precision::Full32);
        let b = init_features(4, 128, 7, None, Precision::Full32);
        assert!(a.bitwise_eq(&b));
        let bound = 1.0 / 128f32.sqrt();
        assert!(a.to_vec().iter().all(|&x| (0.0..bound).contains(&x)));
        let z = init_features(3, 4, 7, Some(0.0), Precision::Full32);
        assert!(z.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn segment_roundtrip() {
        let m = init_features(6, 3, 1, None, Precision::Half16);
        let seg = m.segment(2, 3);
        assert_eq!(seg.row(0), m.row(2));
        seg.set(1, 1, 0.5);
        m.write_segment(2, &seg);
        assert_eq!(m.get(3, 1), 0.5);
    }
}
