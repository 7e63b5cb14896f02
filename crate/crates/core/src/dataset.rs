//! Rating datasets: text and binary formats, shuffling, splitting and a
//! low-rank synthetic generator.
//!
//! Binary layout (little endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MFSG"
//! 4       1     version (1)
//! 5       3     reserved, zero
//! 8       8     m (u64)
//! 16      8     n (u64)
//! 24      8     N (u64)
//! 32      12*N  records: u (u32), v (u32), r (f32)
//! ```

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{check_bounds, FeatureMatrix, Precision, Sample};
use crate::rng::rng_from;
use crate::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"MFSG";
pub const DATASET_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 12;

/// Upper end of the stored rating range after [`RatingDataset::normalize`].
pub const SCALED_MAX: f32 = 4.0;

/// Affine map from raw ratings to the stored domain:
/// `stored = (raw - offset) * factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub offset: f32,
    pub factor: f32,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale::IDENTITY
    }
}

impl RatingScale {
    pub const IDENTITY: RatingScale = RatingScale {
        offset: 0.0,
        factor: 1.0,
    };

    /// Scale mapping `samples` into `[0, SCALED_MAX]`. Non-negative ratings
    /// keep zero fixed (offset 0) so a low-rank structure stays low rank.
    pub fn fit(samples: &[Sample]) -> RatingScale {
        let (lo, hi) = samples.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.r), hi.max(s.r))
        });
        if samples.is_empty() {
            return RatingScale::IDENTITY;
        }
        let offset = lo.min(0.0);
        let span = hi - offset;
        let factor = if span > 0.0 { SCALED_MAX / span } else { 1.0 };
        RatingScale { offset, factor }
    }

    #[inline]
    pub fn to_stored(&self, raw: f32) -> f32 {
        (raw - self.offset) * self.factor
    }

    #[inline]
    pub fn to_raw(&self, stored: f32) -> f32 {
        stored / self.factor + self.offset
    }

    pub fn apply(&self, samples: &mut [Sample]) {
        for s in samples {
            s.r = self.to_stored(s.r);
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == RatingScale::IDENTITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatingDataset {
    pub m: usize,
    pub n: usize,
    pub samples: Vec<Sample>,
    /// Scale already applied to `samples`.
    pub scale: RatingScale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPair {
    pub train: RatingDataset,
    /// Held-out samples, in the same stored domain as `train`.
    pub test: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TextOptions {
    pub one_based: bool,
    /// Explicit `(m, n)`; indices outside are rejected.
    pub dims: Option<(usize, usize)>,
}

impl RatingDataset {
    pub fn new(m: usize, n: usize, samples: Vec<Sample>) -> Result<Self> {
        check_bounds(&samples, m, n)?;
        Ok(RatingDataset {
            m,
            n,
            samples,
            scale: RatingScale::IDENTITY,
        })
    }

    /// Sample count N.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rescale stored ratings into `[0, 4]` and remember the map.
    /// Returns the scale that was applied on top of any previous one.
    pub fn normalize(&mut self) -> RatingScale {
        let step = RatingScale::fit(&self.samples);
        step.apply(&mut self.samples);
        // compose: stored2 = ((raw - o1) * f1 - o2) * f2
        let prev = self.scale;
        self.scale = RatingScale {
            offset: prev.offset + step.offset / prev.factor,
            factor: prev.factor * step.factor,
        };
        step
    }

    /// Undo any scaling so `samples` hold raw ratings again.
    pub fn denormalize(&mut self) {
        let scale = self.scale;
        for s in &mut self.samples {
            s.r = scale.to_raw(s.r);
        }
        self.scale = RatingScale::IDENTITY;
    }
}

pub fn parse_text<R: Read>(source: R, opts: TextOptions) -> Result<RatingDataset> {
    let reader = BufReader::new(source);
    let mut samples = Vec::new();
    let (mut max_u, mut max_v) = (0usize, 0usize);
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let body = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut fields = body.split_whitespace();
        let Some(first) = fields.next() else { continue };
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        let (Some(second), Some(third)) = (fields.next(), fields.next()) else {
            return Err(parse_err("expected three fields: row column rating".into()));
        };
        if fields.next().is_some() {
            return Err(parse_err("trailing fields after rating".into()));
        }
        let index = |text: &str, what: &str| -> Result<usize> {
            let raw: u64 = text
                .parse()
                .map_err(|_| parse_err(format!("invalid {what} index {text:?}")))?;
            let i = if opts.one_based {
                raw.checked_sub(1)
                    .ok_or_else(|| parse_err(format!("{what} index 0 in one-based input")))?
            } else {
                raw
            };
            if i > u32::MAX as u64 - 1 {
                return Err(parse_err(format!("{what} index {text} too large")));
            }
            Ok(i as usize)
        };
        let u = index(first, "row")?;
        let v = index(second, "column")?;
        let r: f32 = third
            .parse()
            .map_err(|_| parse_err(format!("invalid rating {third:?}")))?;
        if !r.is_finite() {
            return Err(parse_err(format!("non-finite rating {third:?}")));
        }
        if let Some((m, n)) = opts.dims {
            if u >= m || v >= n {
                return Err(parse_err(format!("index ({u}, {v}) outside {m}x{n}")));
            }
        }
        max_u = max_u.max(u);
        max_v = max_v.max(v);
        samples.push(Sample::new(u as u32, v as u32, r));
    }
    if samples.is_empty() {
        return Err(Error::usage("input contains no ratings"));
    }
    let (m, n) = opts.dims.unwrap_or((max_u + 1, max_v + 1));
    RatingDataset::new(m, n, samples)
}

/// One `u v r` line per sample, 0-based, ratings in shortest round-trip form.
pub fn write_text<W: Write>(samples: &[Sample], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for s in samples {
        writeln!(w, "{} {} {}", s.u, s.v, s.r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary<W: Write>(dataset: &RatingDataset, sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&DATASET_MAGIC);
    header[4] = DATASET_VERSION;
    header[8..16].copy_from_slice(&(dataset.m as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(dataset.n as u64).to_le_bytes());
    header[24..32].copy_from_slice(&(dataset.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    for s in &dataset.samples {
        w.write_all(&encode_record(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_record(s: &Sample) -> [u8; RECORD_LEN] {
    let mut rec = [0u8; RECORD_LEN];
    rec[..4].copy_from_slice(&s.u.to_le_bytes());
    rec[4..8].copy_from_slice(&s.v.to_le_bytes());
    rec[8..].copy_from_slice(&s.r.to_le_bytes());
    rec
}

pub fn read_binary<R: Read>(source: R) -> Result<RatingDataset> {
    let mut r = BufReader::new(source);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("truncated header"))?;
    if header[..4] != DATASET_MAGIC {
        return Err(Error::format("bad magic; not a rating dataset"));
    }
    if header[4] != DATASET_VERSION {
        return Err(Error::format(format!("unsupported version {}", header[4])));
    }
    let word = |at: usize| u64::from_le_bytes(header[at..at + 8].try_into().unwrap());
    let (m, n, count) = (word(8), word(16), word(24));
    let (m, n) = (m as usize, n as usize);

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() as u64 != count.saturating_mul(RECORD_LEN as u64) {
        return Err(Error::format(format!(
            "header declares {count} samples but body holds {} bytes",
            body.len()
        )));
    }
    let samples: Vec<Sample> = body
        .chunks_exact(RECORD_LEN)
        .map(|c| Sample {
            u: u32::from_le_bytes(c[..4].try_into().unwrap()),
            v: u32::from_le_bytes(c[4..8].try_into().unwrap()),
            r: f32::from_le_bytes(c[8..].try_into().unwrap()),
        })
        .collect();
    RatingDataset::new(m, n, samples).map_err(|e| Error::format(e.to_string()))
}

/// True when `bytes` starts with the binary dataset magic.
pub fn is_binary(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && bytes[..4] == DATASET_MAGIC
}

/// Seeded Fisher-Yates permutation of the sample order.
pub fn shuffle(dataset: &mut RatingDataset, seed: u64) {
    shuffle_samples(&mut dataset.samples, seed);
}

pub fn shuffle_samples(samples: &mut [Sample], seed: u64) {
    samples.shuffle(&mut rng_from(seed));
}

/// Hold out `round(test_fraction * N)` samples drawn without replacement.
pub fn split(dataset: &RatingDataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::usage(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let total = dataset.len();
    let count = (test_fraction * total as f64).round() as usize;
    if count == 0 || count == total {
        return Err(Error::usage(format!(
            "test fraction {test_fraction} of {total} samples leaves an empty side"
        )));
    }
    let mut held = vec![false; total];
    for i in index::sample(&mut rng_from(seed), total, count) {
        held[i] = true;
    }
    let mut train = Vec::with_capacity(total - count);
    let mut test = Vec::with_capacity(count);
    for (s, h) in dataset.samples.iter().zip(held) {
        if h {
            test.push(*s);
        } else {
            train.push(*s);
        }
    }
    Ok(SplitPair {
        train: RatingDataset {
            m: dataset.m,
            n: dataset.n,
            samples: train,
            scale: dataset.scale,
        },
        test,
    })
}

/// Low-rank ground truth plus observed samples.
pub struct Synthetic {
    pub dataset: RatingDataset,
    pub p: FeatureMatrix,
    pub q: FeatureMatrix,
}

/// Draw `P*` (m x rank) and `Q*` (n x rank) uniform in `[0, 1/sqrt(rank))`,
/// pick `round(density * m * n)` distinct cells, and rate each as
/// `p*_u . q*_v + N(0, noise_sigma)`. Samples come out in row-major cell order.
pub fn synth_lowrank(m: usize, n: usize, rank: usize, density: f64, noise_sigma: f64, seed: u64) -> Result<Synthetic> {
    if rank == 0 || m == 0 || n == 0 {
        return Err(Error::usage("m, n and rank must be positive"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::usage(format!("density must lie in (0, 1], got {density}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::usage("noise sigma must be non-negative"));
    }
    let cells = m * n;
    let target = density * cells as f64;
    if target < 1.0 {
        return Err(Error::usage(format!(
            "density {density} over {m}x{n} yields no samples"
        )));
    }
    let count = (target.round() as usize).min(cells);
    if m > u32::MAX as usize || n > u32::MAX as usize {
        return Err(Error::usage("dimensions exceed 32-bit indices"));
    }

    let p = crate::model::init_features(m, rank, crate::rng::derive_seed(seed, 0, 1), None, Precision::Full32);
    let q = crate::model::init_features(n, rank, crate::rng::derive_seed(seed, 0, 2), None, Precision::Full32);

    let mut rng = rng_from(crate::rng::derive_seed(seed, 0, 3));
    let mut picked = index::sample(&mut rng, cells, count).into_vec();
    picked.sort_unstable();

    let noise = Normal::new(0.0f64, noise_sigma).map_err(|e| Error::usage(e.to_string()))?;
    let mut pu = vec![0.0f32; rank];
    let mut qv = vec![0.0f32; rank];
    let samples = picked
        .into_iter()
        .map(|cell| {
            let (u, v) = (cell / n, cell % n);
            p.read_row(u, &mut pu);
            q.read_row(v, &mut qv);
            let clean: f32 = pu.iter().zip(&qv).map(|(a, b)| a * b).sum();
            let eps = if noise_sigma > 0.0 {
                noise.sample(&mut rng) as f32
            } else {
                0.0
            };
            Sample::new(u as u32, v as u32, clean + eps)
        })
        .collect();

    Ok(Synthetic {
        dataset: RatingDataset::new(m, n, samples)?,
        p,
        q,
    })
}
