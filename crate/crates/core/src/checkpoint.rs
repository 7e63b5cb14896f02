//! Trained-model files.
//!
//! Layout, little-endian: magic `MFCK`, version byte, precision byte
//! (0 = full32, 1 = half16), two zero bytes, `m`, `n`, `k` as u64, the
//! rating scale offset and factor as f32, then the raw words of P followed
//! by Q (4 bytes per element for full32, 2 for half16).

use std::io::{Read, Write};

use crate::dataset::RatingScale;
use crate::model::{FeatureMatrix, Precision};
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"MFCK";
pub const MODEL_VERSION: u8 = 1;
const HEADER_LEN: usize = 40;

#[derive(Debug)]
pub struct Model {
    pub p: FeatureMatrix,
    pub q: FeatureMatrix,
    pub scale: RatingScale,
}

fn precision_byte(p: Precision) -> u8 {
    match p {
        Precision::Full32 => 0,
        Precision::Half16 => 1,
    }
}

pub fn save_model<W: Write>(p: &FeatureMatrix, q: &FeatureMatrix, scale: RatingScale, mut sink: W) -> Result<()> {
    if p.k() != q.k() || p.precision() != q.precision() {
        return Err(Error::usage("P and Q must share rank and precision"));
    }
    let mut head = Vec::with_capacity(HEADER_LEN);
    head.extend_from_slice(&MODEL_MAGIC);
    head.push(MODEL_VERSION);
    head.push(precision_byte(p.precision()));
    head.extend_from_slice(&[0, 0]);
    for x in [p.rows(), q.rows(), p.k()] {
        head.extend_from_slice(&(x as u64).to_le_bytes());
    }
    head.extend_from_slice(&scale.offset.to_le_bytes());
    head.extend_from_slice(&scale.factor.to_le_bytes());
    sink.write_all(&head)?;
    let width = p.precision().bytes_per_element();
    let mut body = Vec::with_capacity((p.rows() + q.rows()) * p.k() * width);
    for m in [p, q] {
        for w in m.raw_words() {
            body.extend_from_slice(&w.to_le_bytes()[..width]);
        }
    }
    sink.write_all(&body)?;
    sink.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<Model> {
    let mut head = [0u8; HEADER_LEN];
    source
        .read_exact(&mut head)
        .map_err(|_| Error::format("model file shorter than its header"))?;
    if head[..4] != MODEL_MAGIC {
        return Err(Error::format("not a model file (bad magic)"));
    }
    if head[4] != MODEL_VERSION {
        return Err(Error::format(format!("unsupported model version {}", head[4])));
    }
    let precision = match head[5] {
        0 => Precision::Full32,
        1 => Precision::Half16,
        b => return Err(Error::format(format!("unknown precision code {b}"))),
    };
    let word = |at: usize| u64::from_le_bytes(head[at..at + 8].try_into().unwrap()) as usize;
    let (m, n, k) = (word(8), word(16), word(24));
    let f32_at = |at: usize| f32::from_le_bytes(head[at..at + 4].try_into().unwrap());
    let scale = RatingScale {
        offset: f32_at(32),
        factor: f32_at(36),
    };
    let width = precision.bytes_per_element();
    let expected = m
        .checked_add(n)
        .and_then(|r| r.checked_mul(k))
        .and_then(|e| e.checked_mul(width))
        .ok_or_else(|| Error::format("model dimensions overflow"))?;
    let mut body = Vec::new();
    source.read_to_end(&mut body)?;
    if body.len() != expected {
        return Err(Error::format(format!(
            "model body is {} bytes, expected {expected}",
            body.len()
        )));
    }
    let words: Vec<u32> = body
        .chunks_exact(width)
        .map(|c| {
            let mut b = [0u8; 4];
            b[..width].copy_from_slice(c);
            u32::from_le_bytes(b)
        })
        .collect();
    let (pw, qw) = words.split_at(m * k);
    Ok(Model {
        p: FeatureMatrix::from_raw_words(m, k, precision, pw)?,
        q: FeatureMatrix::from_raw_words(n, k, precision, qw)?,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_features;

    #[test]
    fn roundtrip_both_precisions() {
        for prec in [Precision::Full32, Precision::Half16] {
            let p = init_features(5, 3, 1, None, prec);
            let q = init_features(4, 3, 2, None, prec);
            let scale = RatingScale {
                offset: -1.0,
                factor: 0.5,
            };
            let mut buf = Vec::new();
            save_model(&p, &q, scale, &mut buf).unwrap();
            assert_eq!(buf.len(), HEADER_LEN + 27 * prec.bytes_per_element());
            let m = load_model(&buf[..]).unwrap();
            assert!(m.p.bitwise_eq(&p));
            assert!(m.q.bitwise_eq(&q));
            assert_eq!(m.scale, scale);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = init_features(2, 2, 1, None, Precision::Full32);
        let mut buf = Vec::new();
        save_model(&p, &p, RatingScale::IDENTITY, &mut buf).unwrap();
        assert!(matches!(load_model(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(load_model(&buf[..10]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_model(&bad[..]), Err(Error::Format(_))));
    }
}
