//! The `FERN` v1 model file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes  "FERN"
//! version      u16      1
//! patch_side   u32
//! m, s, h      u32 x 3
//! n_r          f64
//! seed         u64      ensemble seed, informational
//! classes      h x (x f64, y f64, stability f64)
//! test pairs   m*s x (d1.x i16, d1.y i16, d2.x i16, d2.y i16)
//! counts       m * 2^s * h x u32, (fern, bin, class) order
//! totals       h x u32
//! ```
//!
//! Probabilities are recomputed from counts on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::classifier::FernCounts;
use crate::error::{Error, Result};
use crate::fern::{Fern, FernEnsemble, FernTestPair, MAX_BITS};
use crate::train::{PatchClass, TrainedModel};

pub const MAGIC: &[u8; 4] = b"FERN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 4 + 2 + 4 * 4 + 8 + 8;
const CLASS_RECORD_LEN: u64 = 24;
const PAIR_RECORD_LEN: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelFileHeader {
    pub version: u16,
    pub patch_side: u32,
    pub m: u32,
    pub s: u32,
    pub h: u32,
    pub n_r: f64,
    pub ensemble_seed: u64,
}

impl ModelFileHeader {
    /// Total file size implied by the header dimensions.
    pub fn expected_file_len(&self) -> Option<u64> {
        let (m, s, h) = (self.m as u64, self.s as u64, self.h as u64);
        if s > MAX_BITS as u64 {
            return None;
        }
        let cells = m.checked_mul(1 << s)?.checked_mul(h)?;
        let counts = cells.checked_add(h)?.checked_mul(4)?;
        HEADER_LEN
            .checked_add(h.checked_mul(CLASS_RECORD_LEN)?)?
            .checked_add(m.checked_mul(s)?.checked_mul(PAIR_RECORD_LEN)?)?
            .checked_add(counts)
    }
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let e = &model.ensemble;
    let header = ModelFileHeader {
        version: VERSION,
        patch_side: e.patch_side() as u32,
        m: e.num_ferns() as u32,
        s: e.bits() as u32,
        h: model.num_classes() as u32,
        n_r: model.table.regularizer(),
        ensemble_seed: e.seed(),
    };
    let len = header.expected_file_len().unwrap_or(0) as usize;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    for v in [header.patch_side, header.m, header.s, header.h] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.n_r.to_le_bytes());
    out.extend_from_slice(&header.ensemble_seed.to_le_bytes());
    for c in &model.classes {
        for v in [c.model_point.0, c.model_point.1, c.stability] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in e.pairs() {
        for v in [p.d1.0, p.d1.1, p.d2.0, p.d2.1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &c in model.counts.raw_counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &t in model.counts.totals() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Configuration(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_model(model))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    decode_model(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn i16(&mut self) -> i16 {
        i16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<ModelFileHeader> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing FERN magic".into()));
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::PayloadLength {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let header = ModelFileHeader {
        version: r.u16(),
        patch_side: r.u32(),
        m: r.u32(),
        s: r.u32(),
        h: r.u32(),
        n_r: r.f64(),
        ensemble_seed: r.u64(),
    };
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported model version {}", header.version)));
    }
    Ok(header)
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let header = decode_header(bytes)?;
    let expected = header.expected_file_len().ok_or_else(|| {
        Error::Format(format!(
            "header dimensions m={} s={} h={} are out of range",
            header.m, header.s, header.h
        ))
    })?;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let (m, s, h) = (header.m as usize, header.s as usize, header.h as usize);
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN as usize,
    };
    let classes = (0..h)
        .map(|class_id| {
            let x = r.f64();
            let y = r.f64();
            PatchClass {
                class_id,
                model_point: (x, y),
                stability: r.f64(),
            }
        })
        .collect();
    let ferns = (0..m)
        .map(|_| Fern {
            tests: (0..s)
                .map(|_| FernTestPair {
                    d1: (r.i16(), r.i16()),
                    d2: (r.i16(), r.i16()),
                })
                .collect(),
        })
        .collect();
    let ensemble = FernEnsemble::from_ferns(ferns, header.patch_side as usize, header.ensemble_seed)
        .map_err(|e| Error::Format(e.to_string()))?;
    let cells = m << s;
    let counts = (0..cells * h).map(|_| r.u32()).collect();
    let totals = (0..h).map(|_| r.u32()).collect();
    let counts = FernCounts::from_raw(m, s, h, counts, totals)?;
    TrainedModel::from_parts(classes, ensemble, counts, header.n_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::DetectorParams;
    use crate::synth::textured_image;
    use crate::train::{train_model, TrainingConfig};

    fn small_model() -> TrainedModel {
        let img = textured_image(96, 96, 9);
        let config = TrainingConfig {
            num_warps: 6,
            num_classes: 5,
            num_ferns: 4,
            bits_per_fern: 5,
            detector: DetectorParams {
                max_count: 50,
                ..DetectorParams::default()
            },
            ..TrainingConfig::default()
        };
        train_model(&img, &config).unwrap()
    }

    #[test]
    fn round_trip_and_size() {
        let model = small_model();
        let bytes = encode_model(&model);
        let expected = HEADER_LEN + 5 * 24 + 4 * 5 * 8 + (4 * 32 * 5 + 5) * 4;
        assert_eq!(bytes.len() as u64, expected);

        let loaded = decode_model(&bytes).unwrap();
        assert_eq!(loaded.classes, model.classes);
        assert_eq!(loaded.ensemble, model.ensemble);
        assert_eq!(loaded.counts, model.counts);
        assert_eq!(loaded.table, model.table);
        assert_eq!(encode_model(&loaded), bytes);

        let refs = model.reference_patches.as_ref().unwrap();
        for p in refs {
            assert_eq!(loaded.classify(p).unwrap(), model.classify(p).unwrap());
        }
    }

    #[test]
    fn files_are_written_atomically() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fern");
        save_model(&model, &path).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(load_model(&path).unwrap().counts, model.counts);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = encode_model(&small_model());
        let cut = &bytes[..bytes.len() - 3];
        match decode_model(cut) {
            Err(Error::PayloadLength { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"NREF");
        assert!(matches!(decode_model(&wrong), Err(Error::Format(_))));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(decode_model(&version), Err(Error::Format(_))));
    }

    #[test]
    fn hand_built_minimal_file() {
        let mut b = Vec::new();
        b.extend_from_slice(b"FERN");
        b.extend_from_slice(&1u16.to_le_bytes());
        for v in [3u32, 1, 1, 1] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&1.0f64.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        for v in [1.0f64, 1.0, 0.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0i16, 0, 1, 0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0u32, 0, 0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(b.len() as u64, HEADER_LEN + 24 + 8 + 12);
        let model = decode_model(&b).unwrap();
        assert_eq!(model.table.bins(), 2);
        assert_eq!(model.table.log_probs(), &[0.5f64.ln(), 0.5f64.ln()]);
        assert_eq!(model.classes[0].model_point, (1.0, 1.0));
    }
}
