//! Dataset and evaluation-file parsing, plus versioned binary model
//! persistence.
//!
//! Dataset text format (extreme-classification repository convention):
//! a header line `num_samples num_features num_labels`, then one line per
//! sample: comma-separated label ids, a space, then `index:value` pairs.
//! Ids are zero-based unless `one_based` conversion is requested.
//!
//! Eval file format: `weight | relevant_ids [| candidate_ids]` per line.
//!
//! Model file: magic `MACH`, a u32 format version, the config block, then per
//! repetition the hash parameters (a, b, p as u64) and the layer weights as
//! row-major little-endian f32, biases after each weight matrix.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{LabeledSample, SparseVector};
use crate::error::{MachError, Result};
use crate::hashing::UniversalHash;
use crate::metrics::EvalQuery;
use crate::model::{Layer, MachConfig, MachModel, MetaClassifier, Mode};

pub const MODEL_MAGIC: [u8; 4] = *b"MACH";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub num_samples: usize,
    pub num_features: usize,
    pub num_labels: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

fn parse_err<T: std::fmt::Display>(line: usize, msg: T) -> MachError {
    MachError::Parse {
        line,
        msg: msg.to_string(),
    }
}

/// Parse a dataset file. `expect_dim`, when given, must match the header's
/// feature count. `one_based` shifts labels and feature indices down by one.
pub fn load_dataset(
    path: impl AsRef<Path>,
    expect_dim: Option<usize>,
    one_based: bool,
) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_dataset(&text, expect_dim, one_based)
}

pub fn parse_dataset(text: &str, expect_dim: Option<usize>, one_based: bool) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header"))?;
    let fields: Vec<&str> = header_line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(
            1,
            "header must be 'num_samples num_features num_labels'",
        ));
    }
    let parse_count = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| parse_err(1, format!("bad {what} '{s}'")))
    };
    let header = DatasetHeader {
        num_samples: parse_count(fields[0], "sample count")?,
        num_features: parse_count(fields[1], "feature count")?,
        num_labels: parse_count(fields[2], "label count")?,
    };
    if header.num_features == 0 || header.num_labels == 0 {
        return Err(parse_err(1, "feature and label counts must be positive"));
    }
    if let Some(d) = expect_dim {
        if d != header.num_features {
            return Err(MachError::Validation(format!(
                "expected {d} features but header declares {}",
                header.num_features
            )));
        }
    }

    let shift = |v: usize, lineno: usize, what: &str| -> Result<usize> {
        if one_based {
            if v == 0 {
                return Err(parse_err(
                    lineno,
                    format!("{what} 0 is invalid in one-based input"),
                ));
            }
            Ok(v - 1)
        } else {
            Ok(v)
        }
    };

    let mut samples = Vec::with_capacity(header.num_samples);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_part = parts.next().unwrap();
        let mut labels = Vec::new();
        for tok in label_part.split(',') {
            let raw: usize = tok
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad label '{tok}'")))?;
            let l = shift(raw, lineno, "label")?;
            if l >= header.num_labels {
                return Err(parse_err(
                    lineno,
                    format!("label {l} >= declared label count {}", header.num_labels),
                ));
            }
            labels.push(l as u32);
        }
        let mut entries = Vec::new();
        for tok in parts {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("bad feature token '{tok}'")))?;
            let raw: usize = idx_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad feature index '{idx_s}'")))?;
            let idx = shift(raw, lineno, "feature index")?;
            if idx >= header.num_features {
                return Err(parse_err(
                    lineno,
                    format!("index {idx} >= declared feature count {}", header.num_features),
                ));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad feature value '{val_s}'")))?;
            entries.push((idx as u32, val));
        }
        if entries.is_empty() {
            return Err(parse_err(lineno, "sample has no features"));
        }
        let features = SparseVector::accumulate(header.num_features, entries)
            .map_err(|e| parse_err(lineno, e))?;
        if features.nnz() == 0 {
            return Err(parse_err(lineno, "sample features cancel to zero"));
        }
        let sample = LabeledSample::new(features, labels).map_err(|e| parse_err(lineno, e))?;
        samples.push(sample);
    }
    if samples.len() != header.num_samples {
        return Err(MachError::Validation(format!(
            "header declares {} samples but file contains {}",
            header.num_samples,
            samples.len()
        )));
    }
    Ok(Dataset { header, samples })
}

/// Serialize a dataset back to the text format (zero-based ids).
pub fn write_dataset(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "{} {} {}",
        dataset.header.num_samples, dataset.header.num_features, dataset.header.num_labels
    )?;
    for s in &dataset.samples {
        let labels: Vec<String> = s.labels.iter().map(|l| l.to_string()).collect();
        write!(w, "{}", labels.join(","))?;
        for &(idx, val) in s.features.entries() {
            write!(w, " {idx}:{val}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parse an evaluation file: `weight | relevant_ids [| candidate_ids]`.
pub fn load_eval_file(path: impl AsRef<Path>) -> Result<Vec<EvalQuery>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_eval_file(&text)
}

pub fn parse_eval_file(text: &str) -> Result<Vec<EvalQuery>> {
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(parse_err(
                lineno,
                "expected 'weight | relevant_ids' or 'weight | relevant_ids | candidate_ids'",
            ));
        }
        let weight: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad weight '{}'", parts[0].trim())))?;
        let parse_ids = |field: &str| -> Result<Vec<u32>> {
            field
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| parse_err(lineno, format!("bad id '{t}'")))
                })
                .collect()
        };
        let relevant = parse_ids(parts[1])?;
        let candidates: Option<BTreeSet<u32>> = match parts.get(2) {
            Some(field) => Some(parse_ids(field)?.into_iter().collect()),
            None => None,
        };
        let q = EvalQuery::new(queries.len(), relevant, candidates, weight)
            .map_err(|e| parse_err(lineno, e))?;
        queries.push(q);
    }
    Ok(queries)
}

struct ByteWriter<W: Write> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f32_slice(&mut self, vals: &[f64]) -> Result<()> {
        for &v in vals {
            self.inner.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(MachError::Format(format!(
                "truncated model file: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn write_layer<W: Write>(w: &mut ByteWriter<W>, layer: &Layer) -> Result<()> {
    w.f32_slice(&layer.weights)?;
    w.f32_slice(&layer.biases)
}

/// Write the model atomically: a temp file next to the target, then rename.
pub fn save_model(model: &MachModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut w = ByteWriter {
            inner: BufWriter::new(file),
        };
        let cfg = model.config();
        w.inner.write_all(&MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        w.u64(cfg.num_classes)?;
        w.u64(cfg.buckets)?;
        w.u64(cfg.reps)?;
        w.u64(cfg.input_dim as u64)?;
        w.u64(cfg.hidden_units as u64)?;
        w.u8(match cfg.mode {
            Mode::Multiclass => 0,
            Mode::Multilabel => 1,
        })?;
        w.u64(cfg.master_seed)?;
        w.u64(cfg.epochs as u64)?;
        w.u64(cfg.batch_size as u64)?;
        w.f64(cfg.learning_rate)?;
        for (hash, clf) in model.hashes().iter().zip(model.classifiers()) {
            w.u64(hash.multiplier())?;
            w.u64(hash.offset())?;
            w.u64(hash.modulus())?;
            write_layer(&mut w, &clf.first)?;
            if let Some(second) = &clf.second {
                write_layer(&mut w, second)?;
            }
        }
        w.inner.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MachModel> {
    let bytes = fs::read(path.as_ref())?;
    decode_model(&bytes)
}

pub fn decode_model(bytes: &[u8]) -> Result<MachModel> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(MachError::Format("bad magic, not a model file".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(MachError::Format(format!(
            "unsupported model format version {version}, expected {MODEL_VERSION}"
        )));
    }
    let num_classes = r.u64()?;
    let buckets = r.u64()?;
    let reps = r.u64()?;
    let input_dim = r.u64()? as usize;
    let hidden_units = r.u64()? as usize;
    let mode = match r.u8()? {
        0 => Mode::Multiclass,
        1 => Mode::Multilabel,
        m => return Err(MachError::Format(format!("unknown mode byte {m}"))),
    };
    let master_seed = r.u64()?;
    let epochs = r.u64()? as usize;
    let batch_size = r.u64()? as usize;
    let learning_rate = r.f64()?;
    let config = MachConfig {
        num_classes,
        buckets,
        reps,
        mode,
        input_dim,
        hidden_units,
        master_seed,
        epochs,
        learning_rate,
        batch_size,
    };
    config
        .validate()
        .map_err(|e| MachError::Format(format!("invalid stored config: {e}")))?;

    let mut hashes = Vec::with_capacity(reps as usize);
    let mut classifiers = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let a = r.u64()?;
        let b = r.u64()?;
        let p = r.u64()?;
        hashes.push(UniversalHash::from_parts(a, b, p, buckets)?);
        let (first, second) = if hidden_units > 0 {
            let first = Layer {
                in_dim: input_dim,
                out_dim: hidden_units,
                weights: r.f32_vec(input_dim * hidden_units)?,
                biases: r.f32_vec(hidden_units)?,
            };
            let second = Layer {
                in_dim: hidden_units,
                out_dim: buckets as usize,
                weights: r.f32_vec(hidden_units * buckets as usize)?,
                biases: r.f32_vec(buckets as usize)?,
            };
            (first, Some(second))
        } else {
            let first = Layer {
                in_dim: input_dim,
                out_dim: buckets as usize,
                weights: r.f32_vec(input_dim * buckets as usize)?,
                biases: r.f32_vec(buckets as usize)?,
            };
            (first, None)
        };
        classifiers.push(MetaClassifier { first, second });
    }
    if r.pos != bytes.len() {
        return Err(MachError::Format(format!(
            "{} trailing bytes after model payload",
            bytes.len() - r.pos
        )));
    }
    MachModel::assemble(config, hashes, classifiers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{score_all, Estimator};
    use crate::model::train;

    #[test]
    fn dataset_basic_parsing() {
        let d = parse_dataset("1 3 2\n0 1:0.5 2:1.0\n", None, false).unwrap();
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.samples[0].labels, vec![0]);
        assert_eq!(d.samples[0].features.entries(), &[(1, 0.5), (2, 1.0)]);

        let d = parse_dataset("1 3 2\n0,1 0:1.0\n", None, false).unwrap();
        assert_eq!(d.samples[0].labels, vec![0, 1]);
    }

    #[test]
    fn dataset_errors_name_lines() {
        let err = parse_dataset("1 3 2\n0 5:1.0\n", None, false).unwrap_err();
        match err {
            MachError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_dataset("1 3 2\n0\n", None, false).is_err());
        assert!(parse_dataset("1 3 2\n2 0:1.0\n", None, false).is_err());
        assert!(parse_dataset("2 3 2\n0 0:1.0\n", None, false).is_err());
        assert!(parse_dataset("1 3 2\n0 0:1.0\n", Some(4), false).is_err());
    }

    #[test]
    fn one_based_conversion() {
        let d = parse_dataset("1 3 2\n1 1:0.5\n", None, true).unwrap();
        assert_eq!(d.samples[0].labels, vec![0]);
        assert_eq!(d.samples[0].features.entries(), &[(0, 0.5)]);
        assert!(parse_dataset("1 3 2\n0 1:0.5\n", None, true).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let text = "2 4 3\n0,2 0:1.5 3:-2\n1 2:0.25\n";
        let d = parse_dataset(text, None, false).unwrap();
        let mut out = Vec::new();
        write_dataset(&d, &mut out).unwrap();
        let d2 = parse_dataset(std::str::from_utf8(&out).unwrap(), None, false).unwrap();
        assert_eq!(d.samples, d2.samples);
        assert_eq!(d.header, d2.header);
    }

    #[test]
    fn eval_file_parsing() {
        let qs = parse_eval_file("3.0 | 1,2 | 1,2,5,9\n").unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].weight, 3.0);
        assert_eq!(qs[0].relevant, vec![1, 2]);
        assert_eq!(qs[0].candidates.as_ref().unwrap().len(), 4);

        let qs = parse_eval_file("1 | 7\n").unwrap();
        assert!(qs[0].candidates.is_none());

        assert!(parse_eval_file("0 | |\n").is_err());
        assert!(parse_eval_file("1 | 3 | 1,2\n").is_err());
    }

    fn small_model() -> MachModel {
        let config = MachConfig {
            num_classes: 8,
            buckets: 3,
            reps: 2,
            mode: Mode::Multiclass,
            input_dim: 5,
            hidden_units: 4,
            master_seed: 99,
            epochs: 3,
            learning_rate: 0.1,
            batch_size: 4,
        };
        let data: Vec<LabeledSample> = (0..16u32)
            .map(|i| {
                LabeledSample::new(
                    SparseVector::new(5, vec![(i % 5, 1.0 + i as f64 * 0.3)]).unwrap(),
                    vec![i % 8],
                )
                .unwrap()
            })
            .collect();
        train(&data, &config).unwrap()
    }

    #[test]
    fn model_round_trip_bitwise() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mach");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
        let x = SparseVector::new(5, vec![(0, 0.7), (4, -1.2)]).unwrap();
        let a = score_all(&model, &x, Estimator::Unbiased).unwrap();
        let b = score_all(&loaded, &x, Estimator::Unbiased).unwrap();
        assert_eq!(a, b, "scores must be bitwise identical");
    }

    #[test]
    fn model_file_size_matches_parameter_count() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mach");
        save_model(&model, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        let header = 4 + 4 + 8 * 5 + 1 + 8 * 3 + 8;
        let hashes = 3 * 8 * model.config().reps;
        let weights = 4 * model.param_count() as u64;
        assert_eq!(len, header + hashes + weights);
        let cost = crate::planner::cost_model(8, 3, 2, 5, 4);
        assert_eq!(cost.parameters, model.param_count() as u64);
    }

    #[test]
    fn corrupt_files_rejected() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mach");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 7]),
            Err(MachError::Format(_))
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_model(&bad_magic), Err(MachError::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 42;
        assert!(matches!(decode_model(&bad_version), Err(MachError::Format(_))));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(decode_model(&trailing), Err(MachError::Format(_))));
    }
}
