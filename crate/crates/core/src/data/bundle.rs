//! Trial-bundle binary format, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "SPKMBNDL"
//! version      u32      1
//! channels     u32
//! samples      u32
//! sample_rate  f64
//! n_classes    u32, then per class: u32 byte length + UTF-8 name
//! n_trials     u32, then per trial:
//!   task_id    u32 byte length + UTF-8
//!   trial_id   u32 byte length + UTF-8
//!   label      u32
//!   channels   u32      must equal the global header
//!   samples    u32      must equal the global header
//!   values     f32 × channels·samples, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, EegTrial};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BUNDLE_MAGIC: &[u8; 8] = b"SPKMBNDL";
pub const BUNDLE_VERSION: u32 = 1;

const MAX_STRING: u32 = 1 << 16;

fn io_err(e: std::io::Error) -> Error {
    Error::Data(format!("bundle i/o: {e}"))
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u32::try_from(s.len())
        .ok()
        .filter(|&n| n <= MAX_STRING)
        .ok_or_else(|| Error::Data(format!("string too long for bundle: {} bytes", s.len())))?;
    put_u32(w, len)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit the bundle header")))
}

/// Serialises `dataset`. Samples are stored as `f32`; values that are not
/// exactly representable are rounded.
pub fn write_bundle(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    w.write_all(BUNDLE_MAGIC).map_err(io_err)?;
    put_u32(w, BUNDLE_VERSION)?;
    let (c, t) = (
        dim(dataset.channels(), "channel count")?,
        dim(dataset.length(), "length")?,
    );
    put_u32(w, c)?;
    put_u32(w, t)?;
    w.write_all(&dataset.sample_rate().to_le_bytes())
        .map_err(io_err)?;
    put_u32(w, dim(dataset.n_classes(), "class count")?)?;
    for name in dataset.class_names() {
        put_str(w, name)?;
    }
    put_u32(w, dim(dataset.trials().len(), "trial count")?)?;
    let mut buf = Vec::new();
    for trial in dataset.trials() {
        put_str(w, &trial.task_id)?;
        put_str(w, &trial.trial_id)?;
        put_u32(w, dim(trial.label, "label")?)?;
        put_u32(w, dim(trial.channels(), "channel count")?)?;
        put_u32(w, dim(trial.length(), "length")?)?;
        buf.clear();
        for &v in trial.samples.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    Ok(())
}

pub fn save_bundle(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_bundle(&mut w, dataset)?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Data(format!("truncated bundle while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.bytes(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        if n > MAX_STRING {
            return Err(Error::Data(format!("corrupt bundle: {what} length {n}")));
        }
        String::from_utf8(self.bytes(n as usize, what)?)
            .map_err(|_| Error::Data(format!("corrupt bundle: {what} is not UTF-8")))
    }
}

pub fn read_bundle(r: &mut impl Read, provenance: &str) -> Result<Dataset> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")? != BUNDLE_MAGIC {
        return Err(Error::Data("not a trial bundle (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            what: "trial bundle",
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let c = r.u32("channel count")? as usize;
    let t = r.u32("length")? as usize;
    let sample_rate = r.f64("sample rate")?;
    if c == 0 || t == 0 || !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Data(format!(
            "corrupt bundle header: {c} channels, {t} samples, {sample_rate} Hz"
        )));
    }
    let n_classes = r.u32("class count")?;
    let class_names = (0..n_classes)
        .map(|k| r.string(&format!("class name {k}")))
        .collect::<Result<Vec<_>>>()?;
    let n_trials = r.u32("trial count")?;
    let mut trials = Vec::with_capacity(n_trials.min(1 << 16) as usize);
    for i in 0..n_trials {
        let task_id = r.string(&format!("task id of trial {i}"))?;
        let trial_id = r.string(&format!("trial id of trial {i}"))?;
        let label = r.u32(&format!("label of trial {trial_id:?}"))? as usize;
        let tc = r.u32(&format!("channel count of trial {trial_id:?}"))? as usize;
        let tt = r.u32(&format!("length of trial {trial_id:?}"))? as usize;
        if tc != c || tt != t {
            return Err(Error::Data(format!(
                "trial {trial_id:?} (task {task_id:?}) is {tc}×{tt}, bundle header says {c}×{t}"
            )));
        }
        let raw = r.bytes(4 * c * t, &format!("samples of trial {trial_id:?}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        trials.push(EegTrial {
            samples: Tensor::matrix(c, t, data)?,
            label,
            task_id,
            trial_id,
            sample_rate,
        });
    }
    Dataset::new(trials, class_names, provenance)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_bundle(
        &mut BufReader::new(file),
        &format!("bundle {}", path.display()),
    )
}
