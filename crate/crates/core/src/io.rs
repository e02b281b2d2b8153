//! Binary file formats and plain-text export.
//!
//! Field snapshot (little-endian throughout):
//!
//! ```text
//! "WFLD" | version u16 | nx u32 | ny u32 | n_channels u32 | step u64 | payload
//! ```
//!
//! The payload holds the channels in order `u, v, p` (optionally `σ`), each
//! row-major with `i` as the row. Version 1 stores IEEE-754 single precision;
//! version 2 is identical but stores double precision, and is only written
//! for pool dumps of double-precision runs so they resume bit-exactly.
//!
//! Model checkpoint:
//!
//! ```text
//! "WNET" | version u16 | precision u8 (0 single, 1 double) | layer count u8
//! per layer: out u32 | in u32 | kh u32 | kw u32 | weights | biases
//! adam flag u8; when 1: step u64 | beta1 f64 | beta2 f64 | eps f64 |
//!     per layer: m weights | m biases | v weights | v biases
//! ```
//!
//! Weights, biases and moments use the declared precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FieldGrid, SigmaField, WaveState};
use crate::nn::{ConvLayer, ModelParams, KERNEL};
use crate::optim::AdamState;
use crate::real::{Precision, Real};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"WFLD";
pub const SNAPSHOT_VERSION_SINGLE: u16 = 1;
pub const SNAPSHOT_VERSION_DOUBLE: u16 = 2;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WNET";
pub const CHECKPOINT_VERSION: u16 = 1;

const SNAPSHOT_HEADER: usize = 4 + 2 + 4 + 4 + 4 + 8;

/// Cursor over a byte buffer that reports which field ran short.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(field, format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    /// `n` values stored in `stored` precision, converted to `T`. The
    /// conversion goes through f64, which is exact unless narrowing.
    fn values<T: Real>(&mut self, n: usize, stored: Precision, field: &'static str) -> Result<Vec<T>> {
        let width = stored.bytes();
        let len = n.checked_mul(width).ok_or_else(|| Error::format(field, "length overflows"))?;
        let raw = self.take(len, field)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| match stored {
                Precision::Single => T::lit(f32::get_le(c) as f64),
                Precision::Double => T::lit(f64::get_le(c)),
            })
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn put_values<T: Real>(out: &mut Vec<u8>, values: &[T], stored: Precision) {
    for &v in values {
        match stored {
            Precision::Single => (v.as_f64() as f32).put_le(out),
            Precision::Double => v.as_f64().put_le(out),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// A multi-channel field record at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T = f32> {
    pub step: u64,
    pub channels: Vec<FieldGrid<T>>,
}

impl<T: Real> Snapshot<T> {
    /// Channels `u, v, p`, plus `σ` when given.
    pub fn from_state(state: &WaveState<T>, sigma: Option<&SigmaField<T>>) -> Self {
        let mut channels = vec![state.u.clone(), state.v.clone(), state.p.clone()];
        if let Some(s) = sigma {
            channels.push(s.sigma.clone());
        }
        Snapshot { step: state.step, channels }
    }

    pub fn to_state(&self) -> Result<WaveState<T>> {
        if self.channels.len() < 3 {
            return Err(Error::format("n_channels", format!("{} channels, need at least u, v, p", self.channels.len())));
        }
        Ok(WaveState {
            u: self.channels[0].clone(),
            v: self.channels[1].clone(),
            p: self.channels[2].clone(),
            step: self.step,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels.first().map(FieldGrid::shape).unwrap_or((0, 0))
    }

    /// Encodes with the payload precision of `T` (version 1 for f32, 2 for f64).
    pub fn encode(&self) -> Result<Vec<u8>> {
        let stored = T::PRECISION;
        let (nx, ny) = self.shape();
        if self.channels.iter().any(|c| c.shape() != (nx, ny)) {
            return Err(Error::Shape("snapshot channels differ in shape".into()));
        }
        let dim = |v: usize, field: &'static str| u32::try_from(v).map_err(|_| Error::format(field, "exceeds u32"));
        let mut out = Vec::with_capacity(SNAPSHOT_HEADER + self.channels.len() * nx * ny * stored.bytes());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        let version = match stored {
            Precision::Single => SNAPSHOT_VERSION_SINGLE,
            Precision::Double => SNAPSHOT_VERSION_DOUBLE,
        };
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&dim(nx, "nx")?.to_le_bytes());
        out.extend_from_slice(&dim(ny, "ny")?.to_le_bytes());
        out.extend_from_slice(&dim(self.channels.len(), "n_channels")?.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for c in &self.channels {
            put_values(&mut out, c.as_slice(), stored);
        }
        Ok(out)
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let magic = r.take(4, "magic")?;
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::format("magic", format!("expected WFLD, found {magic:?}")));
        }
        let stored = match r.u16("version")? {
            SNAPSHOT_VERSION_SINGLE => Precision::Single,
            SNAPSHOT_VERSION_DOUBLE => Precision::Double,
            v => return Err(Error::format("version", format!("unsupported snapshot version {v}"))),
        };
        let nx = r.u32("nx")? as usize;
        let ny = r.u32("ny")? as usize;
        let n_channels = r.u32("n_channels")? as usize;
        let step = r.u64("step")?;
        let cells = nx.checked_mul(ny).ok_or_else(|| Error::format("nx", "grid size overflows"))?;
        let need = cells.checked_mul(n_channels).and_then(|v| v.checked_mul(stored.bytes()));
        if need.is_none_or(|need| need > r.remaining()) {
            return Err(Error::format(
                "payload",
                format!("truncated: {nx}x{ny}x{n_channels} values do not fit in {} remaining bytes", r.remaining()),
            ));
        }
        let channels = (0..n_channels)
            .map(|_| FieldGrid::from_vec(nx, ny, r.values::<T>(cells, stored, "payload")?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Snapshot { step, channels })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let snap = Self::decode_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::format("payload", format!("{} trailing bytes", r.remaining())));
        }
        Ok(snap)
    }
}

pub fn write_snapshot<T: Real>(path: &Path, snap: &Snapshot<T>) -> Result<()> {
    write_file(path, &snap.encode()?)
}

pub fn read_snapshot<T: Real>(path: &Path) -> Result<Snapshot<T>> {
    Snapshot::decode(&read_file(path)?)
}

/// Concatenated snapshot records, one per pool entry.
pub fn write_snapshots<T: Real>(path: &Path, snaps: &[Snapshot<T>]) -> Result<()> {
    let mut out = Vec::new();
    for s in snaps {
        out.extend(s.encode()?);
    }
    write_file(path, &out)
}

pub fn read_snapshots<T: Real>(path: &Path) -> Result<Vec<Snapshot<T>>> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        out.push(Snapshot::decode_from(&mut r)?);
    }
    Ok(out)
}

/// Parameters plus optional optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub params: ModelParams<T>,
    pub adam: Option<AdamState<T>>,
}

pub fn encode_checkpoint<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let params = &ckpt.params;
    params.validate()?;
    let stored = T::PRECISION;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(stored.flag());
    out.push(u8::try_from(params.layers.len()).map_err(|_| Error::format("layer_count", "more than 255 layers"))?);
    for layer in &params.layers {
        for dim in [layer.out_channels, layer.in_channels, KERNEL, KERNEL] {
            let dim = u32::try_from(dim).map_err(|_| Error::format("layer_shape", "exceeds u32"))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        put_values(&mut out, &layer.weights, stored);
        put_values(&mut out, &layer.biases, stored);
    }
    match &ckpt.adam {
        None => out.push(0),
        Some(adam) => {
            if !params.same_shape(&adam.m) || !params.same_shape(&adam.v) {
                return Err(Error::Shape("Adam moments do not match the parameters".into()));
            }
            out.push(1);
            out.extend_from_slice(&adam.step.to_le_bytes());
            for h in [adam.beta1, adam.beta2, adam.eps] {
                out.extend_from_slice(&h.to_le_bytes());
            }
            for (m, v) in adam.m.layers.iter().zip(&adam.v.layers) {
                put_values(&mut out, &m.weights, stored);
                put_values(&mut out, &m.biases, stored);
                put_values(&mut out, &v.weights, stored);
                put_values(&mut out, &v.biases, stored);
            }
        }
    }
    Ok(out)
}

/// Decodes a checkpoint into precision `T`. Single-precision files widen
/// exactly into double; double-precision files narrow with rounding.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", format!("expected WNET, found {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("version", format!("unsupported checkpoint version {version}")));
    }
    let flag = r.u8("precision")?;
    let stored = Precision::from_flag(flag).ok_or_else(|| Error::format("precision", format!("unknown flag {flag}")))?;
    let n_layers = r.u8("layer_count")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_channels = r.u32("layer_shape")? as usize;
        let in_channels = r.u32("layer_shape")? as usize;
        let (kh, kw) = (r.u32("layer_shape")? as usize, r.u32("layer_shape")? as usize);
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::format("layer_shape", format!("kernel {kh}x{kw}, expected {KERNEL}x{KERNEL}")));
        }
        let n_weights = out_channels
            .checked_mul(in_channels)
            .and_then(|v| v.checked_mul(kh * kw))
            .ok_or_else(|| Error::format("layer_shape", "weight count overflows"))?;
        let weights = r.values(n_weights, stored, "weights")?;
        let biases = r.values(out_channels, stored, "biases")?;
        layers.push(ConvLayer { out_channels, in_channels, weights, biases });
    }
    let params = ModelParams { layers };
    params.validate().map_err(|e| Error::format("layer_shape", e.to_string()))?;

    let adam = match r.u8("adam_flag")? {
        0 => None,
        1 => {
            let step = r.u64("adam_step")?;
            let (beta1, beta2, eps) = (r.f64("adam_beta1")?, r.f64("adam_beta2")?, r.f64("adam_eps")?);
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            for (ml, vl) in m.layers.iter_mut().zip(v.layers.iter_mut()) {
                ml.weights = r.values(ml.weights.len(), stored, "adam_moments")?;
                ml.biases = r.values(ml.biases.len(), stored, "adam_moments")?;
                vl.weights = r.values(vl.weights.len(), stored, "adam_moments")?;
                vl.biases = r.values(vl.biases.len(), stored, "adam_moments")?;
            }
            Some(AdamState { m, v, step, beta1, beta2, eps })
        }
        other => return Err(Error::format("adam_flag", format!("expected 0 or 1, found {other}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::format("trailer", format!("{} unexpected trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { params, adam })
}

pub fn write_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    // Write-then-rename so an interrupted save never leaves a partial model.
    let tmp = path.with_extension("tmp");
    write_file(&tmp, &bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&read_file(path)?)
}

/// Precision flag of a checkpoint file without decoding the payload.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "expected WNET"));
    }
    r.u16("version")?;
    let flag = r.u8("precision")?;
    Precision::from_flag(flag).ok_or_else(|| Error::format("precision", format!("unknown flag {flag}")))
}

/// One text line per grid row `i`, values comma-separated in `j` order,
/// printed with the shortest representation that parses back exactly.
pub fn field_to_csv<T: Real>(field: &FieldGrid<T>) -> String {
    let mut out = String::with_capacity(field.as_slice().len() * 12);
    for row in field.as_slice().chunks(field.ny().max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn field_from_csv<T: Real + std::str::FromStr>(text: &str) -> Result<FieldGrid<T>> {
    let mut data = Vec::new();
    let mut ny = None;
    let mut nx = 0;
    for (row, line) in text.lines().filter(|l| !l.is_empty()).enumerate() {
        let values = line
            .split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| Error::format("csv", format!("row {row}: cannot parse `{s}`"))))
            .collect::<Result<Vec<T>>>()?;
        match ny {
            None => ny = Some(values.len()),
            Some(n) if n != values.len() => {
                return Err(Error::format("csv", format!("row {row} has {} values, expected {n}", values.len())))
            }
            _ => {}
        }
        data.extend(values);
        nx += 1;
    }
    FieldGrid::from_vec(nx, ny.unwrap_or(0), data)
}

/// Binary greyscale PGM, `ny` pixels wide and `nx` tall, with
/// `value = clamp(128 + 127·f/max|f|)`; an all-zero field is uniform 128.
pub fn field_to_pgm<T: Real>(field: &FieldGrid<T>) -> Vec<u8> {
    let (nx, ny) = field.shape();
    let max = field.max_abs().as_f64();
    let mut out = format!("P5\n{ny} {nx}\n255\n").into_bytes();
    out.extend(field.as_slice().iter().map(|&v| {
        let scaled = if max > 0.0 { 128.0 + 127.0 * v.as_f64() / max } else { 128.0 };
        scaled.round().clamp(0.0, 255.0) as u8
    }));
    out
}
