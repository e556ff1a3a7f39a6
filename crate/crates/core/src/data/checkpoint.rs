//! Tagged little-endian checkpoint format.
//!
//! ```text
//! "MDIF" u32:version
//! u64:T u8:schedule_kind
//! u64:io_channels u64:model_channels u8:conditional u64:class_count u8:depth_extension
//! u8:dtype_bytes u64:epoch u64:step
//! u32:n { str:key str:value }                        metadata
//! u32:n { str:name [u8;32]:seed u64:stream u128:pos } rng streams
//! u32:n { str:name u32:rank u64*rank:extents data }   tensors, in dtype
//! u8:has_optimizer [ u64:step u32:n { u64:len f64*len:m f64*len:v } ]
//! ```
//! Strings are `u32` length then UTF-8 bytes.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::rng::RngState;
use crate::scalar::{DType, Scalar};
use crate::schedule::ScheduleKind;
use crate::tensor::Tensor;
use crate::unet::{UNet, UNetConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDIF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Widened to f64; narrowing back to the stored dtype is exact.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub timesteps: usize,
    pub schedule: ScheduleKind,
    pub unet: UNetConfig,
    pub dtype: DType,
    pub epoch: u64,
    pub step: u64,
    pub meta: Vec<(String, String)>,
    pub rng: Vec<(String, RngState)>,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    /// A checkpoint of `model`'s parameters with empty training state.
    pub fn from_model<S: Scalar>(model: &UNet<S>, timesteps: usize) -> Self {
        let tensors = model
            .named_parameters()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.to_f64_vec(),
            })
            .collect();
        Checkpoint {
            timesteps,
            schedule: ScheduleKind::Linear,
            unet: *model.config(),
            dtype: S::DTYPE,
            epoch: 0,
            step: 0,
            meta: Vec::new(),
            rng: Vec::new(),
            tensors,
            optimizer: None,
        }
    }

    /// Rebuilds the network. Fails without returning a partial model when a
    /// parameter is missing, misshapen, or the table holds unknown names.
    pub fn to_model<S: Scalar>(&self) -> Result<UNet<S>> {
        let model = UNet::<S>::zeros(self.unet)?;
        let expected: HashSet<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        if let Some(extra) = self.tensors.iter().find(|r| !expected.contains(&r.name)) {
            return Err(Error::format("checkpoint", format!("unexpected tensor `{}`", extra.name)));
        }
        let tensors = self
            .tensors
            .iter()
            .map(|r| Ok((r.name.as_str(), Tensor::<f64>::new(&r.shape, r.values.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        model.load_parameters(tensors.iter().map(|(n, t)| (*n, t)))?;
        Ok(model)
    }

    pub fn check_schedule(&self, requested: usize) -> Result<()> {
        if self.timesteps != requested {
            return Err(Error::ScheduleMismatch { checkpoint: self.timesteps, requested });
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn rng_state(&self, name: &str) -> Option<RngState> {
        self.rng.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.timesteps as u64);
        w.u8(self.schedule.code());
        w.u64(self.unet.io_channels as u64);
        w.u64(self.unet.model_channels as u64);
        w.u8(self.unet.class_count.is_some() as u8);
        w.u64(self.unet.class_count.unwrap_or(0) as u64);
        w.u8(self.unet.depth_extension as u8);
        w.u8(self.dtype.code());
        w.u64(self.epoch);
        w.u64(self.step);

        w.u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            w.str(k);
            w.str(v);
        }
        w.u32(self.rng.len() as u32);
        for (name, s) in &self.rng {
            w.str(name);
            w.0.extend_from_slice(&s.seed);
            w.u64(s.stream);
            w.0.extend_from_slice(&s.word_pos.to_le_bytes());
        }
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.str(&t.name);
            w.u32(t.shape.len() as u32);
            for &d in &t.shape {
                w.u64(d as u64);
            }
            for &v in &t.values {
                match self.dtype {
                    DType::F32 => (v as f32).write_le(&mut w.0),
                    DType::F64 => v.write_le(&mut w.0),
                }
            }
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                w.u32(opt.m.len() as u32);
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    w.u64(m.len() as u64);
                    m.iter().chain(v).for_each(|x| x.write_le(&mut w.0));
                }
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic (not an MDIF file)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let timesteps = r.usize("timesteps")?;
        let kind = r.u8("schedule kind")?;
        let schedule = ScheduleKind::from_code(kind)
            .ok_or_else(|| Error::format("checkpoint", format!("unknown schedule kind {kind}")))?;
        let io_channels = r.usize("io channels")?;
        let model_channels = r.usize("model channels")?;
        let conditional = r.flag("conditional flag")?;
        let class_count = r.usize("class count")?;
        let depth_extension = r.flag("depth flag")?;
        let unet = UNetConfig {
            io_channels,
            model_channels,
            class_count: conditional.then_some(class_count),
            depth_extension,
        };
        unet.validate()?;
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::format("checkpoint", format!("unknown dtype code {code}")))?;
        let epoch = r.u64("epoch")?;
        let step = r.u64("step")?;

        let n = r.count("metadata", 8)?;
        let mut meta = Vec::with_capacity(n);
        for _ in 0..n {
            meta.push((r.str("metadata key")?, r.str("metadata value")?));
        }
        let n = r.count("rng table", 4 + 32 + 8 + 16)?;
        let mut rng = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str("rng name")?;
            let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
            let stream = r.u64("rng stream")?;
            let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
            rng.push((name, RngState { seed, stream, word_pos }));
        }
        let n = r.count("tensor table", 8)?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str("tensor name")?;
            let rank = r.count("tensor rank", 8)?;
            let shape = (0..rank).map(|_| r.usize("tensor extent")).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = numel
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::format("checkpoint", format!("tensor `{name}` extents overflow")))?;
            let raw = r.take(len, &format!("tensor `{name}`"))?;
            let values = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
            };
            tensors.push(TensorRecord { name, shape, values });
        }
        let optimizer = if r.flag("optimizer flag")? {
            let step = r.u64("optimizer step")?;
            let n = r.count("optimizer table", 8)?;
            let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let len = r.usize("moment length")?;
                let bytes = len
                    .checked_mul(16)
                    .ok_or_else(|| Error::format("checkpoint", "moment length overflow"))?;
                let raw = r.take(bytes, "optimizer moments")?;
                let mut vals = raw.chunks_exact(8).map(f64::read_le);
                m.push(vals.by_ref().take(len).collect());
                v.push(vals.collect());
            }
            Some(AdamState { step, m, v })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            timesteps,
            schedule,
            unet,
            dtype,
            epoch,
            step,
            meta,
            rng,
            tensors,
            optimizer,
        })
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                what: format!("checkpoint {what}"),
                expected: n,
                actual: remaining,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format("checkpoint", format!("{what} is {other}, expected 0 or 1"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::format("checkpoint", format!("{what} {v} too large")))
    }

    /// A table length, checked against the bytes left so a corrupt count
    /// cannot trigger a huge allocation.
    fn count(&mut self, what: &str, min_entry_bytes: usize) -> Result<usize> {
        let n = self.u32(what)? as usize;
        let remaining = self.bytes.len() - self.pos;
        if n.saturating_mul(min_entry_bytes) > remaining {
            return Err(Error::Truncated {
                what: format!("checkpoint {what} ({n} entries)"),
                expected: n.saturating_mul(min_entry_bytes),
                actual: remaining,
            });
        }
        Ok(n)
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::format("checkpoint", format!("{what} is not UTF-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let cfg = UNetConfig { class_count: Some(10), ..UNetConfig::unconditional(1, 32) };
        let model = UNet::<f32>::new(cfg, &mut Rng::seed_from_u64(0)).unwrap();
        let mut ck = Checkpoint::from_model(&model, 300);
        ck.epoch = 3;
        ck.step = 24;
        ck.meta.push(("dataset".into(), "mnist".into()));
        ck.rng.push(("noise".into(), Rng::with_stream(1, 3).state()));
        ck
    }

    #[test]
    fn encode_decode_encode_is_identity() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn model_round_trip() {
        let ck = sample();
        let model = ck.to_model::<f32>().unwrap();
        assert_eq!(Checkpoint::from_model(&model, 300).tensors, ck.tensors);
    }

    #[test]
    fn structured_errors() {
        let bytes = sample().encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { .. })));
        assert!(matches!(sample().check_schedule(1000), Err(Error::ScheduleMismatch { .. })));
    }

    #[test]
    fn missing_tensor_gives_no_model() {
        let mut ck = sample();
        ck.tensors.remove(0);
        assert!(matches!(ck.to_model::<f32>(), Err(Error::MissingTensor(_))));
        let mut ck = sample();
        ck.tensors[0].shape = vec![1];
        ck.tensors[0].values = vec![0.0];
        assert!(ck.to_model::<f32>().is_err());
    }
}
