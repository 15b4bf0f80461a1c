//! `ISNC` checkpoints: named 32-bit parameter arrays plus the run
//! configuration they were trained with.

use std::collections::BTreeMap;
use std::path::Path;

use infosync_tensor::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_file, write_new, Reader};
use crate::model::InfoSyncNet;
use crate::params::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ISNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub path: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    pub config: String,
}

impl Checkpoint {
    /// Every parameter and buffer, in path order, narrowed to 32 bits.
    pub fn from_params(params: &ModelParams, config: &RunConfig) -> Self {
        Checkpoint {
            entries: params
                .iter()
                .map(|(path, t)| Entry {
                    path: path.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|&v| v as f32).collect(),
                })
                .collect(),
            config: config.emit(),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }

    /// Rebuilds the model from the stored configuration and loads the
    /// stored values into it; every path must match exactly.
    pub fn restore(&self) -> Result<(RunConfig, InfoSyncNet, ModelParams)> {
        let cfg = self.run_config()?;
        let net = cfg.build_model()?;
        let mut params = net.init_params(cfg.train.seed);
        let mut values = BTreeMap::new();
        for e in &self.entries {
            let t = Tensor::new(e.shape.clone(), e.data.iter().map(|&v| v as f64).collect())
                .map_err(|err| Error::Format(format!("{}: {err}", e.path)))?;
            if values.insert(e.path.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate checkpoint entry {}", e.path)));
            }
        }
        params.load_from(&values)?;
        Ok((cfg, net, params))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.path.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("path too long: {}", e.path)))?;
            let rank = u8::try_from(e.shape.len()).map_err(|_| Error::Format(format!("rank too high: {}", e.path)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let cfg = self.config.as_bytes();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let path = String::from_utf8(r.bytes(len)?.to_vec())
                .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            entries.push(Entry { path, shape, data });
        }
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.bytes(len)?.to_vec())
            .map_err(|e| Error::Format(format!("config snapshot is not UTF-8: {e}")))?;
        r.finish()?;
        Ok(Checkpoint { entries, config })
    }

    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        write_new(path, &self.to_bytes()?, force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
