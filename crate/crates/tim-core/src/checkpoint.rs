//! Versioned binary checkpoints.
//!
//! Layout: the magic `TIM1`, a little-endian `u32` format version, then ten
//! sections, each framed by a little-endian `u64` byte length. Configuration
//! sections are JSON; numeric payloads are little-endian 32-bit floats; the
//! rng section captures the ChaCha state (seed, stream, word position) so a
//! resumed run continues the exact random stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TimError};
use crate::network::{Network, NetworkConfig, ParamLayout};
use crate::trainer::{TrainConfig, TrainState, Trainer};
use crate::transport::TransportSpec;

pub const MAGIC: &[u8; 4] = b"TIM1";
pub const FORMAT_VERSION: u32 = 1;

/// Cap on any single section, to fail fast on corrupt length prefixes.
const MAX_SECTION: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: TransportSpec,
    pub net_cfg: NetworkConfig,
    pub layout: ParamLayout,
    pub params: Vec<f32>,
    pub ema: Vec<f32>,
    pub train_cfg: TrainConfig,
    pub opt_m: Vec<f32>,
    pub opt_v: Vec<f32>,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub step: u64,
}

impl Checkpoint {
    /// Captures the full trainer state, including optimizer moments and the
    /// rng position (both required for bitwise-equivalent resume).
    pub fn capture(tr: &Trainer) -> Checkpoint {
        Checkpoint {
            version: FORMAT_VERSION,
            spec: tr.spec.clone(),
            net_cfg: tr.net.config().clone(),
            layout: tr.net.layout().clone(),
            params: tr.state.params.clone(),
            ema: tr.state.ema.clone(),
            train_cfg: tr.cfg.clone(),
            opt_m: tr.state.opt_m.clone(),
            opt_v: tr.state.opt_v.clone(),
            rng_seed: tr.state.rng.get_seed(),
            rng_stream: tr.state.rng.get_stream(),
            rng_word_pos: tr.state.rng.get_word_pos(),
            step: tr.state.step,
        }
    }

    /// Rebuilds trainer state; the caller constructs the network from
    /// `net_cfg` and should check the layout against [`Checkpoint::layout`].
    pub fn into_state(&self) -> TrainState {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        TrainState {
            params: self.params.clone(),
            ema: self.ema.clone(),
            opt_m: self.opt_m.clone(),
            opt_v: self.opt_v.clone(),
            step: self.step,
            rng,
        }
    }

    /// Rebuilds a ready-to-run trainer around a dataset.
    pub fn into_trainer(&self, dataset: crate::data::ToyDataset) -> Result<Trainer> {
        let net = Network::new(self.net_cfg.clone())?;
        if net.layout() != &self.layout {
            return Err(TimError::Checkpoint(
                "stored layout manifest disagrees with the architecture".into(),
            ));
        }
        Trainer::from_state(net, self.spec.clone(), self.train_cfg.clone(), dataset, self.into_state())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        write_section(w, &to_json(&self.spec)?)?;
        write_section(w, &to_json(&self.net_cfg)?)?;
        write_section(w, &to_json(&self.layout)?)?;
        write_section(w, &floats_to_bytes(&self.params))?;
        write_section(w, &floats_to_bytes(&self.ema))?;
        write_section(w, &to_json(&self.train_cfg)?)?;
        write_section(w, &floats_to_bytes(&self.opt_m))?;
        write_section(w, &floats_to_bytes(&self.opt_v))?;
        let mut rng = Vec::with_capacity(32 + 8 + 16);
        rng.extend_from_slice(&self.rng_seed);
        rng.extend_from_slice(&self.rng_stream.to_le_bytes());
        rng.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        write_section(w, &rng)?;
        write_section(w, &self.step.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TimError::Checkpoint(format!(
                "bad magic {:?}; expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        let version = u32::from_le_bytes(ver);
        if version != FORMAT_VERSION {
            return Err(TimError::Checkpoint(format!(
                "unsupported format version {version}; this build reads {FORMAT_VERSION}"
            )));
        }
        let spec: TransportSpec = from_json(&read_section(r)?)?;
        let net_cfg: NetworkConfig = from_json(&read_section(r)?)?;
        let layout: ParamLayout = from_json(&read_section(r)?)?;
        let params = bytes_to_floats(&read_section(r)?)?;
        let ema = bytes_to_floats(&read_section(r)?)?;
        let train_cfg: TrainConfig = from_json(&read_section(r)?)?;
        let opt_m = bytes_to_floats(&read_section(r)?)?;
        let opt_v = bytes_to_floats(&read_section(r)?)?;
        let rng = read_section(r)?;
        if rng.len() != 32 + 8 + 16 {
            return Err(TimError::Checkpoint("rng section has wrong length".into()));
        }
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(&rng[..32]);
        let rng_stream = u64::from_le_bytes(rng[32..40].try_into().unwrap());
        let rng_word_pos = u128::from_le_bytes(rng[40..56].try_into().unwrap());
        let step_bytes = read_section(r)?;
        if step_bytes.len() != 8 {
            return Err(TimError::Checkpoint("step section has wrong length".into()));
        }
        let step = u64::from_le_bytes(step_bytes.try_into().unwrap());
        let ckpt = Checkpoint {
            version,
            spec,
            net_cfg,
            layout,
            params,
            ema,
            train_cfg,
            opt_m,
            opt_v,
            rng_seed,
            rng_stream,
            rng_word_pos,
            step,
        };
        ckpt.check_lengths()?;
        Ok(ckpt)
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.layout.total;
        for (len, name) in [
            (self.params.len(), "params"),
            (self.ema.len(), "ema"),
            (self.opt_m.len(), "opt_m"),
            (self.opt_v.len(), "opt_v"),
        ] {
            if len != n {
                return Err(TimError::Checkpoint(format!(
                    "{name} holds {len} floats but the layout manifest says {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| TimError::Checkpoint(format!("encode: {e}")))
}

fn from_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| TimError::Checkpoint(format!("decode: {e}")))
}

fn floats_to_bytes(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn bytes_to_floats(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(TimError::Checkpoint("float section length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_section<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes);
    if len > MAX_SECTION {
        return Err(TimError::Checkpoint(format!("section length {len} exceeds sanity cap")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetKind, ToyDataset};
    use crate::network::NetworkConfig;
    use crate::trainer::{DerivativeSource, TrainConfig};
    use crate::transport::TransportKind;

    fn small_trainer() -> Trainer {
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        let net = Network::new(NetworkConfig::mlp(2, 8, 1, 4)).unwrap();
        let ds =
            ToyDataset::new(DatasetKind::DeltaPoint { x0: vec![0.1, 0.2] }, 10, 1, 1.0).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 4;
        Trainer::new(net, spec, cfg, ds).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let mut tr = small_trainer();
        for _ in 0..3 {
            tr.train_step(DerivativeSource::Dde).unwrap();
        }
        let ckpt = Checkpoint::capture(&tr);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(ckpt, back);
        // A second encode produces identical bytes.
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn resumed_rng_continues_stream() {
        let mut tr = small_trainer();
        tr.train_step(DerivativeSource::Dde).unwrap();
        let ckpt = Checkpoint::capture(&tr);
        let mut restored = ckpt.into_state();
        use rand::Rng;
        assert_eq!(tr.state.rng.random::<u64>(), restored.rng.random::<u64>());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let tr = small_trainer();
        let ckpt = Checkpoint::capture(&tr);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        let err = Checkpoint::read_from(&mut bad_magic.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));

        let mut bad_version = buf.clone();
        bad_version[4] = 99;
        let err = Checkpoint::read_from(&mut bad_version.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));

        let truncated = &buf[..buf.len() / 2];
        assert!(Checkpoint::read_from(&mut &truncated[..]).is_err());
    }

    #[test]
    fn into_trainer_checks_layout() {
        let tr = small_trainer();
        let mut ckpt = Checkpoint::capture(&tr);
        let ds =
            ToyDataset::new(DatasetKind::DeltaPoint { x0: vec![0.1, 0.2] }, 10, 1, 1.0).unwrap();
        assert!(ckpt.into_trainer(ds.clone()).is_ok());
        ckpt.layout.entries[0].name = "tampered".into();
        assert!(ckpt.into_trainer(ds).is_err());
    }
}
