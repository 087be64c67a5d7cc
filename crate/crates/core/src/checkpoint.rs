//! Binary checkpoints of a trained team.
//!
//! Layout (little endian): the 8-byte magic `CMPLCKPT`, a `u32` format
//! version, the MADDPG configuration as length-prefixed JSON, progress
//! counters, replay-buffer metadata, then per agent the actor, target actor,
//! critic and target critic followed by the actor and critic optimizer
//! states. Floats are stored bit-exactly, so a round trip reproduces every
//! parameter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::maddpg::{AgentNets, MaddpgConfig, MaddpgTrainer};
use crate::neural::{Activation, AdamConfig, GradientBuffer, Layer, LayerGradient, MlpParams, OptimizerState};

const MAGIC: &[u8; 8] = b"CMPLCKPT";
const VERSION: u32 = 1;

/// Replay-buffer position at checkpoint time (contents are not stored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BufferMeta {
    pub capacity: u64,
    pub len: u64,
    pub cursor: u64,
    pub total_pushed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: MaddpgConfig,
    pub episodes_completed: u64,
    pub env_steps: u64,
    pub train_steps: u64,
    pub buffer: BufferMeta,
    pub agents: Vec<AgentNets>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &MaddpgTrainer, episodes_completed: u64) -> Self {
        Self {
            config: trainer.config.clone(),
            episodes_completed,
            env_steps: trainer.env_steps(),
            train_steps: trainer.train_steps(),
            buffer: BufferMeta {
                capacity: trainer.buffer.capacity() as u64,
                len: trainer.buffer.len() as u64,
                cursor: trainer.buffer.cursor() as u64,
                total_pushed: trainer.buffer.total_pushed(),
            },
            agents: trainer.agents.clone(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let config = serde_json::to_vec(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.u64(config.len() as u64);
        w.0.extend_from_slice(&config);
        for v in [self.episodes_completed, self.env_steps, self.train_steps] {
            w.u64(v);
        }
        let b = self.buffer;
        for v in [b.capacity, b.len, b.cursor, b.total_pushed] {
            w.u64(v);
        }
        w.u64(self.agents.len() as u64);
        for agent in &self.agents {
            for net in [&agent.actor, &agent.target_actor, &agent.critic, &agent.target_critic] {
                w.mlp(net);
            }
            w.optimizer(&agent.actor_optimizer);
            w.optimizer(&agent.critic_optimizer);
        }
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config_len = r.len()?;
        let config: MaddpgConfig =
            serde_json::from_slice(r.take(config_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let episodes_completed = r.u64()?;
        let env_steps = r.u64()?;
        let train_steps = r.u64()?;
        let buffer = BufferMeta {
            capacity: r.u64()?,
            len: r.u64()?,
            cursor: r.u64()?,
            total_pushed: r.u64()?,
        };
        let count = r.len()?;
        let mut agents = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let actor = r.mlp()?;
            let target_actor = r.mlp()?;
            let critic = r.mlp()?;
            let target_critic = r.mlp()?;
            let actor_optimizer = r.optimizer(&actor)?;
            let critic_optimizer = r.optimizer(&critic)?;
            let agent = AgentNets {
                actor,
                target_actor,
                critic,
                target_critic,
                actor_optimizer,
                critic_optimizer,
            };
            if !agent.is_consistent() {
                return Err(Error::Checkpoint("online and target network shapes differ".into()));
            }
            agents.push(agent);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            episodes_completed,
            env_steps,
            train_steps,
            buffer,
            agents,
        })
    }

    /// Write atomically: a temporary sibling file is renamed into place, so
    /// an interrupted write never clobbers an existing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn actors(&self) -> Vec<MlpParams> {
        self.agents.iter().map(|a| a.actor.clone()).collect()
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, values: &[f64]) {
        values.iter().for_each(|&v| self.f64(v));
    }

    fn mlp(&mut self, net: &MlpParams) {
        self.0.push(net.hidden_activation.code());
        self.0.push(net.output_activation.code());
        self.u64(net.layers.len() as u64);
        for layer in &net.layers {
            self.u64(layer.inputs as u64);
            self.u64(layer.outputs as u64);
            self.f64s(&layer.weights);
            self.f64s(&layer.biases);
        }
    }

    fn optimizer(&mut self, opt: &OptimizerState) {
        let c = opt.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            self.f64(v);
        }
        self.u64(opt.step);
        for buffer in [&opt.first_moment, &opt.second_moment] {
            for layer in &buffer.layers {
                self.f64s(&layer.weights);
                self.f64s(&layer.biases);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count or size that must fit in the remaining bytes to be plausible.
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.bytes.len() as u64 {
            return Err(Error::Checkpoint(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn activation(&mut self) -> Result<Activation> {
        let code = self.u8()?;
        Activation::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))
    }

    fn mlp(&mut self) -> Result<MlpParams> {
        let hidden_activation = self.activation()?;
        let output_activation = self.activation()?;
        let count = self.len()?;
        if count == 0 {
            return Err(Error::Checkpoint("network without layers".into()));
        }
        let mut layers: Vec<Layer> = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = self.len()?;
            let outputs = self.len()?;
            if let Some(prev) = layers.last() {
                if prev.outputs != inputs {
                    return Err(Error::Checkpoint("layer sizes do not chain".into()));
                }
            }
            let weights = self.f64s(inputs.checked_mul(outputs).ok_or_else(|| Error::Checkpoint("layer too large".into()))?)?;
            let biases = self.f64s(outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                biases,
            });
        }
        Ok(MlpParams {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    fn optimizer(&mut self, params: &MlpParams) -> Result<OptimizerState> {
        let config = AdamConfig {
            learning_rate: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            epsilon: self.f64()?,
        };
        let step = self.u64()?;
        let mut moment = || -> Result<GradientBuffer> {
            let layers = params
                .layers
                .iter()
                .map(|l| {
                    Ok(LayerGradient {
                        weights: self.f64s(l.weights.len())?,
                        biases: self.f64s(l.biases.len())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GradientBuffer { layers })
        };
        let first_moment = moment()?;
        let second_moment = moment()?;
        Ok(OptimizerState {
            config,
            step,
            first_moment,
            second_moment,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maddpg::sampler_from_seed;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MaddpgConfig {
            hidden_sizes: vec![5, 4],
            ..MaddpgConfig::default()
        };
        let mut trainer = MaddpgTrainer::new(3, 12, cfg, &mut rng, sampler_from_seed(1)).unwrap();
        // make optimizer moments non-trivial
        for agent in &mut trainer.agents {
            agent.actor_optimizer.step = 17;
            for (k, v) in agent.critic_optimizer.second_moment.values_mut().enumerate() {
                *v = k as f64 * 1e-3 + f64::MIN_POSITIVE;
            }
        }
        Checkpoint::from_trainer(&trainer, 42)
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.encode().unwrap();
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), ckpt);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("team.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(!dir.path().join("team.ckpt.tmp").exists());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample_checkpoint().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
        let mut version = bytes;
        version[8] = 99;
        assert!(Checkpoint::decode(&version).is_err());
        assert!(Checkpoint::decode(&[]).is_err());
    }
}
