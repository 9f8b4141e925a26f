//! Versioned binary checkpoint of a [`LearnerState`].
//!
//! Little-endian throughout; `f64` values are stored as raw IEEE-754 bits so a
//! round trip is bit-exact. Layout (version 1):
//!
//! ```text
//! magic        8 bytes  b"VCILCKPT"
//! version      u32
//! hyperparams  9 x f64  r_intra r_inter lambda1 lambda2 lr weight_decay beta1 beta2 epsilon
//!              4 x u64  epochs batch_size latent_dim pseudo_per_old_class
//!              u8       decoder output activation (0 identity, 2 sigmoid)
//!              u32 n, n x u64 hidden widths
//! tasks_seen   u64
//! class_order  u32 n, n x u32
//! per class    u32 label, u64 task, encoder MLP, decoder MLP
//!   MLP        u32 layers, per layer: u8 activation, u32 in, u32 out,
//!              in*out x f64 weights (row-major out x in), out x f64 bias
//! checksum     u64 FNV-1a over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{LearnerState, PooledVae};
use crate::losses::HyperParams;
use crate::numcore::{Activation, AffineLayer, Mlp};
use crate::vae::ClassVae;

pub const MAGIC: &[u8; 8] = b"VCILCKPT";
pub const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
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
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn mlp(&mut self, mlp: &Mlp) {
        self.u32(mlp.layers().len() as u32);
        for (layer, act) in mlp.layers().iter().zip(mlp.activations()) {
            self.u8(act.code());
            self.u32(layer.in_dim() as u32);
            self.u32(layer.out_dim() as u32);
            self.f64s(layer.weights());
            self.f64s(layer.bias());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Parse {
            offset: at as u64,
            message: format!("{what} {v} out of range"),
        })
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.err("length overflow"))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
    fn activation(&mut self, what: &str) -> Result<Activation> {
        let at = self.pos;
        let code = self.u8(what)?;
        Activation::from_code(code).ok_or(Error::Parse {
            offset: at as u64,
            message: format!("unknown activation code {code} for {what}"),
        })
    }
    fn mlp(&mut self, what: &str) -> Result<Mlp> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n == 0 {
            return Err(Error::Parse {
                offset: at as u64,
                message: format!("{what} has no layers"),
            });
        }
        let mut layers = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n);
        for _ in 0..n {
            acts.push(self.activation(what)?);
            let start = self.pos;
            let in_dim = self.u32(what)? as usize;
            let out_dim = self.u32(what)? as usize;
            let weights = self.f64s(in_dim * out_dim, what)?;
            let bias = self.f64s(out_dim, what)?;
            layers.push(
                AffineLayer::from_parts(in_dim, out_dim, weights, bias).map_err(|e| {
                    Error::Parse {
                        offset: start as u64,
                        message: e.to_string(),
                    }
                })?,
            );
        }
        Mlp::from_layers(layers, acts).map_err(|e| Error::Parse {
            offset: at as u64,
            message: e.to_string(),
        })
    }
}

pub fn encode(state: &LearnerState) -> Vec<u8> {
    let hp = state.hyper_params();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    for v in [
        hp.r_intra,
        hp.r_inter,
        hp.lambda1,
        hp.lambda2,
        hp.learning_rate,
        hp.weight_decay,
        hp.beta1,
        hp.beta2,
        hp.epsilon,
    ] {
        w.f64(v);
    }
    for v in [
        hp.epochs,
        hp.batch_size,
        hp.latent_dim,
        hp.pseudo_per_old_class,
    ] {
        w.u64(v as u64);
    }
    w.u8(hp.decoder_output.code());
    w.u32(hp.hidden_widths.len() as u32);
    for &h in &hp.hidden_widths {
        w.u64(h as u64);
    }
    w.u64(state.tasks_seen() as u64);
    let order = state.class_order();
    w.u32(order.len() as u32);
    for &l in &order {
        w.u32(l);
    }
    for p in state.vaes() {
        w.u32(p.vae.label());
        w.u64(p.task as u64);
        w.mlp(p.vae.encoder());
        w.mlp(p.vae.decoder());
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<LearnerState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    if bytes.len() < 20 {
        return Err(r.err("truncated checkpoint"));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    if stored != fnv1a(&bytes[..body_end]) {
        return Err(Error::Parse {
            offset: body_end as u64,
            message: "checksum mismatch; checkpoint is corrupted".into(),
        });
    }
    let r = &mut Reader {
        bytes: &bytes[..body_end],
        pos: r.pos,
    };

    let mut f = [0.0; 9];
    for (i, v) in f.iter_mut().enumerate() {
        *v = r.f64(&format!("hyperparameter {i}"))?;
    }
    let epochs = r.usize("epochs")?;
    let batch_size = r.usize("batch_size")?;
    let latent_dim = r.usize("latent_dim")?;
    let pseudo_per_old_class = r.usize("pseudo_per_old_class")?;
    let decoder_output = r.activation("decoder output")?;
    let n_hidden = r.u32("hidden width count")? as usize;
    let hidden_widths = (0..n_hidden)
        .map(|_| r.usize("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let hp = HyperParams {
        r_intra: f[0],
        r_inter: f[1],
        lambda1: f[2],
        lambda2: f[3],
        learning_rate: f[4],
        weight_decay: f[5],
        beta1: f[6],
        beta2: f[7],
        epsilon: f[8],
        epochs,
        batch_size,
        latent_dim,
        hidden_widths,
        pseudo_per_old_class,
        decoder_output,
    };
    let tasks_seen = r.usize("tasks_seen")?;
    let n = r.u32("class count")? as usize;
    let order = (0..n)
        .map(|_| r.u32("class order"))
        .collect::<Result<Vec<_>>>()?;
    let mut vaes = Vec::with_capacity(n);
    for &expected in &order {
        let at = r.pos;
        let label = r.u32("class label")?;
        if label != expected {
            return Err(Error::Parse {
                offset: at as u64,
                message: format!("class block {label} does not match class order entry {expected}"),
            });
        }
        let task = r.usize("task index")?;
        let encoder = r.mlp("encoder")?;
        let decoder = r.mlp("decoder")?;
        let vae =
            ClassVae::from_parts(label, encoder, decoder, true).map_err(|e| Error::Parse {
                offset: at as u64,
                message: e.to_string(),
            })?;
        vaes.push(PooledVae { vae, task });
    }
    if r.pos != body_end {
        return Err(r.err(format!("{} unexpected trailing bytes", body_end - r.pos)));
    }
    LearnerState::from_parts(hp, vaes, tasks_seen)
}

pub fn save(state: &LearnerState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LearnerState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Bytes of the encoder and decoder blocks of one class, as written by [`encode`].
pub fn class_block(state: &LearnerState, label: u32) -> Option<Vec<u8>> {
    let p = state.vaes().iter().find(|p| p.vae.label() == label)?;
    let mut w = Writer(Vec::new());
    w.u32(p.vae.label());
    w.u64(p.task as u64);
    w.mlp(p.vae.encoder());
    w.mlp(p.vae.decoder());
    Some(w.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::PooledVae;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_state() -> LearnerState {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hp = HyperParams {
            hidden_widths: vec![5, 3],
            latent_dim: 2,
            ..HyperParams::default()
        };
        let vaes = [(4u32, 1usize), (7, 1), (2, 2)]
            .iter()
            .map(|&(label, task)| {
                let mut vae =
                    ClassVae::new(label, 6, &[5, 3], 2, Activation::Sigmoid, &mut rng).unwrap();
                vae.freeze();
                PooledVae { vae, task }
            })
            .collect();
        LearnerState::from_parts(hp, vaes, 2).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let state = toy_state();
        let bytes = encode(&state);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, state);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corruption_is_reported_with_offset() {
        let mut bytes = encode(&toy_state());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 8),
            other => panic!("{other:?}"),
        }
        let bytes = encode(&toy_state());
        assert!(matches!(decode(&bytes[..30]), Err(Error::Parse { .. })));
        assert!(matches!(decode(&[]), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode(&toy_state());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::Version {
                found: 2,
                supported: 1
            })
        ));
    }
}
