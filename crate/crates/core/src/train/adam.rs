use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

const SIDECAR_MAGIC: &[u8; 4] = b"CCOS";
const SIDECAR_VERSION: u16 = 1;

/// Adam hyper-parameters shared by every tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moments of one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn reset(&mut self, len: usize) {
        *self = Self::new(len);
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState, lr: f64, hp: &AdamParams) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (hp.beta1 as f32, hp.beta2 as f32);
    for i in 0..params.len() {
        let g = grads[i].to_f64() as f32;
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let update = lr * (m as f64 / c1) / ((v as f64 / c2).sqrt() + hp.eps);
        params[i] = T::from_f64(params[i].to_f64() - update);
    }
    Ok(())
}

/// Adam moments for every parameter tensor of a model, in the order
/// density S, Ux, Uy, Uz, Uxy, Uyz, Uxz, then the same for color.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub tensors: Vec<AdamState>,
}

impl OptimizerState {
    pub fn for_lengths(lengths: &[usize]) -> Self {
        Self {
            tensors: lengths.iter().map(|&n| AdamState::new(n)).collect(),
        }
    }

    /// `CCOS`, u16 version, u32 tensor count, then per tensor u64 step,
    /// u64 length and the two moment arrays as f32 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&t.step.to_le_bytes());
            out.extend_from_slice(&(t.m.len() as u64).to_le_bytes());
            for v in t.m.iter().chain(&t.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("optimizer state: {m}"));
        if buf.len() < 10 || &buf[..4] != SIDECAR_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version > SIDECAR_VERSION {
            return Err(Error::Version {
                found: version,
                supported: SIDECAR_VERSION,
            });
        }
        let count = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let mut pos = 10;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let floats = |b: &[u8]| b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>();
            let m = floats(take(4 * len)?);
            let v = floats(take(4 * len)?);
            tensors.push(AdamState { m, v, step });
        }
        if pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
