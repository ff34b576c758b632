//! Named trainable parameters, their gradients and optimizer state, plus the
//! binary checkpoint format.
//!
//! A [`ParamStore`] owns every trainable tensor of a model, keyed by name and
//! kept in registration order so that iteration is deterministic. A forward
//! pass binds the store onto a [`Tape`] as leaves, the backward pass hands
//! gradients back by name, and [`ParamStore::rmsprop_step`] applies the
//! update.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct ParamEntry {
    value: Tensor,
    grad: Tensor,
    rms: Tensor,
}

/// Optimizer hyperparameters for [`ParamStore::rmsprop_step`].
#[derive(Debug, Clone, Copy)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            learning_rate: 3e-4,
            decay: 0.95,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    entries: Vec<ParamEntry>,
}

/// Map from parameter name to its leaf on a particular tape.
#[derive(Debug)]
pub struct TapeBinding {
    ids: HashMap<String, NodeId>,
    ordered: Vec<(String, NodeId)>,
}

impl TapeBinding {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("no parameter named `{name}` bound on tape")))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::argument(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let shape = value.shape().to_vec();
        self.index.insert(name.to_string(), self.entries.len());
        self.names.push(name.to_string());
        self.entries.push(ParamEntry {
            value,
            grad: Tensor::zeros(shape.clone()),
            rms: Tensor::zeros(shape),
        });
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry> {
        let idx = self
            .index
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        Ok(&self.entries[*idx])
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        let idx = self
            .index
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        Ok(&mut self.entries[*idx])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != value.shape() {
            return Err(Error::config(format!(
                "parameter `{name}`: expected shape {:?}, found {:?}",
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    /// Overwrite the gradient of one parameter (used by tests and by the
    /// gradient-check negative control).
    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.grad.shape() != grad.shape() {
            return Err(Error::config(format!(
                "parameter `{name}`: expected shape {:?}, found {:?}",
                entry.grad.shape(),
                grad.shape()
            )));
        }
        entry.grad = grad;
        Ok(())
    }

    /// Insert every parameter as a leaf on `tape`, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        self.bind_inner(tape, None)
    }

    /// Like [`ParamStore::bind`], but map `name` to an existing node instead
    /// of its stored value. The gradient-check harness uses this to route a
    /// probe leaf into one parameter's slot.
    pub fn bind_with_override(&self, tape: &mut Tape, name: &str, node: NodeId) -> TapeBinding {
        self.bind_inner(tape, Some((name, node)))
    }

    fn bind_inner(&self, tape: &mut Tape, over: Option<(&str, NodeId)>) -> TapeBinding {
        let mut ids = HashMap::with_capacity(self.entries.len());
        let mut ordered = Vec::with_capacity(self.entries.len());
        for (name, entry) in self.names.iter().zip(&self.entries) {
            let id = match over {
                Some((n, node)) if n == name => node,
                _ => tape.leaf(entry.value.clone()),
            };
            ids.insert(name.clone(), id);
            ordered.push((name.clone(), id));
        }
        TapeBinding { ids, ordered }
    }

    /// Add the tape gradients of every bound parameter into the store.
    pub fn accumulate_grads(&mut self, binding: &TapeBinding, grads: &Gradients) {
        for (name, id) in &binding.ordered {
            if let Some(g) = grads.get(*id) {
                let idx = self.index[name];
                let entry = &mut self.entries[idx];
                for (dst, &src) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in &mut self.entries {
            entry.grad.data_mut().fill(0.0);
        }
    }

    /// One RMSprop update over every entry:
    /// `acc <- decay*acc + (1-decay)*g^2`, `theta <- theta - lr*g/sqrt(acc+eps)`.
    /// Gradients are zeroed afterwards.
    pub fn rmsprop_step(&mut self, cfg: &RmspropConfig) {
        for entry in &mut self.entries {
            let grad = entry.grad.data().to_vec();
            let rms = entry.rms.data_mut();
            for (acc, &g) in rms.iter_mut().zip(&grad) {
                *acc = cfg.decay * *acc + (1.0 - cfg.decay) * g * g;
            }
            let rms = entry.rms.data().to_vec();
            for ((theta, &g), &acc) in entry.value.data_mut().iter_mut().zip(&grad).zip(&rms) {
                *theta -= cfg.learning_rate * g / (acc + cfg.epsilon).sqrt();
            }
            entry.grad.data_mut().fill(0.0);
        }
    }

    /// Re-draw every tensor (biases included) from U[-radius, radius) on
    /// per-name streams. Gradient checks run at such a point: an untrained
    /// net's activations are so small that finite differences of the loss
    /// drown in rounding noise, while a moderate-amplitude random point keeps
    /// every path's gradient well above it.
    pub fn randomize(&mut self, radius: f64, seed: u64) {
        let root = crate::rng::RngState::seeded(seed);
        for entry in self.names.iter().zip(&mut self.entries) {
            let (name, entry) = entry;
            let mut rng = root.derive(name);
            entry.value = Tensor::uniform(entry.value.shape().to_vec(), -radius, radius, &mut rng);
        }
    }

    /// Snapshot of all current values, in registration order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.entries.iter().map(|e| e.value.clone()))
            .collect()
    }

    /// Restore values from a snapshot; every name must exist with a matching
    /// shape. Optimizer state and gradients are left untouched.
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in snapshot {
            self.set_value(name, tensor.clone())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// magic "SALATTC1" (8 bytes)
// count: u32 LE
// per tensor, in store order:
//   name length: u32 LE, name bytes (UTF-8)
//   rank: u32 LE, dims: rank x u32 LE
//   payload: f64 LE values, row-major
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"SALATTC1";

pub fn write_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = Cursor::new(&bytes);

    let magic = cursor.take_bytes(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic".to_string()));
    }
    let count = cursor.take_u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.take_u32("name length")? as usize;
        let name_bytes = cursor.take_bytes(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(cursor.pos, "tensor name is not UTF-8"))?
            .to_string();
        let rank = cursor.take_u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.take_u32("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(cursor.take_f64("payload")?);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Load a checkpoint into an already-constructed store, verifying that the
/// tensor names and shapes agree exactly with what the config produced.
pub fn load_into_store(path: &Path, store: &mut ParamStore) -> Result<()> {
    let tensors = read_checkpoint(path)?;
    if tensors.len() != store.len() {
        return Err(Error::config(format!(
            "checkpoint holds {} tensors, config expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, tensor) in &tensors {
        store.set_value(name, tensor.clone())?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let start = self.pos as usize;
        if start + n > self.bytes.len() {
            return Err(Error::format(self.pos, format!("truncated {what}")));
        }
        self.pos += n as u64;
        Ok(&self.bytes[start..start + n])
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take_bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take_f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take_bytes(8, what)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}
