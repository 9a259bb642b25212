//! Parameter storage and the adaptive-moment optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Gradients, Tensor};

/// Handle to a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter registry. Layers hold [`ParamId`]s; the optimizer swaps
/// tensors in place, so models never mutate tensor data directly.
pub struct ParamStore<E: Element = f32> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
    index: HashMap<String, usize>,
    trainable: bool,
}

impl<E: Element> ParamStore<E> {
    /// A store whose parameters participate in gradient tracking.
    pub fn trainable() -> Self {
        Self::with_mode(true)
    }

    /// A store whose parameters are constants (frozen models).
    pub fn frozen() -> Self {
        Self::with_mode(false)
    }

    fn with_mode(trainable: bool) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            trainable,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn register(&mut self, name: impl Into<String>, init: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let value = if self.trainable {
            init.with_grad()
        } else {
            init.detach()
        };
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> Tensor<E> {
        self.values[id.0].clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }

    /// Replace a parameter value (same shape). Used by the optimizer and by
    /// checkpoint loading.
    pub fn set_by_name(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let &id = self
            .index
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if self.values[id].shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_by_name",
                lhs: self.values[id].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[id] = if self.trainable {
            value.with_grad()
        } else {
            value.detach()
        };
        Ok(())
    }

    /// Same parameters in another element type (used by verification).
    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        let mut out = ParamStore::with_mode(self.trainable);
        for (name, value) in self.iter() {
            out.register(name, value.cast::<F>()).expect("unique names");
        }
        out
    }
}

/// Configuration for [`Adam`]. The defaults are the canonical ones.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
pub struct Adam<E: Element = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<E>>,
    second: Vec<Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig, store: &ParamStore<E>) -> Self {
        let first = store.values.iter().map(|t| vec![E::zero(); t.numel()]).collect();
        let second = store.values.iter().map(|t| vec![E::zero(); t.numel()]).collect();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters without a gradient this step are left
    /// untouched (their moments are not decayed either). A non-finite
    /// gradient aborts before any parameter is modified.
    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &Gradients<E>) -> Result<()> {
        for (i, value) in store.values.iter().enumerate() {
            if let Some(g) = grads.get(value) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        name: store.names[i].clone(),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);
        let lr = E::from_f64(self.config.lr);
        let b1 = E::from_f64(self.config.beta1);
        let b2 = E::from_f64(self.config.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.config.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.config.beta2);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let eps = E::from_f64(self.config.eps);

        for i in 0..store.values.len() {
            let value = &store.values[i];
            let Some(g) = grads.get(value) else { continue };
            let mut data = value.data().to_vec();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..data.len() {
                m[j] = b1 * m[j] + one_m_b1 * g[j];
                v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = value.shape().to_vec();
            store.values[i] = Tensor::from_vec(&shape, data)?.with_grad();
        }
        Ok(())
    }
}
