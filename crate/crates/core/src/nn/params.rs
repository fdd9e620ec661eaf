use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Param {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform initialized `rows × cols` matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copies values from `other`, which must have been built by the same
    /// constructor (same names and shapes, same order).
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ from the model layout".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.dim() != src.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter shape {:?} does not match model layout {:?}",
                    src.dim(),
                    dst.dim()
                )));
            }
            dst.assign(src);
        }
        Ok(())
    }
}

impl Serialize for ParamStore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let params: Vec<Param> = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(name, v)| Param {
                name: name.clone(),
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().cloned().collect(),
            })
            .collect();
        params.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamStore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let params = Vec::<Param>::deserialize(d)?;
        let mut store = ParamStore::new();
        for p in params {
            let v = Array2::from_shape_vec((p.rows, p.cols), p.data).map_err(serde::de::Error::custom)?;
            store.add(p.name, v);
        }
        Ok(store)
    }
}

/// Sums gradient maps from several examples into `acc`.
pub fn accumulate_grads(acc: &mut HashMap<ParamId, Array2<f64>>, grads: HashMap<ParamId, Array2<f64>>) {
    for (id, g) in grads {
        match acc.get_mut(&id) {
            Some(a) => *a += &g,
            None => {
                acc.insert(id, g);
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.values.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with `grads` scaled by `1 / batch`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Array2<f64>>, batch: usize) {
        let scale = 1.0 / batch.max(1) as f64;
        // fixed summation order keeps runs bit-identical
        let mut ids: Vec<_> = grads.keys().copied().collect();
        ids.sort();
        let norm = ids
            .iter()
            .map(|id| grads[id].iter().map(|x| (x * scale).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in ids {
            let g = &grads[&id];
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = &mut store.values[id.0];
            for (((pv, gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gr = gv * scale * clip;
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gr;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gr * gr;
                *pv -= c.lr * (*mv / bc1) / ((*vv / bc2).sqrt() + c.eps);
            }
        }
    }
}
