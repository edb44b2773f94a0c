use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Identifies one parameter tensor: the owning store's group and its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamKey {
    pub group: u16,
    pub index: u32,
}

/// A named collection of parameter matrices. Vectors are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    group: u16,
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(group: u16) -> Self {
        ParamStore {
            group,
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamKey {
        let key = ParamKey {
            group: self.group,
            index: self.values.len() as u32,
        };
        self.names.push(name.into());
        self.values.push(value);
        key
    }

    /// Glorot-uniform `rows × cols` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamKey {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.add_uniform(name, rows, cols, bound, rng)
    }

    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamKey {
        let value = Array2::from_shape_simple_fn((rows, cols), || T::of(rng.gen_range(-bound..=bound)));
        self.add(name, value)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, fill: f64) -> ParamKey {
        self.add(name, Array2::from_elem((rows, cols), T::of(fill)))
    }

    pub fn get(&self, key: ParamKey) -> &Array2<T> {
        debug_assert_eq!(key.group, self.group);
        &self.values[key.index as usize]
    }

    pub fn get_mut(&mut self, key: ParamKey) -> &mut Array2<T> {
        debug_assert_eq!(key.group, self.group);
        &mut self.values[key.index as usize]
    }

    pub fn name(&self, key: ParamKey) -> &str {
        &self.names[key.index as usize]
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        let group = self.group;
        (0..self.values.len() as u32).map(move |index| ParamKey { group, index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Writes the blob: magic, tensor count, then per tensor its name,
    /// shape and little-endian f64 values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(b"RXZP").map_err(io)?;
        w.write_all(&(self.values.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, value) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(value.nrows() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(value.ncols() as u64).to_le_bytes()).map_err(io)?;
            for x in value.iter() {
                w.write_all(&x.as_f64().to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path, group: u16) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != b"RXZP" {
            return Err(bad("not a parameter blob"));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        let count = u32::from_le_bytes(u32buf);
        let mut store = ParamStore::new(group);
        for _ in 0..count {
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated name"))?;
            let mut name = vec![0u8; u32::from_le_bytes(u32buf) as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("non-utf8 name"))?;
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated shape"))?;
            let rows = u64::from_le_bytes(u64buf) as usize;
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated shape"))?;
            let cols = u64::from_le_bytes(u64buf) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut u64buf).map_err(|_| bad("truncated values"))?;
                data.push(T::of(f64::from_le_bytes(u64buf)));
            }
            let value = Array2::from_shape_vec((rows, cols), data).map_err(|_| bad("shape mismatch"))?;
            store.add(name, value);
        }
        Ok(store)
    }

    /// Checks that `other` has the same tensor names and shapes.
    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::Checkpoint("parameter layout does not match the configuration".into()));
        }
        Ok(())
    }
}

/// Parameter gradients accumulated across graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    map: BTreeMap<ParamKey, Array2<T>>,
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Gradients { map: BTreeMap::new() }
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn accumulate(&mut self, key: ParamKey, grad: &Array2<T>) {
        match self.map.get_mut(&key) {
            Some(g) => *g += grad,
            None => {
                self.map.insert(key, grad.clone());
            }
        }
    }

    pub fn merge(&mut self, other: Gradients<T>) {
        for (key, grad) in other.map {
            match self.map.get_mut(&key) {
                Some(g) => *g += &grad,
                None => {
                    self.map.insert(key, grad);
                }
            }
        }
    }

    pub fn get(&self, key: ParamKey) -> Option<&Array2<T>> {
        self.map.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Array2<T>)> {
        self.map.iter()
    }

    pub fn global_norm(&self) -> T {
        self.map
            .values()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
}
