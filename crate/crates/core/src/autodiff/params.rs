use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::Real;
use crate::error::{config_err, Result};

/// Location of one named tensor inside the flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Name -> slice map over a flat parameter array. Slices are allocated
/// back to back in registration order, so they always partition `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: Vec<(String, ParamSlot)>,
    index: HashMap<String, usize>,
    len: usize,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize]) -> Result<ParamSlot> {
        if self.index.contains_key(name) {
            return config_err(format!("parameter `{name}` registered twice"));
        }
        if shape.is_empty() || shape.contains(&0) {
            return config_err(format!("parameter `{name}` has degenerate shape {shape:?}"));
        }
        let slot = ParamSlot { offset: self.len, shape: shape.to_vec() };
        self.len += slot.len();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), slot.clone()));
        Ok(slot)
    }

    pub fn get(&self, name: &str) -> Result<&ParamSlot> {
        match self.index.get(name) {
            Some(&i) => Ok(&self.entries[i].1),
            None => config_err(format!("unknown parameter `{name}`")),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamSlot)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_tensors(&self) -> usize {
        self.entries.len()
    }
}

/// A registry plus the flat values it describes. Single owner.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub registry: Arc<Registry>,
    pub flat: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn zeros(registry: Arc<Registry>) -> Self {
        let flat = vec![T::zero(); registry.len()];
        Self { registry, flat }
    }

    pub fn slice(&self, name: &str) -> Result<&[T]> {
        let slot = self.registry.get(name)?;
        Ok(&self.flat[slot.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [T]> {
        let range = self.registry.get(name)?.range();
        Ok(&mut self.flat[range])
    }

    pub fn cast<U: Real>(&self) -> ParamVector<U> {
        ParamVector {
            registry: self.registry.clone(),
            flat: self.flat.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// `f32` stored in an `AtomicU32`. Loads and stores are individually atomic
/// (relaxed); nothing orders them across elements.
#[derive(Debug, Default)]
pub struct AtomicF32(AtomicU32);

impl AtomicF32 {
    pub fn new(v: f32) -> Self {
        Self(AtomicU32::new(v.to_bits()))
    }

    #[inline]
    pub fn load(&self) -> f32 {
        f32::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn store(&self, v: f32) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }
}

/// Parameter vector shared by all training workers without a lock.
///
/// Readers and writers race per element. Workers take a snapshot at the start
/// of every chunk and write updates back element by element.
#[derive(Debug)]
pub struct SharedParams {
    registry: Arc<Registry>,
    flat: Box<[AtomicF32]>,
}

impl SharedParams {
    pub fn new(params: &ParamVector<f32>) -> Self {
        Self {
            registry: params.registry.clone(),
            flat: params.flat.iter().map(|&v| AtomicF32::new(v)).collect(),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn elements(&self) -> &[AtomicF32] {
        &self.flat
    }

    pub fn load_into(&self, out: &mut [f32]) {
        for (o, a) in out.iter_mut().zip(self.flat.iter()) {
            *o = a.load();
        }
    }

    pub fn snapshot(&self) -> ParamVector<f32> {
        let mut flat = vec![0.0; self.flat.len()];
        self.load_into(&mut flat);
        ParamVector { registry: self.registry.clone(), flat }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_slices_partition_the_flat_array() {
        let mut r = Registry::new();
        r.register("a", &[3, 4]).unwrap();
        r.register("b", &[5]).unwrap();
        r.register("c", &[2, 2, 2]).unwrap();
        let mut covered = vec![0u8; r.len()];
        for (_, slot) in r.iter() {
            for i in slot.range() {
                covered[i] += 1;
            }
        }
        assert_eq!(r.len(), 25);
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn duplicate_and_empty_registrations_are_rejected() {
        let mut r = Registry::new();
        r.register("w", &[2]).unwrap();
        assert!(r.register("w", &[2]).is_err());
        assert!(r.register("z", &[0, 3]).is_err());
        assert!(r.get("missing").is_err());
    }

    #[test]
    fn shared_snapshot_round_trips() {
        let mut r = Registry::new();
        r.register("w", &[4]).unwrap();
        let mut p = ParamVector::<f32>::zeros(Arc::new(r));
        p.flat.copy_from_slice(&[1.0, -2.5, 3.25, f32::MIN_POSITIVE]);
        let shared = SharedParams::new(&p);
        assert_eq!(shared.snapshot(), p);
        shared.elements()[1].store(7.0);
        assert_eq!(shared.snapshot().flat[1], 7.0);
    }
}
