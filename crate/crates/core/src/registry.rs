//! Name-keyed registries of interchangeable strategies.
//!
//! Every family of interchangeable algorithms in the crate (radial kernel
//! profiles, Grassmann kernels, signal metrics, adjoint Jacobian products)
//! sits behind a trait object and is looked up here by the name used in
//! configuration files and on the command line.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{FshapeError, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, item: Arc<T>) -> &mut Self {
        self.entries.insert(name, item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| FshapeError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
