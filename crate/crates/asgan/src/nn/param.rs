use super::Scalar;
use ndarray::ArrayD;
use parking_lot::{MappedRwLockReadGuard, MappedRwLockWriteGuard, RwLock, RwLockReadGuard,
    RwLockWriteGuard};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

struct ParamData<S> {
    value: ArrayD<S>,
    grad: Option<ArrayD<S>>,
}

/// A trainable tensor. Cloning a `Param` clones the handle, not the storage:
/// two networks holding clones of the same `Param` see each other's updates,
/// which is exactly how the W-net weight sharing is realised. The `id` is
/// unique per storage, so de-duplicating by id counts shared tensors once.
pub struct Param<S> {
    id: u64,
    inner: Arc<RwLock<ParamData<S>>>,
}

impl<S> Clone for Param<S> {
    fn clone(&self) -> Self {
        Param {
            id: self.id,
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Param<S> {
    pub fn new(value: ArrayD<S>) -> Self {
        Param {
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            inner: Arc::new(RwLock::new(ParamData { value, grad: None })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(shape.to_vec()))
    }

    /// Storage identity; equal ids mean the same underlying tensor.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.read().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.read().value.len()
    }

    pub fn value(&self) -> MappedRwLockReadGuard<'_, ArrayD<S>> {
        RwLockReadGuard::map(self.inner.read(), |d| &d.value)
    }

    pub fn value_mut(&self) -> MappedRwLockWriteGuard<'_, ArrayD<S>> {
        RwLockWriteGuard::map(self.inner.write(), |d| &mut d.value)
    }

    pub fn set_value(&self, value: ArrayD<S>) {
        let mut d = self.inner.write();
        assert_eq!(d.value.shape(), value.shape(), "param shape is fixed");
        d.value = value;
    }

    /// Adds `g` into the gradient accumulator, allocating it on first use.
    /// Tied parameters accumulate contributions from every network that
    /// holds them.
    pub fn accumulate_grad(&self, g: &ArrayD<S>) {
        let mut d = self.inner.write();
        assert_eq!(d.value.shape(), g.shape(), "grad shape mismatch");
        match &mut d.grad {
            Some(acc) => *acc += g,
            // BLAS-backed products can be column-major; store canonically.
            None => d.grad = Some(g.as_standard_layout().into_owned()),
        }
    }

    pub fn grad(&self) -> Option<ArrayD<S>> {
        self.inner.read().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.write().grad = None;
    }
}

impl<S: Scalar> std::fmt::Debug for Param<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Total number of scalar parameters, counting each storage once even when
/// it is referenced from several networks.
pub fn count_unique_params<S: Scalar>(params: &[(String, Param<S>)]) -> usize {
    let mut seen = std::collections::HashSet::new();
    params
        .iter()
        .filter(|(_, p)| seen.insert(p.id()))
        .map(|(_, p)| p.numel())
        .sum()
}
