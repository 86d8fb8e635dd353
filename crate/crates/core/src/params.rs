use indexmap::IndexMap;

use crate::autodiff::{Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered name → tensor map. Iteration order is insertion order and is the
/// order used for serialization, optimizer state and gradient reduction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total element count across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn extend(&mut self, other: ParamSet<T>) {
        self.tensors.extend(other.tensors);
    }

    /// Entries whose names start with `prefix`, prefix kept.
    pub fn filter_prefix(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Elementwise `self += other`; names must match in order.
    pub fn add_assign(&mut self, other: &ParamSet<T>) -> crate::Result<()> {
        if self.len() != other.len() {
            return Err(crate::Error::InvalidArgument(format!(
                "cannot add parameter sets of {} and {} tensors",
                self.len(),
                other.len()
            )));
        }
        for ((na, a), (nb, b)) in self.tensors.iter_mut().zip(&other.tensors) {
            if na != nb || a.shape() != b.shape() {
                return Err(crate::Error::WeightMismatch(vec![format!("`{na}` vs `{nb}`")]));
            }
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
        Ok(())
    }

    /// Splits into (matching, rest) by name, keeping order.
    pub fn partition(self, pred: impl Fn(&str) -> bool) -> (ParamSet<T>, ParamSet<T>) {
        let (mut yes, mut no) = (ParamSet::new(), ParamSet::new());
        for (k, v) in self.tensors {
            if pred(&k) {
                yes.tensors.insert(k, v);
            } else {
                no.tensors.insert(k, v);
            }
        }
        (yes, no)
    }

    /// Global L2 norm over every element.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let f = v.to_f64_lossy();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Adds every tensor to `graph` as a leaf, trainable or constant.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> BoundParams {
        BoundParams {
            ids: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    let id = if trainable {
                        graph.param(v.clone())
                    } else {
                        graph.constant(v.clone())
                    };
                    (k.clone(), id)
                })
                .collect(),
        }
    }
}

/// Graph node handles for a bound [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    ids: IndexMap<String, NodeId>,
}

impl BoundParams {
    pub fn from_ids(ids: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        BoundParams {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn id(&self, name: &str) -> crate::Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| crate::Error::WeightMismatch(vec![format!("missing tensor `{name}`")]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: BoundParams) {
        self.ids.extend(other.ids);
    }

    /// Gradients of every bound parameter after a backward pass.
    pub fn grads<T: Scalar>(&self, graph: &Graph<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, &id) in &self.ids {
            out.insert(name.clone(), graph.grad(id));
        }
        out
    }
}
