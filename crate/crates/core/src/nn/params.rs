use indexmap::IndexMap;
use rand::Rng;

use super::NnError;

/// Index of a parameter inside a [`ParamStore`]; stable for the store's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable array with its gradient and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named, ordered collection of parameters. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names or on a value whose
    /// length does not match the shape.
    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "shape/value mismatch for {name}"
        );
        assert!(!self.params.contains_key(name), "duplicate parameter {name}");
        let (idx, _) = self
            .params
            .insert_full(name.to_string(), Param::new(shape.to_vec(), value));
        ParamId(idx)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.insert(name, shape, vec![0.0; n])
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        let n = shape.iter().product();
        self.insert(name, shape, vec![v; n])
    }

    pub fn uniform<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, shape, value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn total_param_count(&self) -> usize {
        self.params.values().map(Param::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// Copies values (not moments) for every parameter whose name and shape
    /// match an entry in `other`. Returns the number of parameters copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<usize, NnError> {
        let mut copied = 0;
        for (name, src) in other.iter() {
            if let Some(dst) = self.params.get_mut(name) {
                if dst.shape != src.shape {
                    return Err(NnError::ShapeMismatch(format!(
                        "{name}: {:?} vs {:?}",
                        dst.shape, src.shape
                    )));
                }
                dst.value.copy_from_slice(&src.value);
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Snapshot of all values, in store order.
    pub fn values_snapshot(&self) -> Vec<Vec<f64>> {
        self.params.values().map(|p| p.value.clone()).collect()
    }

    pub fn restore_values(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.values_mut().zip(snapshot) {
            p.value.copy_from_slice(v);
        }
    }
}
