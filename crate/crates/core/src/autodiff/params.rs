use std::ops::Range;

use rand::Rng;

use super::{AutodiffError, Tape, Value};

/// Named slot inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable tensors of one network stored in a single flat vector, so
/// that the optimizer and checkpoints see one contiguous array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor initialized uniformly in `±bound`; returns its index.
    pub fn push_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> usize {
        let len: usize = shape.iter().product();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.push_values(name, shape, values)
    }

    pub fn push_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> usize {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset: self.values.len(),
            shape: shape.to_vec(),
        });
        self.values.extend(values);
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces all values; the length must match the layout.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), AutodiffError> {
        if values.len() != self.values.len() {
            return Err(AutodiffError::GradientLength {
                params: self.values.len(),
                grads: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.values[self.entries[index].range()]
    }

    /// Registers every tensor as a trainable leaf that borrows from `self`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Value> {
        self.entries
            .iter()
            .map(|e| {
                tape.param(&self.values[e.range()], &e.shape)
                    .expect("entry shape matches its range")
            })
            .collect()
    }

    /// Registers every tensor as a constant (inference only).
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Value> {
        self.entries
            .iter()
            .map(|e| {
                tape.constant_ref(&self.values[e.range()], &e.shape)
                    .expect("entry shape matches its range")
            })
            .collect()
    }

    /// Adds the gradients of bound leaves into a flat buffer laid out like `self`.
    pub fn accumulate_grads(&self, tape: &Tape<'_>, bound: &[Value], out: &mut [f64]) {
        assert_eq!(out.len(), self.values.len());
        for (e, v) in self.entries.iter().zip(bound) {
            if let Some(g) = tape.grad(*v) {
                for (o, gv) in out[e.range()].iter_mut().zip(g) {
                    *o += gv;
                }
            }
        }
    }
}
