use std::collections::BTreeMap;

use crate::error::{Result, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Ints(Vec<usize>),
    Float(f64),
    Bool(bool),
}

/// Operator attributes keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attrs(BTreeMap<&'static str, AttrValue>);

impl Attrs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &'static str, value: AttrValue) -> Self {
        self.0.insert(key, value);
        self
    }

    pub fn int(self, key: &'static str, v: i64) -> Self {
        self.with(key, AttrValue::Int(v))
    }

    pub fn ints(self, key: &'static str, v: &[usize]) -> Self {
        self.with(key, AttrValue::Ints(v.to_vec()))
    }

    pub fn float(self, key: &'static str, v: f64) -> Self {
        self.with(key, AttrValue::Float(v))
    }

    pub fn flag(self, key: &'static str, v: bool) -> Self {
        self.with(key, AttrValue::Bool(v))
    }

    pub fn get(&self, key: &str) -> Option<&AttrValue> {
        self.0.get(key)
    }

    pub fn get_int(&self, op: &str, key: &str) -> Result<i64> {
        match self.0.get(key) {
            Some(AttrValue::Int(v)) => Ok(*v),
            _ => Err(bad(op, key)),
        }
    }

    pub fn get_ints(&self, op: &str, key: &str) -> Result<&[usize]> {
        match self.0.get(key) {
            Some(AttrValue::Ints(v)) => Ok(v),
            _ => Err(bad(op, key)),
        }
    }

    pub fn ints_or<'a>(&'a self, key: &str, default: &'a [usize]) -> &'a [usize] {
        match self.0.get(key) {
            Some(AttrValue::Ints(v)) => v,
            _ => default,
        }
    }

    pub fn float_or(&self, key: &str, default: f64) -> f64 {
        match self.0.get(key) {
            Some(AttrValue::Float(v)) => *v,
            _ => default,
        }
    }

    pub fn get_float(&self, op: &str, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(AttrValue::Float(v)) => Ok(*v),
            _ => Err(bad(op, key)),
        }
    }

    pub fn flag_or(&self, key: &str, default: bool) -> bool {
        match self.0.get(key) {
            Some(AttrValue::Bool(v)) => *v,
            _ => default,
        }
    }
}

fn bad(op: &str, key: &str) -> TensorError {
    TensorError::BadAttribute {
        op: op.to_string(),
        key: key.to_string(),
    }
}
