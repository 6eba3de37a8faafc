//! Serialization of nalgebra containers as plain JSON arrays.

use nalgebra::DVector;
use serde::ser::{SerializeSeq, Serializer};

pub fn dvector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v.iter() {
        seq.serialize_element(x)?;
    }
    seq.end()
}

pub fn dvector_list<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(vs.len()))?;
    for v in vs {
        let row: Vec<f64> = v.iter().cloned().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}
