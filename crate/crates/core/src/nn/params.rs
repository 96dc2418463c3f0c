//! Flat parameter storage with named segments, plus chunk-local gradient
//! buffers used for ordered reductions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Parameters, gradients and Adam moments, all of equal length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    segments: Vec<Segment>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push_segment(&mut self, name: &str, init: Vec<f64>, trainable: bool) -> usize {
        let offset = self.values.len();
        let len = init.len();
        self.values.extend(init);
        self.grad.resize(self.values.len(), 0.0);
        self.m.resize(self.values.len(), 0.0);
        self.v.resize(self.values.len(), 0.0);
        self.segments.push(Segment {
            name: name.to_string(),
            offset,
            len,
            trainable,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let seg = self
            .segments
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::config(format!("no parameter segment `{name}`")))?;
        seg.trainable = trainable;
        Ok(())
    }

    /// Overwrites a segment's values (e.g. from a pretrained grid).
    pub fn load_segment(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let seg = self
            .segment(name)
            .ok_or_else(|| Error::config(format!("no parameter segment `{name}`")))?
            .clone();
        if seg.len != data.len() {
            return Err(Error::Shape(format!(
                "segment `{name}` holds {} values, got {}",
                seg.len,
                data.len()
            )));
        }
        self.values[seg.range()].copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Segment owning a flat index.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&index))
    }

    /// Reassembles a store from serialized parts.
    pub(crate) fn from_parts(
        segments: Vec<Segment>,
        values: Vec<f64>,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    ) -> Result<Self> {
        let n = values.len();
        let covered: usize = segments.iter().map(|s| s.len).sum();
        if covered != n || m.len() != n || v.len() != n {
            return Err(Error::Shape(
                "parameter segments do not cover the store".into(),
            ));
        }
        Ok(Self {
            values,
            grad: vec![0.0; n],
            m,
            v,
            step,
            segments,
        })
    }
}

const PAGE_SHIFT: usize = 10;

/// Dense gradient accumulator that remembers which pages it touched, so
/// flushing and clearing cost is proportional to the touched region.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    data: Vec<f64>,
    dirty: Vec<bool>,
}

impl GradBuffer {
    pub fn new(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
            dirty: vec![false; (len >> PAGE_SHIFT) + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn add(&mut self, index: usize, value: f64) {
        self.data[index] += value;
        self.dirty[index >> PAGE_SHIFT] = true;
    }

    pub fn slice_mut(&mut self, offset: usize, len: usize) -> &mut [f64] {
        if len > 0 {
            for p in offset >> PAGE_SHIFT..=(offset + len - 1) >> PAGE_SHIFT {
                self.dirty[p] = true;
            }
        }
        &mut self.data[offset..offset + len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Adds the buffer into `target` page by page and clears it.
    pub fn flush_into(&mut self, target: &mut [f64]) {
        let n = self.data.len();
        for (p, dirty) in self.dirty.iter_mut().enumerate() {
            if !*dirty {
                continue;
            }
            let lo = p << PAGE_SHIFT;
            let hi = ((p + 1) << PAGE_SHIFT).min(n);
            for i in lo..hi {
                target[i] += self.data[i];
                self.data[i] = 0.0;
            }
            *dirty = false;
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.dirty.iter_mut().for_each(|d| *d = false);
    }
}
