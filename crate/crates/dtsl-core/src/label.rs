//! Hard per-pixel class assignments.

use crate::{Error, Result};

/// Per-pixel class indices in `{0..classes-1}` for a batch of maps.
/// Ground-truth labels and consensus pseudo-labels are both LabelMaps;
/// they carry no gradient by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        classes: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if classes < 2 || classes > u8::MAX as usize {
            return Err(Error::Domain(format!(
                "class count {classes} outside supported range"
            )));
        }
        if data.len() != batch * height * width {
            return Err(Error::Shape(format!(
                "label data length {} does not match {batch}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::Domain(format!(
                "label value {bad} out of range for {classes} classes"
            )));
        }
        Ok(LabelMap {
            batch,
            height,
            width,
            classes,
            data,
        })
    }

    /// All-background map.
    pub fn zeros(batch: usize, height: usize, width: usize, classes: usize) -> Result<Self> {
        LabelMap::new(batch, height, width, classes, vec![0; batch * height * width])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.height + y) * self.width + x]
    }

    /// Labels as usize indices, for tensor gathers.
    pub fn as_indices(&self) -> Vec<usize> {
        self.data.iter().map(|&v| v as usize).collect()
    }

    /// Stack single-sample maps (batch 1 each) into one batched map.
    pub fn stack(maps: &[&LabelMap]) -> Result<LabelMap> {
        let first = maps.first().ok_or_else(|| {
            Error::Shape("cannot stack an empty list of label maps".to_string())
        })?;
        let mut data = Vec::with_capacity(maps.len() * first.height * first.width);
        let mut batch = 0;
        for m in maps {
            if m.height != first.height || m.width != first.width || m.classes != first.classes
            {
                return Err(Error::Shape(
                    "label maps in a stack must share dimensions and class count".to_string(),
                ));
            }
            data.extend_from_slice(&m.data);
            batch += m.batch;
        }
        LabelMap::new(batch, first.height, first.width, first.classes, data)
    }

    /// One-hot encoding as row-major [B,K,H,W] floats.
    pub fn one_hot(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let k = self.classes;
        let mut out = vec![0.0; self.batch * k * hw];
        for b in 0..self.batch {
            for px in 0..hw {
                let cls = self.data[b * hw + px] as usize;
                out[(b * k + cls) * hw + px] = 1.0;
            }
        }
        out
    }

    /// Binary mask of one class for a single batch element.
    pub fn class_mask(&self, b: usize, class: u8) -> Vec<bool> {
        let hw = self.height * self.width;
        self.data[b * hw..][..hw].iter().map(|&v| v == class).collect()
    }

    /// Per-class pixel counts over the whole map.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.classes];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }
}
