use serde::{Deserialize, Serialize};

use super::NetError;

/// A named `rows × cols` block inside a flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSegment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<ParamSegment>,
}

impl ParamLayout {
    /// Lays segments out back to back in the given order.
    pub fn new<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut offset = 0;
        let segments = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let s = ParamSegment {
                    name: name.into(),
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                s
            })
            .collect();
        Self { segments }
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&ParamSegment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameters plus the layout that names their parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self, NetError> {
        if values.len() != layout.len() {
            return Err(NetError::DimensionMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_contiguous() {
        let layout = ParamLayout::new([("a", 2, 3), ("b", 1, 3), ("c", 4, 4)]);
        assert_eq!(layout.len(), 25);
        assert_eq!(layout.segment("b").unwrap().range(), 6..9);
        assert_eq!(layout.segment("c").unwrap().offset, 9);
        let pv = ParamVector::new((0..25).map(f64::from).collect(), layout.clone()).unwrap();
        assert_eq!(pv.get("b").unwrap(), &[6.0, 7.0, 8.0]);
        assert!(ParamVector::new(vec![0.0; 3], layout).is_err());
    }
}
