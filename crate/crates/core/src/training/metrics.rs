use alloc::vec;
use alloc::vec::Vec;

use super::loss::IGNORE_LABEL;
use crate::{Error, Result};

/// `counts[label * C + pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, label: usize, pred: usize) -> u64 {
        self.counts[label * self.classes + pred]
    }

    /// Ignored labels are skipped; any other out-of-range id is an error.
    pub fn add(&mut self, preds: &[u16], labels: &[u16]) -> Result<()> {
        if preds.len() != labels.len() {
            return Err(Error::Shape(alloc::format!("{} predictions for {} labels", preds.len(), labels.len())));
        }
        for (&p, &l) in preds.iter().zip(labels) {
            if l == IGNORE_LABEL {
                continue;
            }
            for v in [p, l] {
                if v as usize >= self.classes {
                    return Err(Error::Label { label: v as u32, classes: self.classes });
                }
            }
            self.counts[l as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        hits as f64 / total as f64
    }

    /// Per-class IoU; `None` for classes absent from both labels and predictions.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let label_total: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let pred_total: u64 = (0..self.classes).map(|l| self.get(l, c)).sum();
                let union = label_total + pred_total - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes that occur in labels or predictions.
    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_disjoint() {
        let mut m = ConfusionMatrix::new(4);
        m.add(&[0, 1, 2, 3, 3], &[0, 1, 2, 3, 3]).unwrap();
        assert_eq!(m.miou(), 1.0);
        assert_eq!(m.accuracy(), 1.0);
        let mut m = ConfusionMatrix::new(4);
        m.add(&[1, 0, 3, 2], &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.miou(), 0.0);
        assert_eq!(m.accuracy(), 0.0);
    }

    #[test]
    fn half_overlap() {
        let mut m = ConfusionMatrix::new(2);
        m.add(&[0, 0], &[0, 1]).unwrap();
        // class 0: tp 1, union 2; class 1: tp 0, union 1
        assert!((m.miou() - 0.25).abs() < 1e-15);
        assert_eq!(m.iou()[1], Some(0.0));
    }

    #[test]
    fn ignore_and_range() {
        let mut m = ConfusionMatrix::new(2);
        m.add(&[1], &[IGNORE_LABEL]).unwrap();
        assert_eq!(m.total(), 0);
        assert!(m.add(&[2], &[0]).is_err());
        assert!(m.add(&[0], &[]).is_err());
    }
}
