//! Pixel accuracy, per-class IoU, and the confusion matrix.

use std::io::Write;

use crate::autodiff::Scalar;

use super::IGNORE_ID;

/// K×K confusion counts, row = ground truth, column = prediction.
pub struct ConfusionAccum {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionAccum {
    pub fn new(classes: usize) -> Self {
        ConfusionAccum {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Count one batch of pixels; ignored ground-truth pixels are skipped.
    pub fn update(&mut self, gt: &[u32], pred: &[u32]) {
        debug_assert_eq!(gt.len(), pred.len());
        for (&g, &p) in gt.iter().zip(pred) {
            if g == IGNORE_ID {
                continue;
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_confusion(self.classes, self.counts.clone())
    }
}

/// Evaluation summary. `miou` averages IoU over classes present in the
/// ground truth; absent classes carry no IoU.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub classes: usize,
    pub confusion: Vec<u64>,
    pub accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

impl MetricsReport {
    pub fn from_confusion(classes: usize, confusion: Vec<u64>) -> Self {
        assert_eq!(confusion.len(), classes * classes);
        let total: u64 = confusion.iter().sum();
        let mut correct = 0u64;
        let mut per_class_iou = Vec::with_capacity(classes);
        let mut iou_sum = 0.0;
        let mut present = 0usize;
        for k in 0..classes {
            let tp = confusion[k * classes + k];
            correct += tp;
            let gt_total: u64 = (0..classes).map(|j| confusion[k * classes + j]).sum();
            let fp: u64 = (0..classes)
                .filter(|&j| j != k)
                .map(|j| confusion[j * classes + k])
                .sum();
            let fn_ = gt_total - tp;
            if gt_total == 0 {
                per_class_iou.push(None);
                continue;
            }
            let iou = tp as f64 / (tp + fp + fn_) as f64;
            per_class_iou.push(Some(iou));
            iou_sum += iou;
            present += 1;
        }
        MetricsReport {
            classes,
            confusion,
            accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            per_class_iou,
            miou: if present > 0 { iou_sum / present as f64 } else { 0.0 },
        }
    }
}

/// Argmax over the class axis of N×K×H×W logits; ties break toward the
/// lowest class id.
pub fn argmax_classes<T: Scalar>(logits: &[T], n: usize, k: usize, hw: usize) -> Vec<u32> {
    debug_assert_eq!(logits.len(), n * k * hw);
    let mut out = vec![0u32; n * hw];
    for i in 0..n {
        for p in 0..hw {
            let mut best = 0usize;
            let mut best_v = logits[i * k * hw + p];
            for c in 1..k {
                let v = logits[(i * k + c) * hw + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out[i * hw + p] = best as u32;
        }
    }
    out
}

/// Confusion matrix rows, then `accuracy`, `miou`, and per-class IoU lines
/// (`NA` where the class has no ground-truth pixels).
pub fn write_metrics_csv(report: &MetricsReport, mut out: impl Write) -> std::io::Result<()> {
    for row in report.confusion.chunks(report.classes) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    writeln!(out, "accuracy,{:.6}", report.accuracy)?;
    writeln!(out, "miou,{:.6}", report.miou)?;
    for (k, iou) in report.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => writeln!(out, "iou_{k},{v:.6}")?,
            None => writeln!(out, "iou_{k},NA")?,
        }
    }
    Ok(())
}
