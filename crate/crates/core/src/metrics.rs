//! Region similarity (mIoU) and F-measure over integer masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::types::MaskVolume;

pub const DEFAULT_BETA2: f64 = 0.3;

/// Pixel counts for one class over some set of pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub pred: u64,
    pub gt: u64,
}

impl Counts {
    pub fn of(pred: &[u8], gt: &[u8], class: u8) -> Self {
        let mut c = Counts::default();
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p == class, g == class);
            c.tp += u64::from(p && g);
            c.pred += u64::from(p);
            c.gt += u64::from(g);
        }
        c
    }

    pub fn merge(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, pred: self.pred + o.pred, gt: self.gt + o.gt }
    }

    pub fn is_empty(&self) -> bool {
        self.pred == 0 && self.gt == 0
    }

    /// Both masks empty counts as a perfect match.
    pub fn iou(&self) -> f64 {
        let union = self.pred + self.gt - self.tp;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn f_score(&self, beta2: f64) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        let precision = if self.pred == 0 { 0.0 } else { self.tp as f64 / self.pred as f64 };
        let recall = if self.gt == 0 { 0.0 } else { self.tp as f64 / self.gt as f64 };
        let den = beta2 * precision + recall;
        if den == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * precision * recall / den
        }
    }
}

fn check_pair(pred: &MaskVolume, gt: &MaskVolume) -> Result<()> {
    if (pred.clips, pred.height, pred.width) != (gt.clips, gt.height, gt.width) {
        return Err(AvsError::ShapeMismatch(format!(
            "prediction [{}, {}, {}] vs ground truth [{}, {}, {}]",
            pred.clips, pred.height, pred.width, gt.clips, gt.height, gt.width
        )));
    }
    Ok(())
}

/// Scores of a single video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub miou: f64,
    pub f_score: f64,
    /// Pooled counts per foreground class, index `c - 1`.
    pub class_counts: Vec<Counts>,
}

/// Binary masks: IoU and F per frame, averaged over frames. Multi-class:
/// per-class counts pooled over the video's frames, scores averaged over
/// foreground classes present in prediction or ground truth.
pub fn score_video(pred: &MaskVolume, gt: &MaskVolume, num_classes: usize, beta2: f64) -> Result<VideoScore> {
    check_pair(pred, gt)?;
    let labels = num_classes.max(2);
    if let Some(&bad) = pred.data().iter().chain(gt.data()).find(|&&id| usize::from(id) >= labels) {
        return Err(AvsError::ClassIdOutOfRange { id: u32::from(bad), num_classes });
    }
    if pred.clips == 0 {
        return Err(AvsError::ShapeMismatch("video without frames".into()));
    }
    let class_counts: Vec<Counts> = (1..labels as u8)
        .map(|c| (0..pred.clips).fold(Counts::default(), |acc, t| acc.merge(Counts::of(pred.frame(t), gt.frame(t), c))))
        .collect();
    if num_classes == 1 {
        let per: Vec<Counts> = (0..pred.clips).map(|t| Counts::of(pred.frame(t), gt.frame(t), 1)).collect();
        let n = per.len() as f64;
        return Ok(VideoScore {
            miou: per.iter().map(Counts::iou).sum::<f64>() / n,
            f_score: per.iter().map(|c| c.f_score(beta2)).sum::<f64>() / n,
            class_counts,
        });
    }
    let present: Vec<&Counts> = class_counts.iter().filter(|c| !c.is_empty()).collect();
    let (miou, f_score) = if present.is_empty() {
        (1.0, 1.0)
    } else {
        let n = present.len() as f64;
        (
            present.iter().map(|c| c.iou()).sum::<f64>() / n,
            present.iter().map(|c| c.f_score(beta2)).sum::<f64>() / n,
        )
    };
    Ok(VideoScore { miou, f_score, class_counts })
}

pub fn miou(pred: &MaskVolume, gt: &MaskVolume, num_classes: usize) -> Result<f64> {
    Ok(score_video(pred, gt, num_classes, DEFAULT_BETA2)?.miou)
}

pub fn f_score(pred: &MaskVolume, gt: &MaskVolume, num_classes: usize, beta2: f64) -> Result<f64> {
    Ok(score_video(pred, gt, num_classes, beta2)?.f_score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    pub f_score: f64,
    pub videos: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_class_iou: Option<Vec<f64>>,
}

impl MetricReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = format!("miou={:.6}\nf_score={:.6}\nvideos={}\n", self.miou, self.f_score, self.videos);
        if let Some(per) = &self.per_class_iou {
            for (i, v) in per.iter().enumerate() {
                out.push_str(&format!("iou_class_{}={:.6}\n", i + 1, v));
            }
        }
        out
    }
}

/// Per-video scores keyed by video id. Finalizing iterates in key order, so
/// the result does not depend on insertion order and merges are associative.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    videos: BTreeMap<String, VideoScore>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, video_id: impl Into<String>, score: VideoScore) {
        self.videos.insert(video_id.into(), score);
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.videos.extend(other.videos);
        self
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = (&str, &VideoScore)> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn report(&self, num_classes: usize) -> MetricReport {
        let n = self.videos.len().max(1) as f64;
        let miou = self.videos.values().map(|v| v.miou).sum::<f64>() / n;
        let f_score = self.videos.values().map(|v| v.f_score).sum::<f64>() / n;
        let per_class_iou = (num_classes > 1).then(|| {
            (0..num_classes - 1)
                .map(|c| self.videos.values().fold(Counts::default(), |acc, v| acc.merge(v.class_counts[c])).iou())
                .collect()
        });
        MetricReport { miou, f_score, videos: self.videos.len(), per_class_iou }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(data: &[u8]) -> MaskVolume {
        MaskVolume::new(1, 2, 2, data.to_vec()).unwrap()
    }

    #[test]
    fn worked_cases() {
        let pred = vol(&[1, 1, 0, 0]);
        let gt = vol(&[1, 0, 0, 0]);
        assert_eq!(miou(&pred, &gt, 1).unwrap(), 0.5);
        let f = f_score(&pred, &gt, 1, 0.3).unwrap();
        assert!((f - 0.65 / 1.15).abs() < 1e-15);
        assert_eq!(miou(&gt, &gt, 1).unwrap(), 1.0);
        assert_eq!(f_score(&gt, &gt, 1, 0.3).unwrap(), 1.0);
        assert_eq!(miou(&vol(&[0, 0, 1, 1]), &vol(&[1, 1, 0, 0]), 1).unwrap(), 0.0);
        assert_eq!(f_score(&vol(&[0; 4]), &gt, 1, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = MaskVolume::zeros(1, 2, 2);
        let b = MaskVolume::zeros(1, 2, 3);
        assert!(matches!(miou(&a, &b, 1), Err(AvsError::ShapeMismatch(_))));
    }

    #[test]
    fn multiclass_averages_present_classes() {
        // class 1 perfect, class 2 half, class 3 absent
        let pred = vol(&[1, 2, 2, 0]);
        let gt = vol(&[1, 2, 0, 0]);
        let s = score_video(&pred, &gt, 4, 0.3).unwrap();
        assert_eq!(s.miou, 0.75);
    }

    #[test]
    fn aggregation_ignores_insertion_order() {
        let s = |m| VideoScore { miou: m, f_score: m, class_counts: vec![] };
        let vals = [0.1, 0.7, 0.3333, 0.9];
        let mut a = MetricAccumulator::new();
        let mut b = MetricAccumulator::new();
        for (i, &v) in vals.iter().enumerate() {
            a.add(format!("v{i}"), s(v));
        }
        for (i, &v) in vals.iter().enumerate().rev() {
            b.add(format!("v{i}"), s(v));
        }
        assert_eq!(a.report(1), b.report(1));
    }
}
