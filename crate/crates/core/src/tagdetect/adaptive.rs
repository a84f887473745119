//! Threshold sweep with a memory queue of decoded markers.

use rayon::prelude::*;

use super::detector::{binarize, detect_tags_with, Detection2D, DetectorConfig};
use super::dictionary::TagDictionary;
use crate::projection::IntensityImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppendMode {
    /// Append only when a step decodes at least as many markers as the
    /// queue already holds.
    #[default]
    Verbatim,
    /// Append unseen markers from every step.
    AlwaysUnion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    /// Number of thresholds tried, `S`.
    pub scope: usize,
    /// Threshold increment, `delta`.
    pub step: f64,
    pub append_mode: AppendMode,
    pub detector: DetectorConfig,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            scope: 256,
            step: 1.0,
            append_mode: AppendMode::Verbatim,
            detector: DetectorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryQueue {
    /// At most one entry per marker id, in order of first acceptance.
    pub entries: Vec<Detection2D>,
    pub optimal_threshold: f64,
}

impl MemoryQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|d| d.id).collect()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.iter().any(|d| d.id == id)
    }
}

/// Per-threshold detections of a sweep, in threshold order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTrace {
    pub steps: Vec<(f64, Vec<Detection2D>)>,
    /// Queue length after each step.
    pub queue_lengths: Vec<usize>,
}

/// Detections for every threshold `lambda = step * i`, `i = 0..scope`,
/// each binarizing the unmodified input image.
pub fn sweep(img: &IntensityImage, dict: &TagDictionary, params: &SearchParams) -> Vec<(f64, Vec<Detection2D>)> {
    (0..params.scope)
        .into_par_iter()
        .map(|i| {
            let lambda = params.step * i as f64;
            let dets = detect_tags_with(&binarize(img, lambda), dict, &params.detector);
            (lambda, dets)
        })
        .collect()
}

/// Folds per-threshold detections into the memory queue.
///
/// `lambda*` stays at its initial 0 until some step decodes a marker.
pub fn accumulate(
    steps: &[(f64, Vec<Detection2D>)],
    mode: AppendMode,
) -> (MemoryQueue, Vec<usize>) {
    let mut queue = MemoryQueue::default();
    let mut lengths = Vec::with_capacity(steps.len());
    for (lambda, dets) in steps {
        let qualifies = !dets.is_empty() && dets.len() >= queue.len();
        if qualifies || mode == AppendMode::AlwaysUnion {
            for det in dets {
                if !queue.contains(det.id) {
                    queue.entries.push(det.clone());
                }
            }
        }
        if qualifies {
            queue.optimal_threshold = *lambda;
        }
        lengths.push(queue.len());
    }
    (queue, lengths)
}

pub fn adaptive_threshold_search(
    img: &IntensityImage,
    dict: &TagDictionary,
    params: &SearchParams,
) -> MemoryQueue {
    adaptive_threshold_search_traced(img, dict, params).0
}

pub fn adaptive_threshold_search_traced(
    img: &IntensityImage,
    dict: &TagDictionary,
    params: &SearchParams,
) -> (MemoryQueue, SweepTrace) {
    assert!(params.scope >= 1 && params.step > 0.0, "scope >= 1 and step > 0 required");
    let steps = sweep(img, dict, params);
    let (queue, queue_lengths) = accumulate(&steps, params.append_mode);
    (
        queue,
        SweepTrace {
            steps,
            queue_lengths,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagdetect::render::{render_tags, TagPlacement, TagStyle};

    fn det(id: u32, lambda: f64) -> Detection2D {
        Detection2D {
            id,
            corners: [(0.0, 0.0); 4],
            decision_threshold: lambda,
        }
    }

    fn steps(spec: &[&[u32]]) -> Vec<(f64, Vec<Detection2D>)> {
        spec.iter()
            .enumerate()
            .map(|(i, ids)| (i as f64, ids.iter().map(|&id| det(id, i as f64)).collect()))
            .collect()
    }

    #[test]
    fn verbatim_rule_step_through() {
        // A and B early, C late with a gap between.
        let s = steps(&[&[1, 2], &[1, 2], &[], &[3], &[3, 1]]);
        let (q, lens) = accumulate(&s, AppendMode::Verbatim);
        assert_eq!(q.ids(), vec![1, 2, 3]);
        assert_eq!(lens, vec![2, 2, 2, 2, 3]);
        assert_eq!(q.optimal_threshold, 4.0);
        // The first entry for an id records where it was first accepted.
        assert_eq!(q.entries[2].decision_threshold, 4.0);
    }

    #[test]
    fn verbatim_suppresses_late_minority() {
        let s = steps(&[&[1, 2], &[3]]);
        let (q, _) = accumulate(&s, AppendMode::Verbatim);
        assert_eq!(q.ids(), vec![1, 2]);
        assert_eq!(q.optimal_threshold, 0.0);
        let (q, _) = accumulate(&s, AppendMode::AlwaysUnion);
        assert_eq!(q.ids(), vec![1, 2, 3]);
    }

    #[test]
    fn empty_sweep_keeps_initial_threshold() {
        let s = steps(&[&[], &[], &[]]);
        let (q, lens) = accumulate(&s, AppendMode::Verbatim);
        assert!(q.is_empty());
        assert_eq!(q.optimal_threshold, 0.0);
        assert_eq!(lens, vec![0, 0, 0]);
    }

    #[test]
    fn always_visible_tag_takes_last_threshold() {
        let dict = TagDictionary::default16();
        let p = TagPlacement {
            id: 4,
            tag_corners: [(20.5, 20.5), (80.5, 20.5), (80.5, 80.5), (20.5, 80.5)],
            style: TagStyle {
                dark: 0.0,
                bright: 255.0,
                background: 255.0,
                margin_cells: 1.0,
            },
        };
        let img = render_tags(&dict, &[p], 100, 100, 1);
        let params = SearchParams {
            scope: 16,
            step: 10.0,
            ..Default::default()
        };
        let (q, trace) = adaptive_threshold_search_traced(&img, &dict, &params);
        assert!(trace.steps.iter().all(|(_, d)| d.len() == 1));
        assert_eq!(q.ids(), vec![4]);
        assert_eq!(q.optimal_threshold, 150.0);
        assert!(trace.queue_lengths.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn blank_image_sweep() {
        let dict = TagDictionary::default16();
        let img = render_tags(&dict, &[], 40, 40, 1);
        let q = adaptive_threshold_search(&img, &dict, &SearchParams::default());
        assert!(q.is_empty());
        assert_eq!(q.optimal_threshold, 0.0);
    }

    #[test]
    fn disjoint_threshold_windows_are_both_collected() {
        let dict = TagDictionary::default16();
        let dim = TagStyle {
            dark: 5.0,
            bright: 40.0,
            background: 40.0,
            margin_cells: 1.0,
        };
        let lit = TagStyle {
            dark: 90.0,
            bright: 220.0,
            background: 40.0,
            margin_cells: 1.0,
        };
        let a = TagPlacement {
            id: 1,
            tag_corners: [(10.5, 10.5), (70.5, 10.5), (70.5, 70.5), (10.5, 70.5)],
            style: dim,
        };
        let b = TagPlacement {
            id: 9,
            tag_corners: [(100.5, 10.5), (160.5, 10.5), (160.5, 70.5), (100.5, 70.5)],
            style: lit,
        };
        let img = render_tags(&dict, &[a, b], 180, 90, 1);
        let (q, trace) = adaptive_threshold_search_traced(&img, &dict, &SearchParams::default());
        assert_eq!(q.ids(), vec![1, 9]);
        assert!(trace.steps.iter().all(|(_, d)| d.len() <= 1));
        for (lambda, dets) in &trace.steps {
            for d in dets {
                let window = if d.id == 1 { 5.0..40.0 } else { 90.0..220.0 };
                assert!(window.contains(lambda), "id {} at {lambda}", d.id);
            }
        }
    }
}
