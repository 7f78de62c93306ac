use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEval {
    pub name: String,
    pub class: String,
    pub iou: Option<f64>,
    pub surface_distance: Option<f64>,
    pub segmentation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    pub iou: Option<f64>,
    pub surface_distance: Option<f64>,
    pub segmentation: Option<f64>,
}

/// Per-shape scores with per-class means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shapes: Vec<ShapeEval>,
    pub classes: BTreeMap<String, ClassSummary>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    pub fn new(shapes: Vec<ShapeEval>) -> Self {
        let mut groups: BTreeMap<String, Vec<&ShapeEval>> = BTreeMap::new();
        for s in &shapes {
            groups.entry(s.class.clone()).or_default().push(s);
        }
        let classes = groups
            .into_iter()
            .map(|(k, v)| {
                let summary = ClassSummary {
                    count: v.len(),
                    iou: mean(v.iter().map(|s| s.iou)),
                    surface_distance: mean(v.iter().map(|s| s.surface_distance)),
                    segmentation: mean(v.iter().map(|s| s.segmentation)),
                };
                (k, summary)
            })
            .collect();
        EvalReport { shapes, classes }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table: one row per class, metrics as columns, then the mean.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let width = self.classes.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>5}  {:>8}  {:>8}  {:>8}", "class", "n", "IoU", "surface", "seg");
        for (k, c) in &self.classes {
            let _ = writeln!(
                s,
                "{k:<width$}  {:>5}  {:>8}  {:>8}  {:>8}",
                c.count,
                cell(c.iou),
                cell(c.surface_distance),
                cell(c.segmentation)
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>8}  {:>8}  {:>8}",
            "mean",
            self.shapes.len(),
            cell(mean(self.shapes.iter().map(|x| x.iou))),
            cell(mean(self.shapes.iter().map(|x| x.surface_distance))),
            cell(mean(self.shapes.iter().map(|x| x.segmentation)))
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(class: &str, iou: f64) -> ShapeEval {
        ShapeEval {
            name: format!("{class}-{iou}"),
            class: class.into(),
            iou: Some(iou),
            surface_distance: None,
            segmentation: None,
        }
    }

    #[test]
    fn class_means_and_table() {
        let r = EvalReport::new(vec![shape("chair", 0.5), shape("chair", 0.7), shape("table", 0.2)]);
        assert_eq!(r.classes["chair"].count, 2);
        assert!((r.classes["chair"].iou.unwrap() - 0.6).abs() < 1e-12);
        let t = r.to_table();
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("0.600"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
