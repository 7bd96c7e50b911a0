use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Tier, TieredMetrics};
use crate::label::VesselClass;

/// Mean and standard deviation of one score over images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Sample standard deviation (0 for a single value). Values are sorted
    /// first so the result does not depend on image order.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(f64::total_cmp);
        let std = if v.len() < 2 { 0.0 } else { (dev.iter().sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub tier: Tier,
    /// A class name or `macro`.
    pub class: String,
    pub accuracy: Summary,
    pub f1: Summary,
}

/// Per-image metrics of an evaluated set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: Vec<(String, TieredMetrics)>,
}

impl MetricsReport {
    pub fn new(images: Vec<(String, TieredMetrics)>) -> Self {
        Self { images }
    }

    /// One row per tier and class, then the macro row of each tier.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for tier in Tier::ALL {
            let scores: Vec<_> = self.images.iter().map(|(_, m)| m.tier(tier)).collect();
            for class in VesselClass::ALL {
                let acc: Vec<f64> = scores.iter().map(|s| s.accuracy(class)).collect();
                let f1: Vec<f64> = scores.iter().map(|s| s.f1(class)).collect();
                rows.push(SummaryRow {
                    tier,
                    class: class.name().to_string(),
                    accuracy: Summary::of(&acc),
                    f1: Summary::of(&f1),
                });
            }
            let acc: Vec<f64> = scores.iter().map(|s| s.macro_accuracy).collect();
            let f1: Vec<f64> = scores.iter().map(|s| s.macro_f1).collect();
            rows.push(SummaryRow {
                tier,
                class: "macro".into(),
                accuracy: Summary::of(&acc),
                f1: Summary::of(&f1),
            });
        }
        rows
    }

    pub fn macro_f1(&self, tier: Tier) -> Summary {
        let v: Vec<f64> = self.images.iter().map(|(_, m)| m.tier(tier).macro_f1).collect();
        Summary::of(&v)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("tier,class,accuracy_mean,accuracy_std,f1_mean,f1_std,images\n");
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.tier.name(),
                r.class,
                r.accuracy.mean,
                r.accuracy.std,
                r.f1.mean,
                r.f1.std,
                self.images.len()
            );
        }
        s
    }

    pub fn per_image_csv(&self) -> String {
        let mut s = String::from("image,tier,class,region_pixels,tp,fp,fn,tn,accuracy,f1\n");
        for (id, m) in &self.images {
            for tier in Tier::ALL {
                let t = m.tier(tier);
                for class in VesselClass::ALL {
                    let c = t.counts.get(class);
                    let (acc, f1) = c.accuracy_f1();
                    let _ = writeln!(
                        s,
                        "{id},{},{},{},{},{},{},{},{acc:.6},{f1:.6}",
                        tier.name(),
                        class.name(),
                        t.counts.region_pixels,
                        c.tp,
                        c.fp,
                        c.fn_,
                        c.tn
                    );
                }
            }
        }
        s
    }

    /// Fixed-width table, one block per tier.
    pub fn table(&self) -> String {
        let mut s = format!("{} image(s)\n", self.images.len());
        let mut current = None;
        for r in self.summary() {
            if current != Some(r.tier) {
                current = Some(r.tier);
                let _ = writeln!(s, "\n{:<16} {:<11} {:>17} {:>17}", r.tier.name(), "class", "accuracy", "F1");
            }
            let _ = writeln!(
                s,
                "{:<16} {:<11} {:>8.3} ± {:<6.3} {:>8.3} ± {:<6.3}",
                "", r.class, r.accuracy.mean, r.accuracy.std, r.f1.mean, r.f1.std
            );
        }
        s
    }
}
