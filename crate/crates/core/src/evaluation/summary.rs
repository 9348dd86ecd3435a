//! Average / optimal / minimum statistics over the top-k retrained models.

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{CmktError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        Some(Stat {
            mean: crate::util::mean(values),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            count: values.len(),
        })
    }
}

/// Per-metric statistics. Balanced accuracy and AUC only count reports
/// where they were defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKSummary {
    pub method: String,
    pub modality: String,
    pub count: usize,
    pub accuracy: Stat,
    pub balanced_accuracy: Option<Stat>,
    pub auc_roc: Option<Stat>,
    pub training_runtime_s: Stat,
    pub prediction_runtime_s: Stat,
}

pub fn summarize_topk(reports: &[MetricsReport]) -> Result<TopKSummary> {
    let first = reports.first().ok_or_else(|| CmktError::Empty("no reports to summarize".into()))?;
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
    let all = |f: &dyn Fn(&MetricsReport) -> f64| Stat::of(&col(&|r| Some(f(r)))).expect("nonempty");
    Ok(TopKSummary {
        method: first.method.clone(),
        modality: first.modality.clone(),
        count: reports.len(),
        accuracy: all(&|r| r.accuracy),
        balanced_accuracy: Stat::of(&col(&|r| r.balanced_accuracy)),
        auc_roc: Stat::of(&col(&|r| r.auc_roc)),
        training_runtime_s: all(&|r| r.training_runtime_s),
        prediction_runtime_s: all(&|r| r.prediction_runtime_s),
    })
}

/// Header and one row per summary: `metric,mean,max,min` blocks flattened.
pub fn summaries_csv(summaries: &[TopKSummary]) -> String {
    let mut out = String::from("method,modality,count,metric,mean,max,min\n");
    for s in summaries {
        let rows: [(&str, Option<Stat>); 5] = [
            ("accuracy", Some(s.accuracy)),
            ("balanced_accuracy", s.balanced_accuracy),
            ("auc_roc", s.auc_roc),
            ("training_runtime_s", Some(s.training_runtime_s)),
            ("prediction_runtime_s", Some(s.prediction_runtime_s)),
        ];
        for (name, st) in rows {
            if let Some(st) = st {
                out.push_str(&format!("{},{},{},{name},{},{},{}\n", s.method, s.modality, s.count, st.mean, st.max, st.min));
            }
        }
    }
    out
}
