use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::model::TrainedModel;
use crate::clustering::{cluster_histogram, purity};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::evaluation::{per_class_accuracy, EvalReport, GzslReport};
use crate::inference::Route;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Zsl => "zsl",
            EvalMode::Gzsl => "gzsl",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(EvalMode::Zsl),
            "gzsl" => Ok(EvalMode::Gzsl),
            other => Err(Error::Config(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub route: Route,
    pub predicted: String,
    pub truth: String,
}

impl Prediction {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.id, self.route, self.predicted, self.truth)
    }
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    preds.iter().map(|p| p.to_line() + "\n").collect()
}

fn check_compatible(model: &TrainedModel, data: &LabeledDataset) -> Result<()> {
    if data.d_v != model.d_v {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects d_v = {}, data has {}",
            model.d_v, data.d_v
        )));
    }
    if data.split.seen() != model.seen_labels || data.split.unseen() != model.unseen_labels {
        return Err(Error::ClassSetMismatch);
    }
    Ok(())
}

fn base_report(model: &TrainedModel) -> EvalReport {
    EvalReport {
        config: model.config.pairs().into_iter().collect(),
        purity_before: model.purity_before,
        purity_after: model.purity_after,
        ..Default::default()
    }
}

/// Zero-shot accuracy on every unseen instance, or the generalized split
/// (held-out seen instances plus every unseen instance).
pub fn evaluate(
    model: &TrainedModel,
    data: &LabeledDataset,
    mode: EvalMode,
) -> Result<(EvalReport, Vec<Prediction>)> {
    check_compatible(model, data)?;
    let unseen_idx = data.unseen_indices();
    if unseen_idx.is_empty() {
        return Err(Error::EmptyDataset("no unseen-class instances to evaluate".into()));
    }
    let unseen_set: BTreeSet<String> = model.unseen_labels.iter().cloned().collect();
    let mut report = base_report(model);
    let mut preds = Vec::new();
    match mode {
        EvalMode::Zsl => {
            for &i in &unseen_idx {
                let inst = &data.instances[i];
                preds.push(Prediction {
                    id: inst.id.clone(),
                    route: Route::Unseen,
                    predicted: model.predict_zsl(&inst.features)?,
                    truth: inst.class_label.clone(),
                });
            }
            let (p, t) = columns(&preds);
            report.zsl = Some(per_class_accuracy(&p, &t, &unseen_set)?);
        }
        EvalMode::Gzsl => {
            let (_, seen_test) = data.seen_holdout(model.config.seen_test_fraction, model.config.seed);
            if seen_test.is_empty() {
                return Err(Error::EmptyDataset("no held-out seen instances to evaluate".into()));
            }
            let mut all = seen_test.clone();
            all.extend_from_slice(&unseen_idx);
            for &i in &all {
                let inst = &data.instances[i];
                let (route, predicted) = model.predict_gzsl(&inst.features)?;
                preds.push(Prediction {
                    id: inst.id.clone(),
                    route,
                    predicted,
                    truth: inst.class_label.clone(),
                });
            }
            let (seen_p, unseen_p) = preds.split_at(seen_test.len());
            let seen_set: BTreeSet<String> = model.seen_labels.iter().cloned().collect();
            let (p, t) = columns(seen_p);
            let seen = per_class_accuracy(&p, &t, &seen_set)?;
            let (p, t) = columns(unseen_p);
            let unseen = per_class_accuracy(&p, &t, &unseen_set)?;
            report.gzsl = Some(GzslReport {
                seen,
                unseen,
                tau: model.gate.tau(),
            });
        }
    }
    report.config.insert("eval.mode".into(), mode.to_string());
    Ok((report, preds))
}

fn columns(preds: &[Prediction]) -> (Vec<&str>, Vec<&str>) {
    preds
        .iter()
        .map(|p| (p.predicted.as_str(), p.truth.as_str()))
        .unzip()
}

/// Purity and per-class cluster histogram of the training partition under
/// the model's centroids.
pub fn cluster_stats(model: &TrainedModel, data: &LabeledDataset) -> Result<EvalReport> {
    check_compatible(model, data)?;
    let (train, _) = data.seen_holdout(model.config.seen_test_fraction, model.config.seed);
    let mut assignments = Vec::with_capacity(train.len());
    let mut labels = Vec::with_capacity(train.len());
    for &i in &train {
        let inst = &data.instances[i];
        let rep = model.represent(&inst.features)?;
        assignments.push(rep.weights.closest());
        labels.push(inst.class_label.as_str());
    }
    let k = model.clusters.k();
    let mut report = base_report(model);
    report.purity_current = Some(purity(&assignments, &labels, k)?.purity);
    report.histogram = Some(cluster_histogram(&assignments, &labels, k)?);
    Ok(report)
}
