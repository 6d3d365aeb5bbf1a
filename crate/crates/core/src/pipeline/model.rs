use std::path::Path;

use super::config::PipelineConfig;
use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::inference::{
    self, GateConfig, InstanceOutputs, RectifiedEmbedding, Route, Source,
};
use crate::neural::{semantic_softmax, Classifier, Mlp, ParamSet, TensorStore};
use crate::representation::{build_psi, claster_representation, ClasterRepresentation};

/// Everything needed to predict: the three networks, the centroids, and the
/// cached class projections.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub d_v: usize,
    pub d_s: usize,
    pub seen_labels: Vec<String>,
    pub unseen_labels: Vec<String>,
    /// Row-major `S × d_s` seen-class embeddings, in `seen_labels` order.
    pub seen_embeddings: Vec<f64>,
    pub mapper: Mlp,
    pub psi_mapper: Mlp,
    pub classifier: Classifier,
    pub clusters: ClusterModel,
    pub seen_projected: Vec<Vec<f64>>,
    pub unseen_projected: Vec<Vec<f64>>,
    pub rectified: Vec<RectifiedEmbedding>,
    pub gate: GateConfig,
    pub purity_before: Option<f64>,
    pub purity_after: Option<f64>,
}

const LABEL_SEP: char = '\t';

fn rows(store: &TensorStore, name: &str, width: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let t = store.require(name)?;
    if t.data.len() != width * count {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` has {} values, expected {count}x{width}",
            t.data.len()
        )));
    }
    Ok(t.data.chunks_exact(width.max(1)).map(<[f64]>::to_vec).collect())
}

fn opt_f64(store: &TensorStore, key: &str) -> Result<Option<f64>> {
    match store.meta.get(key).map(String::as_str) {
        None | Some("none") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Checkpoint(format!("bad `{key}` value `{v}`"))),
    }
}

fn parse_meta<T: std::str::FromStr>(store: &TensorStore, key: &str) -> Result<T> {
    let v = store.meta(key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad `{key}` value `{v}`")))
}

impl TrainedModel {
    /// Representation of one instance.
    pub fn represent(&self, x: &[f64]) -> Result<ClasterRepresentation> {
        if x.len() != self.d_v {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, instance has {}",
                self.d_v,
                x.len()
            )));
        }
        claster_representation(&self.clusters, build_psi(&self.psi_mapper, x)?)
    }

    pub fn outputs(&self, x: &[f64]) -> Result<InstanceOutputs> {
        let rep = self.represent(x)?;
        let v = self.classifier.forward(&rep.omega)?;
        let y_hat = semantic_softmax(&self.seen_embeddings, self.d_s, &v)?;
        Ok(InstanceOutputs {
            y_hat,
            phi: rep.psi.semantic_part().to_vec(),
        })
    }

    pub fn predict_zsl(&self, x: &[f64]) -> Result<String> {
        let out = self.outputs(x)?;
        inference::zsl_predict(self.config.query_mode, &out, &self.seen_projected, &self.rectified)
    }

    pub fn predict_gzsl(&self, x: &[f64]) -> Result<(Route, String)> {
        self.predict_gzsl_with(x, self.gate)
    }

    pub fn predict_gzsl_with(&self, x: &[f64], gate: GateConfig) -> Result<(Route, String)> {
        let out = self.outputs(x)?;
        inference::gzsl_predict(
            self.config.query_mode,
            &out,
            gate,
            &self.seen_labels,
            &self.seen_projected,
            &self.rectified,
        )
    }

    pub fn to_store(&self) -> TensorStore {
        let mut s = TensorStore::default();
        for (k, v) in self.config.pairs() {
            s.set_meta(format!("config.{k}"), v);
        }
        s.set_meta("d_v", self.d_v.to_string());
        s.set_meta("d_s", self.d_s.to_string());
        let sep = LABEL_SEP.to_string();
        s.set_meta("labels.seen", self.seen_labels.join(&sep));
        s.set_meta("labels.unseen", self.unseen_labels.join(&sep));
        s.set_meta("k", self.clusters.k().to_string());
        s.set_meta("gate.tau", self.gate.tau().to_string());
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |p| p.to_string());
        s.set_meta("purity.before", opt(self.purity_before));
        s.set_meta("purity.after", opt(self.purity_after));
        self.mapper.store_into("mapper", &mut s);
        self.psi_mapper.store_into("psi_mapper", &mut s);
        self.classifier.store_into("classifier", &mut s);
        for (j, c) in self.clusters.centroids().iter().enumerate() {
            s.insert(format!("centroid.{j}"), vec![c.len()], c.clone());
        }
        let s_count = self.seen_labels.len();
        let u_count = self.unseen_labels.len();
        s.insert(
            "embeddings.seen".into(),
            vec![s_count, self.d_s],
            self.seen_embeddings.clone(),
        );
        s.insert(
            "projected.seen".into(),
            vec![s_count, self.d_v],
            self.seen_projected.concat(),
        );
        s.insert(
            "projected.unseen".into(),
            vec![u_count, self.d_v],
            self.unseen_projected.concat(),
        );
        let rect: Vec<Vec<f64>> = self.rectified.iter().map(|r| r.vector.clone()).collect();
        s.insert("rectified.unseen".into(), vec![u_count, self.d_v], rect.concat());
        s
    }

    pub fn from_store(store: &TensorStore) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for (k, v) in &store.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config
                    .set(key, v)
                    .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
            }
        }
        let d_v: usize = parse_meta(store, "d_v")?;
        let d_s: usize = parse_meta(store, "d_s")?;
        let labels = |key: &str| -> Result<Vec<String>> {
            Ok(store
                .meta(key)?
                .split(LABEL_SEP)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect())
        };
        let seen_labels = labels("labels.seen")?;
        let unseen_labels = labels("labels.unseen")?;
        let k: usize = parse_meta(store, "k")?;
        let centroids = (0..k)
            .map(|j| Ok(store.require(&format!("centroid.{j}"))?.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let unseen_rect = rows(store, "rectified.unseen", d_v, unseen_labels.len())?;
        let rectified = unseen_labels
            .iter()
            .zip(unseen_rect)
            .map(|(l, v)| RectifiedEmbedding {
                class_label: l.clone(),
                vector: v,
                source: Source::Unseen,
            })
            .collect();
        let model = Self {
            d_v,
            d_s,
            seen_embeddings: store.require("embeddings.seen")?.data.clone(),
            mapper: Mlp::from_store(store, "mapper")?,
            psi_mapper: Mlp::from_store(store, "psi_mapper")?,
            classifier: Classifier::from_store(store, "classifier")?,
            clusters: ClusterModel::new(centroids)?,
            seen_projected: rows(store, "projected.seen", d_v, seen_labels.len())?,
            unseen_projected: rows(store, "projected.unseen", d_v, unseen_labels.len())?,
            rectified,
            gate: GateConfig::new(parse_meta(store, "gate.tau")?)?,
            purity_before: opt_f64(store, "purity.before")?,
            purity_after: opt_f64(store, "purity.after")?,
            seen_labels,
            unseen_labels,
            config,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.seen_embeddings.len() != self.seen_labels.len() * self.d_s {
            return bad("seen embedding matrix does not match the label list".into());
        }
        if self.mapper.input_dim() != self.d_s || self.mapper.output_dim() != self.d_v {
            return bad("mapper shape does not match d_s → d_v".into());
        }
        if self.psi_mapper.input_dim() != self.d_v || self.psi_mapper.output_dim() != self.d_v {
            return bad("psi_mapper shape does not match d_v → d_v".into());
        }
        if self.classifier.input_len != 2 * self.d_v || self.classifier.output_dim() != self.d_s {
            return bad("classifier shape does not match 2·d_v → d_s".into());
        }
        if self.clusters.dim() != 2 * self.d_v {
            return bad(format!("centroids have {} entries, expected {}", self.clusters.dim(), 2 * self.d_v));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evaluation::write_atomic(path, &self.to_store().to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_store(&TensorStore::parse(&text)?)
    }
}
