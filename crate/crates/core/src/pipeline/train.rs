use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::model::TrainedModel;
use crate::clustering::{kmeans_fit, purity, ClusterModel, KMeansOptions};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::inference::{self, GateConfig, Projected};
use crate::neural::{
    accumulate, add_weight_penalty, least_squares_loss, regularized_cross_entropy,
    semantic_softmax, AdamState, Classifier, ClassifierShape, Mlp, ParamSet,
};
use crate::reinforce::{reinforce_step, schedule_alpha};
use crate::representation::{claster_representation, omega_backward, VisualSemanticPoint};
use crate::vecmath;

/// Centroid-optimization progress is logged every this many iterations.
pub const LOG_EVERY: usize = 100;

/// Independent generator per purpose, all derived from one seed.
pub(crate) fn sub_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const TAG_MAPPER_INIT: u64 = 1;
const TAG_MAPPER_ORDER: u64 = 2;
const TAG_KMEANS: u64 = 3;
const TAG_CLASSIFIER_INIT: u64 = 4;
const TAG_CLASSIFIER_ORDER: u64 = 5;
const TAG_RL_ORDER: u64 = 6;
const TAG_GATE_SPLIT: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Start,
    Mapper,
    Clusters,
    Classifier,
    Centroids,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Start => "start",
            Phase::Mapper => "train_mapper",
            Phase::Clusters => "init_clusters",
            Phase::Classifier => "train_classifier",
            Phase::Centroids => "optimize_centroids",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlLogLine {
    pub iter: usize,
    pub alpha: f64,
    pub running_reward_mean: f64,
    pub purity: f64,
}

impl RlLogLine {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{:.4}\t{:.4}",
            self.iter, self.alpha, self.running_reward_mean, self.purity
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Mapper loss over the training set: entry 0 before training, then one
    /// per epoch.
    pub mapper_losses: Vec<f64>,
    pub kmeans_purity: Option<f64>,
    pub kmeans_degenerate: bool,
    /// Mean minibatch objective per classifier epoch, across all rounds.
    pub classifier_losses: Vec<f64>,
    pub clamped_probabilities: usize,
    pub rl_trace: Vec<RlLogLine>,
    /// Purity of training ψ assignments before the first and after the last
    /// centroid optimization.
    pub purity_before: Option<f64>,
    pub purity_after: Option<f64>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, l) in self.mapper_losses.iter().enumerate() {
            s.push_str(&format!("mapper\t{e}\t{l:.6e}\n"));
        }
        if let Some(p) = self.kmeans_purity {
            s.push_str(&format!("kmeans_purity\t{p:.4}\n"));
        }
        for (e, l) in self.classifier_losses.iter().enumerate() {
            s.push_str(&format!("classifier\t{}\t{l:.6e}\n", e + 1));
        }
        if !self.rl_trace.is_empty() {
            s.push_str("iter\talpha\trunning_reward_mean\tpurity\n");
            for line in &self.rl_trace {
                s.push_str(&line.to_line());
                s.push('\n');
            }
        }
        s
    }
}

/// Seen-class bookkeeping shared by training and inference.
#[derive(Debug, Clone)]
pub(crate) struct SeenClasses {
    pub labels: Vec<String>,
    pub index: BTreeMap<String, usize>,
    /// Row-major `S × d_s` class embeddings in label order.
    pub embeddings: Vec<f64>,
    pub d_s: usize,
}

impl SeenClasses {
    pub fn new(data: &LabeledDataset) -> Result<Self> {
        let labels = data.split.seen();
        let embeddings = data.embeddings.matrix(&labels)?;
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Ok(Self {
            labels,
            index,
            embeddings,
            d_s: data.embeddings.dim(),
        })
    }
}

/// Runs the training phases in order over one dataset.
pub struct Trainer<'a> {
    config: PipelineConfig,
    data: &'a LabeledDataset,
    seen: SeenClasses,
    train_idx: Vec<usize>,
    gate_idx: Vec<usize>,
    phase: Phase,
    mapper: Option<Mlp>,
    clusters: Option<ClusterModel>,
    psi_mapper: Option<Mlp>,
    classifier: Option<Classifier>,
    psi_adam: Option<AdamState>,
    classifier_adam: Option<AdamState>,
    classifier_rng: ChaCha8Rng,
    rl_round: u64,
    pub log: TrainingLog,
}

fn scaled<P: ParamSet>(g: &P, s: f64) -> P {
    let mut out = g.zeros_like();
    accumulate(&mut out, g, s);
    out
}

fn check_finite<P: ParamSet>(params: &P, prefix: &str, phase: &'static str) -> Result<()> {
    match params.first_non_finite() {
        Some(t) => Err(Error::NonFiniteLoss {
            phase,
            tensor: format!("{prefix}.{t}"),
        }),
        None => Ok(()),
    }
}

impl<'a> Trainer<'a> {
    pub fn new(config: PipelineConfig, data: &'a LabeledDataset) -> Result<Self> {
        config.validate()?;
        if let Some(d) = config.d_v {
            if d != data.d_v {
                return Err(Error::Config(format!("config expects d_v = {d}, data has {}", data.d_v)));
            }
        }
        if let Some(d) = config.d_s {
            if d != data.embeddings.dim() {
                return Err(Error::Config(format!(
                    "config expects d_s = {d}, embeddings have {}",
                    data.embeddings.dim()
                )));
            }
        }
        let (train_all, _) = data.seen_holdout(config.seen_test_fraction, config.seed);
        let (train_idx, gate_idx) = if config.gate_tau.is_none() {
            data.stratified_split(&train_all, config.gate_holdout, config.seed ^ TAG_GATE_SPLIT)
        } else {
            (train_all, Vec::new())
        };
        if train_idx.is_empty() {
            return Err(Error::NoSeenInstances);
        }
        Ok(Self {
            seen: SeenClasses::new(data)?,
            classifier_rng: sub_rng(config.seed, TAG_CLASSIFIER_ORDER),
            config,
            data,
            train_idx,
            gate_idx,
            phase: Phase::Start,
            mapper: None,
            clusters: None,
            psi_mapper: None,
            classifier: None,
            psi_adam: None,
            classifier_adam: None,
            rl_round: 0,
            log: TrainingLog::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn gate_indices(&self) -> &[usize] {
        &self.gate_idx
    }

    pub fn mapper(&self) -> Option<&Mlp> {
        self.mapper.as_ref()
    }

    pub fn clusters(&self) -> Option<&ClusterModel> {
        self.clusters.as_ref()
    }

    pub fn psi_mapper(&self) -> Option<&Mlp> {
        self.psi_mapper.as_ref()
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    fn require(&self, requested: &'static str, at_least: Phase, exactly: bool) -> Result<()> {
        let ok = if exactly {
            self.phase == at_least
        } else {
            self.phase >= at_least
        };
        if ok {
            Ok(())
        } else {
            Err(Error::PhaseOrder {
                requested,
                missing: if self.phase > at_least {
                    "a fresh trainer"
                } else {
                    at_least.name()
                },
            })
        }
    }

    fn embedding_of(&self, i: usize) -> &[f64] {
        self.data
            .embeddings
            .get(&self.data.instances[i].class_label)
            .expect("validated dataset")
    }

    /// Mean least-squares loss of `mapper` over the training instances.
    pub fn mapper_loss(&self, mapper: &Mlp) -> Result<f64> {
        let mut total = 0.0;
        for &i in &self.train_idx {
            let out = mapper.forward(self.embedding_of(i))?;
            total += least_squares_loss(&out, &self.data.instances[i].features)?.0;
        }
        Ok(total / self.train_idx.len() as f64)
    }

    /// Fits the embedding → feature network, which stays frozen afterwards.
    pub fn train_mapper(&mut self) -> Result<&Mlp> {
        self.require(Phase::Mapper.name(), Phase::Start, true)?;
        let cfg = &self.config;
        let mut rng = sub_rng(cfg.seed, TAG_MAPPER_INIT);
        let mut mapper = Mlp::random(self.seen.d_s, cfg.mapper_hidden, self.data.d_v, &mut rng);
        let mut adam = AdamState::new(
            crate::neural::AdamConfig {
                lr: cfg.mapper_lr,
                ..cfg.adam
            },
            &mapper,
        );
        let mut order_rng = sub_rng(cfg.seed, TAG_MAPPER_ORDER);
        let mut order = self.train_idx.clone();
        let mut losses = vec![self.mapper_loss(&mapper)?];
        for _ in 0..cfg.mapper_epochs {
            order.shuffle(&mut order_rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut grads = mapper.zeros_like();
                for &i in batch {
                    let trace = mapper.forward_traced(self.embedding_of(i))?;
                    let (_, g) = least_squares_loss(&trace.output, &self.data.instances[i].features)?;
                    mapper.backward(&trace, &g, &mut grads)?;
                }
                let grads = scaled(&grads, 1.0 / batch.len() as f64);
                adam.step(&mut mapper, &grads)?;
                check_finite(&mapper, "mapper", "train_mapper")?;
            }
            let loss = self.mapper_loss(&mapper)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "train_mapper",
                    tensor: "loss".into(),
                });
            }
            losses.push(loss);
        }
        log::info!(
            "mapper loss {:.4e} -> {:.4e} over {} epochs",
            losses[0],
            losses[losses.len() - 1],
            cfg.mapper_epochs
        );
        self.log.mapper_losses = losses;
        self.mapper = Some(mapper);
        self.phase = Phase::Mapper;
        Ok(self.mapper.as_ref().expect("just set"))
    }

    /// Clusters `x_i ++ a'(y_i)` over the training instances.
    pub fn init_clusters(&mut self) -> Result<&ClusterModel> {
        self.require(Phase::Clusters.name(), Phase::Mapper, true)?;
        let mapper = self.mapper.as_ref().expect("phase checked");
        let mut projected: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for l in &self.seen.labels {
            projected.insert(l, mapper.forward(self.data.embeddings.get(l).expect("seen label"))?);
        }
        let points: Vec<Vec<f64>> = self
            .train_idx
            .iter()
            .map(|&i| {
                let inst = &self.data.instances[i];
                let mut p = inst.features.clone();
                p.extend_from_slice(&projected[inst.class_label.as_str()]);
                p
            })
            .collect();
        let fit = kmeans_fit(
            &points,
            KMeansOptions {
                k: self.config.effective_k(),
                seed: self.config.seed ^ TAG_KMEANS,
                init: self.config.effective_init(),
                standardize: self.config.kmeans_standardize,
                restarts: self.config.kmeans_restarts,
            },
        )?;
        let labels: Vec<&str> = self.train_labels();
        let p = purity(&fit.assignments, &labels, fit.model.k())?;
        log::info!("k-means purity {:.4} with k = {}", p.purity, fit.model.k());
        self.log.kmeans_purity = Some(p.purity);
        self.log.kmeans_degenerate = fit.degenerate;
        self.clusters = Some(fit.model);
        self.phase = Phase::Clusters;
        Ok(self.clusters.as_ref().expect("just set"))
    }

    fn train_labels(&self) -> Vec<&str> {
        self.train_idx
            .iter()
            .map(|&i| self.data.instances[i].class_label.as_str())
            .collect()
    }

    fn seen_projections(&self) -> Result<Vec<Vec<f64>>> {
        let mapper = self.mapper.as_ref().ok_or(Error::PhaseOrder {
            requested: "seen projections",
            missing: Phase::Mapper.name(),
        })?;
        self.seen
            .labels
            .iter()
            .map(|l| mapper.forward(self.data.embeddings.get(l).expect("seen label")))
            .collect()
    }

    fn init_networks(&mut self) -> Result<()> {
        if self.classifier.is_some() {
            return Ok(());
        }
        let cfg = &self.config;
        let d_v = self.data.d_v;
        let mut rng = sub_rng(cfg.seed, TAG_CLASSIFIER_INIT);
        let psi = Mlp::random(d_v, cfg.psi_hidden.unwrap_or(d_v), d_v, &mut rng);
        let clf = Classifier::random(
            ClassifierShape {
                input_len: 2 * d_v,
                kernel: cfg.conv_kernel,
                conv_channels: cfg.conv_channels,
                hidden: cfg.classifier_hidden,
                output: self.seen.d_s,
            },
            &mut rng,
        )?;
        self.psi_adam = Some(AdamState::new(cfg.adam, &psi));
        self.classifier_adam = Some(AdamState::new(cfg.adam, &clf));
        self.psi_mapper = Some(psi);
        self.classifier = Some(clf);
        Ok(())
    }

    /// Per-sample objective terms and gradients. Returns
    /// `(cross_entropy + align term, clamped)`; the Frobenius term is added by
    /// the caller once per batch.
    fn sample_gradient(
        &self,
        i: usize,
        targets: &[Vec<f64>],
        psi_grads: &mut Mlp,
        clf_grads: &mut Classifier,
    ) -> Result<(f64, bool)> {
        let psi_mapper = self.psi_mapper.as_ref().expect("initialized");
        let clf = self.classifier.as_ref().expect("initialized");
        let clusters = self.clusters.as_ref().expect("initialized");
        let inst = &self.data.instances[i];
        let t = self.seen.index[&inst.class_label];
        let trace = psi_mapper.forward_traced(&inst.features)?;
        let psi = VisualSemanticPoint::new(&inst.features, &trace.output)?;
        let rep = claster_representation(clusters, psi)?;
        let ct = clf.forward_traced(&rep.omega)?;
        let y_hat = semantic_softmax(&self.seen.embeddings, self.seen.d_s, &ct.output)?;
        let ce = regularized_cross_entropy(&y_hat, t, &self.seen.embeddings, self.seen.d_s, 0.0, 0.0)?;
        let d_omega = clf.backward(&ct, &ce.grad_projected, clf_grads)?;
        let d_psi = omega_backward(clusters, &rep, &d_omega)?;
        let mut d_phi = d_psi[self.data.d_v..].to_vec();
        let mut loss = ce.loss;
        if self.config.align_weight > 0.0 {
            let (l, g) = least_squares_loss(&trace.output, &targets[t])?;
            loss += self.config.align_weight * l;
            vecmath::axpy(&mut d_phi, self.config.align_weight, &g);
        }
        psi_mapper.backward(&trace, &d_phi, psi_grads)?;
        Ok((loss, ce.clamped))
    }

    /// Full training objective: mean per-sample loss plus `lambda·‖W‖²`.
    pub fn classifier_objective(&self, lambda: f64) -> Result<f64> {
        self.require(Phase::Classifier.name(), Phase::Classifier, false)?;
        let targets = self.seen_projections()?;
        let mut psi_g = self.psi_mapper.as_ref().expect("phase").zeros_like();
        let mut clf_g = self.classifier.as_ref().expect("phase").zeros_like();
        let mut total = 0.0;
        for &i in &self.train_idx {
            total += self.sample_gradient(i, &targets, &mut psi_g, &mut clf_g)?.0;
        }
        Ok(total / self.train_idx.len() as f64 + lambda * self.weight_sq_norm())
    }

    fn weight_sq_norm(&self) -> f64 {
        self.psi_mapper.as_ref().map_or(0.0, |m| m.weight_sq_norm())
            + self.classifier.as_ref().map_or(0.0, |c| c.weight_sq_norm())
    }

    /// Minibatch training of the x → φ network and the classifier head with
    /// the centroids held fixed. Returns the mean objective per epoch.
    pub fn train_classifier(&mut self) -> Result<Vec<f64>> {
        self.require(Phase::Classifier.name(), Phase::Clusters, false)?;
        self.init_networks()?;
        let targets = self.seen_projections()?;
        let lambda = self.config.lambda;
        let mut order = self.train_idx.clone();
        let mut epoch_losses = Vec::with_capacity(self.config.classifier_epochs);
        for _ in 0..self.config.classifier_epochs {
            order.shuffle(&mut self.classifier_rng);
            let mut sum = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(self.config.batch_size) {
                let mut psi_g = self.psi_mapper.as_ref().expect("init").zeros_like();
                let mut clf_g = self.classifier.as_ref().expect("init").zeros_like();
                let mut loss = 0.0;
                for &i in batch {
                    let (l, clamped) = self.sample_gradient(i, &targets, &mut psi_g, &mut clf_g)?;
                    loss += l;
                    if clamped {
                        self.log.clamped_probabilities += 1;
                    }
                }
                let n = batch.len() as f64;
                let loss = loss / n + lambda * self.weight_sq_norm();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        phase: "train_classifier",
                        tensor: "loss".into(),
                    });
                }
                let psi_mapper = self.psi_mapper.as_mut().expect("init");
                let clf = self.classifier.as_mut().expect("init");
                let mut psi_g = scaled(&psi_g, 1.0 / n);
                let mut clf_g = scaled(&clf_g, 1.0 / n);
                add_weight_penalty(&mut psi_g, psi_mapper, 2.0 * lambda);
                add_weight_penalty(&mut clf_g, clf, 2.0 * lambda);
                self.psi_adam.as_mut().expect("init").step(psi_mapper, &psi_g)?;
                self.classifier_adam.as_mut().expect("init").step(clf, &clf_g)?;
                check_finite(psi_mapper, "psi_mapper", "train_classifier")?;
                check_finite(clf, "classifier", "train_classifier")?;
                sum += loss;
                batches += 1;
            }
            epoch_losses.push(sum / batches as f64);
        }
        if let (Some(first), Some(last)) = (epoch_losses.first(), epoch_losses.last()) {
            log::info!("classifier objective {first:.4} -> {last:.4}");
        }
        self.log.classifier_losses.extend_from_slice(&epoch_losses);
        self.phase = Phase::Classifier;
        Ok(epoch_losses)
    }

    fn training_psi(&self) -> Result<Vec<Vec<f64>>> {
        let psi_mapper = self.psi_mapper.as_ref().expect("phase checked");
        self.train_idx
            .iter()
            .map(|&i| {
                let x = &self.data.instances[i].features;
                Ok(VisualSemanticPoint::new(x, &psi_mapper.forward(x)?)?.into_joined())
            })
            .collect()
    }

    /// Purity of the current centroid assignment of the training ψ.
    pub fn current_purity(&self) -> Result<f64> {
        self.require(Phase::Classifier.name(), Phase::Classifier, false)?;
        let psis = self.training_psi()?;
        self.purity_of(&psis)
    }

    fn purity_of(&self, psis: &[Vec<f64>]) -> Result<f64> {
        let clusters = self.clusters.as_ref().expect("phase checked");
        let assignments = psis
            .iter()
            .map(|p| clusters.assign(p).map(|a| a.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(purity(&assignments, &self.train_labels(), clusters.k())?.purity)
    }

    /// Single-sample REINFORCE updates of the closest centroid, with every
    /// network frozen. Returns the logged trace of this round.
    pub fn optimize_centroids(&mut self) -> Result<Vec<RlLogLine>> {
        self.require(Phase::Centroids.name(), Phase::Classifier, true)?;
        let psis = self.training_psi()?;
        let before = self.purity_of(&psis)?;
        if self.log.purity_before.is_none() {
            self.log.purity_before = Some(before);
        }
        let targets: Vec<usize> = self
            .train_idx
            .iter()
            .map(|&i| self.seen.index[&self.data.instances[i].class_label])
            .collect();
        let rl = self.config.rl.clone();
        let mut rng = sub_rng(self.config.seed ^ self.rl_round, TAG_RL_ORDER);
        let mut order: Vec<usize> = (0..psis.len()).collect();
        let mut cursor = order.len();
        let mut window = (0.0, 0usize);
        let mut trace = Vec::new();
        for it in 0..rl.total_iterations {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let s = order[cursor];
            cursor += 1;
            let alpha = schedule_alpha(&rl, it)?;
            let clusters = self.clusters.as_ref().expect("phase checked");
            let psi = VisualSemanticPoint::new(&psis[s][..self.data.d_v], &psis[s][self.data.d_v..])?;
            let rep = claster_representation(clusters, psi)?;
            let v = self.classifier.as_ref().expect("phase").forward(&rep.omega)?;
            let y_hat = semantic_softmax(&self.seen.embeddings, self.seen.d_s, &v)?;
            let j = rep.weights.closest();
            let step = reinforce_step(
                alpha,
                &y_hat,
                targets[s],
                rep.weights.weights[j],
                j,
                &psis[s],
                clusters.centroid(j),
            )?;
            let clusters = self.clusters.as_mut().expect("phase checked");
            clusters.shift(j, &step.delta)?;
            if !vecmath::all_finite(clusters.centroid(j)) {
                return Err(Error::NonFiniteLoss {
                    phase: "optimize_centroids",
                    tensor: format!("centroid.{j}"),
                });
            }
            window.0 += step.reward;
            window.1 += 1;
            if (it + 1) % LOG_EVERY == 0 || it + 1 == rl.total_iterations {
                let line = RlLogLine {
                    iter: it + 1,
                    alpha,
                    running_reward_mean: window.0 / window.1 as f64,
                    purity: self.purity_of(&psis)?,
                };
                log::debug!("{}", line.to_line());
                trace.push(line);
                window = (0.0, 0);
            }
        }
        let after = self.purity_of(&psis)?;
        log::info!("centroid optimization purity {before:.4} -> {after:.4}");
        self.log.purity_after = Some(after);
        self.log.rl_trace.extend_from_slice(&trace);
        self.rl_round += 1;
        self.phase = Phase::Centroids;
        Ok(trace)
    }

    /// Runs every phase the configuration asks for, in order.
    pub fn run(mut self) -> Result<(TrainedModel, TrainingLog)> {
        self.train_mapper()?;
        self.init_clusters()?;
        for _ in 0..self.config.alternations {
            self.train_classifier()?;
            if self.config.ablation_mode.runs_rl() {
                self.optimize_centroids()?;
            }
        }
        if !self.config.ablation_mode.runs_rl() {
            let p = self.current_purity()?;
            self.log.purity_before = Some(p);
            self.log.purity_after = Some(p);
        }
        let log = self.log.clone();
        Ok((self.finalize()?, log))
    }

    /// Precomputes projections, rectified unseen embeddings and the gate
    /// threshold, and packages the trained state.
    pub fn finalize(self) -> Result<TrainedModel> {
        self.require("finalize", Phase::Classifier, false)?;
        let mapper = self.mapper.clone().expect("phase");
        let seen_projected = self.seen_projections()?;
        let unseen_labels = self.data.split.unseen();
        let unseen_projected = unseen_labels
            .iter()
            .map(|l| mapper.forward(self.data.embeddings.get(l).expect("unseen label")))
            .collect::<Result<Vec<_>>>()?;
        let seen_refs: Vec<Projected<'_>> = self
            .seen
            .labels
            .iter()
            .zip(&seen_projected)
            .map(|(l, v)| Projected { label: l, vector: v })
            .collect();
        let unseen_refs: Vec<Projected<'_>> = unseen_labels
            .iter()
            .zip(&unseen_projected)
            .map(|(l, v)| Projected { label: l, vector: v })
            .collect();
        let rectified = inference::rectify_unseen(&unseen_refs, &seen_refs, self.config.rectify_k)?;

        let mut model = TrainedModel {
            config: self.config.clone(),
            d_v: self.data.d_v,
            d_s: self.seen.d_s,
            seen_labels: self.seen.labels.clone(),
            unseen_labels,
            seen_embeddings: self.seen.embeddings.clone(),
            mapper,
            psi_mapper: self.psi_mapper.clone().expect("phase"),
            classifier: self.classifier.clone().expect("phase"),
            clusters: self.clusters.clone().expect("phase"),
            seen_projected,
            unseen_projected,
            rectified,
            gate: GateConfig::new(0.5)?,
            purity_before: self.log.purity_before,
            purity_after: self.log.purity_after,
        };
        model.gate = match self.config.gate_tau {
            Some(t) => GateConfig::new(t)?,
            None if self.gate_idx.is_empty() => {
                log::warn!("no held-out seen instances for gate tuning; using tau = 0.5");
                GateConfig::new(0.5)?
            }
            None => {
                let maxima = self
                    .gate_idx
                    .iter()
                    .map(|&i| {
                        let out = model.outputs(&self.data.instances[i].features)?;
                        Ok(out.y_hat.iter().copied().fold(0.0, f64::max))
                    })
                    .collect::<Result<Vec<_>>>()?;
                inference::tune_tau(&maxima, self.config.gate_recall)?
            }
        };
        Ok(model)
    }
}

/// Trains a model end to end.
pub fn train(config: PipelineConfig, data: &LabeledDataset) -> Result<(TrainedModel, TrainingLog)> {
    Trainer::new(config, data)?.run()
}
