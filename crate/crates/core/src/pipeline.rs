//! The three-phase training schedule, multi-imputation prediction and
//! evaluation.
//!
//! * UMAE-F trains extractors and evidence heads; missing feature slots are
//!   filled with standard-normal noise.
//! * UMAE-V freezes the extractors and trains the VAE and heads with the
//!   evidential, conflict and reconstruction objectives.
//! * UMAE-J trains everything jointly.
//!
//! Two baselines fill missing raw views with zeros (ZIMP) or training means
//! (MIMP) and train the extractor/head path with the evidential objective.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    augmentation_mask, generate_missing_mask, inject_conflict, split, ConflictRecord,
    CorruptionSpec, MultiViewDataset,
};
use crate::error::{Error, Result};
use crate::losses::{self, annealing_weight, one_hot, LossBundle};
use crate::networks::{
    gaussian_noise, imputation_noise, mask_and_concat_vars, reconstruct_var, BoundModel,
    ModelParams, NetworkConfig, ParamGroup,
};
use crate::numerics::{Graph, Tensor, Var};
use crate::optim::Adam;
use crate::rng::{child_seed, labelled_seed, rng_from_seed};
use crate::subjective_logic::{
    conflict_matrix, fuse_views, opinion_from_evidence, project_probability, EvidenceVector,
    FusionMode, Opinion, MASS_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    UmaeF,
    UmaeV,
    UmaeJ,
    Zimp,
    Mimp,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::UmaeF => "umae_f",
            Phase::UmaeV => "umae_v",
            Phase::UmaeJ => "umae_j",
            Phase::Zimp => "zimp",
            Phase::Mimp => "mimp",
        }
    }

    /// Groups held fixed while this phase trains.
    pub fn frozen_groups(self) -> &'static [ParamGroup] {
        match self {
            Phase::UmaeF | Phase::Zimp | Phase::Mimp => &[ParamGroup::Vae],
            Phase::UmaeV => &[ParamGroup::Features],
            Phase::UmaeJ => &[],
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_f: usize,
    pub epochs_v: usize,
    pub epochs_j: usize,
    /// Epochs for each baseline; `None` uses `epochs_f + epochs_v + epochs_j`.
    pub epochs_baseline: Option<usize>,
    pub batch_size: usize,
    pub lr_f: f64,
    pub lr_v: f64,
    pub lr_j: f64,
    /// Epochs over which λ_t ramps from 0 to 1. The count runs across the
    /// F → V → J schedule; each baseline starts its own count.
    pub annealing_horizon: usize,
    /// Drop probability of each observed view in the training masks.
    pub mask_augmentation: f64,
    pub imputation_samples: usize,
    pub fusion: FusionMode,
    pub seed: u64,
    /// Apply the evidential loss to each view as well as the fused opinion.
    pub per_view_acc: bool,
    /// Include the reconstruction objective during UMAE-V.
    pub reconstruction_in_v: bool,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub vae_hidden: usize,
    pub extractor_depth: usize,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_f: 50,
            epochs_v: 100,
            epochs_j: 100,
            epochs_baseline: None,
            batch_size: 64,
            lr_f: 1e-3,
            lr_v: 1e-3,
            lr_j: 3e-4,
            annealing_horizon: 10,
            mask_augmentation: 0.3,
            imputation_samples: 5,
            fusion: FusionMode::Balanced,
            seed: 0,
            per_view_acc: true,
            reconstruction_in_v: true,
            feature_dim: 128,
            latent_dim: 64,
            vae_hidden: 256,
            extractor_depth: 1,
            leaky_slope: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        for (name, lr) in [
            ("lr_f", self.lr_f),
            ("lr_v", self.lr_v),
            ("lr_j", self.lr_j),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::contract(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.mask_augmentation) {
            return Err(Error::contract(format!(
                "mask augmentation rate {} must lie in [0, 1)",
                self.mask_augmentation
            )));
        }
        if self.imputation_samples == 0 {
            return Err(Error::contract(
                "at least one imputation sample is required",
            ));
        }
        Ok(())
    }

    pub fn network(&self, ds: &MultiViewDataset) -> NetworkConfig {
        NetworkConfig {
            view_dims: ds.dims(),
            classes: ds.classes,
            feature_dim: self.feature_dim,
            latent_dim: self.latent_dim,
            vae_hidden: self.vae_hidden,
            extractor_depth: self.extractor_depth,
            leaky_slope: self.leaky_slope,
        }
    }

    fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::UmaeF => self.epochs_f,
            Phase::UmaeV => self.epochs_v,
            Phase::UmaeJ => self.epochs_j,
            Phase::Zimp | Phase::Mimp => self
                .epochs_baseline
                .unwrap_or(self.epochs_f + self.epochs_v + self.epochs_j),
        }
    }

    /// Epochs trained before `phase` starts in the F → V → J schedule.
    pub fn epoch_offset(&self, phase: Phase) -> usize {
        match phase {
            Phase::UmaeF | Phase::Zimp | Phase::Mimp => 0,
            Phase::UmaeV => self.epochs_f,
            Phase::UmaeJ => self.epochs_f + self.epochs_v,
        }
    }

    fn learning_rate(&self, phase: Phase) -> f64 {
        match phase {
            Phase::UmaeF | Phase::Zimp | Phase::Mimp => self.lr_f,
            Phase::UmaeV => self.lr_v,
            Phase::UmaeJ => self.lr_j,
        }
    }

    /// Inference settings matching how `phase` fills missing views.
    pub fn inference(&self, phase: Phase, train: &MultiViewDataset) -> InferenceConfig {
        let imputation = match phase {
            Phase::UmaeF => Imputation::FeatureNoise,
            Phase::UmaeV | Phase::UmaeJ => Imputation::Vae,
            Phase::Zimp => Imputation::RawZero,
            Phase::Mimp => Imputation::RawMean(train.observed_view_means()),
        };
        InferenceConfig {
            imputation,
            imputation_samples: self.imputation_samples,
            fusion: self.fusion,
            seed: labelled_seed(self.seed, "inference"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub losses: LossBundle,
    /// Mean pairwise JS divergence between view opinions, in bits.
    pub mean_pairwise_js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_seconds: f64,
}

/// How missing views are filled at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    /// Sample the VAE posterior.
    Vae,
    /// Standard-normal noise in feature space.
    FeatureNoise,
    /// Zeros in raw input space.
    RawZero,
    /// Per-view column means in raw input space.
    RawMean(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub imputation: Imputation,
    pub imputation_samples: usize,
    pub fusion: FusionMode,
    pub seed: u64,
}

impl InferenceConfig {
    pub fn vae(imputation_samples: usize, fusion: FusionMode, seed: u64) -> Self {
        Self {
            imputation: Imputation::Vae,
            imputation_samples,
            fusion,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub opinion: Opinion,
    pub probabilities: Vec<f64>,
    pub class: usize,
    pub uncertainty: f64,
    /// Evidence of each view after imputation averaging.
    pub view_evidence: Vec<Vec<f64>>,
    pub fused_evidence: Vec<f64>,
}

/// One training or evaluation batch, with all randomness drawn up front.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub views: Vec<Tensor>,
    pub labels: Tensor,
    /// Entries observed in the source data.
    pub source_mask: Tensor,
    /// Entries visible to the model in this batch.
    pub train_mask: Tensor,
    /// UMAE-F: rows × V·d_f feature noise. UMAE-V/J: rows × d_z latent noise.
    pub noise: Tensor,
}

/// Loss nodes of one batch.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub ace: Var,
    pub kl: Var,
    pub acc: Var,
    pub con: Option<Var>,
    pub elbo: Option<Var>,
    pub total: Var,
    pub evidence: Vec<Var>,
}

fn fuse_evidence_vars(g: &mut Graph, evidence: &[Var], mode: FusionMode) -> Var {
    match mode {
        FusionMode::Balanced => {
            let mut sum = evidence[0];
            for &e in &evidence[1..] {
                sum = g.add(sum, e);
            }
            g.scale(sum, 1.0 / evidence.len() as f64)
        }
        FusionMode::Sequential => {
            let mut acc = evidence[0];
            for &e in &evidence[1..] {
                let s = g.add(acc, e);
                acc = g.scale(s, 0.5);
            }
            acc
        }
    }
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Var {
    let mut total = vars[0];
    for &v in &vars[1..] {
        total = g.add(total, v);
    }
    total
}

/// Builds the training objective of `phase` for one batch.
pub fn phase_loss(
    g: &mut Graph,
    model: &BoundModel,
    phase: Phase,
    inputs: &BatchInputs,
    lambda: f64,
    cfg: &TrainConfig,
) -> LossVars {
    let nviews = model.config.views();
    let df = model.config.feature_dim;
    let z: Vec<Var> = inputs
        .views
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let x = g.constant(x.clone());
            model.extract(g, v, x)
        })
        .collect();

    let mut elbo = None;
    let filled: Vec<Var> = match phase {
        Phase::Zimp | Phase::Mimp => z,
        Phase::UmaeF => (0..nviews)
            .map(|v| {
                let noise = inputs.noise.select_cols(v * df, df);
                let noise = g.constant(noise);
                reconstruct_var(g, z[v], noise, &inputs.train_mask, v)
            })
            .collect(),
        Phase::UmaeV | Phase::UmaeJ => {
            let z_tilde = mask_and_concat_vars(g, &z, &inputs.train_mask);
            let latent = model.encode(g, z_tilde);
            let sample = model.reparameterize(g, latent, &inputs.noise);
            let decoded = model.decode(g, sample);
            if phase == Phase::UmaeJ || cfg.reconstruction_in_v {
                let target = g.concat_cols(&z);
                let weight = g.constant(expand_mask(&inputs.source_mask, df));
                elbo =
                    Some(losses::elbo(g, latent.mu, latent.log_var, decoded, target, weight).total);
            }
            let z_hat = model.split_views(g, decoded);
            (0..nviews)
                .map(|v| reconstruct_var(g, z[v], z_hat[v], &inputs.train_mask, v))
                .collect()
        }
    };

    let evidence: Vec<Var> = filled
        .iter()
        .enumerate()
        .map(|(v, &zv)| model.evidence(g, v, zv))
        .collect();
    let fused = fuse_evidence_vars(g, &evidence, cfg.fusion);
    let y = g.constant(inputs.labels.clone());
    let mut targets = vec![fused];
    if cfg.per_view_acc {
        targets.extend_from_slice(&evidence);
    }
    let (mut accs, mut aces, mut kls) = (Vec::new(), Vec::new(), Vec::new());
    for e in targets {
        let alpha = g.add_scalar(e, 1.0);
        let (acc, ace, kl) = losses::acc(g, alpha, y, lambda);
        accs.push(acc);
        aces.push(ace);
        kls.push(kl);
    }
    let acc = sum_vars(g, &accs);
    let ace = sum_vars(g, &aces);
    let kl = sum_vars(g, &kls);

    let con = match phase {
        Phase::UmaeV | Phase::UmaeJ if nviews >= 2 => Some(losses::conflict(g, &evidence)),
        _ => None,
    };
    let mut parts = vec![acc];
    parts.extend(con);
    parts.extend(elbo);
    let total = sum_vars(g, &parts);
    LossVars {
        ace,
        kl,
        acc,
        con,
        elbo,
        total,
        evidence,
    }
}

/// rows×V mask → rows×(V·width) weight with each flag repeated `width` times.
fn expand_mask(mask: &Tensor, width: usize) -> Tensor {
    let (rows, views) = (mask.rows(), mask.cols());
    let mut values = Vec::with_capacity(rows * views * width);
    for i in 0..rows {
        for v in 0..views {
            values.extend(std::iter::repeat_n(mask.get(i, v), width));
        }
    }
    Tensor::from_rows(rows, views * width, values)
}

/// Fills raw entries of unobserved views in place.
fn fill_raw(views: &mut [Tensor], mask: &Tensor, means: Option<&[Vec<f64>]>) {
    for (v, x) in views.iter_mut().enumerate() {
        for i in 0..x.rows() {
            if mask.get(i, v) == 0.0 {
                let row = x.row_mut(i);
                match means {
                    Some(m) => row.copy_from_slice(&m[v]),
                    None => row.iter_mut().for_each(|r| *r = 0.0),
                }
            }
        }
    }
}

fn mean_pairwise_js(g: &Graph, evidence: &[Var]) -> f64 {
    let v = evidence.len();
    if v < 2 {
        return 0.0;
    }
    let tensors: Vec<&Tensor> = evidence.iter().map(|&e| g.value(e)).collect();
    let rows = tensors[0].rows();
    let mut total = 0.0;
    for i in 0..rows {
        let qs: Vec<Vec<f64>> = tensors
            .iter()
            .map(|t| {
                let e = t.row(i);
                let s: f64 = e.iter().map(|x| x + 1.0).sum();
                let keep = 1.0 - e.len() as f64 / s;
                e.iter().map(|x| (x + 1.0) / s * keep).collect()
            })
            .collect();
        for a in 0..v {
            for b in (a + 1)..v {
                total += crate::subjective_logic::js_divergence(&qs[a], &qs[b]);
            }
        }
    }
    total / (rows * v * (v - 1) / 2) as f64
}

/// Trains one phase in place and reports per-epoch losses.
pub fn train_phase(
    ds: &MultiViewDataset,
    params: &mut ModelParams,
    phase: Phase,
    cfg: &TrainConfig,
) -> Result<PhaseReport> {
    cfg.validate()?;
    ds.validate()?;
    if params.config.view_dims != ds.dims() || params.config.classes != ds.classes {
        return Err(Error::contract("model and dataset shapes differ"));
    }
    let start = Instant::now();
    params.freeze_only(phase.frozen_groups());
    let mut optimizer = Adam::new(cfg.learning_rate(phase), params.tensor_sizes());
    let phase_seed = labelled_seed(cfg.seed, phase.name());
    let means = match phase {
        Phase::Mimp => Some(ds.observed_view_means()),
        _ => None,
    };
    let n = ds.len();
    let (df, dz, nviews) = (
        params.config.feature_dim,
        params.config.latent_dim,
        ds.view_count(),
    );
    let mut epochs = Vec::new();
    for epoch in 0..cfg.epochs(phase) {
        let lambda = annealing_weight(cfg.epoch_offset(phase) + epoch, cfg.annealing_horizon);
        let mut rng = rng_from_seed(child_seed(phase_seed, epoch as u64));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sums = LossBundle::default();
        let mut js = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = ds.subset(rows);
            let train_mask = augmentation_mask(&batch.mask, cfg.mask_augmentation, &mut rng);
            let mut views = batch.views;
            let noise = match phase {
                Phase::UmaeF => {
                    gaussian_noise(rand::Rng::random(&mut rng), rows.len(), nviews * df)
                }
                Phase::UmaeV | Phase::UmaeJ => {
                    gaussian_noise(rand::Rng::random(&mut rng), rows.len(), dz)
                }
                Phase::Zimp | Phase::Mimp => {
                    fill_raw(&mut views, &train_mask, means.as_deref());
                    Tensor::zeros(rows.len(), 0)
                }
            };
            let inputs = BatchInputs {
                views,
                labels: one_hot(&batch.labels, ds.classes),
                source_mask: batch.mask,
                train_mask,
                noise,
            };
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let loss = phase_loss(&mut g, &bound, phase, &inputs, lambda, cfg);
            let grads = g.backward(loss.total)?;
            params.apply_gradients(&bound, &grads, &mut optimizer);

            let w = rows.len() as f64 / n as f64;
            let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
            let bundle = LossBundle {
                ace: value(Some(loss.ace)),
                kl: value(Some(loss.kl)),
                acc: value(Some(loss.acc)),
                con: value(loss.con),
                elbo: value(loss.elbo),
                total: value(Some(loss.total)),
            };
            sums.add_assign(&bundle.scaled(w));
            js += w * mean_pairwise_js(&g, &loss.evidence);
        }
        if !sums.total.is_finite() {
            return Err(Error::domain(format!(
                "{phase} loss became non-finite at epoch {epoch}"
            )));
        }
        epochs.push(EpochRecord {
            epoch,
            lambda,
            losses: sums,
            mean_pairwise_js: js,
        });
    }
    Ok(PhaseReport {
        phase,
        epochs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// UMAE-F from a fresh initialisation.
pub fn train_umae_f(
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PhaseReport)> {
    let mut params = ModelParams::init(cfg.network(ds), labelled_seed(cfg.seed, "init"))?;
    let report = train_phase(ds, &mut params, Phase::UmaeF, cfg)?;
    Ok((params, report))
}

pub fn train_umae_v(
    ds: &MultiViewDataset,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PhaseReport)> {
    let mut params = params.clone();
    let report = train_phase(ds, &mut params, Phase::UmaeV, cfg)?;
    Ok((params, report))
}

pub fn train_umae_j(
    ds: &MultiViewDataset,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PhaseReport)> {
    let mut params = params.clone();
    let report = train_phase(ds, &mut params, Phase::UmaeJ, cfg)?;
    Ok((params, report))
}

/// A baseline (ZIMP or MIMP) from a fresh initialisation.
pub fn train_baseline(
    ds: &MultiViewDataset,
    phase: Phase,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PhaseReport)> {
    if !matches!(phase, Phase::Zimp | Phase::Mimp) {
        return Err(Error::contract(format!("{phase} is not a baseline")));
    }
    let mut params = ModelParams::init(cfg.network(ds), labelled_seed(cfg.seed, "init"))?;
    let report = train_phase(ds, &mut params, phase, cfg)?;
    Ok((params, report))
}

fn check_inputs(
    views: &[Tensor],
    mask: &Tensor,
    params: &ModelParams,
    row_seeds: &[u64],
) -> Result<()> {
    let cfg = &params.config;
    if views.len() != cfg.views() {
        return Err(Error::contract(format!(
            "got {} views, model has {}",
            views.len(),
            cfg.views()
        )));
    }
    let rows = row_seeds.len();
    for (v, x) in views.iter().enumerate() {
        if x.rows() != rows || x.cols() != cfg.view_dims[v] {
            return Err(Error::contract(format!(
                "view {v} is {}x{}, expected {rows}x{}",
                x.rows(),
                x.cols(),
                cfg.view_dims[v]
            )));
        }
    }
    if mask.rows() != rows || mask.cols() != cfg.views() {
        return Err(Error::contract("mask shape does not match the inputs"));
    }
    for i in 0..rows {
        let row = mask.row(i);
        if row.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::contract("mask entries must be 0 or 1"));
        }
        if row.iter().all(|&m| m == 0.0) {
            return Err(Error::contract(format!(
                "sample {i} has no observed view; at least one is required"
            )));
        }
    }
    Ok(())
}

/// Per-view evidence for imputation sample `sample` (rows × K each).
///
/// Complete rows ignore `sample`; row `i` of an incomplete sample draws its
/// noise from `row_seeds[i]` alone.
pub fn sample_view_evidence(
    views: &[Tensor],
    mask: &Tensor,
    params: &ModelParams,
    inference: &InferenceConfig,
    row_seeds: &[u64],
    sample: usize,
) -> Result<Vec<Tensor>> {
    check_inputs(views, mask, params, row_seeds)?;
    let mut g = Graph::new();
    let model = params.bind_constant(&mut g);
    Ok(
        sample_evidence_in(&mut g, &model, views, mask, inference, row_seeds, sample)
            .into_iter()
            .map(|e| g.value(e).clone())
            .collect(),
    )
}

fn sample_evidence_in(
    g: &mut Graph,
    model: &BoundModel,
    views: &[Tensor],
    mask: &Tensor,
    inference: &InferenceConfig,
    row_seeds: &[u64],
    sample: usize,
) -> Vec<Var> {
    let nviews = model.config.views();
    let df = model.config.feature_dim;
    let mut raw = views.to_vec();
    match &inference.imputation {
        Imputation::RawZero => fill_raw(&mut raw, mask, None),
        Imputation::RawMean(means) => fill_raw(&mut raw, mask, Some(means)),
        _ => {}
    }
    let z: Vec<Var> = raw
        .into_iter()
        .enumerate()
        .map(|(v, x)| {
            let x = g.constant(x);
            model.extract(g, v, x)
        })
        .collect();
    let filled: Vec<Var> = match inference.imputation {
        Imputation::RawZero | Imputation::RawMean(_) => z,
        Imputation::FeatureNoise => {
            let noise = imputation_noise(row_seeds, sample, nviews * df);
            (0..nviews)
                .map(|v| {
                    let n = g.constant(noise.select_cols(v * df, df));
                    reconstruct_var(g, z[v], n, mask, v)
                })
                .collect()
        }
        Imputation::Vae => {
            let z_tilde = mask_and_concat_vars(g, &z, mask);
            let latent = model.encode(g, z_tilde);
            let eps = imputation_noise(row_seeds, sample, model.config.latent_dim);
            let s = model.reparameterize(g, latent, &eps);
            let decoded = model.decode(g, s);
            let z_hat = model.split_views(g, decoded);
            (0..nviews)
                .map(|v| reconstruct_var(g, z[v], z_hat[v], mask, v))
                .collect()
        }
    };
    filled
        .iter()
        .enumerate()
        .map(|(v, &zv)| model.evidence(g, v, zv))
        .collect()
}

/// Per-view evidence averaged over imputation samples. Complete rows are
/// evaluated once without imputation.
pub fn view_evidence(
    views: &[Tensor],
    mask: &Tensor,
    params: &ModelParams,
    inference: &InferenceConfig,
    row_seeds: &[u64],
) -> Result<Vec<Tensor>> {
    check_inputs(views, mask, params, row_seeds)?;
    if inference.imputation_samples == 0 {
        return Err(Error::contract(
            "at least one imputation sample is required",
        ));
    }
    let rows = row_seeds.len();
    let incomplete: Vec<usize> = (0..rows).filter(|&i| mask.row(i).contains(&0.0)).collect();
    let mut g = Graph::new();
    let model = params.bind_constant(&mut g);
    let direct = sample_evidence_in(
        &mut g,
        &model,
        views,
        &Tensor::filled(rows, views.len(), 1.0),
        inference,
        row_seeds,
        0,
    );
    let mut out: Vec<Tensor> = direct.iter().map(|&e| g.value(e).clone()).collect();
    let stochastic = matches!(
        inference.imputation,
        Imputation::Vae | Imputation::FeatureNoise
    );
    if incomplete.is_empty() {
        return Ok(out);
    }
    let sub_views: Vec<Tensor> = views.iter().map(|x| x.select_rows(&incomplete)).collect();
    let sub_mask = mask.select_rows(&incomplete);
    let sub_seeds: Vec<u64> = incomplete.iter().map(|&i| row_seeds[i]).collect();
    let samples = if stochastic {
        inference.imputation_samples
    } else {
        1
    };
    let mut sums: Vec<Tensor> = Vec::new();
    for s in 0..samples {
        let mut g = Graph::new();
        let model = params.bind_constant(&mut g);
        let e = sample_evidence_in(
            &mut g, &model, &sub_views, &sub_mask, inference, &sub_seeds, s,
        );
        for (v, &ev) in e.iter().enumerate() {
            let value = g.value(ev);
            if s == 0 {
                sums.push(value.clone());
            } else {
                sums[v] = sums[v].zip_map(value, |a, b| a + b);
            }
        }
    }
    for (v, sum) in sums.into_iter().enumerate() {
        let mean = sum.map(|x| x / samples as f64);
        for (j, &i) in incomplete.iter().enumerate() {
            out[v].row_mut(i).copy_from_slice(mean.row(j));
        }
    }
    Ok(out)
}

fn fused_evidence(view_evidence: &[Vec<f64>], mode: FusionMode) -> Vec<f64> {
    let k = view_evidence[0].len();
    match mode {
        FusionMode::Balanced => {
            let mut sum = vec![0.0; k];
            for e in view_evidence {
                sum.iter_mut().zip(e).for_each(|(s, x)| *s += x);
            }
            sum.into_iter()
                .map(|s| s / view_evidence.len() as f64)
                .collect()
        }
        FusionMode::Sequential => {
            let mut acc = view_evidence[0].clone();
            for e in &view_evidence[1..] {
                acc.iter_mut().zip(e).for_each(|(a, x)| *a = 0.5 * (*a + x));
            }
            acc
        }
    }
}

fn view_opinions(view_evidence: &[Vec<f64>]) -> Result<Vec<Opinion>> {
    view_evidence
        .iter()
        .map(|e| opinion_from_evidence(&EvidenceVector::new(e.clone())?, None))
        .collect()
}

fn prediction_from_evidence(view_evidence: Vec<Vec<f64>>, mode: FusionMode) -> Result<Prediction> {
    let opinions = view_opinions(&view_evidence)?;
    let opinion = fuse_views(&opinions, mode)?;
    let probabilities = project_probability(&opinion);
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::domain(format!(
            "projected probabilities sum to {total}"
        )));
    }
    let class = argmax(&probabilities);
    Ok(Prediction {
        uncertainty: opinion.uncertainty,
        fused_evidence: fused_evidence(&view_evidence, mode),
        opinion,
        probabilities,
        class,
        view_evidence,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = k;
        }
    }
    best
}

/// Predictions for a batch whose row `i` is seeded with `row_seeds[i]`.
pub fn predict_batch(
    views: &[Tensor],
    mask: &Tensor,
    params: &ModelParams,
    inference: &InferenceConfig,
    row_seeds: &[u64],
) -> Result<Vec<Prediction>> {
    let evidence = view_evidence(views, mask, params, inference, row_seeds)?;
    (0..row_seeds.len())
        .map(|i| {
            let per_view = evidence.iter().map(|e| e.row(i).to_vec()).collect();
            prediction_from_evidence(per_view, inference.fusion)
        })
        .collect()
}

/// Predicts one sample; `x[v]` is the raw vector of view `v` and `mask[v]`
/// marks it observed. The row seed is `inference.seed`.
pub fn predict(
    x: &[Vec<f64>],
    mask: &[bool],
    params: &ModelParams,
    inference: &InferenceConfig,
) -> Result<Prediction> {
    if x.len() != mask.len() {
        return Err(Error::contract("one mask flag per view is required"));
    }
    let views: Vec<Tensor> = x.iter().map(|v| Tensor::row_vector(v.clone())).collect();
    let mask = Tensor::row_vector(mask.iter().map(|&m| f64::from(u8::from(m))).collect());
    let mut out = predict_batch(&views, &mask, params, inference, &[inference.seed])?;
    Ok(out.remove(0))
}

/// Row seed used by [`evaluate`] for a sample with original index `row_id`.
pub fn evaluation_row_seed(inference: &InferenceConfig, row_id: usize) -> u64 {
    child_seed(inference.seed, row_id as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    pub mean_uncertainty: f64,
    pub median_uncertainty: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean over samples of the V×V conflict-degree matrix.
    pub mean_conflict: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub row_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub uncertainty: f64,
    pub fused_evidence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub samples: Vec<SampleRecord>,
}

pub fn evaluate(
    ds: &MultiViewDataset,
    params: &ModelParams,
    inference: &InferenceConfig,
) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let seeds: Vec<u64> = ds
        .row_ids
        .iter()
        .map(|&r| evaluation_row_seed(inference, r))
        .collect();
    let predictions = predict_batch(&ds.views, &ds.mask, params, inference, &seeds)?;
    let v = ds.view_count();
    let mut conflict = vec![vec![0.0; v]; v];
    let mut class_hits = vec![(0usize, 0usize); ds.classes];
    let mut hits = 0;
    let mut samples = Vec::with_capacity(ds.len());
    for (i, p) in predictions.iter().enumerate() {
        let y = ds.labels[i];
        class_hits[y].1 += 1;
        if p.class == y {
            hits += 1;
            class_hits[y].0 += 1;
        }
        if v > 1 {
            let c = conflict_matrix(&view_opinions(&p.view_evidence)?)?;
            for (a, row) in conflict.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    *cell += c.get(a, b);
                }
            }
        } else {
            conflict[0][0] += 1.0;
        }
        samples.push(SampleRecord {
            row_id: ds.row_ids[i],
            label: y,
            predicted: p.class,
            uncertainty: p.uncertainty,
            fused_evidence: p.fused_evidence.clone(),
        });
    }
    let n = ds.len() as f64;
    conflict.iter_mut().flatten().for_each(|c| *c /= n);
    let mut us: Vec<f64> = predictions.iter().map(|p| p.uncertainty).collect();
    let mean_uncertainty = us.iter().sum::<f64>() / n;
    us.sort_by(f64::total_cmp);
    let mid = us.len() / 2;
    let median_uncertainty = if us.len() % 2 == 1 {
        us[mid]
    } else {
        0.5 * (us[mid - 1] + us[mid])
    };
    Ok(Evaluation {
        metrics: Metrics {
            samples: ds.len(),
            accuracy: hits as f64 / n,
            mean_uncertainty,
            median_uncertainty,
            per_class_accuracy: class_hits
                .iter()
                .map(|&(h, t)| (t > 0).then(|| h as f64 / t as f64))
                .collect(),
            mean_conflict: conflict,
        },
        samples,
    })
}

/// Train/test data after corruption, plus the conflict provenance log.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: MultiViewDataset,
    pub test: MultiViewDataset,
    pub provenance: Vec<ConflictRecord>,
}

/// Injects conflict into the whole dataset, splits it by class and then
/// masks each split to the target missing rate with its own seed.
pub fn prepare_experiment(
    ds: &MultiViewDataset,
    corruption: &CorruptionSpec,
    test_fraction: f64,
) -> Result<PreparedData> {
    corruption.validate(ds.view_count())?;
    if corruption.eta > 0.0 && ds.missing_rate() > 0.0 {
        return Err(Error::domain(
            "dataset already has missing views; a target missing rate applies to complete data only",
        ));
    }
    let seed = corruption.seed;
    let (corrupted, provenance) = if corruption.conflict_fraction > 0.0 {
        inject_conflict(
            ds,
            corruption.conflict_fraction,
            labelled_seed(seed, "conflict"),
        )?
    } else {
        (ds.clone(), Vec::new())
    };
    let (mut train, mut test) = split(&corrupted, test_fraction, labelled_seed(seed, "split"))?;
    if corruption.eta > 0.0 {
        let v = ds.view_count();
        train.mask = generate_missing_mask(
            train.len(),
            v,
            corruption.eta,
            labelled_seed(seed, "train-mask"),
        )?;
        test.mask = generate_missing_mask(
            test.len(),
            v,
            corruption.eta,
            labelled_seed(seed, "test-mask"),
        )?;
    }
    Ok(PreparedData {
        train,
        test,
        provenance,
    })
}

/// A trained phase together with its snapshot and test evaluation.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub report: PhaseReport,
    pub params: ModelParams,
    pub evaluation: Evaluation,
}

/// Runs UMAE-F, UMAE-V and UMAE-J in order, evaluating after each.
pub fn run_apln(
    train: &MultiViewDataset,
    test: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<Vec<PhaseOutcome>> {
    let mut outcomes: Vec<PhaseOutcome> = Vec::with_capacity(3);
    let mut params: Option<ModelParams> = None;
    for phase in [Phase::UmaeF, Phase::UmaeV, Phase::UmaeJ] {
        let (next, report) = match &params {
            None => train_umae_f(train, cfg)?,
            Some(p) if phase == Phase::UmaeV => train_umae_v(train, p, cfg)?,
            Some(p) => train_umae_j(train, p, cfg)?,
        };
        let evaluation = evaluate(test, &next, &cfg.inference(phase, train))?;
        params = Some(next.clone());
        outcomes.push(PhaseOutcome {
            report,
            params: next,
            evaluation,
        });
    }
    Ok(outcomes)
}

pub fn run_baseline(
    train: &MultiViewDataset,
    test: &MultiViewDataset,
    phase: Phase,
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    let (params, report) = train_baseline(train, phase, cfg)?;
    let evaluation = evaluate(test, &params, &cfg.inference(phase, train))?;
    Ok(PhaseOutcome {
        report,
        params,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_missing_mask, split, synthesize_dataset};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs_f: 2,
            epochs_v: 2,
            epochs_j: 2,
            batch_size: 16,
            feature_dim: 6,
            latent_dim: 3,
            vae_hidden: 8,
            imputation_samples: 3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> (MultiViewDataset, MultiViewDataset) {
        let ds = synthesize_dataset(120, 3, 3, 4, 3.0, 1).unwrap();
        let (train, test) = split(&ds, 0.25, 2).unwrap();
        let train = train
            .with_mask(generate_missing_mask(train.len(), 3, 0.3, 3).unwrap())
            .unwrap();
        let test = test
            .with_mask(generate_missing_mask(test.len(), 3, 0.3, 4).unwrap())
            .unwrap();
        (train, test)
    }

    #[test]
    fn zero_epochs_leave_parameters_alone() {
        let (train, _) = tiny_data();
        let cfg = TrainConfig {
            epochs_f: 0,
            ..tiny_config()
        };
        let (params, report) = train_umae_f(&train, &cfg).unwrap();
        let fresh =
            ModelParams::init(cfg.network(&train), labelled_seed(cfg.seed, "init")).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(params.tensors(), fresh.tensors());
    }

    #[test]
    fn phases_respect_frozen_groups() {
        let (train, _) = tiny_data();
        let cfg = tiny_config();
        let (f, report) = train_umae_f(&train, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 2);
        let init = ModelParams::init(cfg.network(&train), labelled_seed(cfg.seed, "init")).unwrap();
        assert_eq!(
            f.group_values(ParamGroup::Vae),
            init.group_values(ParamGroup::Vae)
        );
        assert_ne!(
            f.group_values(ParamGroup::Features),
            init.group_values(ParamGroup::Features)
        );

        let (v, report) = train_umae_v(&train, &f, &cfg).unwrap();
        assert_eq!(
            v.group_values(ParamGroup::Features),
            f.group_values(ParamGroup::Features)
        );
        assert_ne!(
            v.group_values(ParamGroup::Vae),
            f.group_values(ParamGroup::Vae)
        );
        for e in &report.epochs {
            let l = e.losses;
            assert!((l.total - (l.acc + l.con + l.elbo)).abs() <= 1e-9);
            assert!(l.con > 0.0 && l.elbo > 0.0);
        }

        let (j, _) = train_umae_j(&train, &v, &cfg).unwrap();
        for g in ParamGroup::ALL {
            assert_ne!(j.group_values(g), v.group_values(g));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train, test) = tiny_data();
        let a = run_apln(&train, &test, &tiny_config()).unwrap();
        let b = run_apln(&train, &test, &tiny_config()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.params, y.params);
            assert_eq!(x.evaluation, y.evaluation);
            assert_eq!(x.report.epochs, y.report.epochs);
        }
    }

    #[test]
    fn complete_sample_ignores_imputation_count() {
        let (train, test) = tiny_data();
        let (params, _) = train_umae_f(&train, &tiny_config()).unwrap();
        let x: Vec<Vec<f64>> = test.views.iter().map(|v| v.row(0).to_vec()).collect();
        let one = InferenceConfig::vae(1, FusionMode::Balanced, 3);
        let five = InferenceConfig::vae(5, FusionMode::Balanced, 3);
        assert_eq!(
            predict(&x, &[true; 3], &params, &one).unwrap(),
            predict(&x, &[true; 3], &params, &five).unwrap()
        );
    }

    #[test]
    fn multi_imputation_is_the_mean_of_single_samples() {
        let (train, test) = tiny_data();
        let (params, _) = train_umae_f(&train, &tiny_config()).unwrap();
        let x: Vec<Vec<f64>> = test.views.iter().map(|v| v.row(1).to_vec()).collect();
        let mask = [true, false, true];
        let five = InferenceConfig::vae(5, FusionMode::Balanced, 9);
        let p5 = predict(&x, &mask, &params, &five).unwrap();
        let views: Vec<Tensor> = x.iter().map(|v| Tensor::row_vector(v.clone())).collect();
        let m = Tensor::row_vector(vec![1.0, 0.0, 1.0]);
        for v in 0..3 {
            let mean: Vec<f64> = (0..3)
                .map(|k| {
                    (0..5)
                        .map(|s| {
                            sample_view_evidence(&views, &m, &params, &five, &[9], s).unwrap()[v]
                                .get(0, k)
                        })
                        .sum::<f64>()
                        / 5.0
                })
                .collect();
            for (a, b) in p5.view_evidence[v].iter().zip(&mean) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let p1 = predict(
            &x,
            &mask,
            &params,
            &InferenceConfig::vae(1, FusionMode::Balanced, 9),
        )
        .unwrap();
        let s0 = sample_view_evidence(&views, &m, &params, &five, &[9], 0).unwrap();
        assert_eq!(p1.view_evidence[1], s0[1].values());
        assert!(p1.opinion.validate().is_ok() && p5.opinion.validate().is_ok());
    }

    #[test]
    fn prediction_contract() {
        let (train, test) = tiny_data();
        let (params, _) = train_umae_f(&train, &tiny_config()).unwrap();
        let x: Vec<Vec<f64>> = test.views.iter().map(|v| v.row(2).to_vec()).collect();
        let cfg = InferenceConfig::vae(2, FusionMode::Sequential, 1);
        let p = predict(&x, &[false, true, false], &params, &cfg).unwrap();
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(p.class < 3);
        assert_eq!(
            p,
            predict(&x, &[false, true, false], &params, &cfg).unwrap()
        );
        assert!(matches!(
            predict(&x, &[false; 3], &params, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn evaluate_matches_single_predictions() {
        let (train, test) = tiny_data();
        let cfg = tiny_config();
        let (params, _) = train_umae_f(&train, &cfg).unwrap();
        let inference = InferenceConfig::vae(2, FusionMode::Balanced, 4);
        let eval = evaluate(&test, &params, &inference).unwrap();
        assert_eq!(eval.samples.len(), test.len());
        for i in [0, 7] {
            let x: Vec<Vec<f64>> = test.views.iter().map(|v| v.row(i).to_vec()).collect();
            let mask: Vec<bool> = test.mask.row(i).iter().map(|&m| m == 1.0).collect();
            let single = InferenceConfig {
                seed: evaluation_row_seed(&inference, test.row_ids[i]),
                ..inference.clone()
            };
            let p = predict(&x, &mask, &params, &single).unwrap();
            assert!((p.uncertainty - eval.samples[i].uncertainty).abs() <= 1e-12);
            assert_eq!(p.class, eval.samples[i].predicted);
        }
        assert_eq!(eval, evaluate(&test, &params, &inference).unwrap());
        assert!(evaluate(&test.subset(&[]), &params, &inference).is_err());
    }

    #[test]
    fn baselines_train_and_evaluate() {
        let (train, test) = tiny_data();
        let cfg = TrainConfig {
            epochs_baseline: Some(2),
            ..tiny_config()
        };
        for phase in [Phase::Zimp, Phase::Mimp] {
            let out = run_baseline(&train, &test, phase, &cfg).unwrap();
            assert_eq!(out.report.epochs.len(), 2);
            assert!((0.0..=1.0).contains(&out.evaluation.metrics.accuracy));
        }
        assert!(train_baseline(&train, Phase::UmaeJ, &cfg).is_err());
    }
}
