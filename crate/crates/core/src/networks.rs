//! Per-view feature extractors, evidence heads and the masking VAE.
//!
//! Parameters live in [`ModelParams`] as plain tensors tagged with their
//! group. To run a forward pass they are bound into a [`Graph`]: groups that
//! are frozen become constants, the rest become trainable leaves.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, Tensor, Var};
use crate::rng::{child_seed, rng_from_seed};

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 5.0;

/// The three disjoint parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Feature extractors f_c^v.
    #[serde(rename = "theta_c")]
    Features,
    /// Evidence heads f_e^v.
    #[serde(rename = "theta_e")]
    Evidence,
    /// Imputation VAE.
    #[serde(rename = "theta_v")]
    Vae,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Features, ParamGroup::Evidence, ParamGroup::Vae];

    fn index(self) -> usize {
        match self {
            ParamGroup::Features => 0,
            ParamGroup::Evidence => 1,
            ParamGroup::Vae => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ParamGroup::Features => "theta_c",
            ParamGroup::Evidence => "theta_e",
            ParamGroup::Vae => "theta_v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Raw input dimension of each view.
    pub view_dims: Vec<usize>,
    pub classes: usize,
    /// Shared feature dimension d_f.
    pub feature_dim: usize,
    /// VAE latent dimension d_z.
    pub latent_dim: usize,
    /// Hidden width of the VAE encoder and decoder.
    pub vae_hidden: usize,
    /// Affine + leaky-rectifier layers per feature extractor.
    pub extractor_depth: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            view_dims: Vec::new(),
            classes: 2,
            feature_dim: 128,
            latent_dim: 64,
            vae_hidden: 256,
            extractor_depth: 1,
            leaky_slope: 0.01,
        }
    }
}

impl NetworkConfig {
    pub fn views(&self) -> usize {
        self.view_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() || self.view_dims.contains(&0) {
            return Err(Error::contract(
                "every view needs a positive input dimension",
            ));
        }
        if self.classes < 2 {
            return Err(Error::contract("at least two classes are required"));
        }
        if self.feature_dim == 0 || self.latent_dim == 0 || self.vae_hidden == 0 {
            return Err(Error::contract("network widths must be positive"));
        }
        if self.extractor_depth == 0 {
            return Err(Error::contract("extractor depth must be at least 1"));
        }
        Ok(())
    }

    /// Width of the VAE input: masked features followed by the mask.
    pub fn vae_input_dim(&self) -> usize {
        self.views() * self.feature_dim + self.views()
    }
}

/// Affine map `x W + b` with `W` stored input-major (in × out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialisation, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl rand::Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let values = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::from_rows(inputs, outputs, values),
            bias: Tensor::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetworkConfig,
    /// `extractors[v]` is the layer stack of f_c^v.
    pub extractors: Vec<Vec<Linear>>,
    /// `heads[v]` is f_e^v.
    pub heads: Vec<Linear>,
    pub encoder: Vec<Linear>,
    pub decoder: Vec<Linear>,
    frozen: [bool; 3],
}

/// Named reference to one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
}

impl ModelParams {
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let (df, dz, hidden) = (config.feature_dim, config.latent_dim, config.vae_hidden);
        let extractors = config
            .view_dims
            .iter()
            .map(|&dv| {
                (0..config.extractor_depth)
                    .map(|layer| Linear::init(if layer == 0 { dv } else { df }, df, &mut rng))
                    .collect()
            })
            .collect();
        let heads = (0..config.views())
            .map(|_| Linear::init(df, config.classes, &mut rng))
            .collect();
        let encoder = vec![
            Linear::init(config.vae_input_dim(), hidden, &mut rng),
            Linear::init(hidden, 2 * dz, &mut rng),
        ];
        let decoder = vec![
            Linear::init(dz, hidden, &mut rng),
            Linear::init(hidden, config.views() * df, &mut rng),
        ];
        Ok(Self {
            config,
            extractors,
            heads,
            encoder,
            decoder,
            frozen: [false; 3],
        })
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        self.frozen[group.index()] = frozen;
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen[group.index()]
    }

    /// Freezes exactly the listed groups.
    pub fn freeze_only(&mut self, groups: &[ParamGroup]) {
        for g in ParamGroup::ALL {
            self.set_frozen(g, groups.contains(&g));
        }
    }

    /// Every parameter tensor in canonical order.
    pub fn tensors(&self) -> Vec<(ParamInfo, &Tensor)> {
        fn push<'a>(
            out: &mut Vec<(ParamInfo, &'a Tensor)>,
            name: String,
            group: ParamGroup,
            t: &'a Linear,
        ) {
            out.push((
                ParamInfo {
                    name: format!("{name}.weight"),
                    group,
                },
                &t.weight,
            ));
            out.push((
                ParamInfo {
                    name: format!("{name}.bias"),
                    group,
                },
                &t.bias,
            ));
        }
        let mut out = Vec::new();
        for (v, stack) in self.extractors.iter().enumerate() {
            for (l, layer) in stack.iter().enumerate() {
                push(
                    &mut out,
                    format!("extractor.{v}.{l}"),
                    ParamGroup::Features,
                    layer,
                );
            }
        }
        for (v, head) in self.heads.iter().enumerate() {
            push(&mut out, format!("head.{v}"), ParamGroup::Evidence, head);
        }
        for (l, layer) in self.encoder.iter().enumerate() {
            push(&mut out, format!("encoder.{l}"), ParamGroup::Vae, layer);
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            push(&mut out, format!("decoder.{l}"), ParamGroup::Vae, layer);
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Tensor)> {
        let mut out = Vec::new();
        for stack in &mut self.extractors {
            for layer in stack {
                out.push((ParamGroup::Features, &mut layer.weight));
                out.push((ParamGroup::Features, &mut layer.bias));
            }
        }
        for head in &mut self.heads {
            out.push((ParamGroup::Evidence, &mut head.weight));
            out.push((ParamGroup::Evidence, &mut head.bias));
        }
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push((ParamGroup::Vae, &mut layer.weight));
            out.push((ParamGroup::Vae, &mut layer.bias));
        }
        out
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .filter(|(info, _)| info.group == group)
            .flat_map(|(_, t)| t.values().to_vec())
            .collect()
    }

    /// Binds every parameter into `g`; frozen groups enter as constants.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        self.bind_inner(g, false)
    }

    /// Binds every parameter as a constant, for inference.
    pub fn bind_constant(&self, g: &mut Graph) -> BoundModel {
        self.bind_inner(g, true)
    }

    fn bind_inner(&self, g: &mut Graph, all_constant: bool) -> BoundModel {
        let bind_linear = |layer: &Linear, group: ParamGroup, g: &mut Graph| {
            let frozen = all_constant || self.is_frozen(group);
            let mk = |t: &Tensor, g: &mut Graph| {
                if frozen {
                    g.constant(t.clone())
                } else {
                    g.param(t.clone())
                }
            };
            BoundLinear {
                weight: mk(&layer.weight, g),
                bias: mk(&layer.bias, g),
            }
        };
        let extractors = self
            .extractors
            .iter()
            .map(|stack| {
                stack
                    .iter()
                    .map(|l| bind_linear(l, ParamGroup::Features, g))
                    .collect()
            })
            .collect();
        let heads = self
            .heads
            .iter()
            .map(|l| bind_linear(l, ParamGroup::Evidence, g))
            .collect();
        let encoder = self
            .encoder
            .iter()
            .map(|l| bind_linear(l, ParamGroup::Vae, g))
            .collect();
        let decoder = self
            .decoder
            .iter()
            .map(|l| bind_linear(l, ParamGroup::Vae, g))
            .collect();
        BoundModel {
            config: self.config.clone(),
            extractors,
            heads,
            encoder,
            decoder,
        }
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config_hash: config_hash.to_string(),
            network: self.config.clone(),
            frozen: ParamGroup::ALL
                .iter()
                .filter(|g| self.is_frozen(**g))
                .copied()
                .collect(),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(info, t)| CheckpointTensor {
                    name: info.name,
                    group: info.group,
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::contract(format!(
                "unsupported checkpoint format `{}`",
                ckpt.format
            )));
        }
        let mut params = ModelParams::init(ckpt.network.clone(), 0)?;
        let expected: Vec<ParamInfo> = params.tensors().into_iter().map(|(i, _)| i).collect();
        if expected.len() != ckpt.tensors.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} tensors, network needs {}",
                ckpt.tensors.len(),
                expected.len()
            )));
        }
        for ((info, (group, slot)), stored) in
            expected.iter().zip(params.tensors_mut()).zip(&ckpt.tensors)
        {
            if stored.name != info.name || stored.group != group {
                return Err(Error::contract(format!(
                    "checkpoint tensor `{}` does not match expected `{}`",
                    stored.name, info.name
                )));
            }
            let t = Tensor::new(stored.shape.clone(), stored.values.clone())?;
            if t.shape() != slot.shape() {
                return Err(Error::contract(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    stored.name,
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        for g in &ckpt.frozen {
            params.set_frozen(*g, true);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint(config_hash))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }

    /// Applies one optimiser step to every non-frozen tensor.
    pub fn apply_gradients(
        &mut self,
        bound: &BoundModel,
        grads: &Gradients,
        optimizer: &mut crate::optim::Adam,
    ) {
        let frozen = self.frozen;
        let vars = bound.vars();
        let mut slots = self.tensors_mut();
        let updates: Vec<Option<&Tensor>> = slots
            .iter()
            .zip(&vars)
            .map(|((group, _), var)| {
                if frozen[group.index()] {
                    None
                } else {
                    grads.get(*var)
                }
            })
            .collect();
        let mut tensors: Vec<&mut Tensor> = slots.iter_mut().map(|(_, t)| &mut **t).collect();
        optimizer.step(&mut tensors, &updates);
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|(_, t)| t.len()).collect()
    }
}

pub const CHECKPOINT_FORMAT: &str = "apln-checkpoint/1";

/// On-disk model: shapes, group tags and flattened values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub network: NetworkConfig,
    pub frozen: Vec<ParamGroup>,
    pub tensors: Vec<CheckpointTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Hex SHA-256 of a serialisable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = g.matmul(x, self.weight);
        g.add_row(h, self.bias)
    }
}

/// Graph handles for a [`ModelParams`], same layout.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub config: NetworkConfig,
    pub extractors: Vec<Vec<BoundLinear>>,
    pub heads: Vec<BoundLinear>,
    pub encoder: Vec<BoundLinear>,
    pub decoder: Vec<BoundLinear>,
}

/// Latent Gaussian produced by the encoder.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub log_var: Var,
}

impl BoundModel {
    /// Variables in the order of [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let layers = self
            .extractors
            .iter()
            .flatten()
            .chain(&self.heads)
            .chain(&self.encoder)
            .chain(&self.decoder);
        for l in layers {
            out.push(l.weight);
            out.push(l.bias);
        }
        out
    }

    /// z^v = f_c^v(x^v).
    pub fn extract(&self, g: &mut Graph, view: usize, x: Var) -> Var {
        let mut h = x;
        for layer in &self.extractors[view] {
            h = layer.forward(g, h);
            h = g.leaky_relu(h, self.config.leaky_slope);
        }
        h
    }

    /// e^v = softplus(f_e^v(z_rc^v)).
    pub fn evidence(&self, g: &mut Graph, view: usize, z_rc: Var) -> Var {
        let logits = self.heads[view].forward(g, z_rc);
        g.softplus(logits)
    }

    pub fn encode(&self, g: &mut Graph, z_tilde: Var) -> LatentVars {
        let h = self.encoder[0].forward(g, z_tilde);
        let h = g.leaky_relu(h, self.config.leaky_slope);
        let out = self.encoder[1].forward(g, h);
        let dz = self.config.latent_dim;
        let mu = g.slice_cols(out, 0, dz);
        let log_var = g.slice_cols(out, dz, dz);
        let log_var = g.clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX);
        LatentVars { mu, log_var }
    }

    /// μ + σ ⊙ ε with `eps` supplied by the caller.
    pub fn reparameterize(&self, g: &mut Graph, latent: LatentVars, eps: &Tensor) -> Var {
        let half = g.scale(latent.log_var, 0.5);
        let sigma = g.exp(half);
        let e = g.constant(eps.clone());
        let noise = g.mul(sigma, e);
        g.add(latent.mu, noise)
    }

    /// Decodes a latent batch into V concatenated feature blocks.
    pub fn decode(&self, g: &mut Graph, latent: Var) -> Var {
        let h = self.decoder[0].forward(g, latent);
        let h = g.leaky_relu(h, self.config.leaky_slope);
        self.decoder[1].forward(g, h)
    }

    /// Splits a V·d_f wide batch into per-view blocks.
    pub fn split_views(&self, g: &mut Graph, joined: Var) -> Vec<Var> {
        let df = self.config.feature_dim;
        (0..self.config.views())
            .map(|v| g.slice_cols(joined, v * df, df))
            .collect()
    }
}

/// Graph form of the VAE input: `[m^1 z^1, …, m^V z^V, m^1, …, m^V]`.
pub fn mask_and_concat_vars(g: &mut Graph, z: &[Var], mask: &Tensor) -> Var {
    let mut parts = Vec::with_capacity(z.len() + 1);
    for (v, &zv) in z.iter().enumerate() {
        let col = mask_column(mask, v);
        let col = g.constant(col);
        parts.push(g.mul_col(zv, col));
    }
    parts.push(g.constant(mask.clone()));
    g.concat_cols(&parts)
}

/// Graph form of `z_rc = m z + (1 - m) ẑ` for one view.
pub fn reconstruct_var(g: &mut Graph, z: Var, z_hat: Var, mask: &Tensor, view: usize) -> Var {
    let keep = g.constant(mask_column(mask, view));
    let fill = g.constant(mask_column(mask, view).map(|m| 1.0 - m));
    let observed = g.mul_col(z, keep);
    let imputed = g.mul_col(z_hat, fill);
    g.add(observed, imputed)
}

pub fn mask_column(mask: &Tensor, view: usize) -> Tensor {
    let values = (0..mask.rows()).map(|i| mask.get(i, view)).collect();
    Tensor::from_rows(mask.rows(), 1, values)
}

/// Standard-normal noise of shape rows×cols from a seed.
pub fn gaussian_noise(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_rows(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
}

/// Latent noise for imputation sample `sample` of a batch whose rows carry
/// their own seeds. Row `i` depends only on `(row_seeds[i], sample)`.
pub fn imputation_noise(row_seeds: &[u64], sample: usize, latent_dim: usize) -> Tensor {
    let mut values = Vec::with_capacity(row_seeds.len() * latent_dim);
    for &seed in row_seeds {
        let t = gaussian_noise(child_seed(seed, sample as u64), 1, latent_dim);
        values.extend_from_slice(t.values());
    }
    Tensor::from_rows(row_seeds.len(), latent_dim, values)
}

fn check_views(params: &ModelParams, n: usize, what: &str) -> Result<()> {
    if n != params.config.views() {
        return Err(Error::contract(format!(
            "{what}: got {n} views, model has {}",
            params.config.views()
        )));
    }
    Ok(())
}

fn check_mask(mask: &Tensor, rows: usize, views: usize) -> Result<()> {
    if mask.rows() != rows || mask.cols() != views {
        return Err(Error::contract(format!(
            "mask is {}x{}, expected {rows}x{views}",
            mask.rows(),
            mask.cols()
        )));
    }
    if mask.values().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::contract("mask entries must be 0 or 1"));
    }
    Ok(())
}

/// Runs every f_c^v on its view batch (rows are samples).
pub fn extract_features(x: &[Tensor], params: &ModelParams) -> Result<Vec<Tensor>> {
    check_views(params, x.len(), "extract_features")?;
    let rows = x.first().map_or(0, Tensor::rows);
    for (v, xv) in x.iter().enumerate() {
        if xv.cols() != params.config.view_dims[v] || xv.rows() != rows {
            return Err(Error::contract(format!(
                "view {v} input is {}x{}, expected {rows}x{}",
                xv.rows(),
                xv.cols(),
                params.config.view_dims[v]
            )));
        }
    }
    let mut g = Graph::new();
    let bound = params.bind_constant(&mut g);
    Ok(x.iter()
        .enumerate()
        .map(|(v, xv)| {
            let input = g.constant(xv.clone());
            let z = bound.extract(&mut g, v, input);
            g.value(z).clone()
        })
        .collect())
}

/// `z̃ = [m^1 z^1, …, m^V z^V, m^1, …, m^V]`, one row per sample.
pub fn mask_and_concat(z: &[Tensor], mask: &Tensor) -> Result<Tensor> {
    let rows = z.first().map_or(0, Tensor::rows);
    check_mask(mask, rows, z.len())?;
    if z.iter().any(|zv| zv.rows() != rows) {
        return Err(Error::contract("feature blocks differ in row count"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = z.iter().map(|t| g.constant(t.clone())).collect();
    let out = mask_and_concat_vars(&mut g, &vars, mask);
    Ok(g.value(out).clone())
}

/// Draws `n_samples` full per-view reconstructions from the VAE.
///
/// Returns `samples[s][v]`, each rows×d_f. Sample `s` of row `i` uses the
/// noise stream `(child_seed(seed, i), s)`.
pub fn vae_impute(
    z_tilde: &Tensor,
    n_samples: usize,
    seed: u64,
    params: &ModelParams,
) -> Result<Vec<Vec<Tensor>>> {
    if n_samples == 0 {
        return Err(Error::contract(
            "at least one imputation sample is required",
        ));
    }
    if z_tilde.cols() != params.config.vae_input_dim() {
        return Err(Error::contract(format!(
            "VAE input has width {}, expected {}",
            z_tilde.cols(),
            params.config.vae_input_dim()
        )));
    }
    let row_seeds: Vec<u64> = (0..z_tilde.rows())
        .map(|i| child_seed(seed, i as u64))
        .collect();
    let mut g = Graph::new();
    let bound = params.bind_constant(&mut g);
    let input = g.constant(z_tilde.clone());
    let latent = bound.encode(&mut g, input);
    Ok((0..n_samples)
        .map(|s| {
            let eps = imputation_noise(&row_seeds, s, params.config.latent_dim);
            let sample = bound.reparameterize(&mut g, latent, &eps);
            let decoded = bound.decode(&mut g, sample);
            bound
                .split_views(&mut g, decoded)
                .into_iter()
                .map(|v| g.value(v).clone())
                .collect()
        })
        .collect())
}

/// `z_rc^v = m^v z^v + (1 - m^v) ẑ^v`.
pub fn reconstruct_features(z: &[Tensor], z_hat: &[Tensor], mask: &Tensor) -> Result<Vec<Tensor>> {
    if z.len() != z_hat.len() {
        return Err(Error::contract("observed and imputed view counts differ"));
    }
    let rows = z.first().map_or(0, Tensor::rows);
    check_mask(mask, rows, z.len())?;
    z.iter()
        .zip(z_hat)
        .enumerate()
        .map(|(v, (zv, hv))| {
            if !zv.same_shape(hv) {
                return Err(Error::contract(format!("view {v} shapes differ")));
            }
            let mut out = zv.clone();
            for i in 0..rows {
                if mask.get(i, v) == 0.0 {
                    out.row_mut(i).copy_from_slice(hv.row(i));
                }
            }
            Ok(out)
        })
        .collect()
}

/// Per-view evidence `softplus(f_e^v(z_rc^v))`.
pub fn evidence_head(z_rc: &[Tensor], params: &ModelParams) -> Result<Vec<Tensor>> {
    check_views(params, z_rc.len(), "evidence_head")?;
    if z_rc.iter().any(|z| z.cols() != params.config.feature_dim) {
        return Err(Error::contract("evidence head input must have width d_f"));
    }
    let mut g = Graph::new();
    let bound = params.bind_constant(&mut g);
    Ok(z_rc
        .iter()
        .enumerate()
        .map(|(v, z)| {
            let input = g.constant(z.clone());
            let e = bound.evidence(&mut g, v, input);
            g.value(e).clone()
        })
        .collect())
}
