//! Training objectives.
//!
//! Each objective has a graph builder that works on a batch (rows are
//! samples, the result is the batch mean) and a value-level wrapper for a
//! single sample that runs the same builder on a one-row graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lgamma_unchecked, Graph, Tensor, Var};
use crate::subjective_logic::{discounted, js_divergence, Opinion};

/// Dirichlet parameters of one sample, `α = e + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::contract("Dirichlet needs at least two classes"));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a >= 1.0)) {
            return Err(Error::domain(format!(
                "Dirichlet parameter {bad} is below 1"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        Self::new(evidence.iter().map(|e| e + 1.0).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// Per-component loss values, batch averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub ace: f64,
    pub kl: f64,
    pub acc: f64,
    pub con: f64,
    pub elbo: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn add_assign(&mut self, other: &LossBundle) {
        self.ace += other.ace;
        self.kl += other.kl;
        self.acc += other.acc;
        self.con += other.con;
        self.elbo += other.elbo;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> LossBundle {
        LossBundle {
            ace: self.ace * factor,
            kl: self.kl * factor,
            acc: self.acc * factor,
            con: self.con * factor,
            elbo: self.elbo * factor,
            total: self.total * factor,
        }
    }
}

/// Linear warm-up of the KL weight, `min(1, epoch / horizon)`.
pub fn annealing_weight(epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        1.0
    } else {
        (epoch as f64 / horizon as f64).min(1.0)
    }
}

pub fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        t.row_mut(i)[y] = 1.0;
    }
    t
}

fn check_one_hot(y: &[f64], k: usize) -> Result<()> {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if y.len() != k || ones != 1 || zeros != k - 1 {
        return Err(Error::contract(format!(
            "label {y:?} is not one-hot over {k} classes"
        )));
    }
    Ok(())
}

/// Batch mean of `Σ_j y_j (ψ(S) - ψ(α_j))`.
pub fn ace(g: &mut Graph, alpha: Var, y: Var) -> Var {
    let k = g.value(alpha).cols();
    let s = g.sum_rows(alpha);
    let psi_s = g.digamma(s);
    let psi_s = g.broadcast_col(psi_s, k);
    let psi_a = g.digamma(alpha);
    let diff = g.sub(psi_s, psi_a);
    let picked = g.mul(y, diff);
    let per_row = g.sum_rows(picked);
    g.mean_all(per_row)
}

/// `α̂ = y + (1 - y) ⊙ α`: the true-class parameter is reset to 1.
pub fn strip_true_class(g: &mut Graph, alpha: Var, y: Var) -> Var {
    let not_y = g.value(y).map(|v| 1.0 - v);
    let not_y = g.constant(not_y);
    let wrong = g.mul(not_y, alpha);
    g.add(y, wrong)
}

/// Batch mean of `KL[Dir(α̂) ‖ Dir(1)]`.
pub fn kl_uniform(g: &mut Graph, alpha: Var, y: Var) -> Var {
    let k = g.value(alpha).cols();
    let a_hat = strip_true_class(g, alpha, y);
    let s_hat = g.sum_rows(a_hat);
    let ln_gamma_s = g.lgamma(s_hat);
    let ln_gamma_a = g.lgamma(a_hat);
    let ln_gamma_a = g.sum_rows(ln_gamma_a);
    let psi_a = g.digamma(a_hat);
    let psi_s = g.digamma(s_hat);
    let psi_s = g.broadcast_col(psi_s, k);
    let psi_diff = g.sub(psi_a, psi_s);
    let a_minus_one = g.add_scalar(a_hat, -1.0);
    let weighted = g.mul(a_minus_one, psi_diff);
    let weighted = g.sum_rows(weighted);
    let norm = g.sub(ln_gamma_s, ln_gamma_a);
    let norm = g.add_scalar(norm, -lgamma_unchecked(k as f64));
    let per_row = g.add(norm, weighted);
    g.mean_all(per_row)
}

/// `ace + λ_t · kl`; also returns the two parts.
pub fn acc(g: &mut Graph, alpha: Var, y: Var, lambda_t: f64) -> (Var, Var, Var) {
    let a = ace(g, alpha, y);
    let k = kl_uniform(g, alpha, y);
    let scaled = g.scale(k, lambda_t);
    (g.add(a, scaled), a, k)
}

/// Per-row discounted distributions `q = P (1 - u)` from evidence under
/// uniform base rates, where `P = α / S` and `u = K / S`.
pub fn discounted_from_evidence(g: &mut Graph, evidence: Var) -> Var {
    let k = g.value(evidence).cols();
    let alpha = g.add_scalar(evidence, 1.0);
    let s = g.sum_rows(alpha);
    let p = g.div_col(alpha, s);
    let one = g_const_like(g, s, 1.0);
    let inv_s = g.div(one, s);
    let u = g.scale(inv_s, k as f64);
    let keep = g.scale(u, -1.0);
    let keep = g.add_scalar(keep, 1.0);
    g.mul_col(p, keep)
}

fn g_const_like(g: &mut Graph, like: Var, value: f64) -> Var {
    let v = g.value(like);
    let t = Tensor::filled(v.rows(), v.cols(), value);
    g.constant(t)
}

/// Per-row `D_JS(q_a ‖ q_b)` in bits, as an m×1 column.
pub fn js_rows(g: &mut Graph, qa: Var, qb: Var) -> Var {
    let sum = g.add(qa, qb);
    let m = g.scale(sum, 0.5);
    let ln_m = g.ln(m);
    let ln_a = g.ln(qa);
    let ln_b = g.ln(qb);
    let da = g.sub(ln_a, ln_m);
    let db = g.sub(ln_b, ln_m);
    let ta = g.mul(qa, da);
    let tb = g.mul(qb, db);
    let t = g.add(ta, tb);
    let rows = g.sum_rows(t);
    g.scale(rows, 0.5 / std::f64::consts::LN_2)
}

/// Conflict-consistency loss over per-view evidences (each m×K):
/// batch mean of `(1 / (V - 1)) Σ_A Σ_{B≠A} D_JS(q^A ‖ q^B)`.
pub fn conflict(g: &mut Graph, evidences: &[Var]) -> Var {
    let v = evidences.len();
    assert!(v >= 2, "conflict loss needs at least two views");
    let qs: Vec<Var> = evidences
        .iter()
        .map(|&e| discounted_from_evidence(g, e))
        .collect();
    let mut total: Option<Var> = None;
    for a in 0..v {
        for b in (a + 1)..v {
            let d = js_rows(g, qs[a], qs[b]);
            total = Some(match total {
                Some(t) => g.add(t, d),
                None => d,
            });
        }
    }
    // Each unordered pair appears twice in the ordered double sum.
    let total = g.scale(total.expect("at least one pair"), 2.0 / (v - 1) as f64);
    g.mean_all(total)
}

/// Both parts of the negative ELBO, batch averaged.
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub reconstruction: Var,
    pub kl: Var,
    pub total: Var,
}

/// Negative ELBO with a unit-variance Gaussian decoder:
/// `½ Σ w ⊙ (target - recon)² + ½ Σ (μ² + σ² - 1 - log σ²)`.
///
/// `weight` selects which reconstruction entries count; pass all ones to
/// use every entry.
pub fn elbo(
    g: &mut Graph,
    mu: Var,
    log_var: Var,
    recon: Var,
    target: Var,
    weight: Var,
) -> ElboVars {
    let diff = g.sub(target, recon);
    let sq = g.square(diff);
    let sq = g.mul(sq, weight);
    let rec_rows = g.sum_rows(sq);
    let rec = g.mean_all(rec_rows);
    let reconstruction = g.scale(rec, 0.5);

    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let t = g.add(mu2, var);
    let t = g.sub(t, log_var);
    let t = g.add_scalar(t, -1.0);
    let kl_rows = g.sum_rows(t);
    let kl = g.mean_all(kl_rows);
    let kl = g.scale(kl, 0.5);

    let total = g.add(reconstruction, kl);
    ElboVars {
        reconstruction,
        kl,
        total,
    }
}

fn single_row(values: &[f64]) -> Tensor {
    Tensor::row_vector(values.to_vec())
}

/// `Σ_j y_j (ψ(S) - ψ(α_j))` for one sample.
pub fn loss_ace(alpha: &DirichletParams, y: &[f64]) -> Result<f64> {
    check_one_hot(y, alpha.alpha.len())?;
    let mut g = Graph::new();
    let a = g.constant(single_row(&alpha.alpha));
    let yv = g.constant(single_row(y));
    let l = ace(&mut g, a, yv);
    Ok(g.value(l).item())
}

/// `KL[Dir(α̂) ‖ Dir(1)]` for one sample.
pub fn loss_kl(alpha: &DirichletParams, y: &[f64]) -> Result<f64> {
    check_one_hot(y, alpha.alpha.len())?;
    let mut g = Graph::new();
    let a = g.constant(single_row(&alpha.alpha));
    let yv = g.constant(single_row(y));
    let l = kl_uniform(&mut g, a, yv);
    Ok(g.value(l).item())
}

pub fn loss_acc(alpha: &DirichletParams, y: &[f64], lambda_t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda_t) {
        return Err(Error::contract(format!("λ_t = {lambda_t} outside [0, 1]")));
    }
    Ok(loss_ace(alpha, y)? + lambda_t * loss_kl(alpha, y)?)
}

fn check_views(ws: &[Opinion]) -> Result<()> {
    if ws.len() < 2 {
        return Err(Error::contract("conflict loss needs at least two views"));
    }
    let k = ws[0].classes();
    if ws.iter().any(|w| w.classes() != k) {
        return Err(Error::contract("opinions differ in class count"));
    }
    Ok(())
}

/// Average pairwise disagreement `(1/(V-1)) Σ_A Σ_{B≠A} D_JS(q^A ‖ q^B)`.
pub fn loss_conflict(ws: &[Opinion]) -> Result<f64> {
    check_views(ws)?;
    let qs: Vec<Vec<f64>> = ws.iter().map(|w| discounted(w).q).collect();
    let v = ws.len();
    let mut total = 0.0;
    for a in 0..v {
        for b in 0..v {
            if a != b {
                total += js_divergence(&qs[a], &qs[b]);
            }
        }
    }
    Ok(total / (v - 1) as f64)
}

/// The printed form `(1/(V-1)) Σ_A Σ_{B≠A} c(ω^A, ω^B)`, kept for inspection.
/// Its minimisation would reward disagreement, so training uses
/// [`loss_conflict`] instead.
pub fn conflict_agreement_sum(ws: &[Opinion]) -> Result<f64> {
    check_views(ws)?;
    let v = ws.len();
    let mut total = 0.0;
    for a in 0..v {
        for b in 0..v {
            if a != b {
                total += crate::subjective_logic::conflict_degree(&ws[a], &ws[b])?;
            }
        }
    }
    Ok(total / (v - 1) as f64)
}

/// Values of both negative-ELBO parts for one latent Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboValue {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn loss_elbo(mu: &[f64], log_var: &[f64], target: &[f64], recon: &[f64]) -> Result<ElboValue> {
    if mu.len() != log_var.len() {
        return Err(Error::contract(format!(
            "latent mean has {} entries but log-variance has {}",
            mu.len(),
            log_var.len()
        )));
    }
    if target.len() != recon.len() {
        return Err(Error::contract(format!(
            "target has {} entries but reconstruction has {}",
            target.len(),
            recon.len()
        )));
    }
    let mut g = Graph::new();
    let m = g.constant(single_row(mu));
    let lv = g.constant(single_row(log_var));
    let r = g.constant(single_row(recon));
    let t = g.constant(single_row(target));
    let w = g.constant(Tensor::filled(1, target.len(), 1.0));
    let e = elbo(&mut g, m, lv, r, t, w);
    Ok(ElboValue {
        reconstruction: g.value(e.reconstruction).item(),
        kl: g.value(e.kl).item(),
        total: g.value(e.total).item(),
    })
}
