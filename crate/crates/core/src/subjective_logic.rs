//! Multinomial opinions and their algebra.
//!
//! An opinion over K classes is a belief vector `b`, an uncertainty mass `u`
//! and base rates `a` with `Σb + u = 1`. Opinions and Dirichlet evidence are
//! in bijection through `b_k = e_k / S`, `u = K / S`, `S = Σ(e_k + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Tolerance for the additivity and base-rate normalisation checks.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    pub base_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceVector {
    evidence: Vec<f64>,
}

/// Uncertainty-discounted projection `q_k = P_k (1 - u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedDistribution {
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Mean of all view evidences; permutation invariant.
    #[default]
    Balanced,
    /// Left fold of [`fuse_pair`] in view order.
    Sequential,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(FusionMode::Balanced),
            "sequential" => Ok(FusionMode::Sequential),
            other => Err(Error::contract(format!("unknown fusion mode `{other}`"))),
        }
    }
}

pub fn uniform_base_rate(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>) -> Result<Self> {
        if let Some(bad) = evidence.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::domain(format!(
                "evidence must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(Self { evidence })
    }

    pub fn values(&self) -> &[f64] {
        &self.evidence
    }

    pub fn classes(&self) -> usize {
        self.evidence.len()
    }

    /// Dirichlet parameters α = e + 1.
    pub fn alpha(&self) -> Vec<f64> {
        self.evidence.iter().map(|e| e + 1.0).collect()
    }

    /// Dirichlet strength S = Σ α_k.
    pub fn strength(&self) -> f64 {
        self.evidence.iter().map(|e| e + 1.0).sum()
    }

    /// Arithmetic mean of several evidence vectors of equal length.
    pub fn mean(items: &[EvidenceVector]) -> Result<EvidenceVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("mean of zero evidence vectors"))?;
        let k = first.classes();
        let mut acc = vec![0.0; k];
        for item in items {
            if item.classes() != k {
                return Err(Error::contract("evidence vectors differ in class count"));
            }
            for (a, e) in acc.iter_mut().zip(&item.evidence) {
                *a += e;
            }
        }
        let n = items.len() as f64;
        EvidenceVector::new(acc.into_iter().map(|a| a / n).collect())
    }
}

impl Opinion {
    pub fn new(belief: Vec<f64>, uncertainty: f64, base_rate: Vec<f64>) -> Result<Self> {
        let opinion = Self {
            belief,
            uncertainty,
            base_rate,
        };
        opinion.validate()?;
        Ok(opinion)
    }

    /// The opinion with no belief and full uncertainty.
    pub fn vacuous(k: usize) -> Self {
        Self {
            belief: vec![0.0; k],
            uncertainty: 1.0,
            base_rate: uniform_base_rate(k),
        }
    }

    pub fn classes(&self) -> usize {
        self.belief.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.belief.len();
        if k == 0 {
            return Err(Error::contract("opinion over zero classes"));
        }
        if self.base_rate.len() != k {
            return Err(Error::contract(format!(
                "belief has {k} classes but base rate has {}",
                self.base_rate.len()
            )));
        }
        let finite = self
            .belief
            .iter()
            .chain(&self.base_rate)
            .all(|v| v.is_finite())
            && self.uncertainty.is_finite();
        if !finite {
            return Err(Error::domain("opinion has non-finite entries"));
        }
        if self.belief.iter().any(|&b| b < 0.0) || self.uncertainty < 0.0 {
            return Err(Error::domain("belief and uncertainty must be nonnegative"));
        }
        if self.base_rate.iter().any(|&a| a < 0.0) {
            return Err(Error::domain("base rates must be nonnegative"));
        }
        let residual = self.additivity_residual();
        if residual > MASS_TOLERANCE {
            return Err(Error::domain(format!(
                "belief plus uncertainty must sum to 1 (residual {residual:e})"
            )));
        }
        let base_sum: f64 = self.base_rate.iter().sum();
        if (base_sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::domain(format!(
                "base rates sum to {base_sum}, not 1"
            )));
        }
        Ok(())
    }

    /// |Σ b_k + u - 1|.
    pub fn additivity_residual(&self) -> f64 {
        (self.belief.iter().sum::<f64>() + self.uncertainty - 1.0).abs()
    }
}

fn check_base_rate(a: &[f64], k: usize) -> Result<()> {
    if a.len() != k {
        return Err(Error::contract(format!(
            "base rate has {} entries for {k} classes",
            a.len()
        )));
    }
    let sum: f64 = a.iter().sum();
    if a.iter().any(|&v| v.is_nan() || v < 0.0) || (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::domain("base rate must be a probability vector"));
    }
    Ok(())
}

/// Maps evidence to its opinion: `b_k = e_k / S`, `u = K / S`.
///
/// `base_rate` defaults to uniform.
pub fn opinion_from_evidence(e: &EvidenceVector, base_rate: Option<&[f64]>) -> Result<Opinion> {
    let k = e.classes();
    if k < 2 {
        return Err(Error::contract("opinions need at least two classes"));
    }
    let base_rate = match base_rate {
        Some(a) => {
            check_base_rate(a, k)?;
            a.to_vec()
        }
        None => uniform_base_rate(k),
    };
    let s = e.strength();
    Ok(Opinion {
        belief: e.values().iter().map(|v| v / s).collect(),
        uncertainty: k as f64 / s,
        base_rate,
    })
}

/// Inverse of [`opinion_from_evidence`]: `S = K / u`, `e_k = b_k S`.
pub fn evidence_from_opinion(w: &Opinion) -> Result<EvidenceVector> {
    if w.uncertainty <= 0.0 {
        return Err(Error::Singularity(
            "an opinion with zero uncertainty corresponds to infinite evidence".into(),
        ));
    }
    let s = w.classes() as f64 / w.uncertainty;
    EvidenceVector::new(w.belief.iter().map(|b| b * s).collect())
}

/// `P_k = b_k + a_k u`.
pub fn project_probability(w: &Opinion) -> Vec<f64> {
    w.belief
        .iter()
        .zip(&w.base_rate)
        .map(|(b, a)| b + a * w.uncertainty)
        .collect()
}

pub fn discounted(w: &Opinion) -> DiscountedDistribution {
    let keep = 1.0 - w.uncertainty;
    DiscountedDistribution {
        q: project_probability(w)
            .into_iter()
            .map(|p| p * keep)
            .collect(),
    }
}

fn same_classes(a: &Opinion, b: &Opinion) -> Result<()> {
    if a.classes() != b.classes() || a.base_rate.len() != b.base_rate.len() {
        return Err(Error::contract(format!(
            "opinions over {} and {} classes cannot be combined",
            a.classes(),
            b.classes()
        )));
    }
    Ok(())
}

/// Conflictive aggregation of two opinions.
///
/// Equivalent to averaging the underlying evidences; the fused uncertainty
/// is the harmonic mean of the inputs' uncertainties.
pub fn fuse_pair(wa: &Opinion, wb: &Opinion) -> Result<Opinion> {
    same_classes(wa, wb)?;
    let (ua, ub) = (wa.uncertainty, wb.uncertainty);
    let denom = ua + ub;
    if denom <= 0.0 {
        return Err(Error::Singularity(
            "both opinions have zero uncertainty".into(),
        ));
    }
    // Written with the weights u_B/(u_A+u_B) and u_A/(u_A+u_B) so that
    // equal uncertainties give weights of exactly one half.
    let (weight_a, weight_b) = (ub / denom, ua / denom);
    let belief = wa
        .belief
        .iter()
        .zip(&wb.belief)
        .map(|(ba, bb)| ba * weight_a + bb * weight_b)
        .collect();
    let base_rate = wa
        .base_rate
        .iter()
        .zip(&wb.base_rate)
        .map(|(aa, ab)| aa / 2.0 + ab / 2.0)
        .collect();
    Ok(Opinion {
        belief,
        uncertainty: ua * (2.0 * weight_a),
        base_rate,
    })
}

/// Fuses the per-view opinions of one instance into a joint opinion.
pub fn fuse_views(ws: &[Opinion], mode: FusionMode) -> Result<Opinion> {
    let first = ws
        .first()
        .ok_or_else(|| Error::contract("cannot fuse an empty list of opinions"))?;
    for w in ws {
        same_classes(first, w)?;
        if w.uncertainty <= 0.0 {
            return Err(Error::Singularity(
                "view fusion requires every opinion to have u > 0".into(),
            ));
        }
    }
    if ws.len() == 1 {
        return Ok(first.clone());
    }
    match mode {
        FusionMode::Sequential => {
            let mut acc = first.clone();
            for w in &ws[1..] {
                acc = fuse_pair(&acc, w)?;
            }
            Ok(acc)
        }
        FusionMode::Balanced => {
            let evidences = ws
                .iter()
                .map(evidence_from_opinion)
                .collect::<Result<Vec<_>>>()?;
            let mean = EvidenceVector::mean(&evidences)?;
            let k = first.classes();
            let mut base_rate = vec![0.0; k];
            for w in ws {
                for (acc, a) in base_rate.iter_mut().zip(&w.base_rate) {
                    *acc += a;
                }
            }
            let v = ws.len() as f64;
            base_rate.iter_mut().for_each(|a| *a /= v);
            let s = mean.strength();
            Ok(Opinion {
                belief: mean.values().iter().map(|e| e / s).collect(),
                uncertainty: k as f64 / s,
                base_rate,
            })
        }
    }
}

/// Σ_k x_k log2(x_k / m_k) with 0·log 0 = 0.
fn kl_base2(x: &[f64], m: &[f64]) -> f64 {
    x.iter()
        .zip(m)
        .filter(|(xk, _)| **xk > 0.0)
        .map(|(xk, mk)| xk * (xk / mk).log2())
        .sum()
}

/// Jensen–Shannon divergence (base 2) between two discounted distributions.
pub fn js_divergence(qa: &[f64], qb: &[f64]) -> f64 {
    let m: Vec<f64> = qa.iter().zip(qb).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl_base2(qa, &m) + 0.5 * kl_base2(qb, &m)
}

/// Agreement between two opinions: `1 - D_JS(q^A ‖ q^B)` in `[0, 1]`.
///
/// A value of 1 means the discounted distributions coincide (no conflict).
pub fn conflict_degree(wa: &Opinion, wb: &Opinion) -> Result<f64> {
    same_classes(wa, wb)?;
    let qa = discounted(wa);
    let qb = discounted(wb);
    Ok((1.0 - js_divergence(&qa.q, &qb.q)).clamp(0.0, 1.0))
}

/// Symmetric V×V matrix of pairwise [`conflict_degree`] values, unit diagonal.
pub fn conflict_matrix(ws: &[Opinion]) -> Result<Tensor> {
    if ws.len() < 2 {
        return Err(Error::contract(
            "conflict matrix needs at least two opinions",
        ));
    }
    let v = ws.len();
    let mut m = Tensor::filled(v, v, 1.0);
    for a in 0..v {
        for b in (a + 1)..v {
            let c = conflict_degree(&ws[a], &ws[b])?;
            m.values_mut()[a * v + b] = c;
            m.values_mut()[b * v + a] = c;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EvidenceVector {
        EvidenceVector::new(v.to_vec()).unwrap()
    }

    fn op(v: &[f64]) -> Opinion {
        opinion_from_evidence(&ev(v), None).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn vacuous_from_zero_evidence() {
        let w = op(&[0.0, 0.0, 0.0]);
        assert_eq!(w.belief, vec![0.0; 3]);
        assert_eq!(w.uncertainty, 1.0);
    }

    #[test]
    fn hand_evaluated_opinion() {
        let w = op(&[4.0, 0.0, 0.0]);
        assert!(close(&w.belief, &[4.0 / 7.0, 0.0, 0.0], 1e-15));
        assert!((w.uncertainty - 3.0 / 7.0).abs() < 1e-15);
        let back = evidence_from_opinion(&w).unwrap();
        assert!(close(back.values(), &[4.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn negative_evidence_rejected() {
        assert!(matches!(
            EvidenceVector::new(vec![1.0, -0.5]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_uncertainty_is_a_singularity() {
        let w = Opinion::new(vec![1.0, 0.0], 0.0, vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            evidence_from_opinion(&w),
            Err(Error::Singularity(_))
        ));
        assert!(matches!(fuse_pair(&w, &w), Err(Error::Singularity(_))));
        assert!(matches!(
            fuse_views(&[w.clone(), w], FusionMode::Balanced),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn vacuous_evidence_round_trip() {
        let w = Opinion::vacuous(3);
        assert_eq!(evidence_from_opinion(&w).unwrap().values(), &[0.0; 3]);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_probability(&Opinion::vacuous(4)), vec![0.25; 4]);
        let w = Opinion::new(vec![0.6, 0.2], 0.2, vec![0.5, 0.5]).unwrap();
        assert!(close(&project_probability(&w), &[0.7, 0.3], 1e-15));
        let certain = Opinion::new(vec![0.3, 0.7], 0.0, vec![0.5, 0.5]).unwrap();
        assert_eq!(project_probability(&certain), certain.belief);
    }

    #[test]
    fn fuse_pair_examples() {
        let w = op(&[3.0, 1.0, 0.5]);
        assert_eq!(fuse_pair(&w, &w).unwrap(), w);
        let fused = fuse_pair(&op(&[2.0, 0.0]), &op(&[0.0, 2.0])).unwrap();
        let expected = op(&[1.0, 1.0]);
        assert!(close(&fused.belief, &expected.belief, 1e-15));
        assert!((fused.uncertainty - expected.uncertainty).abs() < 1e-15);
    }

    #[test]
    fn mixed_class_counts_rejected() {
        let a = op(&[1.0, 2.0]);
        let b = op(&[1.0, 2.0, 3.0]);
        assert!(matches!(fuse_pair(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(
            fuse_views(&[a.clone(), b.clone()], FusionMode::Balanced),
            Err(Error::Contract(_))
        ));
        assert!(matches!(conflict_degree(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(
            fuse_views(&[], FusionMode::Balanced),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn three_view_worked_example() {
        let ws = [op(&[4.0, 0.0]), op(&[0.0, 4.0]), op(&[0.0, 4.0])];
        let balanced =
            evidence_from_opinion(&fuse_views(&ws, FusionMode::Balanced).unwrap()).unwrap();
        assert!(close(balanced.values(), &[4.0 / 3.0, 8.0 / 3.0], 1e-12));
        let sequential =
            evidence_from_opinion(&fuse_views(&ws, FusionMode::Sequential).unwrap()).unwrap();
        assert!(close(sequential.values(), &[1.0, 3.0], 1e-12));
    }

    #[test]
    fn single_view_fusion_is_identity() {
        let w = op(&[1.0, 5.0, 2.0]);
        assert_eq!(fuse_views(std::slice::from_ref(&w), FusionMode::Balanced).unwrap(), w);
        assert_eq!(fuse_views(std::slice::from_ref(&w), FusionMode::Sequential).unwrap(), w);
    }

    #[test]
    fn conflict_examples() {
        let w = op(&[2.0, 7.0, 1.0]);
        assert_eq!(conflict_degree(&w, &w).unwrap(), 1.0);
        let u = 1e-9;
        let a = Opinion::new(vec![1.0 - u, 0.0], u, vec![0.5, 0.5]).unwrap();
        let b = Opinion::new(vec![0.0, 1.0 - u], u, vec![0.5, 0.5]).unwrap();
        let c = conflict_degree(&a, &b).unwrap();
        assert!(c < 1e-6, "opposed near-certain opinions gave c = {c}");
        let v = Opinion::vacuous(3);
        assert_eq!(conflict_degree(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn conflict_matrix_examples() {
        let w = op(&[1.0, 2.0]);
        let m = conflict_matrix(&[w.clone(), w.clone(), w]).unwrap();
        assert_eq!(m.values(), &[1.0; 9]);

        let ws = [
            op(&[5.0, 0.1, 0.3]),
            op(&[0.2, 3.0, 1.0]),
            op(&[1.0, 1.0, 9.0]),
        ];
        let m = conflict_matrix(&ws).unwrap();
        assert_eq!(m, m.transpose());
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b {
                    1.0
                } else {
                    conflict_degree(&ws[a], &ws[b]).unwrap()
                };
                assert_eq!(m.get(a, b), expected);
            }
        }
        assert!(conflict_matrix(&ws[..1]).is_err());
    }

    #[test]
    fn fusion_mode_parses() {
        assert_eq!(
            "balanced".parse::<FusionMode>().unwrap(),
            FusionMode::Balanced
        );
        assert_eq!(
            "sequential".parse::<FusionMode>().unwrap(),
            FusionMode::Sequential
        );
        assert!("yager".parse::<FusionMode>().is_err());
        assert_eq!(
            serde_json::to_string(&FusionMode::Sequential).unwrap(),
            "\"sequential\""
        );
    }

    fn evidence_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..50.0, k)
    }

    proptest! {
        #[test]
        fn fuse_pair_is_harmonic_in_uncertainty(ea in evidence_strategy(4), eb in evidence_strategy(4)) {
            let (a, b) = (op(&ea), op(&eb));
            let f = fuse_pair(&a, &b).unwrap();
            let lo = a.uncertainty.min(b.uncertainty);
            let hi = a.uncertainty.max(b.uncertainty);
            prop_assert!(f.uncertainty >= lo - 1e-15 && f.uncertainty <= hi + 1e-15);
            prop_assert!(f.additivity_residual() <= 1e-9);
        }

        #[test]
        fn balanced_fusion_is_permutation_invariant(
            es in proptest::collection::vec(evidence_strategy(3), 2..6),
            shift in 0usize..5,
        ) {
            let ws: Vec<Opinion> = es.iter().map(|e| op(e)).collect();
            let mut rotated = ws.clone();
            rotated.rotate_left(shift % ws.len());
            rotated.reverse();
            let a = fuse_views(&ws, FusionMode::Balanced).unwrap();
            let b = fuse_views(&rotated, FusionMode::Balanced).unwrap();
            prop_assert!(close(&a.belief, &b.belief, 1e-12));
            prop_assert!((a.uncertainty - b.uncertainty).abs() <= 1e-12);
        }

        #[test]
        fn sequential_fusion_halves_the_last_view(es in proptest::collection::vec(evidence_strategy(3), 2..6)) {
            // The fold gives the last view weight 1/2, the one before 1/4, ...
            // and the first two views share the smallest weight.
            let ws: Vec<Opinion> = es.iter().map(|e| op(e)).collect();
            let fused = evidence_from_opinion(&fuse_views(&ws, FusionMode::Sequential).unwrap()).unwrap();
            let v = es.len();
            let mut expected = vec![0.0; 3];
            for (i, e) in es.iter().enumerate() {
                let weight = if i == 0 { 0.5f64.powi(v as i32 - 1) } else { 0.5f64.powi((v - i) as i32) };
                for (x, y) in expected.iter_mut().zip(e) {
                    *x += weight * y;
                }
            }
            prop_assert!(close(fused.values(), &expected, 1e-9));
        }

        #[test]
        fn conflict_is_zero_divergence_only_for_equal_q(ea in evidence_strategy(3), eb in evidence_strategy(3)) {
            let (a, b) = (op(&ea), op(&eb));
            let c = conflict_degree(&a, &b).unwrap();
            let (qa, qb) = (discounted(&a).q, discounted(&b).q);
            if qa == qb {
                prop_assert_eq!(c, 1.0);
            } else {
                prop_assert!(js_divergence(&qa, &qb) >= 0.0);
            }
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
