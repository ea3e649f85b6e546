//! Model selection over covariate subsets: the variable-selection prior,
//! posteriors by exhaustive enumeration or Metropolis–Hastings, Bayes
//! factors, selection probabilities and an anti-concentration estimator.

use std::collections::HashMap;
use std::fmt;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{self, GpConfig, GpError, MarginalWorkspace, RegressionData};
use crate::numerics::special::{gamma_p, gamma_quantile, log_sum_exp};
use crate::numerics::{derive_seed, rng_from_seed, SeededRng};

/// Default cap on the number of subsets enumerated.
pub const ENUMERATION_BUDGET: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model index: {0}")]
    InvalidIndex(String),
    #[error("{count} admissible subsets exceed the enumeration budget {budget}; use the MCMC sampler")]
    BudgetExceeded { count: usize, budget: usize },
    #[error("model {0} is not admissible")]
    Inadmissible(ModelIndex),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("evidence failed for model {model}: {message}")]
    Evidence { model: ModelIndex, message: String },
}

/// A subset of covariates, stored sorted and 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelIndex(Vec<usize>);

impl ModelIndex {
    pub fn new(indices: &[usize]) -> Result<Self, ModelError> {
        let mut v = indices.to_vec();
        v.sort_unstable();
        if v.first() == Some(&0) {
            return Err(ModelError::InvalidIndex("covariate indices start at 1".into()));
        }
        if v.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidIndex(format!("duplicate covariate in {indices:?}")));
        }
        Ok(Self(v))
    }

    pub fn empty() -> Self {
        Self(vec![])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Zero-based column positions.
    pub fn columns(&self) -> Vec<usize> {
        self.0.iter().map(|i| i - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_superset_of(&self, other: &ModelIndex) -> bool {
        other.0.iter().all(|i| self.contains(*i))
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        Self(v)
    }

    pub fn without(&self, i: usize) -> Self {
        Self(self.0.iter().copied().filter(|&k| k != i).collect())
    }

    pub fn max_index(&self) -> usize {
        self.0.last().copied().unwrap_or(0)
    }
}

impl TryFrom<Vec<usize>> for ModelIndex {
    type Error = ModelError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        ModelIndex::new(&v)
    }
}

impl From<ModelIndex> for Vec<usize> {
    fn from(m: ModelIndex) -> Self {
        m.0
    }
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Number of subsets of {1..p} with at most `d0` elements.
pub fn admissible_count(p: usize, d0: usize) -> usize {
    (0..=d0.min(p)).map(|k| binomial(p, k)).fold(0usize, |a, b| a.saturating_add(b))
}

/// All subsets of {1..p} of size at most `d0`, in canonical order.
pub fn admissible_models(p: usize, d0: usize) -> Vec<ModelIndex> {
    fn rec(start: usize, p: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<ModelIndex>) {
        out.push(ModelIndex(cur.clone()));
        if left == 0 {
            return;
        }
        for i in start..=p {
            cur.push(i);
            rec(i + 1, p, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(admissible_count(p, d0));
    rec(1, p, d0.min(p), &mut vec![], &mut out);
    out.sort();
    out
}

fn is_admissible(m: &ModelIndex, p: usize, d0: usize) -> bool {
    m.len() <= d0 && m.max_index() <= p
}

/// Unnormalized prior weight `p^{−|I|} (1 − 1/p)^{p−|I|} 1(|I| ≤ d0)`.
pub fn gpvs_prior_weight(model: &ModelIndex, p: usize, d0: usize) -> f64 {
    if p == 0 || !is_admissible(model, p, d0) {
        return 0.0;
    }
    let pf = p as f64;
    let k = model.len() as i32;
    pf.powi(-k) * (1.0 - 1.0 / pf).powi(p as i32 - k)
}

/// Normalized log prior over the admissible set. When every admissible
/// weight is zero (only possible for `p = 1` without the full model) the
/// prior falls back to uniform over the admissible set.
pub fn gpvs_log_prior(p: usize, d0: usize) -> Vec<(ModelIndex, f64)> {
    let models = admissible_models(p, d0);
    let weights: Vec<f64> = models.iter().map(|m| gpvs_prior_weight(m, p, d0)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        models
            .into_iter()
            .zip(weights)
            .map(|(m, w)| (m, (w / total).ln()))
            .collect()
    } else {
        let lu = -(models.len() as f64).ln();
        models.into_iter().map(|m| (m, lu)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Exact,
    Mcmc,
    ImportanceSampling,
}

/// One model's row in a posterior table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEntry {
    pub model: ModelIndex,
    pub log_prior: f64,
    pub log_evidence: f64,
    /// Monte Carlo standard error of `log_evidence` where applicable.
    pub log_evidence_se: Option<f64>,
    pub probability: f64,
    /// Effective sample size of an importance-sampling evidence estimate.
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PosteriorDiagnostics {
    pub iterations: usize,
    pub burn_in: usize,
    pub acceptance_rate: Option<f64>,
    pub distinct_models_visited: usize,
    pub max_jitter: f64,
    pub flagged_models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPosterior {
    pub alpha: f64,
    pub kind: PosteriorKind,
    /// Sorted by model in canonical order.
    pub entries: Vec<ModelEntry>,
    pub diagnostics: PosteriorDiagnostics,
}

impl ModelPosterior {
    /// Builds normalized probabilities from log prior + log evidence.
    pub fn from_evidence(alpha: f64, kind: PosteriorKind, mut entries: Vec<ModelEntry>) -> Self {
        entries.sort_by(|a, b| a.model.cmp(&b.model));
        let scores: Vec<f64> = entries.iter().map(|e| e.log_prior + e.log_evidence).collect();
        let z = log_sum_exp(&scores);
        for (e, s) in entries.iter_mut().zip(scores) {
            e.probability = if s == f64::NEG_INFINITY { 0.0 } else { (s - z).exp() };
        }
        Self {
            alpha,
            kind,
            entries,
            diagnostics: PosteriorDiagnostics::default(),
        }
    }

    pub fn probability(&self, model: &ModelIndex) -> f64 {
        self.entries
            .binary_search_by(|e| e.model.cmp(model))
            .map(|i| self.entries[i].probability)
            .unwrap_or(0.0)
    }

    pub fn entry(&self, model: &ModelIndex) -> Option<&ModelEntry> {
        self.entries
            .binary_search_by(|e| e.model.cmp(model))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Highest-probability model; ties go to the canonically smallest.
    pub fn mode(&self) -> Option<&ModelIndex> {
        let mut best: Option<&ModelEntry> = None;
        for e in &self.entries {
            if best.is_none_or(|b| e.probability > b.probability) {
                best = Some(e);
            }
        }
        best.map(|e| &e.model)
    }

    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    /// Total-variation distance to another posterior over the same space.
    pub fn total_variation(&self, other: &ModelPosterior) -> f64 {
        let mut keys: Vec<&ModelIndex> = self.entries.iter().map(|e| &e.model).collect();
        keys.extend(other.entries.iter().map(|e| &e.model));
        keys.sort();
        keys.dedup();
        0.5 * keys
            .into_iter()
            .map(|k| (self.probability(k) - other.probability(k)).abs())
            .sum::<f64>()
    }
}

/// `Π_α(I = I* | data)`.
pub fn selection_probability(post: &ModelPosterior, truth: &ModelIndex) -> f64 {
    post.probability(truth)
}

/// Per-model GP evidence after bandwidth integration.
pub fn gp_log_evidence(
    data: &RegressionData,
    model: &ModelIndex,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<(f64, f64), ModelError> {
    let ws = MarginalWorkspace::new(data, model)?;
    let bw = gp::integrate_bandwidth_ws(&ws, cfg, alpha)?;
    Ok((bw.log_evidence, bw.max_jitter))
}

/// Exact posterior over all admissible subsets.
pub fn enumerate_posterior(
    data: &RegressionData,
    p: usize,
    d0: usize,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<ModelPosterior, ModelError> {
    enumerate_posterior_with_budget(data, p, d0, cfg, alpha, ENUMERATION_BUDGET)
}

pub fn enumerate_posterior_with_budget(
    data: &RegressionData,
    p: usize,
    d0: usize,
    cfg: &GpConfig,
    alpha: f64,
    budget: usize,
) -> Result<ModelPosterior, ModelError> {
    let count = admissible_count(p, d0);
    if count > budget {
        return Err(ModelError::BudgetExceeded { count, budget });
    }
    cfg.validate()?;
    let prior = gpvs_log_prior(p, d0);
    let evaluated: Vec<Result<(ModelEntry, f64), ModelError>> = prior
        .par_iter()
        .map(|(m, lp)| {
            let (ev, jitter) = gp_log_evidence(data, m, cfg, alpha)?;
            Ok((
                ModelEntry {
                    model: m.clone(),
                    log_prior: *lp,
                    log_evidence: ev,
                    log_evidence_se: None,
                    probability: 0.0,
                    ess: None,
                },
                jitter,
            ))
        })
        .collect();
    let mut entries = Vec::with_capacity(count);
    let mut max_jitter: f64 = 0.0;
    for r in evaluated {
        let (e, j) = r?;
        max_jitter = max_jitter.max(j);
        entries.push(e);
    }
    let mut post = ModelPosterior::from_evidence(alpha, PosteriorKind::Exact, entries);
    post.diagnostics.distinct_models_visited = count;
    post.diagnostics.max_jitter = max_jitter;
    Ok(post)
}

/// `log BF_α(M₁; M₂)`: difference of log evidences without prior weights.
pub fn bayes_factor(
    data: &RegressionData,
    m1: &ModelIndex,
    m2: &ModelIndex,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<f64, ModelError> {
    if m1 == m2 {
        return Ok(0.0);
    }
    Ok(gp_log_evidence(data, m1, cfg, alpha)?.0 - gp_log_evidence(data, m2, cfg, alpha)?.0)
}

/// Add / delete / swap proposal over admissible subsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetProposal {
    pub p: usize,
    pub d0: usize,
    pub add: f64,
    pub delete: f64,
    pub swap: f64,
}

impl SubsetProposal {
    pub fn new(p: usize, d0: usize) -> Self {
        Self {
            p,
            d0,
            add: 0.4,
            delete: 0.4,
            swap: 0.2,
        }
    }

    fn cap(&self) -> usize {
        self.d0.min(self.p)
    }

    /// Move-type probabilities at `m`, renormalized over feasible moves.
    fn move_probs(&self, m: &ModelIndex) -> (f64, f64, f64) {
        let k = m.len();
        let add = if k < self.cap() { self.add } else { 0.0 };
        let del = if k > 0 { self.delete } else { 0.0 };
        let swap = if k > 0 && k < self.p { self.swap } else { 0.0 };
        let z = add + del + swap;
        if z == 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            (add / z, del / z, swap / z)
        }
    }

    /// Probability of proposing `to` from `from`.
    pub fn probability(&self, from: &ModelIndex, to: &ModelIndex) -> f64 {
        let (pa, pd, ps) = self.move_probs(from);
        let k = from.len();
        let outside = self.p - k;
        match to.len() as isize - k as isize {
            1 if to.is_superset_of(from) => pa / outside as f64,
            -1 if from.is_superset_of(to) => pd / k as f64,
            0 if from != to => {
                let common = from.indices().iter().filter(|i| to.contains(**i)).count();
                if common + 1 == k {
                    ps / (k * outside) as f64
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    /// Draws a proposal, or `None` when no move is feasible.
    pub fn propose(&self, from: &ModelIndex, rng: &mut SeededRng) -> Option<ModelIndex> {
        let (pa, pd, _) = self.move_probs(from);
        if pa + pd == 0.0 && from.len() == 0 {
            return None;
        }
        let inside = from.indices();
        let out: Vec<usize> = (1..=self.p).filter(|i| !from.contains(*i)).collect();
        let u: f64 = rng.random();
        if u < pa {
            Some(from.with(out[rng.random_range(0..out.len())]))
        } else if u < pa + pd {
            Some(from.without(inside[rng.random_range(0..inside.len())]))
        } else if !inside.is_empty() && !out.is_empty() {
            let drop = inside[rng.random_range(0..inside.len())];
            let add = out[rng.random_range(0..out.len())];
            Some(from.without(drop).with(add))
        } else {
            None
        }
    }

    /// Log Metropolis–Hastings acceptance ratio for `from → to`.
    pub fn log_acceptance(&self, from: &ModelIndex, to: &ModelIndex, log_target_from: f64, log_target_to: f64) -> f64 {
        let fwd = self.probability(from, to);
        let back = self.probability(to, from);
        (log_target_to - log_target_from + back.ln() - fwd.ln()).min(0.0)
    }
}

/// Metropolis–Hastings over subsets with memoized evidences.
pub fn mcmc_over_models<F>(
    p: usize,
    d0: usize,
    alpha: f64,
    iters: usize,
    seed: u64,
    mut log_evidence: F,
) -> Result<ModelPosterior, ModelError>
where
    F: FnMut(&ModelIndex) -> Result<f64, ModelError>,
{
    let prior: HashMap<ModelIndex, f64> = gpvs_log_prior(p, d0).into_iter().collect();
    let proposal = SubsetProposal::new(p, d0);
    let mut cache: HashMap<ModelIndex, f64> = HashMap::new();
    let mut target = |m: &ModelIndex, cache: &mut HashMap<ModelIndex, f64>| -> Result<f64, ModelError> {
        if let Some(v) = cache.get(m) {
            return Ok(*v);
        }
        let v = prior[m] + log_evidence(m)?;
        cache.insert(m.clone(), v);
        Ok(v)
    };
    let mut rng = rng_from_seed(seed);
    let mut cur = ModelIndex::empty();
    let mut cur_t = target(&cur, &mut cache)?;
    let burn_in = iters / 5;
    let mut counts: HashMap<ModelIndex, usize> = HashMap::new();
    let mut accepted = 0usize;
    for it in 0..iters.max(1) {
        if let Some(next) = proposal.propose(&cur, &mut rng) {
            let next_t = target(&next, &mut cache)?;
            let log_a = proposal.log_acceptance(&cur, &next, cur_t, next_t);
            let u: f64 = rng.random();
            if u.ln() < log_a {
                cur = next;
                cur_t = next_t;
                accepted += 1;
            }
        }
        if it >= burn_in {
            *counts.entry(cur.clone()).or_default() += 1;
        }
    }
    let kept = (iters.max(1) - burn_in) as f64;
    let mut entries: Vec<ModelEntry> = prior
        .iter()
        .map(|(m, lp)| ModelEntry {
            model: m.clone(),
            log_prior: *lp,
            log_evidence: cache.get(m).map(|t| t - lp).unwrap_or(f64::NAN),
            log_evidence_se: None,
            probability: counts.get(m).copied().unwrap_or(0) as f64 / kept,
            ess: None,
        })
        .collect();
    entries.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(ModelPosterior {
        alpha,
        kind: PosteriorKind::Mcmc,
        entries,
        diagnostics: PosteriorDiagnostics {
            iterations: iters.max(1),
            burn_in,
            acceptance_rate: Some(accepted as f64 / iters.max(1) as f64),
            distinct_models_visited: cache.len(),
            max_jitter: 0.0,
            flagged_models: vec![],
        },
    })
}

/// GP evidence MCMC; the first 20% of iterations are discarded.
pub fn mcmc_posterior(
    data: &RegressionData,
    p: usize,
    d0: usize,
    cfg: &GpConfig,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<ModelPosterior, ModelError> {
    cfg.validate()?;
    mcmc_over_models(p, d0, alpha, iters, seed, |m| Ok(gp_log_evidence(data, m, cfg, alpha)?.0))
}

/// Monte Carlo estimate of a prior ball probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AntiConcentration {
    pub estimate: f64,
    pub std_error: f64,
    /// One-sided 95% upper bound, reported when no draw landed in the ball.
    pub upper_95: Option<f64>,
    pub draws: usize,
}

/// Estimates `Π_I(d_n(f, f*) ≤ radius)` with `d_n` the empirical L² distance
/// on 256 uniform design points. Bandwidths are drawn from the truncated
/// prior for sample size `n`.
#[allow(clippy::too_many_arguments)]
pub fn anti_concentration_estimate<F>(
    model: &ModelIndex,
    p: usize,
    n: usize,
    cfg: &GpConfig,
    f_star: F,
    radius: f64,
    n_mc: usize,
    seed: u64,
) -> Result<AntiConcentration, ModelError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    const DESIGN: usize = 256;
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let design: Vec<f64> = (0..DESIGN * p).map(|_| rng.random::<f64>()).collect();
    let truth: Vec<f64> = design.chunks(p).map(&f_star).collect();
    let cols = model.columns();
    let sub: Vec<f64> = design
        .chunks(p)
        .flat_map(|row| cols.iter().map(move |&c| row[c]))
        .collect();
    let d = model.len();
    let range = if d > 0 { Some(cfg.bandwidth_range(n, d)?) } else { None };
    let hits: Vec<Result<bool, ModelError>> = (0..n_mc)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, &[1, k as u64]);
            let f = match range {
                None => vec![0.0; DESIGN],
                Some((lo, hi)) => {
                    let mut r = rng_from_seed(s);
                    let a = truncated_bandwidth_draw(&mut r, lo, hi, d, cfg);
                    gp::gp_prior_sample(model, a, &sub, cfg, derive_seed(s, &[2]))?
                }
            };
            let dist = (f.iter().zip(&truth).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / DESIGN as f64).sqrt();
            Ok(dist <= radius)
        })
        .collect();
    let mut count = 0usize;
    for h in hits {
        if h? {
            count += 1;
        }
    }
    let n_mc_f = n_mc.max(1) as f64;
    let est = count as f64 / n_mc_f;
    Ok(AntiConcentration {
        estimate: est,
        std_error: (est * (1.0 - est) / n_mc_f).sqrt(),
        upper_95: (count == 0).then(|| 1.0 - 0.05f64.powf(1.0 / n_mc_f)),
        draws: n_mc,
    })
}

/// `A` with `A^d ~ Gamma(shape, scale)` restricted to `[lo, hi]`, by inversion.
pub fn truncated_bandwidth_draw(rng: &mut SeededRng, lo: f64, hi: f64, d: usize, cfg: &GpConfig) -> f64 {
    let df = d as f64;
    let (shape, scale) = (cfg.bandwidth_shape, cfg.bandwidth_scale);
    let plo = gamma_p(shape, lo.powf(df) / scale);
    let phi = gamma_p(shape, hi.powf(df) / scale);
    let u: f64 = rng.random();
    if phi - plo <= 1e-300 {
        // all prior mass lies outside; fall back to log-uniform on the range
        return (lo.ln() + u * (hi / lo).ln()).exp();
    }
    let g = gamma_quantile(plo + u * (phi - plo), shape, scale);
    g.powf(1.0 / df).clamp(lo, hi)
}
