//! Metropolis-Hastings over `(S, b_S)` for the nuisance block.
//!
//! Target: `exp(-|(I - H) Y - W b|^2 / 2) * prior(S, b_S)`. Moves:
//!
//! * add: pick `j` outside `S` uniformly, draw its coefficient from
//!   `N(W_j^T r / |W_j|^2, (c / |W_j|)^2)` with `r` the current residual;
//! * remove: pick `j` in `S` uniformly (reverse of add);
//! * swap: replace a uniform `j` in `S` by a uniform `k` outside, with the
//!   new coefficient drawn as in add from the residual without `j`;
//! * within: Gaussian random walk on one coefficient, scale tuned during
//!   burn-in only.
//!
//! Impossible moves (add at `s_max`, remove at `s_min`, ...) leave the state
//! unchanged. Proposals onto rank-deficient supports have zero target mass
//! and are rejected.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::DesignDiagnostics;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, column, dot, norm_sq, select_columns};
use crate::model::RegressionInstance;
use crate::rng::derive_stream;

use super::prior::SparsePrior;
use super::{b1star_posterior, PosteriorConfig, PosteriorSample};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const REFRESH_EVERY: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Add,
    Remove,
    Swap,
    Within,
}

impl MoveKind {
    fn index(self) -> usize {
        match self {
            MoveKind::Add => 0,
            MoveKind::Remove => 1,
            MoveKind::Swap => 2,
            MoveKind::Within => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub kind: MoveKind,
    pub internal: f64,
    pub recomputed: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MoveStats {
    /// Indexed add, remove, swap, within.
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
    pub rank_rejections: u64,
    pub impossible: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<PosteriorSample>,
    pub audit: Vec<AuditEntry>,
    pub stats: MoveStats,
    pub within_scale: f64,
    pub support_counts_exact: bool,
}

impl ChainOutput {
    pub fn max_audit_residual(&self) -> f64 {
        self.audit
            .iter()
            .map(|a| (a.internal - a.recomputed).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
struct State {
    /// Sorted columns of `W`.
    support: Vec<usize>,
    coefs: Vec<f64>,
    /// `W_S b_S`.
    fitted: Vec<f64>,
    log_det: f64,
    log_target: f64,
}

/// What changed, enough to recompute the ratio from scratch.
#[derive(Debug, Clone, Copy)]
enum Change {
    Add { j: usize, u: f64 },
    Remove { j: usize, old: f64 },
    Swap { out: usize, old: f64, inn: usize, u: f64 },
    Within,
}

struct Proposal {
    state: State,
    log_q_ratio: f64,
    change: Change,
}

struct Sampler<'a> {
    w: &'a DMatrix<f64>,
    y_perp: Vec<f64>,
    col_sq: Vec<f64>,
    prior: SparsePrior,
    log_det_cache: HashMap<Vec<usize>, Option<f64>>,
    cfg: &'a PosteriorConfig,
    log_move: [f64; 4],
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

impl<'a> Sampler<'a> {
    fn cols(&self) -> usize {
        self.w.ncols()
    }

    fn log_det(&mut self, support: &[usize]) -> Option<f64> {
        if let Some(v) = self.log_det_cache.get(support) {
            return *v;
        }
        let v = linalg::log_det_gram(&select_columns(self.w, support));
        self.log_det_cache.insert(support.to_vec(), v);
        v
    }

    fn log_target(&mut self, support_len: usize, fitted: &[f64], log_det: f64) -> f64 {
        let ll = -0.5
            * self
                .y_perp
                .iter()
                .zip(fitted)
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>();
        ll + self
            .prior
            .log_prior_parts(self.w, support_len, norm_sq(fitted).sqrt(), log_det)
    }

    fn proposal_sd(&self, j: usize) -> f64 {
        self.cfg.proposal_scale / self.col_sq[j].sqrt()
    }

    /// Conditional least-squares mean for column `j` against residual `r`.
    fn proposal_mean(&self, j: usize, r: &[f64]) -> f64 {
        dot(column(self.w, j), r) / self.col_sq[j]
    }

    fn residual(&self, fitted: &[f64]) -> Vec<f64> {
        self.y_perp.iter().zip(fitted).map(|(y, f)| y - f).collect()
    }

    fn fresh_fitted(&self, support: &[usize], coefs: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.w.nrows()];
        for (&j, &b) in support.iter().zip(coefs) {
            axpy(b, column(self.w, j), &mut f);
        }
        f
    }

    fn build(&mut self, support: Vec<usize>, coefs: Vec<f64>, fitted: Vec<f64>) -> Option<State> {
        let log_det = self.log_det(&support)?;
        let log_target = self.log_target(support.len(), &fitted, log_det);
        Some(State {
            support,
            coefs,
            fitted,
            log_det,
            log_target,
        })
    }

    fn propose(&mut self, kind: MoveKind, st: &State, rng: &mut impl Rng) -> ProposalOutcome {
        let s = st.support.len();
        let cols = self.cols();
        match kind {
            MoveKind::Add => {
                if s >= self.cfg.s_max || s >= cols {
                    return ProposalOutcome::Impossible;
                }
                let j = pick_outside(&st.support, cols, rng);
                let r = self.residual(&st.fitted);
                let mean = self.proposal_mean(j, &r);
                let sd = self.proposal_sd(j);
                let z: f64 = StandardNormal.sample(rng);
                let u = mean + sd * z;
                let mut support = st.support.clone();
                let mut coefs = st.coefs.clone();
                let pos = support.partition_point(|&v| v < j);
                support.insert(pos, j);
                coefs.insert(pos, u);
                let mut fitted = st.fitted.clone();
                axpy(u, column(self.w, j), &mut fitted);
                let log_q_fwd = self.log_move[0] - ((cols - s) as f64).ln() + normal_logpdf(u, mean, sd);
                let log_q_rev = self.log_move[1] - ((s + 1) as f64).ln();
                match self.build(support, coefs, fitted) {
                    Some(state) => ProposalOutcome::Ready(Proposal {
                        state,
                        log_q_ratio: log_q_rev - log_q_fwd,
                        change: Change::Add { j, u },
                    }),
                    None => ProposalOutcome::RankDeficient,
                }
            }
            MoveKind::Remove => {
                if s == 0 || s <= self.cfg.s_min {
                    return ProposalOutcome::Impossible;
                }
                let t = rng.random_range(0..s);
                let j = st.support[t];
                let old = st.coefs[t];
                let mut fitted = st.fitted.clone();
                axpy(-old, column(self.w, j), &mut fitted);
                let r_small = self.residual(&fitted);
                let mean = self.proposal_mean(j, &r_small);
                let sd = self.proposal_sd(j);
                let mut support = st.support.clone();
                let mut coefs = st.coefs.clone();
                support.remove(t);
                coefs.remove(t);
                let log_q_fwd = self.log_move[1] - (s as f64).ln();
                let log_q_rev =
                    self.log_move[0] - ((cols - (s - 1)) as f64).ln() + normal_logpdf(old, mean, sd);
                let state = self.build(support, coefs, fitted).expect("subsets of full-rank supports are full rank");
                ProposalOutcome::Ready(Proposal {
                    state,
                    log_q_ratio: log_q_rev - log_q_fwd,
                    change: Change::Remove { j, old },
                })
            }
            MoveKind::Swap => {
                if s == 0 || s >= cols {
                    return ProposalOutcome::Impossible;
                }
                let t = rng.random_range(0..s);
                let out = st.support[t];
                let old = st.coefs[t];
                let inn = pick_outside(&st.support, cols, rng);
                let mut fitted = st.fitted.clone();
                axpy(-old, column(self.w, out), &mut fitted);
                let r_mid = self.residual(&fitted);
                let mean_in = self.proposal_mean(inn, &r_mid);
                let sd_in = self.proposal_sd(inn);
                let z: f64 = StandardNormal.sample(rng);
                let u = mean_in + sd_in * z;
                let mean_out = self.proposal_mean(out, &r_mid);
                let sd_out = self.proposal_sd(out);
                axpy(u, column(self.w, inn), &mut fitted);
                let mut support = st.support.clone();
                let mut coefs = st.coefs.clone();
                support.remove(t);
                coefs.remove(t);
                let pos = support.partition_point(|&v| v < inn);
                support.insert(pos, inn);
                coefs.insert(pos, u);
                let log_q_ratio = normal_logpdf(old, mean_out, sd_out) - normal_logpdf(u, mean_in, sd_in);
                match self.build(support, coefs, fitted) {
                    Some(state) => ProposalOutcome::Ready(Proposal {
                        state,
                        log_q_ratio,
                        change: Change::Swap { out, old, inn, u },
                    }),
                    None => ProposalOutcome::RankDeficient,
                }
            }
            MoveKind::Within => unreachable!("within moves carry their own scale"),
        }
    }

    fn propose_within(&mut self, st: &State, scale: f64, rng: &mut impl Rng) -> Option<Proposal> {
        let s = st.support.len();
        if s == 0 {
            return None;
        }
        let t = rng.random_range(0..s);
        let j = st.support[t];
        let z: f64 = StandardNormal.sample(rng);
        let delta = scale * z / self.col_sq[j].sqrt();
        let mut coefs = st.coefs.clone();
        coefs[t] += delta;
        let mut fitted = st.fitted.clone();
        axpy(delta, column(self.w, j), &mut fitted);
        let log_target = self.log_target(s, &fitted, st.log_det);
        Some(Proposal {
            state: State {
                support: st.support.clone(),
                coefs,
                fitted,
                log_det: st.log_det,
                log_target,
            },
            log_q_ratio: 0.0,
            change: Change::Within,
        })
    }

    /// Log acceptance ratio rebuilt without any cached or incremental state.
    fn audit(&mut self, old: &State, new: &State, change: Change) -> f64 {
        let fresh_target = |this: &mut Self, st: &State| -> f64 {
            let fitted = this.fresh_fitted(&st.support, &st.coefs);
            let log_det = linalg::log_det_gram(&select_columns(this.w, &st.support))
                .expect("accepted supports are full rank");
            this.log_target(st.support.len(), &fitted, log_det)
        };
        let t_old = fresh_target(self, old);
        let t_new = fresh_target(self, new);
        let cols = self.cols() as f64;
        let q = match change {
            Change::Within => 0.0,
            Change::Add { j, u } => {
                let s = old.support.len() as f64;
                let r = self.residual(&self.fresh_fitted(&old.support, &old.coefs));
                let fwd = self.log_move[0] - (cols - s).ln()
                    + normal_logpdf(u, self.proposal_mean(j, &r), self.proposal_sd(j));
                let rev = self.log_move[1] - (s + 1.0).ln();
                rev - fwd
            }
            Change::Remove { j, old: b } => {
                let s = old.support.len() as f64;
                let r = self.residual(&self.fresh_fitted(&new.support, &new.coefs));
                let fwd = self.log_move[1] - s.ln();
                let rev = self.log_move[0] - (cols - (s - 1.0)).ln()
                    + normal_logpdf(b, self.proposal_mean(j, &r), self.proposal_sd(j));
                rev - fwd
            }
            Change::Swap { out, old: b, inn, u } => {
                let (mid_s, mid_c): (Vec<usize>, Vec<f64>) = old
                    .support
                    .iter()
                    .zip(&old.coefs)
                    .filter(|(&j, _)| j != out)
                    .map(|(&j, &c)| (j, c))
                    .unzip();
                let r = self.residual(&self.fresh_fitted(&mid_s, &mid_c));
                normal_logpdf(b, self.proposal_mean(out, &r), self.proposal_sd(out))
                    - normal_logpdf(u, self.proposal_mean(inn, &r), self.proposal_sd(inn))
            }
        };
        t_new - t_old + q
    }
}

enum ProposalOutcome {
    Ready(Proposal),
    RankDeficient,
    Impossible,
}

fn pick_outside(support: &[usize], cols: usize, rng: &mut impl Rng) -> usize {
    // support is sorted; map a uniform rank among the free columns to its index
    let mut k = rng.random_range(0..cols - support.len());
    for &j in support {
        if j <= k {
            k += 1;
        } else {
            break;
        }
    }
    k
}

fn least_squares(w: &DMatrix<f64>, support: &[usize], y: &[f64]) -> Option<Vec<f64>> {
    if support.is_empty() {
        return Some(Vec::new());
    }
    let ws = select_columns(w, support);
    if !linalg::is_full_column_rank(&ws) {
        return None;
    }
    let rhs = ws.transpose() * nalgebra::DVector::from_column_slice(y);
    let chol = (ws.transpose() * &ws).cholesky()?;
    Some(chol.solve(&rhs).iter().copied().collect())
}

/// Runs the chain and attaches an independent `b1*` draw to every kept state.
pub fn run_chain(
    instance: &RegressionInstance,
    diagnostics: &DesignDiagnostics,
    config: &PosteriorConfig,
) -> Result<ChainOutput> {
    config.validate(instance.p)?;
    let w = &diagnostics.w;
    let cols = w.ncols();
    let x1 = instance.column(0);
    let x1_sq = norm_sq(x1);
    let proj = dot(x1, instance.y.as_slice()) / x1_sq;
    let y_perp: Vec<f64> = instance.y.iter().zip(x1).map(|(y, x)| y - proj * x).collect();
    let col_sq: Vec<f64> = (0..cols).map(|j| norm_sq(column(w, j))).collect();
    if let Some(j) = col_sq.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateDesign(format!(
            "projected column {} is zero",
            j + 1
        )));
    }
    let probs = config.move_probs.as_array();
    let mut sampler = Sampler {
        w,
        y_perp,
        col_sq,
        prior: SparsePrior::new(config, instance.p),
        log_det_cache: HashMap::new(),
        cfg: config,
        log_move: probs.map(f64::ln),
    };

    let mut init: Vec<usize> = config
        .init_support
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .map(|j| j - 1)
        .collect();
    init.sort_unstable();
    init.dedup();
    init.truncate(config.s_max);
    let mut state = loop {
        if let Some(coefs) = least_squares(w, &init, &sampler.y_perp) {
            let fitted = sampler.fresh_fitted(&init, &coefs);
            if let Some(st) = sampler.build(init.clone(), coefs, fitted) {
                break st;
            }
        }
        if init.is_empty() {
            return Err(Error::SupportInvalid { support: vec![] });
        }
        init.pop();
    };
    while state.support.len() < config.s_min {
        // Forced inclusion: grow greedily by the first admissible column.
        let next = (0..cols).find(|j| {
            if state.support.contains(j) {
                return false;
            }
            let mut trial = state.support.clone();
            trial.push(*j);
            trial.sort_unstable();
            sampler.log_det(&trial).is_some()
        });
        let Some(j) = next else {
            return Err(Error::SupportInvalid {
                support: state.support.iter().map(|v| v + 1).collect(),
            });
        };
        let mut sup = state.support.clone();
        sup.push(j);
        sup.sort_unstable();
        let coefs = least_squares(w, &sup, &sampler.y_perp).expect("checked full rank");
        let fitted = sampler.fresh_fitted(&sup, &coefs);
        state = sampler.build(sup, coefs, fitted).expect("checked full rank");
    }

    let (mean_star, var_star) = b1star_posterior(instance, config.sigma_n_sq)?;
    let sd_star = var_star.sqrt();
    let mut rng = derive_stream(config.chain.seed, "chain", 0);
    let mut star_rng = derive_stream(config.chain.seed, "b1star", 0);

    let total = config.chain.burn_in + config.chain.n_iter;
    let mut log_scale = 0.0_f64;
    let mut within_seen = 0usize;
    let mut stats = MoveStats::default();
    let mut audit = Vec::new();
    let mut samples = Vec::with_capacity(config.chain.n_iter / config.chain.thin + 1);
    let mut consecutive_rank = 0usize;
    const TARGET_ACCEPT: f64 = 0.4;

    for it in 0..total {
        let u: f64 = rng.random();
        let kind = if u < probs[0] {
            MoveKind::Add
        } else if u < probs[0] + probs[1] {
            MoveKind::Remove
        } else if u < probs[0] + probs[1] + probs[2] {
            MoveKind::Swap
        } else {
            MoveKind::Within
        };
        stats.proposed[kind.index()] += 1;

        let proposal = if kind == MoveKind::Within {
            sampler.propose_within(&state, log_scale.exp(), &mut rng)
        } else {
            match sampler.propose(kind, &state, &mut rng) {
                ProposalOutcome::Ready(p) => {
                    consecutive_rank = 0;
                    Some(p)
                }
                ProposalOutcome::RankDeficient => {
                    stats.rank_rejections += 1;
                    consecutive_rank += 1;
                    if consecutive_rank >= config.stuck_limit {
                        return Err(Error::SamplerStuck {
                            consecutive: consecutive_rank,
                            state_size: state.support.len(),
                        });
                    }
                    None
                }
                ProposalOutcome::Impossible => None,
            }
        };

        let mut accepted_within = None;
        match proposal {
            None => stats.impossible += u64::from(kind == MoveKind::Within),
            Some(prop) => {
                let log_alpha = prop.state.log_target - state.log_target + prop.log_q_ratio;
                if config.audit_every > 0 && it % config.audit_every == 0 {
                    let recomputed = sampler.audit(&state, &prop.state, prop.change);
                    audit.push(AuditEntry {
                        iteration: it,
                        kind,
                        internal: log_alpha,
                        recomputed,
                    });
                }
                let v: f64 = rng.random();
                let accept = v.ln() < log_alpha;
                if accept {
                    stats.accepted[kind.index()] += 1;
                    state = prop.state;
                }
                if kind == MoveKind::Within {
                    accepted_within = Some(accept);
                }
            }
        }

        if it < config.chain.burn_in {
            if let Some(acc) = accepted_within {
                within_seen += 1;
                let rate = 1.0 / (within_seen as f64 + 1.0).powf(0.6);
                log_scale += rate * (f64::from(u8::from(acc)) - TARGET_ACCEPT);
                log_scale = log_scale.clamp(-10.0, 5.0);
            }
        }

        if (it + 1) % REFRESH_EVERY == 0 {
            state.fitted = sampler.fresh_fitted(&state.support, &state.coefs);
            state.log_target = sampler.log_target(state.support.len(), &state.fitted, state.log_det);
        }

        if it >= config.chain.burn_in && (it - config.chain.burn_in).is_multiple_of(config.chain.thin) {
            let z: f64 = StandardNormal.sample(&mut star_rng);
            let b1_star = mean_star + sd_star * z;
            let shift: f64 = state
                .support
                .iter()
                .zip(&state.coefs)
                .map(|(&j, &b)| diagnostics.gamma[j] * b)
                .sum();
            samples.push(PosteriorSample {
                support: state.support.iter().map(|j| j + 1).collect(),
                b_s: state.coefs.clone(),
                b1_star,
                b1: b1_star - shift,
                log_target: state.log_target,
            });
        }
    }

    Ok(ChainOutput {
        samples,
        audit,
        stats,
        within_scale: log_scale.exp(),
        support_counts_exact: sampler.prior.all_counts_exact(),
    })
}
