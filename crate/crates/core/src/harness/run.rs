use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::bundle::{GpRecord, OptionRecord, PolicyBundle};
use super::config::HpsdeConfig;
use super::trace::{IterationRecord, LearningTrace, OptionStats, RunFailure};
use crate::data::{Dataset, Sample};
use crate::embed::laplacian_eigenmaps;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::gating::{
    gp_optimize_hypers_with, select_option, GatingMode, GpHyper, GpReturnModel, HyperSearch,
    InputScaler,
};
use crate::mixest::{assign_among, fit_weighted_vbem, prune_clusters, MixturePriors};
use crate::optpolicy::{update_option_policy, GaussianOptionPolicy};
use crate::rng::{streams, RngStream};
use crate::weighting::{importance_weights_log, mixture_old_log_density};

/// Largest point set handed to the eigen-solver; further points are placed
/// by out-of-sample extension.
const EMBED_MAX_POINTS: usize = 800;

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: LearningTrace,
    /// Policies and gating model after the last completed iteration.
    pub bundle: Option<PolicyBundle>,
    pub failure: Option<RunFailure>,
}

impl RunResult {
    pub fn final_policies(&self) -> Result<Vec<GaussianOptionPolicy>> {
        match &self.bundle {
            Some(b) => b.policies(),
            None => Ok(Vec::new()),
        }
    }
}

/// Runs the hierarchical learning loop. Configuration problems are returned
/// as errors; failures inside the loop end the run early and are reported in
/// [`RunResult::failure`] together with the partial trace.
pub fn run_hpsde(cfg: &HpsdeConfig) -> Result<RunResult> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let fmap = cfg.feature_map(&env)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        let mut run = Runner::new(cfg, env, fmap);
        let failure = run.execute().err().map(|(iteration, e)| {
            log::error!("run aborted in iteration {iteration}: {e}");
            RunFailure {
                iteration,
                message: e.to_string(),
            }
        });
        RunResult {
            trace: run.trace,
            bundle: run.bundle,
            failure,
        }
    }))
}

/// The same loop restricted to a single option chosen greedily.
pub fn run_baseline_monolithic(cfg: &HpsdeConfig) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.o_max = 1;
    cfg.gating = GatingMode::Greedy;
    run_hpsde(&cfg)
}

struct Runner<'a> {
    cfg: &'a HpsdeConfig,
    env: Environment,
    fmap: FeatureMap,
    data: Dataset,
    /// Log density of each sample under the policy that generated it.
    old_log: Vec<f64>,
    policies: Vec<GaussianOptionPolicy>,
    hyper: Option<GpHyper>,
    trace: LearningTrace,
    bundle: Option<PolicyBundle>,
}

struct Fitted {
    policies: Vec<GaussianOptionPolicy>,
    stats: Vec<OptionStats>,
    ess: f64,
}

struct Rollout {
    sample: Sample,
    old_log: f64,
    option: usize,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a HpsdeConfig, env: Environment, fmap: FeatureMap) -> Self {
        let data = Dataset::new(env.context_dim(), env.param_dim());
        Self {
            cfg,
            env,
            fmap,
            data,
            old_log: Vec::new(),
            policies: Vec::new(),
            hyper: None,
            trace: LearningTrace::default(),
            bundle: None,
        }
    }

    fn execute(&mut self) -> std::result::Result<(), (usize, Error)> {
        self.initial().map_err(|e| (0, e))?;
        for k in 1..=self.cfg.iterations {
            self.iteration(k).map_err(|e| (k, e))?;
        }
        Ok(())
    }

    fn wall(&self, start: Instant) -> (f64, f64) {
        let ms = start.elapsed().as_secs_f64() * 1e3;
        (if self.cfg.record_wall_time { ms } else { 0.0 }, ms)
    }

    fn initial(&mut self) -> Result<()> {
        let start = Instant::now();
        let env = &self.env;
        let log_q = env.initial_log_density();
        let rolls: Vec<Result<Rollout>> = (0..self.cfg.initial_rollouts)
            .into_par_iter()
            .map(|j| {
                let mut rng = RngStream::new(self.cfg.seed, streams::rollout(0, j));
                let s = env.sample_context(&mut rng);
                let xi = env.sample_initial_param(&mut rng);
                let r = env.evaluate(&s, &xi)?;
                Ok(Rollout {
                    sample: Sample::new(s, xi, r)?,
                    old_log: log_q,
                    option: 0,
                })
            })
            .collect();
        let rolls = rolls.into_iter().collect::<Result<Vec<_>>>()?;
        let mean_return = rolls.iter().map(|r| r.sample.ret).sum::<f64>() / rolls.len() as f64;
        self.store(rolls)?;
        let returns = self.data.returns();
        let ess = importance_weights_log(&returns, &self.old_log, &self.cfg.transform)?.ess();
        let (wall_ms, elapsed_ms) = self.wall(start);
        self.trace.records.push(IterationRecord {
            iter: 0,
            mean_return,
            n_options: 1,
            ess,
            wall_ms,
            elapsed_ms,
            n_samples: self.data.len(),
            options: vec![OptionStats {
                samples: self.data.len(),
                mass: 1.0,
                selected: self.data.len(),
            }],
        });
        Ok(())
    }

    fn store(&mut self, rolls: Vec<Rollout>) -> Result<()> {
        let mut new = Vec::with_capacity(rolls.len());
        for r in rolls {
            self.old_log.push(r.old_log);
            new.push(r.sample);
        }
        self.data.append(new)
    }

    fn iteration(&mut self, k: usize) -> Result<()> {
        let start = Instant::now();
        let fitted = self.fit_options(k)?;
        let t_mix = start.elapsed();
        let (gp, gp_record) = self.fit_gp(k)?;
        let t_gp = start.elapsed();
        let mut stats = fitted.stats;
        let rolls = self.rollouts(k, &fitted.policies, &stats, &gp)?;
        log::debug!(
            "iter {k} timing: options {:?}, gp {:?}, rollouts {:?}",
            t_mix,
            t_gp - t_mix,
            start.elapsed() - t_gp
        );
        for r in &rolls {
            stats[r.option].selected += 1;
        }
        let mean_return = rolls.iter().map(|r| r.sample.ret).sum::<f64>() / rolls.len() as f64;
        self.store(rolls)?;
        self.policies = fitted.policies;
        self.bundle = Some(self.make_bundle(gp_record));
        let (wall_ms, elapsed_ms) = self.wall(start);
        log::info!(
            "iter {k}: mean return {mean_return:.4}, {} options, ess {:.1}",
            self.policies.len(),
            fitted.ess
        );
        self.trace.records.push(IterationRecord {
            iter: k,
            mean_return,
            n_options: self.policies.len(),
            ess: fitted.ess,
            wall_ms,
            elapsed_ms,
            n_samples: self.data.len(),
            options: stats,
        });
        Ok(())
    }

    fn window(&self) -> usize {
        let n = self.data.len();
        match self.cfg.replay_window {
            0 => n,
            w => w.min(n),
        }
    }

    /// Moment-matched box distribution, the stand-in "previous policy"
    /// before any option exists.
    fn box_policy(&self) -> Result<GaussianOptionPolicy> {
        let b = self.env.param_box();
        let mean: Vec<f64> = b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let var = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            b.len(),
            b.iter().map(|(lo, hi)| (hi - lo) * (hi - lo) / 12.0),
        ));
        GaussianOptionPolicy::constant(&mean, var, self.fmap.clone())
    }

    fn fit_options(&self, k: usize) -> Result<Fitted> {
        let cfg = self.cfg;
        let n_win = self.window();
        let offset = self.data.len() - n_win;
        let samples = self.data.tail(n_win);
        let returns: Vec<f64> = samples.iter().map(|s| s.ret).collect();
        let iw = importance_weights_log(&returns, &self.old_log[offset..], &cfg.transform)?;
        let ess = iw.ess();

        let ds = self.env.context_dim();
        let dx = self.env.param_dim();
        let joint = DMatrix::from_fn(n_win, ds + dx, |i, j| {
            if j < ds {
                samples[i].context[j]
            } else {
                samples[i].traj_param[j - ds]
            }
        });
        let z = standardize_weighted(&joint, &iw.normalized);
        let points = if cfg.embedding.enabled {
            let xi = z.columns(ds, dx).into_owned();
            let emb = embed_points(&xi, cfg, k)?;
            let mut p = DMatrix::zeros(n_win, ds + emb.ncols());
            p.columns_mut(0, ds).copy_from(&z.columns(0, ds));
            p.columns_mut(ds, emb.ncols()).copy_from(&emb);
            p
        } else {
            z
        };

        // Rescaled to sum to n so prior strength does not drift with n.
        let w: Vec<f64> = truncate_weights(&iw.normalized, cfg.mixture.truncation)
            .iter()
            .map(|v| v * n_win as f64)
            .collect();
        let priors = MixturePriors::from_data(&points, &w, cfg.mixture.alpha0)?;
        let mut rng = RngStream::new(cfg.seed, streams::mixture(k));
        let state = fit_weighted_vbem(&points, &w, &priors, &cfg.vbem_options(), &mut rng)?;
        let survivors = prune_clusters(&state, cfg.mixture.min_rel_mass);
        let assign = assign_among(&state.responsibilities, &survivors);
        let total_mass: f64 = state.gamma.iter().sum();

        let fallback = self.box_policy()?;
        let previous: Vec<&GaussianOptionPolicy> = if self.policies.is_empty() {
            vec![&fallback]
        } else {
            self.policies.iter().collect()
        };
        let params = cfg.update_params();
        let mut policies = Vec::new();
        let mut stats = Vec::new();
        for (q, &l) in survivors.iter().enumerate() {
            let members: Vec<usize> = (0..n_win).filter(|&i| assign[i] == q).collect();
            if members.is_empty() {
                continue;
            }
            let refs: Vec<&Sample> = members.iter().map(|&i| &samples[i]).collect();
            let mw: Vec<f64> = members.iter().map(|&i| w[i]).collect();
            let prev = nearest_previous(&previous, &refs, &mw)?;
            let policy =
                update_option_policy(&refs, cfg.update.method, &params, &self.fmap, Some(prev))?;
            if log::log_enabled!(log::Level::Trace) {
                let centre: Vec<f64> = self
                    .env
                    .context_box()
                    .iter()
                    .map(|(lo, hi)| 0.5 * (lo + hi))
                    .collect();
                log::trace!(
                    "iter {k} option {q}: {} samples, mean at box centre {:?}, cov diag {:?}",
                    members.len(),
                    policy.mean(&centre)?.as_slice(),
                    policy.covariance().diagonal().as_slice()
                );
            }
            policies.push(policy);
            stats.push(OptionStats {
                samples: members.len(),
                mass: if total_mass > 0.0 {
                    state.gamma[l] / total_mass
                } else {
                    0.0
                },
                selected: 0,
            });
        }
        Ok(Fitted {
            policies,
            stats,
            ess,
        })
    }

    fn fit_gp(&mut self, k: usize) -> Result<(GpReturnModel, GpRecord)> {
        let cfg = self.cfg;
        let recent = self.data.tail(cfg.gp.n_gp.min(self.data.len()));
        let train: Vec<&Sample> = thin(recent.len(), cfg.gp.max_points)
            .into_iter()
            .map(|i| &recent[i])
            .collect();
        let (ds, dx) = (self.env.context_dim(), self.env.param_dim());
        let z = DMatrix::from_fn(train.len(), dx + ds, |i, j| {
            if j < dx {
                train[i].traj_param[j]
            } else {
                train[i].context[j - dx]
            }
        });
        let y: Vec<f64> = train.iter().map(|s| s.ret).collect();
        let scaler = InputScaler::fit(&z);
        let n = y.len() as f64;
        let ym = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / n).sqrt();
        let noise_floor = (cfg.gp.min_noise_frac * sd).max(1e-6);
        let mut hyper = self.hyper.unwrap_or_else(|| cfg.initial_hyper(sd));
        hyper.sigma_n = hyper.sigma_n.max(noise_floor);
        if (k - 1) % cfg.gp.hyper_every == 0 && cfg.gp.hyper_iters > 0 {
            let search = HyperSearch {
                iters: cfg.gp.hyper_iters,
                sigma_n: (noise_floor, 1e6),
                max_points: cfg.gp.search_points,
                ..HyperSearch::default()
            };
            hyper = gp_optimize_hypers_with(&scaler.apply_rows(&z), &y, hyper, &search)?;
        }
        self.hyper = Some(hyper);
        let record = GpRecord::from_training(&z, &y, hyper, cfg.gp.prior_mean, scaler.clone());
        Ok((
            GpReturnModel::fit_with_prior(&z, &y, hyper, scaler, cfg.gp.prior_mean)?,
            record,
        ))
    }

    fn rollouts(
        &self,
        k: usize,
        policies: &[GaussianOptionPolicy],
        stats: &[OptionStats],
        gp: &GpReturnModel,
    ) -> Result<Vec<Rollout>> {
        let env = &self.env;
        let cfg = self.cfg;
        let opts: Vec<(&GaussianOptionPolicy, usize)> = policies
            .iter()
            .zip(stats)
            .map(|(p, s)| (p, s.samples))
            .collect();
        let rolls: Vec<Result<Rollout>> = (0..cfg.rollouts_per_iter)
            .into_par_iter()
            .map(|j| {
                let mut rng = RngStream::new(cfg.seed, streams::rollout(k, j));
                let s = env.sample_context(&mut rng);
                let sel = select_option(&opts, gp, &s, cfg.gating, &mut rng)?;
                let xi = policies[sel.option].sample(&s, &mut rng)?;
                let xi: Vec<f64> = xi.iter().copied().collect();
                let r = env.evaluate(&s, &xi)?;
                let old_log = mixture_old_log_density(policies, &sel.gate_probs, &s, &xi)?;
                Ok(Rollout {
                    sample: Sample::new(s, xi, r)?,
                    old_log,
                    option: sel.option,
                })
            })
            .collect();
        rolls.into_iter().collect()
    }

    fn make_bundle(&self, gp: GpRecord) -> PolicyBundle {
        PolicyBundle {
            environment: self.env.clone(),
            features: self.fmap.clone(),
            gating: self.cfg.gating,
            options: self
                .policies
                .iter()
                .map(OptionRecord::from_policy)
                .collect(),
            gp,
        }
    }
}

/// Normalized weights capped at `factor · √n / n` and renormalized.
fn truncate_weights(w: &[f64], factor: f64) -> Vec<f64> {
    if factor <= 0.0 {
        return w.to_vec();
    }
    let n = w.len() as f64;
    let cap = factor * n.sqrt() / n;
    let clipped: Vec<f64> = w.iter().map(|v| v.min(cap)).collect();
    let z: f64 = clipped.iter().sum();
    clipped.iter().map(|v| v / z).collect()
}

/// Evenly spaced indices into `0..n`, at most `cap` of them, always
/// including the newest.
fn thin(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let stride = n as f64 / cap as f64;
    (0..cap)
        .map(|i| n - 1 - (i as f64 * stride) as usize)
        .rev()
        .collect()
}

/// Columns shifted and scaled by their weighted moments. The scale is
/// floored relative to the unweighted spread so a column on which the
/// weights have collapsed stays finite.
fn standardize_weighted(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = x.clone();
    for j in 0..d {
        let col = x.column(j);
        let m: f64 = col.iter().zip(w).map(|(v, w)| v * w).sum();
        let var: f64 = col.iter().zip(w).map(|(v, w)| w * (v - m) * (v - m)).sum();
        let mu = col.sum() / n as f64;
        let raw_var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-3 * raw_var.sqrt()).max(1e-12);
        for i in 0..n {
            out[(i, j)] = (x[(i, j)] - m) / sd;
        }
    }
    out
}

fn embed_points(xi: &DMatrix<f64>, cfg: &HpsdeConfig, k: usize) -> Result<DMatrix<f64>> {
    let n = xi.nrows();
    let ecfg = cfg.embedding_config();
    if n <= EMBED_MAX_POINTS {
        return laplacian_eigenmaps(xi, &ecfg)?.embed_all(xi);
    }
    // Evenly spaced subset, rotated per iteration so every sample is used
    // for the graph eventually.
    let stride = n as f64 / EMBED_MAX_POINTS as f64;
    let shift = k % stride.ceil().max(1.0) as usize;
    let idx: Vec<usize> = (0..EMBED_MAX_POINTS)
        .map(|i| ((i as f64 * stride) as usize + shift).min(n - 1))
        .collect();
    let emb = laplacian_eigenmaps(&xi.select_rows(&idx), &ecfg)?;
    let mut out = DMatrix::zeros(n, emb.out_dim());
    for i in 0..n {
        let row: Vec<f64> = xi.row(i).iter().copied().collect();
        for (c, v) in emb.extend(&row)?.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    Ok(out)
}

/// Previous policy whose mean at the members' weighted mean context is
/// closest to their weighted mean parameter.
fn nearest_previous<'p>(
    previous: &[&'p GaussianOptionPolicy],
    members: &[&Sample],
    weights: &[f64],
) -> Result<&'p GaussianOptionPolicy> {
    let total: f64 = weights.iter().sum();
    let uniform = vec![1.0; members.len()];
    let (w, total) = if total > 0.0 {
        (weights, total)
    } else {
        (&uniform[..], members.len() as f64)
    };
    let ds = members[0].context.len();
    let dx = members[0].traj_param.len();
    let mut s_bar = vec![0.0; ds];
    let mut x_bar = vec![0.0; dx];
    for (m, wi) in members.iter().zip(w) {
        for (a, v) in s_bar.iter_mut().zip(&m.context) {
            *a += wi * v / total;
        }
        for (a, v) in x_bar.iter_mut().zip(&m.traj_param) {
            *a += wi * v / total;
        }
    }
    let mut best = previous[0];
    let mut best_d = f64::INFINITY;
    for p in previous {
        let mu = p.mean(&s_bar)?;
        let d: f64 = mu.iter().zip(&x_bar).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = p;
        }
    }
    Ok(best)
}
