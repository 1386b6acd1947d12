//! Trajectory sampling, the replicated estimation study, and bootstrap
//! forecast bands.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{fit, forward_pass, FitConfig};
use crate::expand::{expand_model, ExtendedHmm};
use crate::linalg;
use crate::phmodel::PhTypeHmm;
use crate::reservoir::{moran_from_model, MoranChain};
use crate::rng::{derive_seed, pick_index, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub regime: usize,
    pub start: usize,
    pub duration: usize,
    /// The path ended before the sojourn did.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub regimes: Vec<usize>,
    /// Extended (regime, phase) state index per step.
    pub states: Vec<usize>,
    pub signals: Vec<f64>,
    pub segments: Vec<Segment>,
}

/// Sample `n` steps: draw the regime from `beta`, run its phase chain until
/// absorption while emitting one signal per step, then jump. A sojourn of
/// length `t` covers `t` steps including the entry step. A single-regime
/// model renews in place, so its consecutive segments share the regime.
pub fn sample_path(m: &PhTypeHmm, n: usize, rng: &mut StreamRng) -> Result<SamplePath> {
    if n == 0 {
        return Err(Error::invalid("path length must be at least 1"));
    }
    let d = m.regimes();
    let offsets: Vec<usize> = m
        .layout()
        .iter()
        .scan(0, |acc, &f| {
            let o = *acc;
            *acc += f;
            Some(o)
        })
        .collect();
    let mut regimes = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut signals = Vec::with_capacity(n);
    let mut segments = Vec::new();

    let mut regime = pick_index(rng, m.beta());
    let mut phase = m.sojourn(regime).start(rng);
    let mut seg_start = 0;
    for step in 0..n {
        regimes.push(regime);
        states.push(offsets[regime] + phase);
        signals.push(m.emission(regime).sample(rng));
        match m.sojourn(regime).step(phase, rng) {
            Some(next) => phase = next,
            None => {
                segments.push(Segment {
                    regime,
                    start: seg_start,
                    duration: step + 1 - seg_start,
                    censored: false,
                });
                seg_start = step + 1;
                if d > 1 {
                    let row: Vec<f64> = m.jump().row(regime).iter().copied().collect();
                    regime = pick_index(rng, &row);
                }
                phase = m.sojourn(regime).start(rng);
            }
        }
    }
    if seg_start < n {
        segments.push(Segment {
            regime,
            start: seg_start,
            duration: n - seg_start,
            censored: true,
        });
    }
    Ok(SamplePath {
        regimes,
        states,
        signals,
        segments,
    })
}

/// Law of the hidden extended state one step after the last observation:
/// the terminal filtered law pushed through the transition matrix.
pub fn forecast_initial_law(e: &ExtendedHmm, obs: &[f64]) -> Result<Vec<f64>> {
    let fwd = forward_pass(e, obs)?;
    let last: Vec<f64> = fwd.forward.row(obs.len() - 1).iter().copied().collect();
    Ok(linalg::vec_mat(&last, e.transition()))
}

/// Terminal filtered law `P(X_N | y_1..y_N)`.
pub fn terminal_filtered_law(e: &ExtendedHmm, obs: &[f64]) -> Result<Vec<f64>> {
    let fwd = forward_pass(e, obs)?;
    Ok(fwd.forward.row(obs.len() - 1).iter().copied().collect())
}

/// Sample the extended chain for `n` steps from `initial`.
pub fn sample_extended(
    e: &ExtendedHmm,
    initial: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Vec<(usize, f64)> {
    let p = e.transition();
    let mut out = Vec::with_capacity(n);
    let mut state = pick_index(rng, initial);
    for step in 0..n {
        out.push((state, e.state_emission(state).sample(rng)));
        if step + 1 < n {
            let row: Vec<f64> = p.row(state).iter().copied().collect();
            state = pick_index(rng, &row);
        }
    }
    out
}

pub const DEFAULT_LEVELS: [f64; 4] = [0.05, 0.25, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBands {
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation per step.
    pub std_dev: Vec<f64>,
    /// `quantiles[step][k]` at `levels[k]`; pointwise, not simultaneous.
    pub quantiles: Vec<Vec<f64>>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `b` independent paths of length `horizon` started from `initial` (an
/// extended-state law, default `beta~`); path `k` uses stream `k` of `seed`.
pub fn forecast(
    m: &PhTypeHmm,
    horizon: usize,
    b: usize,
    seed: u64,
    levels: &[f64],
    initial: Option<&[f64]>,
) -> Result<ForecastBands> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    if b < 2 {
        return Err(Error::invalid("forecast needs at least two bootstrap paths"));
    }
    if levels.is_empty() || levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::invalid(format!("quantile levels {levels:?} must lie in [0, 1]")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("quantile levels must be strictly increasing"));
    }
    let e = expand_model(m);
    let init = match initial {
        Some(v) => {
            if v.len() != e.states() {
                return Err(Error::Dimension {
                    what: "forecast initial law".into(),
                    expected: e.states(),
                    found: v.len(),
                });
            }
            linalg::probability_vector(v, "forecast initial law")?
        }
        None => e.initial().to_vec(),
    };
    let paths: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            sample_extended(&e, &init, horizon, &mut rng)
                .into_iter()
                .map(|(_, y)| y)
                .collect()
        })
        .collect();

    let mut bands = ForecastBands {
        horizon,
        replicates: b,
        seed,
        levels: levels.to_vec(),
        mean: Vec::with_capacity(horizon),
        std_dev: Vec::with_capacity(horizon),
        quantiles: Vec::with_capacity(horizon),
        min: Vec::with_capacity(horizon),
        max: Vec::with_capacity(horizon),
    };
    for h in 0..horizon {
        let mut col: Vec<f64> = paths.iter().map(|p| p[h]).collect();
        let mean = col.iter().sum::<f64>() / b as f64;
        let var = col.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        col.sort_by(f64::total_cmp);
        bands.mean.push(mean);
        bands.std_dev.push(var.sqrt());
        bands
            .quantiles
            .push(levels.iter().map(|&q| quantile_sorted(&col, q)).collect());
        bands.min.push(col[0]);
        bands.max.push(col[b - 1]);
    }
    Ok(bands)
}

/// Exact per-step forecast means: regime law propagated from `initial`
/// times the regime emission means.
pub fn forecast_mean(m: &PhTypeHmm, horizon: usize, initial: Option<&[f64]>) -> Vec<f64> {
    let e = expand_model(m);
    let mut dist = initial.map_or_else(|| e.initial().to_vec(), <[f64]>::to_vec);
    let means: Vec<f64> = e.emissions().iter().map(|g| g.mean()).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(linalg::dot(&e.regime_mass(&dist), &means));
        dist = linalg::vec_mat(&dist, e.transition());
    }
    out
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub replicates: usize,
    pub length: usize,
    pub fit: FitConfig,
    pub seed: u64,
    pub omega: f64,
    pub capacity: f64,
    pub max_states: Option<usize>,
    pub zero_band: f64,
    /// Reliability and availability are reported for `n = 1..=horizon`.
    pub horizon: usize,
}

/// Dependability of one Moran chain: curves indexed `[state][n - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dependability {
    pub matrix: DMatrix<f64>,
    /// Row 0 (empty state) is empty.
    pub reliability: Vec<Vec<f64>>,
    pub availability: Vec<Vec<f64>>,
    /// `None` for the empty state or when the MTTF is infinite.
    pub mttf: Vec<Option<f64>>,
}

impl Dependability {
    pub fn of(chain: &MoranChain, horizon: usize) -> Result<Self> {
        let s = chain.states();
        let mut reliability = vec![Vec::new()];
        let mut mttf = vec![None];
        for v in 1..s {
            reliability.push(chain.reliability_curve(v, horizon)?[1..].to_vec());
            mttf.push(chain.mttf(v).ok());
        }
        let availability = (0..s)
            .map(|v| Ok(chain.availability_curve(v, horizon)?[1..].to_vec()))
            .collect::<Result<_>>()?;
        Ok(Self {
            matrix: chain.matrix().clone(),
            reliability,
            availability,
            mttf,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub model: PhTypeHmm,
    pub loglik: f64,
    pub iterations: usize,
    pub dependability: Dependability,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub truth: Dependability,
    pub replicates: Vec<ReplicateResult>,
    /// `(replicate index, error message)` for failed fits.
    pub failures: Vec<(usize, String)>,
    pub mean_alpha: Vec<Vec<f64>>,
    pub mean_t: Vec<DMatrix<f64>>,
    pub mean_beta: Vec<f64>,
    pub mean_jump: DMatrix<f64>,
    pub mean_emission_mean: Vec<f64>,
    pub mean_moran: DMatrix<f64>,
    pub sd_moran: DMatrix<f64>,
    pub mean_reliability: Vec<Vec<f64>>,
    pub mean_availability: Vec<Vec<f64>>,
}

/// Simulate, fit and evaluate `replicates` samples of the true model.
///
/// Replicate `r` draws its path from stream `2r` of the seed and fits with
/// seed `derive_seed(seed, 2r + 1)`. Failed fits are recorded, not fatal.
pub fn replication_study(truth: &PhTypeHmm, cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replicates < 1 || cfg.length < 2 {
        return Err(Error::invalid("study needs at least one replicate of length >= 2"));
    }
    cfg.fit.validate()?;
    let truth_chain = moran_from_model(
        &expand_model(truth),
        cfg.omega,
        cfg.capacity,
        cfg.max_states,
        cfg.zero_band,
    )?;
    let truth_dep = Dependability::of(&truth_chain, cfg.horizon)?;

    let outcomes: Vec<Result<ReplicateResult>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, 2 * r as u64);
            let path = sample_path(truth, cfg.length, &mut rng)?;
            let mut fc = cfg.fit.clone();
            fc.seed = derive_seed(cfg.seed, 2 * r as u64 + 1);
            let report = fit(&path.signals, &fc)?;
            let chain = moran_from_model(
                &expand_model(&report.model),
                cfg.omega,
                cfg.capacity,
                cfg.max_states,
                cfg.zero_band,
            )?;
            Ok(ReplicateResult {
                index: r,
                loglik: report.loglik,
                iterations: report.iterations,
                dependability: Dependability::of(&chain, cfg.horizon)?,
                model: report.model,
            })
        })
        .collect();

    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => replicates.push(v),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if replicates.is_empty() {
        return Err(Error::FitFailed {
            restarts: cfg.replicates,
            last: failures.last().map(|f| f.1.clone()).unwrap_or_default(),
        });
    }
    let k = replicates.len() as f64;
    let d = cfg.fit.regimes();
    let s = truth_chain.states();
    let avg_vec = |f: &dyn Fn(&ReplicateResult) -> Vec<f64>| -> Vec<f64> {
        let mut acc = f(&replicates[0]).iter().map(|_| 0.0).collect::<Vec<_>>();
        for r in &replicates {
            for (a, v) in acc.iter_mut().zip(f(r)) {
                *a += v / k;
            }
        }
        acc
    };
    let avg_mat = |f: &dyn Fn(&ReplicateResult) -> DMatrix<f64>| -> DMatrix<f64> {
        let mut acc = f(&replicates[0]) * 0.0;
        for r in &replicates {
            acc += f(r) / k;
        }
        acc
    };
    let mean_alpha = (0..d)
        .map(|i| avg_vec(&|r| r.model.sojourn(i).alpha().to_vec()))
        .collect();
    let mean_t = (0..d)
        .map(|i| avg_mat(&|r| r.model.sojourn(i).phase_matrix().clone()))
        .collect();
    let mean_beta = avg_vec(&|r| r.model.beta().to_vec());
    let mean_jump = avg_mat(&|r| r.model.jump().clone());
    let mean_emission_mean = avg_vec(&|r| r.model.emissions().iter().map(|g| g.mean()).collect());
    let mean_moran = avg_mat(&|r| r.dependability.matrix.clone());
    let sd_moran = if replicates.len() > 1 {
        let mut acc = DMatrix::zeros(s, s);
        for r in &replicates {
            acc += (&r.dependability.matrix - &mean_moran).map(|x| x * x);
        }
        (acc / (k - 1.0)).map(f64::sqrt)
    } else {
        DMatrix::zeros(s, s)
    };
    let mean_reliability = (0..s)
        .map(|v| avg_vec(&|r| r.dependability.reliability[v].clone()))
        .collect();
    let mean_availability = (0..s)
        .map(|v| avg_vec(&|r| r.dependability.availability[v].clone()))
        .collect();
    Ok(StudyReport {
        truth: truth_dep,
        replicates,
        failures,
        mean_alpha,
        mean_t,
        mean_beta,
        mean_jump,
        mean_emission_mean,
        mean_moran,
        sd_moran,
        mean_reliability,
        mean_availability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::EmissionFamily;
    use crate::presets;

    #[test]
    fn paths_are_seed_deterministic() {
        let m = presets::two_regime_poisson();
        let a = sample_path(&m, 200, &mut stream_rng(5, 0)).unwrap();
        let b = sample_path(&m, 200, &mut stream_rng(5, 0)).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&m, 200, &mut stream_rng(5, 1)).unwrap();
        assert_ne!(a.signals, c.signals);
    }

    #[test]
    fn dry_regime_emits_zero_and_segments_tile() {
        let m = presets::two_regime_poisson();
        let p = sample_path(&m, 500, &mut stream_rng(9, 0)).unwrap();
        for (r, y) in p.regimes.iter().zip(&p.signals) {
            if *r == 0 {
                assert_eq!(*y, 0.0);
            }
        }
        let total: usize = p.segments.iter().map(|s| s.duration).sum();
        assert_eq!(total, 500);
        for w in p.segments.windows(2) {
            assert_ne!(w[0].regime, w[1].regime);
            assert_eq!(w[0].start + w[0].duration, w[1].start);
        }
        assert!(p.segments[..p.segments.len() - 1].iter().all(|s| !s.censored));
    }

    #[test]
    fn quantile_type7() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        assert!((quantile_sorted(&x, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn two_path_bands_are_ordered() {
        let m = presets::two_regime_poisson();
        let b = forecast(&m, 5, 2, 3, &DEFAULT_LEVELS, None).unwrap();
        for h in 0..5 {
            assert!(b.quantiles[h].windows(2).all(|w| w[0] <= w[1]));
            assert!(b.min[h] <= b.mean[h] && b.mean[h] <= b.max[h]);
        }
        assert!(forecast(&m, 5, 2, 3, &[0.5, 0.2], None).is_err());
        assert!(forecast(&m, 5, 1, 3, &DEFAULT_LEVELS, None).is_err());
    }

    #[test]
    fn single_replicate_study_matches_single_fit() {
        let truth = presets::two_regime_poisson();
        let mut fc = FitConfig::new(
            vec![2, 2],
            vec![EmissionFamily::Degenerate(0.0), EmissionFamily::Poisson],
        );
        fc.restarts = 2;
        let cfg = StudyConfig {
            replicates: 1,
            length: 60,
            fit: fc.clone(),
            seed: 4,
            omega: 5.0,
            capacity: 20.0,
            max_states: None,
            zero_band: 1.0,
            horizon: 10,
        };
        let report = replication_study(&truth, &cfg).unwrap();
        let path = sample_path(&truth, 60, &mut stream_rng(4, 0)).unwrap();
        fc.seed = derive_seed(4, 1);
        let single = fit(&path.signals, &fc).unwrap();
        assert_eq!(report.replicates[0].model, single.model);
        assert_eq!(report.mean_alpha[0], single.model.sojourn(0).alpha().to_vec());
        assert_eq!(report.truth.reliability[1].len(), 10);
    }
}
