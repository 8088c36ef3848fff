//! Diagonal-covariance Gaussian mixtures fitted by expectation-maximization.
//!
//! All density math is done in log space. Cluster relevance for a query is
//! the bare component density `N(q | μ_k, Σ_k)` with the mixture weight left
//! out, so [`GmmModel::rank_components`] orders components by that value.


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{nearest_centroid, plus_plus_seeds};
use crate::scalar::Scalar;
use crate::vecmath::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// EM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative log-likelihood change `|ΔLL| / (|LL| + 1e-10)` that stops EM.
    pub tol: f64,
    pub var_floor: f64,
    pub seed: u64,
    /// Independent restarts; the highest final log-likelihood wins.
    pub n_init: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 100,
            tol: 1e-4,
            var_floor: 1e-6,
            seed: 0,
            n_init: 1,
        }
    }
}

impl FitConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        FitConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be > 0".into()));
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::InvalidArgument("var_floor must be > 0".into()));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidArgument("n_init must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent<T> {
    pub mean: Vec<T>,
    /// Diagonal of the covariance matrix.
    pub variances: Vec<T>,
    pub log_weight: f64,
}

impl<T: Scalar> GaussianComponent<T> {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// `log N(x | mean, diag(variances))`.
    pub fn log_density(&self, x: &[T]) -> f64 {
        let mut log_det = 0.0;
        let mut maha = 0.0;
        for ((xi, mi), vi) in x.iter().zip(&self.mean).zip(&self.variances) {
            let v = vi.as_f64();
            let d = xi.as_f64() - mi.as_f64();
            log_det += v.ln();
            maha += d * d / v;
        }
        -0.5 * (self.mean.len() as f64 * LN_2PI + log_det + maha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    pub dimension: usize,
    pub components: Vec<GaussianComponent<T>>,
    /// Hard assignment (argmax responsibility) of each fitted point.
    pub assignments: Vec<usize>,
    /// Total log-likelihood of the fitted points under the returned parameters.
    pub final_log_likelihood: f64,
    /// Total log-likelihood after each E-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// `⌈√n⌉`, clamped to `[1, n]`.
pub fn component_count(n_points: usize) -> usize {
    if n_points <= 1 {
        return 1;
    }
    let mut k = (n_points as f64).sqrt() as usize;
    while k * k < n_points {
        k += 1;
    }
    while k > 1 && (k - 1) * (k - 1) >= n_points {
        k -= 1;
    }
    k.min(n_points)
}

impl<T: Scalar> GmmModel<T> {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn component_log_density(&self, k: usize, q: &[T]) -> Result<f64> {
        if q.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: q.len(),
            });
        }
        let c = self.components.get(k).ok_or_else(|| {
            Error::InvalidArgument(format!("component {k} out of range 0..{}", self.k()))
        })?;
        Ok(c.log_density(q))
    }

    /// Component indices by descending query log-density, ties by index.
    pub fn rank_components(&self, q: &[T]) -> Result<Vec<usize>> {
        let scores = self.query_log_densities(q)?;
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order)
    }

    pub fn query_log_densities(&self, q: &[T]) -> Result<Vec<f64>> {
        (0..self.k())
            .map(|k| self.component_log_density(k, q))
            .collect()
    }

    /// Fitted point indices hard-assigned to `cluster`.
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == cluster)
            .map(|(i, _)| i)
    }

    pub fn to_dump(&self) -> GmmDump {
        GmmDump {
            k: self.k(),
            dimension: self.dimension,
            components: self
                .components
                .iter()
                .map(|c| ComponentDump {
                    mean: c.mean.iter().map(|v| v.as_f64()).collect(),
                    variances: c.variances.iter().map(|v| v.as_f64()).collect(),
                    weight: c.weight(),
                })
                .collect(),
        }
    }

    /// Rebuilds a model from a dump. The result has no assignments and a
    /// log-likelihood of `-inf`; it is meant for density evaluation only.
    pub fn from_dump(dump: &GmmDump) -> Result<Self> {
        if dump.k == 0 || dump.components.len() != dump.k {
            return Err(Error::Schema(format!(
                "dump declares k={} but has {} components",
                dump.k,
                dump.components.len()
            )));
        }
        let total: f64 = dump.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Schema(format!("weights sum to {total}, not 1")));
        }
        let mut components = Vec::with_capacity(dump.k);
        for (i, c) in dump.components.iter().enumerate() {
            if c.mean.len() != dump.dimension || c.variances.len() != dump.dimension {
                return Err(Error::Schema(format!("component {i} has the wrong dimension")));
            }
            if c.variances.iter().any(|v| !(*v > 0.0)) || !(c.weight > 0.0) {
                return Err(Error::Schema(format!(
                    "component {i} has a non-positive variance or weight"
                )));
            }
            components.push(GaussianComponent {
                mean: c.mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                variances: c.variances.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                log_weight: c.weight.ln(),
            });
        }
        Ok(GmmModel {
            dimension: dump.dimension,
            components,
            assignments: Vec::new(),
            final_log_likelihood: f64::NEG_INFINITY,
            log_likelihood_trace: Vec::new(),
            converged: false,
        })
    }
}

/// JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDump {
    pub k: usize,
    pub dimension: usize,
    pub components: Vec<ComponentDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDump {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub weight: f64,
}

/// Fits a `k`-component diagonal GMM.
///
/// Means start from k-means++ seeds refined by one assignment pass; initial
/// variances and weights come from the resulting clusters. A single point is
/// returned as one component with `var_floor` variances and no EM.
pub fn fit_gmm<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    k: usize,
    cfg: &FitConfig,
) -> Result<GmmModel<T>> {
    cfg.validate()?;
    let n = points.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::Degenerate(format!(
            "{n} points cannot support {k} components"
        )));
    }
    let dim = points[0].as_ref().len();
    let mut data = Vec::with_capacity(n * dim);
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
        for v in p {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(Error::Degenerate("non-finite coordinate".into()));
            }
            data.push(v);
        }
    }
    let data = Data { values: data, dim };

    let fit = if n == 1 {
        single_point(&data, cfg.var_floor)
    } else {
        let mut best: Option<Fit> = None;
        for restart in 0..cfg.n_init {
            let seed = if restart == 0 {
                cfg.seed
            } else {
                mix_seed(cfg.seed, restart as u64)
            };
            let fit = run_em(&data, points, k, cfg, seed)?;
            if best.as_ref().map_or(true, |b| fit.final_ll > b.final_ll) {
                best = Some(fit);
            }
        }
        best.expect("n_init >= 1")
    };
    Ok(fit.into_model(dim))
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Data {
    values: Vec<f64>,
    dim: usize,
}

impl Data {
    fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

struct Params {
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

struct Fit {
    params: Params,
    assignments: Vec<usize>,
    final_ll: f64,
    trace: Vec<f64>,
    converged: bool,
}

impl Fit {
    fn into_model<T: Scalar>(self, dimension: usize) -> GmmModel<T> {
        let Params {
            log_weights,
            means,
            variances,
        } = self.params;
        let components = log_weights
            .into_iter()
            .zip(means)
            .zip(variances)
            .map(|((log_weight, mean), vars)| GaussianComponent {
                mean: mean.into_iter().map(T::from_f64_lossy).collect(),
                variances: vars.into_iter().map(T::from_f64_lossy).collect(),
                log_weight,
            })
            .collect();
        GmmModel {
            dimension,
            components,
            assignments: self.assignments,
            final_log_likelihood: self.final_ll,
            log_likelihood_trace: self.trace,
            converged: self.converged,
        }
    }
}

fn single_point(data: &Data, var_floor: f64) -> Fit {
    let mean = data.row(0).to_vec();
    let variances = vec![var_floor; data.dim];
    let ll = -0.5 * data.dim as f64 * (LN_2PI + var_floor.ln());
    Fit {
        params: Params {
            log_weights: vec![0.0],
            means: vec![mean],
            variances: vec![variances],
        },
        assignments: vec![0],
        final_ll: ll,
        trace: vec![ll],
        converged: true,
    }
}

fn initialize<T: Scalar, P: AsRef<[T]>>(
    data: &Data,
    points: &[P],
    k: usize,
    var_floor: f64,
    seed: u64,
) -> Params {
    let n = data.len();
    let dim = data.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<Vec<f64>> = plus_plus_seeds(points, k, &mut rng)
        .into_iter()
        .map(|i| data.row(i).to_vec())
        .collect();
    let labels: Vec<usize> = (0..n)
        .map(|i| nearest_centroid(data.row(i), &seeds).0)
        .collect();

    let mut counts = vec![0usize; k];
    let mut means = vec![vec![0.0; dim]; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (m, x) in means[c].iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            means[c] = seeds[c].clone();
        } else {
            let cnt = counts[c] as f64;
            means[c].iter_mut().for_each(|m| *m /= cnt);
        }
    }
    let mut variances = vec![vec![0.0; dim]; k];
    for (i, &c) in labels.iter().enumerate() {
        for ((v, x), m) in variances[c].iter_mut().zip(data.row(i)).zip(&means[c]) {
            *v += (x - m) * (x - m);
        }
    }
    for c in 0..k {
        let cnt = counts[c].max(1) as f64;
        variances[c]
            .iter_mut()
            .for_each(|v| *v = (*v / cnt).max(var_floor));
    }
    // Empty clusters get the weight of a single point.
    let total: f64 = counts.iter().map(|&c| c.max(1) as f64).sum();
    let log_weights = counts
        .iter()
        .map(|&c| (c.max(1) as f64 / total).ln())
        .collect();
    Params {
        log_weights,
        means,
        variances,
    }
}

/// Fills `log_resp` with `log π_k + log N(x_i | k)` normalized per row and
/// returns the total log-likelihood.
fn e_step(data: &Data, params: &Params, log_resp: &mut [f64]) -> Result<f64> {
    let k = params.means.len();
    let consts: Vec<f64> = params
        .variances
        .iter()
        .zip(&params.log_weights)
        .map(|(vars, lw)| {
            lw - 0.5 * (data.dim as f64 * LN_2PI + vars.iter().map(|v| v.ln()).sum::<f64>())
        })
        .collect();
    let inv_vars: Vec<Vec<f64>> = params
        .variances
        .iter()
        .map(|vars| vars.iter().map(|v| 1.0 / v).collect())
        .collect();

    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        let row = &mut log_resp[i * k..(i + 1) * k];
        for c in 0..k {
            let maha: f64 = x
                .iter()
                .zip(&params.means[c])
                .zip(&inv_vars[c])
                .map(|((xi, mi), iv)| {
                    let d = xi - mi;
                    d * d * iv
                })
                .sum();
            row[c] = consts[c] - 0.5 * maha;
        }
        let lse = log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "point {i} has zero likelihood under every component; var_floor may be too small"
            )));
        }
        row.iter_mut().for_each(|r| *r -= lse);
        debug_assert!((row.iter().map(|r| r.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        total += lse;
    }
    Ok(total)
}

fn m_step(data: &Data, log_resp: &[f64], k: usize, var_floor: f64) -> Params {
    let dim = data.dim;
    let n = data.len();
    let resp: Vec<f64> = log_resp.iter().map(|r| r.exp()).collect();
    let mut nk = vec![10.0 * f64::EPSILON; k];
    let mut means = vec![vec![0.0; dim]; k];
    for i in 0..n {
        let x = data.row(i);
        for c in 0..k {
            let r = resp[i * k + c];
            nk[c] += r;
            for (m, xi) in means[c].iter_mut().zip(x) {
                *m += r * xi;
            }
        }
    }
    for c in 0..k {
        means[c].iter_mut().for_each(|m| *m /= nk[c]);
    }
    let mut variances = vec![vec![0.0; dim]; k];
    for i in 0..n {
        let x = data.row(i);
        for c in 0..k {
            let r = resp[i * k + c];
            for ((v, xi), m) in variances[c].iter_mut().zip(x).zip(&means[c]) {
                let d = xi - m;
                *v += r * d * d;
            }
        }
    }
    for c in 0..k {
        variances[c]
            .iter_mut()
            .for_each(|v| *v = (*v / nk[c]).max(var_floor));
    }
    let total: f64 = nk.iter().sum();
    Params {
        log_weights: nk.iter().map(|w| (w / total).ln()).collect(),
        means,
        variances,
    }
}

fn run_em<T: Scalar, P: AsRef<[T]>>(
    data: &Data,
    points: &[P],
    k: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<Fit> {
    let n = data.len();
    let mut params = initialize(data, points, k, cfg.var_floor, seed);
    let mut log_resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..=cfg.max_iters {
        let ll = e_step(data, &params, &mut log_resp)?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            converged = (ll - prev).abs() / (ll.abs() + 1e-10) < cfg.tol;
        }
        trace.push(ll);
        if converged || iter == cfg.max_iters {
            break;
        }
        params = m_step(data, &log_resp, k, cfg.var_floor);
    }
    let assignments = (0..n)
        .map(|i| {
            let row = &log_resp[i * k..(i + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(Fit {
        params,
        assignments,
        final_ll: *trace.last().expect("at least one E-step"),
        trace,
        converged,
    })
}
