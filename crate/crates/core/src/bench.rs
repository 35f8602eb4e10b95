//! Scaling and approximation benchmarks.
//!
//! Wall time and allocation growth of kernelized versus dense attention,
//! kernel-estimate error over `(τ, m)` grids, and convergence of the
//! kernelized Gumbel argmax to the exact categorical distribution.
//!
//! Allocation figures come from [`CountingAllocator`], which only reports
//! when the running binary installs it as its global allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use crate::attention::kernelized_gumbel_attention;
use crate::error::{Error, Result};
use crate::features::{prf_map, ProjectionMatrix};
use crate::gumbel::{gumbel_from_uniform, total_variation, GumbelDraws, Temperature};
use crate::model::SampleConfig;
use crate::oracle::{dense_gumbel_attention, MAX_ORACLE_NODES};
use crate::rng::{self, derive_seed};
use crate::tensor::{dot, Tensor};

static INSTALLED: AtomicBool = AtomicBool::new(false);
static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static LARGEST: AtomicUsize = AtomicUsize::new(0);

/// System allocator wrapper tracking live, peak and largest-single bytes.
///
/// Install with `#[global_allocator] static A: CountingAllocator = CountingAllocator;`.
pub struct CountingAllocator;

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record_alloc(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
            record_alloc(new_size);
        }
        p
    }
}

fn record_alloc(size: usize) {
    INSTALLED.store(true, Ordering::Relaxed);
    let now = CURRENT.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(now, Ordering::Relaxed);
    LARGEST.fetch_max(size, Ordering::Relaxed);
}

/// Allocation totals over a measured region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Peak live bytes above the level at the start of the region.
    pub peak_bytes: usize,
    /// Largest single allocation inside the region.
    pub largest_bytes: usize,
}

/// Whether a [`CountingAllocator`] is serving this process.
pub fn allocator_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Run `f` and report its allocation footprint. Meaningful only on one
/// thread with the counting allocator installed; zeros otherwise.
pub fn measure_allocations<T>(f: impl FnOnce() -> T) -> (T, AllocStats) {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    LARGEST.store(0, Ordering::Relaxed);
    let out = f();
    let stats = AllocStats {
        peak_bytes: PEAK.load(Ordering::Relaxed).saturating_sub(base),
        largest_bytes: LARGEST.load(Ordering::Relaxed),
    };
    (out, stats)
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope over a single distinct x"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of `log y` on `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_slope(&lx, &ly)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Kernelized,
    Dense,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Kernelized => "kernelized",
            Method::Dense => "dense",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub median_seconds: f64,
    pub peak_bytes: usize,
    pub largest_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn method_rows(&self, method: Method) -> impl Iterator<Item = &ScalingRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Log-log slope of median time against `N`, over at least four sizes.
    pub fn time_slope(&self, method: Method) -> Result<f64> {
        let (n, t): (Vec<f64>, Vec<f64>) = self
            .method_rows(method)
            .map(|r| (r.n as f64, r.median_seconds))
            .unzip();
        if n.len() < 4 {
            return Err(Error::invalid(format!(
                "{method} slope needs at least 4 sizes, got {}",
                n.len()
            )));
        }
        log_log_slope(&n, &t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,N,d,m,median_seconds,peak_bytes\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{}",
                r.method, r.n, r.d, r.m, r.median_seconds, r.peak_bytes
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingConfig {
    pub kernelized_sizes: Vec<usize>,
    /// Sizes for the dense oracle; capped at the oracle limit.
    pub dense_sizes: Vec<usize>,
    pub d: usize,
    pub m: usize,
    pub samples: usize,
    pub tau: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            kernelized_sizes: vec![1024, 2048, 4096, 8192, 16384],
            dense_sizes: vec![256, 512, 1024, 2048],
            d: 16,
            m: 32,
            samples: 1,
            tau: 0.25,
            repeats: 5,
            seed: 0,
        }
    }
}

fn check_sizes(sizes: &[usize], what: &str) -> Result<()> {
    if sizes.len() < 4 {
        return Err(Error::invalid(format!(
            "{what} needs at least 4 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::invalid(format!(
            "{what} sizes must be positive and ascending"
        )));
    }
    Ok(())
}

/// `N x d` standard normals scaled by `1/√d`.
fn random_inputs(n: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let s = 1.0 / (d as f64).sqrt();
    let data = (0..n * d)
        .map(|_| s * rng::standard_normal(&mut r))
        .collect();
    Tensor::from_vec(n, d, data).expect("length matches")
}

fn time_method(
    method: Method,
    n: usize,
    cfg: &ScalingConfig,
    proj: &ProjectionMatrix,
    sc: &SampleConfig,
) -> Result<ScalingRow> {
    let base = derive_seed(cfg.seed, &[n as u64]);
    let q = random_inputs(n, cfg.d, derive_seed(base, &[0]));
    let k = random_inputs(n, cfg.d, derive_seed(base, &[1]));
    let v = random_inputs(n, cfg.d, derive_seed(base, &[2]));
    let gumbel_seed = derive_seed(base, &[3]);
    let run = || -> Result<Tensor> {
        match method {
            Method::Kernelized => kernelized_gumbel_attention(&q, &k, &v, proj, sc, gumbel_seed),
            Method::Dense => {
                let ids: Vec<usize> = (0..n).collect();
                let draws = GumbelDraws::for_nodes(gumbel_seed, sc.samples, &ids);
                dense_gumbel_attention(&q, &k, &v, &draws, Temperature::new(sc.tau)?)
            }
        }
    };
    let (warm, stats) = measure_allocations(run);
    warm?;
    let mut times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let out = run()?;
        times.push(start.elapsed().as_secs_f64());
        drop(out);
    }
    Ok(ScalingRow {
        method,
        n,
        d: cfg.d,
        m: cfg.m,
        median_seconds: median(times),
        peak_bytes: stats.peak_bytes,
        largest_bytes: stats.largest_bytes,
    })
}

/// Median-of-repeats forward time and allocation footprint of kernelized
/// Gumbel attention and the dense oracle on random inputs. One warm-up run
/// per size is discarded from timing and supplies the allocation figures.
pub fn scaling_benchmark(cfg: &ScalingConfig) -> Result<ScalingReport> {
    check_sizes(&cfg.kernelized_sizes, "kernelized")?;
    if !cfg.dense_sizes.is_empty() {
        check_sizes(&cfg.dense_sizes, "dense")?;
        if let Some(&big) = cfg.dense_sizes.iter().find(|&&n| n > MAX_ORACLE_NODES) {
            return Err(Error::OracleTooLarge(big));
        }
    }
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be >= 1"));
    }
    let sc = SampleConfig::new(cfg.samples, cfg.tau, cfg.m)?;
    let proj = ProjectionMatrix::sample(
        cfg.d,
        cfg.m,
        derive_seed(cfg.seed, &[rng::stream::PROJECTION]),
    )?;
    let mut rows = Vec::new();
    for &n in &cfg.kernelized_sizes {
        rows.push(time_method(Method::Kernelized, n, cfg, &proj, &sc)?);
    }
    for &n in &cfg.dense_sizes {
        rows.push(time_method(Method::Dense, n, cfg, &proj, &sc)?);
    }
    Ok(ScalingReport { rows })
}

/// A uniformly random direction of norm `r` in `d` dimensions.
fn sphere_point(d: usize, r: f64, stream: &mut impl rand::RngCore) -> Vec<f64> {
    let x: Vec<f64> = (0..d).map(|_| rng::standard_normal(stream)).collect();
    let norm = dot(&x, &x).sqrt();
    x.into_iter().map(|v| r * v / norm).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremSweepConfig {
    pub taus: Vec<f64>,
    pub ms: Vec<usize>,
    /// Norm of both inputs.
    pub r: f64,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TheoremSweepConfig {
    fn default() -> Self {
        TheoremSweepConfig {
            taus: vec![0.1, 0.25, 0.5, 1.0],
            ms: vec![64, 256, 1024, 4096],
            r: 1.0,
            d: 4,
            trials: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub tau: f64,
    pub m: usize,
    pub median_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn error(&self, tau: f64, m: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.tau == tau && r.m == m)
            .map(|r| r.median_error)
    }

    /// Per `τ`, whether the median error is nonincreasing as `m` grows.
    pub fn nonincreasing_in_m(&self) -> Vec<(f64, bool)> {
        let mut taus: Vec<f64> = self.rows.iter().map(|r| r.tau).collect();
        taus.dedup();
        taus.into_iter()
            .map(|tau| {
                let mut rs: Vec<&ErrorRow> = self.rows.iter().filter(|r| r.tau == tau).collect();
                rs.sort_by_key(|r| r.m);
                (
                    tau,
                    rs.windows(2)
                        .all(|w| w[1].median_error <= w[0].median_error),
                )
            })
            .collect()
    }

    /// Per `m`, whether the median error is nondecreasing as `τ` shrinks.
    pub fn nondecreasing_as_tau_shrinks(&self) -> Vec<(usize, bool)> {
        let mut ms: Vec<usize> = self.rows.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        ms.into_iter()
            .map(|m| {
                let mut rs: Vec<&ErrorRow> = self.rows.iter().filter(|r| r.m == m).collect();
                rs.sort_by(|a, b| b.tau.total_cmp(&a.tau));
                (
                    m,
                    rs.windows(2)
                        .all(|w| w[1].median_error >= w[0].median_error),
                )
            })
            .collect()
    }

    /// Log-log slope of median error against `m` at a fixed `τ`.
    pub fn m_slope(&self, tau: f64) -> Result<f64> {
        let (m, e): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.tau == tau)
            .map(|r| (r.m as f64, r.median_error))
            .unzip();
        log_log_slope(&m, &e)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,m,median_error\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e}", r.tau, r.m, r.median_error);
        }
        s
    }
}

/// `φ(x)ᵀφ(y)` summed before the `1/m` normalization.
fn kernel_estimate(x: &[f64], y: &[f64], proj: &ProjectionMatrix) -> f64 {
    let half = 0.5 * (dot(x, x) + dot(y, y));
    let w = proj.weights();
    let total: f64 = (0..w.rows())
        .map(|i| (dot(w.row(i), x) + dot(w.row(i), y) - half).exp())
        .sum();
    total / w.rows() as f64
}

/// Median `|φ(x/√τ)ᵀφ(y/√τ) − exp(xᵀy/τ)|` over random pairs with
/// `‖x‖ = ‖y‖ = r`, one fresh projection per trial. Trial `t` uses the same
/// inputs for every `(τ, m)` and the same projection for every `τ`.
pub fn theorem_sweep(cfg: &TheoremSweepConfig) -> Result<ErrorTable> {
    if cfg.taus.is_empty() || cfg.ms.is_empty() || cfg.trials == 0 || cfg.d == 0 {
        return Err(Error::invalid(
            "theorem sweep needs nonempty grids, trials and d",
        ));
    }
    if !(cfg.r >= 0.0) || cfg.taus.iter().any(|t| !(*t > 0.0)) || cfg.ms.contains(&0) {
        return Err(Error::invalid(
            "theorem sweep needs r >= 0, tau > 0 and m > 0",
        ));
    }
    let mut rows = Vec::new();
    for &tau in &cfg.taus {
        let s = 1.0 / tau.sqrt();
        for &m in &cfg.ms {
            let mut errors = Vec::with_capacity(cfg.trials);
            for t in 0..cfg.trials {
                let trial_seed = derive_seed(cfg.seed, &[t as u64]);
                let mut stream = rng::rng(derive_seed(trial_seed, &[0]));
                let x = sphere_point(cfg.d, cfg.r, &mut stream);
                let y = sphere_point(cfg.d, cfg.r, &mut stream);
                let proj =
                    ProjectionMatrix::sample(cfg.d, m, derive_seed(trial_seed, &[1, m as u64]))?;
                let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
                let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
                let est = kernel_estimate(&xs, &ys, &proj);
                errors.push((est - dot(&xs, &ys).exp()).abs());
            }
            rows.push(ErrorRow {
                tau,
                m,
                median_error: median(errors),
            });
        }
    }
    Ok(ErrorTable { rows })
}

/// One query against a fixed set of keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceProblem {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
}

impl ConvergenceProblem {
    /// Keys `k_v = −b_v q̂` along the query direction, with `‖q‖ = q_norm`.
    /// Logits are `−q_norm·b_v`; the anti-aligned geometry keeps the
    /// random-feature estimate of every `exp(qᵀk_v/τ)` well conditioned.
    pub fn anti_aligned(q_norm: f64, offsets: &[f64], d: usize) -> Result<Self> {
        if d == 0 || offsets.is_empty() {
            return Err(Error::invalid("need d > 0 and at least one key"));
        }
        let mut query = vec![0.0; d];
        query[0] = q_norm;
        let keys = offsets
            .iter()
            .map(|&b| {
                let mut k = vec![0.0; d];
                k[0] = -b;
                k
            })
            .collect();
        Ok(ConvergenceProblem { query, keys })
    }

    /// `softmax_v(qᵀk_v)`.
    pub fn exact(&self) -> Vec<f64> {
        let logits: Vec<f64> = self.keys.iter().map(|k| dot(&self.query, k)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|x| x / total).collect()
    }

    fn check(&self) -> Result<()> {
        let d = self.query.len();
        if d == 0 || self.keys.is_empty() || self.keys.iter().any(|k| k.len() != d) {
            return Err(Error::invalid(
                "convergence problem needs a query and keys of equal dimension",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceConfig {
    pub taus: Vec<f64>,
    pub m: usize,
    pub trials: usize,
    /// Distinct projections; trials cycle through them.
    pub projections: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            taus: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            m: 4096,
            trials: 100_000,
            projections: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvRow {
    pub tau: f64,
    pub m: usize,
    pub tv_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvTable {
    pub rows: Vec<TvRow>,
}

impl TvTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,m,tv_distance\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e}", r.tau, r.m, r.tv_distance);
        }
        s
    }
}

/// Empirical distribution of `argmax_v c_uv` under kernelized Gumbel weights
/// `c_uv ∝ φ(q/√τ)ᵀφ(k_v/√τ)·exp(g_v/τ)`.
pub fn kernelized_argmax_distribution(
    problem: &ConvergenceProblem,
    tau: f64,
    m: usize,
    trials: usize,
    projections: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    problem.check()?;
    if !(tau > 0.0) || m == 0 || trials == 0 || projections == 0 {
        return Err(Error::invalid(
            "need tau > 0 and positive m, trials and projections",
        ));
    }
    let d = problem.query.len();
    let n = problem.keys.len();
    let s = 1.0 / tau.sqrt();
    let scale = |x: &[f64]| x.iter().map(|v| v * s).collect::<Vec<f64>>();
    let q = scale(&problem.query);
    let keys: Vec<Vec<f64>> = problem.keys.iter().map(|k| scale(k)).collect();
    let projections = projections.min(trials);
    let mut counts = vec![0usize; n];
    let mut noise = rng::rng(derive_seed(seed, &[rng::stream::GUMBEL]));
    for p in 0..projections {
        let proj = ProjectionMatrix::sample(
            d,
            m,
            derive_seed(seed, &[rng::stream::PROJECTION, p as u64]),
        )?;
        let phi_q = prf_map(&q, &proj)?;
        let log_kernel: Vec<f64> = keys
            .iter()
            .map(|k| Ok(dot(&phi_q, &prf_map(k, &proj)?).ln()))
            .collect::<Result<_>>()?;
        let share = trials / projections + usize::from(p < trials % projections);
        for _ in 0..share {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (v, lk) in log_kernel.iter().enumerate() {
                let val = lk + gumbel_from_uniform(rng::open_uniform(&mut noise)) / tau;
                if val > best_val {
                    best_val = val;
                    best = v;
                }
            }
            counts[best] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / trials as f64)
        .collect())
}

/// Total-variation distance between the kernelized Gumbel argmax
/// distribution and `softmax(qᵀk)` for each `τ`.
pub fn gumbel_convergence_sweep(
    problem: &ConvergenceProblem,
    cfg: &ConvergenceConfig,
) -> Result<TvTable> {
    if cfg.taus.is_empty() {
        return Err(Error::invalid(
            "convergence sweep needs a nonempty tau grid",
        ));
    }
    let exact = problem.exact();
    let mut rows = Vec::new();
    for (i, &tau) in cfg.taus.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let freq =
            kernelized_argmax_distribution(problem, tau, cfg.m, cfg.trials, cfg.projections, seed)?;
        rows.push(TvRow {
            tau,
            m: cfg.m,
            tv_distance: total_variation(&freq, &exact),
        });
    }
    Ok(TvTable { rows })
}
