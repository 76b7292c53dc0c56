//! The query-flooding parameter duplication (QPD) adversary.
//!
//! For a logistic target the attacker sends `n + 1` linearly independent
//! queries, duplicating each one `r` times. `r` starts at 2 and doubles until
//! the 95% confidence interval of every query's mean response is shorter
//! than a threshold. The averaged responses are mapped back through the
//! logit and the coefficients recovered with Cramer's rule. Nonlinear
//! targets are approximated by a shadow network trained on denoised answers.

pub mod linalg;
pub mod stats;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{fit_nn, sigmoid, Classifier, LogisticModel, NeuralModel, TrainConfig};
use crate::rng::{derive_seed, seeded};

pub use linalg::{cramer_solve, determinant, direct_solve};
pub use stats::{
    ci_gaussian, ci_laplace, ci_laplace_with, hypothesis_test_noise, CIResult, LaplaceCalibration, NoiseFamily,
    NoiseFit,
};

/// Minimum `|det|` of the augmented query matrix.
pub const QUERY_DET_MIN: f64 = 1e-9;
/// Averaged probabilities are clamped to `[LOGIT_CLAMP, 1 - LOGIT_CLAMP]`
/// before the logit transform.
pub const LOGIT_CLAMP: f64 = 1e-6;
pub const DEFAULT_CI_THRESHOLD: f64 = 0.05;
pub const DEFAULT_R_CAP: usize = 1 << 20;
const MAX_QUERY_ATTEMPTS: usize = 100;

/// A black-box prediction API as seen by the adversary.
pub trait QueryEndpoint {
    fn dim(&self) -> usize;

    fn submit(&mut self, query: &[f64]) -> Result<f64>;
}

impl<E: QueryEndpoint + ?Sized> QueryEndpoint for &mut E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn submit(&mut self, query: &[f64]) -> Result<f64> {
        (**self).submit(query)
    }
}

/// `n + 1` queries in `n` dimensions whose ones-augmented matrix is
/// nonsingular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatrix {
    rows: Vec<Vec<f64>>,
}

impl QueryMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::InvalidConfig("query matrix needs at least two rows".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
        let qm = Self { rows };
        let det = qm.determinant();
        if det.abs() <= QUERY_DET_MIN {
            return Err(Error::Singular { det });
        }
        Ok(qm)
    }

    pub fn dim(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Each query followed by a constant 1 (the intercept column).
    pub fn augmented(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut a = r.clone();
                a.push(1.0);
                a
            })
            .collect()
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.augmented())
    }
}

/// Samples query rows uniformly in `[-1, 1]^n`, resampling until the
/// augmented determinant clears [`QUERY_DET_MIN`].
pub fn build_query_matrix(n: usize, seed: u64) -> Result<QueryMatrix> {
    if n == 0 {
        return Err(Error::InvalidConfig("query dimension must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    for _ in 0..MAX_QUERY_ATTEMPTS {
        let rows: Vec<Vec<f64>> =
            (0..=n).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
        if let Ok(qm) = QueryMatrix::new(rows) {
            return Ok(qm);
        }
    }
    Err(Error::QueryConstruction { n, attempts: MAX_QUERY_ATTEMPTS })
}

/// `r` responses for each of a fixed list of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatedResponses {
    pub per_query: Vec<Vec<f64>>,
}

impl DuplicatedResponses {
    pub fn r(&self) -> usize {
        self.per_query.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Largest acceptable 95% CI length for any query's mean response.
    pub ci_threshold: f64,
    pub r_cap: usize,
    /// Re-send all `r` copies on every doubling instead of topping up.
    pub strict_alg1: bool,
    /// Skip the search and use exactly this many copies.
    pub fixed_r: Option<usize>,
    /// Keep probability of a known randomized-response layer; responses are
    /// de-biased with `(y - (1 - keep)) / (2 keep - 1)` before use.
    pub assumed_keep: Option<f64>,
    /// Restrict de-biasing to responses with `|y - 0.5| < zone`. A flipped
    /// confidence `1 - p` stays in the zone, so answers outside it are exact.
    pub debias_zone: Option<f64>,
    pub laplace_calibration: LaplaceCalibration,
    /// Number of shadow-model training queries; defaults to `20 (n + 1)`.
    pub shadow_samples: Option<usize>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            ci_threshold: DEFAULT_CI_THRESHOLD,
            r_cap: DEFAULT_R_CAP,
            strict_alg1: false,
            fixed_r: None,
            assumed_keep: None,
            debias_zone: None,
            laplace_calibration: LaplaceCalibration::Pivotal,
            shadow_samples: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if !(self.ci_threshold > 0.0) {
            return Err(Error::InvalidConfig("ci_threshold must be positive".into()));
        }
        if self.fixed_r == Some(0) {
            return Err(Error::InvalidConfig("fixed_r must be at least 1".into()));
        }
        if self.r_cap < 2 {
            return Err(Error::InvalidConfig("r_cap must be at least 2".into()));
        }
        if let Some(k) = self.assumed_keep {
            if !(k > 0.5 && k <= 1.0) {
                return Err(Error::InvalidConfig("assumed_keep must lie in (0.5, 1]".into()));
            }
        }
        Ok(())
    }

    fn transform(&self, y: f64) -> f64 {
        match (self.assumed_keep, self.debias_zone) {
            (Some(_), Some(zone)) if (y - 0.5).abs() >= zone => y,
            (Some(k), _) => (y - (1.0 - k)) / (2.0 * k - 1.0),
            (None, _) => y,
        }
    }
}

/// Outcome of the duplication search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSearch {
    pub r: usize,
    pub responses: DuplicatedResponses,
    /// Largest CI length over queries at the final `r` (0 when `r < 2`).
    pub max_ci_length: f64,
    pub family: NoiseFamily,
    pub queries_sent: usize,
    pub converged: bool,
}

/// Doubling search over `r` for the rows of a query matrix.
pub fn find_optimal_r<E: QueryEndpoint + ?Sized>(api: &mut E, q: &QueryMatrix, cfg: &AttackConfig) -> Result<RSearch> {
    duplicate_until_confident(api, q.rows(), cfg)
}

/// Duplicates every query until all mean-response CIs are no longer than
/// `cfg.ci_threshold`, doubling `r` from 2.
///
/// Copies are sent round-robin (the whole query list once per copy).
/// Responses from earlier rounds are kept and only the missing copies are
/// sent, unless `strict_alg1` asks for a full re-send each round. Exceeding
/// `r_cap` returns [`Error::RCapExceeded`] carrying the partial search.
pub fn duplicate_until_confident<E: QueryEndpoint + ?Sized>(
    api: &mut E,
    queries: &[Vec<f64>],
    cfg: &AttackConfig,
) -> Result<RSearch> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(Error::Empty("query list".into()));
    }
    let mut per_query: Vec<Vec<f64>> = vec![Vec::new(); queries.len()];
    let mut sent = 0;
    let mut r = cfg.fixed_r.unwrap_or(2);
    loop {
        if cfg.strict_alg1 {
            per_query.iter_mut().for_each(Vec::clear);
        }
        let have = per_query[0].len();
        for _ in have..r {
            for (q, out) in queries.iter().zip(per_query.iter_mut()) {
                out.push(cfg.transform(api.submit(q)?));
                sent += 1;
            }
        }
        let (max_len, family) = interval_lengths(&per_query, cfg.laplace_calibration)?;
        let search = |converged: bool, per_query: Vec<Vec<f64>>| RSearch {
            r,
            responses: DuplicatedResponses { per_query },
            max_ci_length: max_len,
            family,
            queries_sent: sent,
            converged,
        };
        if cfg.fixed_r.is_some() {
            return Ok(search(true, per_query));
        }
        if max_len <= cfg.ci_threshold {
            return Ok(search(true, per_query));
        }
        if r.saturating_mul(2) > cfg.r_cap {
            return Err(Error::RCapExceeded { r_cap: cfg.r_cap, partial: Box::new(search(false, per_query)) });
        }
        r *= 2;
    }
}

/// Identifies the noise family from residuals pooled over all queries (the
/// noise is shared), then returns the largest per-query CI length.
fn interval_lengths(per_query: &[Vec<f64>], calibration: LaplaceCalibration) -> Result<(f64, NoiseFamily)> {
    if per_query[0].len() < 2 {
        return Ok((f64::INFINITY, NoiseFamily::Gaussian));
    }
    let residuals: Vec<f64> = per_query
        .iter()
        .flat_map(|ys| {
            let med = stats::median(ys);
            ys.iter().map(move |y| y - med)
        })
        .collect();
    let family = if residuals.len() >= 8 {
        hypothesis_test_noise(&residuals)?.family
    } else {
        NoiseFamily::Gaussian
    };
    let mut max_len: f64 = 0.0;
    for ys in per_query {
        let len = stats::ci_for(family, ys, calibration)?.length;
        max_len = max_len.max(if len.is_nan() { f64::INFINITY } else { len });
    }
    Ok((max_len, family))
}

/// Per-query arithmetic mean of the duplicated responses.
pub fn denoise(responses: &DuplicatedResponses) -> Result<Vec<f64>> {
    responses
        .per_query
        .iter()
        .map(|ys| {
            if ys.is_empty() {
                Err(Error::Empty("response list".into()))
            } else {
                Ok(stats::mean(ys))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionKind {
    LinearSolve,
    Shadow,
}

/// Coefficients recovered by equation solving. As a classifier it answers
/// `σ(aᵀx + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedModel {
    pub a: Vec<f64>,
    pub b: f64,
    pub kind: ExtractionKind,
    pub queries_used: usize,
    /// Largest difference between the Cramer solution and a direct LU solve.
    pub solve_discrepancy: f64,
}

impl ExtractedModel {
    pub fn as_logistic(&self) -> LogisticModel {
        LogisticModel::new(self.a.clone(), self.b)
    }
}

impl Classifier for ExtractedModel {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.a.len() {
            return Err(Error::DimensionMismatch { expected: self.a.len(), got: x.len() });
        }
        Ok(sigmoid(self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b))
    }
}

/// Solves the augmented system `[Q | 1] (a, b)ᵀ = z` by Cramer's rule and
/// records how far a direct LU solve disagrees.
pub fn solve_cramer(q: &QueryMatrix, z: &[f64]) -> Result<ExtractedModel> {
    let aug = q.augmented();
    let mut coeffs = cramer_solve(&aug, z)?;
    let direct = direct_solve(&aug, z)?;
    let solve_discrepancy = coeffs.iter().zip(&direct).map(|(c, d)| (c - d).abs()).fold(0.0, f64::max);
    let b = coeffs.pop().expect("n + 1 coefficients");
    Ok(ExtractedModel { a: coeffs, b, kind: ExtractionKind::LinearSolve, queries_used: 0, solve_discrepancy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model: ExtractedModel,
    pub query_matrix: QueryMatrix,
    pub r: usize,
    pub converged: bool,
    pub max_ci_length: f64,
    pub family: NoiseFamily,
}

fn search_or_partial(result: Result<RSearch>) -> Result<RSearch> {
    match result {
        Ok(s) => Ok(s),
        Err(Error::RCapExceeded { partial, .. }) => Ok(*partial),
        Err(e) => Err(e),
    }
}

pub fn logit_of_mean(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Full QPD pipeline against a logistic target. Hitting the `r` cap is not
/// fatal: the coefficients are solved from whatever was collected and the
/// report is marked unconverged.
pub fn attack_logistic<E: QueryEndpoint + ?Sized>(api: &mut E, cfg: &AttackConfig) -> Result<AttackReport> {
    let n = api.dim();
    let q = build_query_matrix(n, cfg.seed)?;
    attack_logistic_with(api, q, cfg)
}

/// [`attack_logistic`] with a caller-chosen query matrix.
pub fn attack_logistic_with<E: QueryEndpoint + ?Sized>(
    api: &mut E,
    q: QueryMatrix,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    if q.dim() != api.dim() {
        return Err(Error::DimensionMismatch { expected: api.dim(), got: q.dim() });
    }
    let search = search_or_partial(find_optimal_r(api, &q, cfg))?;
    let z: Vec<f64> = denoise(&search.responses)?.into_iter().map(logit_of_mean).collect();
    let mut model = solve_cramer(&q, &z)?;
    model.queries_used = search.queries_sent;
    Ok(AttackReport {
        model,
        query_matrix: q,
        r: search.r,
        converged: search.converged,
        max_ci_length: search.max_ci_length,
        family: search.family,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    pub model: NeuralModel,
    pub samples: usize,
    pub r: usize,
    pub queries_used: usize,
    pub converged: bool,
}

/// Shadow-model extraction for nonlinear targets: `s` uniform queries in
/// `[-1, 1]^n` are duplicated adaptively, averaged, and used as soft targets
/// for a one-hidden-layer network. Constant answers yield a constant model.
pub fn attack_shadow<E: QueryEndpoint + ?Sized>(
    api: &mut E,
    cfg: &AttackConfig,
    train_cfg: &TrainConfig,
) -> Result<ShadowReport> {
    train_cfg.validate()?;
    let n = api.dim();
    let s = cfg.shadow_samples.unwrap_or(20 * (n + 1));
    if s == 0 {
        return Err(Error::InvalidConfig("shadow_samples must be at least 1".into()));
    }
    let mut rng = seeded(derive_seed(cfg.seed, 0x5AD0));
    let queries: Vec<Vec<f64>> =
        (0..s).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    let search = search_or_partial(duplicate_until_confident(api, &queries, cfg))?;
    let targets: Vec<f64> = denoise(&search.responses)?.into_iter().map(|z| z.clamp(0.0, 1.0)).collect();
    let (lo, hi) = targets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let model = if hi - lo < 1e-12 { NeuralModel::constant(n, lo) } else { fit_nn(&queries, &targets, train_cfg) };
    Ok(ShadowReport { model, samples: s, r: search.r, queries_used: search.queries_sent, converged: search.converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: Vec<f64>,
        b: f64,
        calls: usize,
    }

    impl QueryEndpoint for Linear {
        fn dim(&self) -> usize {
            self.a.len()
        }

        fn submit(&mut self, q: &[f64]) -> Result<f64> {
            self.calls += 1;
            Ok(self.a.iter().zip(q).map(|(a, x)| a * x).sum::<f64>() + self.b)
        }
    }

    #[test]
    fn one_dimensional_queries_are_distinct() {
        let q = build_query_matrix(1, 3).unwrap();
        assert_eq!(q.rows().len(), 2);
        assert_ne!(q.rows()[0][0], q.rows()[1][0]);
    }

    #[test]
    fn three_dimensional_matrix_is_nonsingular() {
        let q = build_query_matrix(3, 8).unwrap();
        assert_eq!((q.rows().len(), q.dim()), (4, 3));
        let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| q.augmented()[i][j]);
        assert!(m.determinant().abs() > QUERY_DET_MIN);
    }

    #[test]
    fn canonical_basis_is_accepted() {
        let q = QueryMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((q.determinant().abs() - 1.0).abs() < 1e-15);
        assert!(QueryMatrix::new(vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).is_err());
        assert!(build_query_matrix(0, 0).is_err());
    }

    #[test]
    fn cramer_examples() {
        let q = QueryMatrix::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let m = solve_cramer(&q, &[3.0, 5.0]).unwrap();
        assert!((m.a[0] - 2.0).abs() < 1e-15 && (m.b - 3.0).abs() < 1e-15);

        // e1 -> 6, e2 -> 7, 0 -> 4 gives a = (2, 3), b = 4
        let q = QueryMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let m = solve_cramer(&q, &[6.0, 7.0, 4.0]).unwrap();
        assert!((m.a[0] - 2.0).abs() < 1e-15 && (m.a[1] - 3.0).abs() < 1e-15 && (m.b - 4.0).abs() < 1e-15);
        assert!(m.solve_discrepancy < 1e-12);
    }

    #[test]
    fn logit_round_trip_recovers_model() {
        let truth = LogisticModel::new(vec![0.8, -1.1, 0.4, 2.0], -0.3);
        let q = build_query_matrix(4, 17).unwrap();
        let z: Vec<f64> = q.rows().iter().map(|x| truth.logit(x).unwrap()).collect();
        let m = solve_cramer(&q, &z).unwrap();
        for (got, want) in m.a.iter().chain([&m.b]).zip(truth.a.iter().chain([&truth.b])) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn denoise_cases() {
        let r = DuplicatedResponses { per_query: vec![vec![4.0, 6.0], vec![7.5]] };
        assert_eq!(denoise(&r).unwrap(), vec![5.0, 7.5]);
        assert!(denoise(&DuplicatedResponses { per_query: vec![vec![]] }).is_err());
    }

    #[test]
    fn noiseless_endpoint_stops_at_two() {
        let mut api = Linear { a: vec![1.0, 2.0], b: 0.5, calls: 0 };
        let q = build_query_matrix(2, 1).unwrap();
        let s = find_optimal_r(&mut api, &q, &AttackConfig::default()).unwrap();
        assert_eq!((s.r, s.max_ci_length, s.queries_sent, api.calls), (2, 0.0, 6, 6));
        assert!(s.converged);
    }

    #[test]
    fn vacuous_threshold_stops_at_two() {
        struct Noisy(crate::rng::LabRng);
        impl QueryEndpoint for Noisy {
            fn dim(&self) -> usize {
                1
            }
            fn submit(&mut self, _: &[f64]) -> Result<f64> {
                Ok(self.0.random_range(-1.0..1.0))
            }
        }
        let q = build_query_matrix(1, 1).unwrap();
        let cfg = AttackConfig { ci_threshold: 1e6, ..Default::default() };
        assert_eq!(find_optimal_r(&mut Noisy(seeded(0)), &q, &cfg).unwrap().r, 2);
    }

    #[test]
    fn strict_mode_resends_everything() {
        struct Alternating(u64);
        impl QueryEndpoint for Alternating {
            fn dim(&self) -> usize {
                1
            }
            fn submit(&mut self, _: &[f64]) -> Result<f64> {
                self.0 += 1;
                Ok((self.0 % 2) as f64)
            }
        }
        let q = build_query_matrix(1, 1).unwrap();
        let cfg = AttackConfig { ci_threshold: 0.5, ..Default::default() };
        let lazy = find_optimal_r(&mut Alternating(0), &q, &cfg).unwrap();
        let strict = find_optimal_r(&mut Alternating(0), &q, &AttackConfig { strict_alg1: true, ..cfg }).unwrap();
        assert_eq!(lazy.r, strict.r);
        assert_eq!(lazy.queries_sent, lazy.r * 2);
        let rounds: usize = std::iter::successors(Some(2usize), |r| Some(r * 2)).take_while(|&r| r <= strict.r).sum();
        assert_eq!(strict.queries_sent, rounds * 2);
    }

    #[test]
    fn cap_returns_partial_result() {
        struct Coin(crate::rng::LabRng);
        impl QueryEndpoint for Coin {
            fn dim(&self) -> usize {
                1
            }
            fn submit(&mut self, _: &[f64]) -> Result<f64> {
                Ok(self.0.random::<f64>())
            }
        }
        let q = build_query_matrix(1, 1).unwrap();
        let cfg = AttackConfig { ci_threshold: 1e-4, r_cap: 64, ..Default::default() };
        match find_optimal_r(&mut Coin(seeded(1)), &q, &cfg) {
            Err(Error::RCapExceeded { r_cap, partial }) => {
                assert_eq!(r_cap, 64);
                assert_eq!(partial.r, 64);
                assert!(!partial.converged);
                assert!(partial.responses.per_query.iter().all(|v| v.len() == 64));
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn debias_transform() {
        let cfg = AttackConfig { assumed_keep: Some(0.8), ..Default::default() };
        assert!((cfg.transform(0.8) - 1.0).abs() < 1e-12);
        assert!((cfg.transform(0.2) - 0.0).abs() < 1e-12);
        assert!(AttackConfig { assumed_keep: Some(0.5), ..Default::default() }.validate().is_err());
        let zoned = AttackConfig { debias_zone: Some(0.125), ..cfg };
        assert_eq!(zoned.transform(0.9), 0.9);
        assert!((zoned.transform(0.55) - 0.5833333333333334).abs() < 1e-12);
    }
}
