//! Hilbert-Schmidt Independence Criterion with Gaussian kernels.
//!
//! The estimator is the biased trace form
//! `HSIC(X, Y) = tr(K_X W K_Y W) / (n - 1)^2` with `W = I - J/n`, and the
//! kernel convention is `k(x, x') = exp(-|x - x'|^2 / (2 sigma^2))`.
//!
//! Internally `tr(K W L W)` is evaluated as `sum_ij (W K W)_ij L_ij`, which
//! lets the training loss center the input Gram matrix once per batch and
//! reuse it for every hidden layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `n` samples of dimension `d`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    values: Matrix,
}

impl SampleSet {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::invalid("sample set contains non-finite values"));
        }
        Ok(SampleSet { values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        SampleSet::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Adds `offset` to every sample.
    pub fn translated(&self, offset: &[f64]) -> SampleSet {
        let mut values = self.values.clone();
        for i in 0..values.rows() {
            for (v, o) in values.row_mut(i).iter_mut().zip(offset) {
                *v += o;
            }
        }
        SampleSet { values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    MedianHeuristic,
    Fixed(f64),
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::MedianHeuristic
    }
}

impl BandwidthPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthPolicy::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(Error::invalid(
                format!("fixed bandwidth must be positive, got {s}"),
            )),
            _ => Ok(()),
        }
    }

    /// Bandwidth for `x` under this policy.
    pub fn bandwidth(&self, x: &SampleSet) -> Result<f64> {
        match *self {
            BandwidthPolicy::MedianHeuristic => median_bandwidth(x),
            BandwidthPolicy::Fixed(s) => {
                self.validate()?;
                Ok(s)
            }
        }
    }
}

/// Weight of the bottleneck term and how kernel widths are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsicConfig {
    pub beta: f64,
    pub bandwidth: BandwidthPolicy,
}

impl HsicConfig {
    pub fn new(beta: f64, bandwidth: BandwidthPolicy) -> Result<Self> {
        let cfg = HsicConfig { beta, bandwidth };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be a finite value >= 0, got {}",
                self.beta
            )));
        }
        self.bandwidth.validate()
    }
}

/// Entry `(i, j)` is `|x_i - x_j|^2`.
pub fn pairwise_sq_dists(x: &SampleSet) -> Matrix {
    let n = x.n();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let xi = x.sample(i);
        for j in (i + 1)..n {
            let d: f64 = xi
                .iter()
                .zip(x.sample(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// `sqrt(median_{i<j} |x_i - x_j|^2 / 2)`, falling back to 1 when the median is 0.
pub fn median_bandwidth(x: &SampleSet) -> Result<f64> {
    if x.n() < 2 {
        return Err(Error::invalid(format!(
            "median bandwidth needs at least 2 samples, got {}",
            x.n()
        )));
    }
    Ok(median_bandwidth_from_dists(&pairwise_sq_dists(x)))
}

pub(crate) fn median_bandwidth_from_dists(dists: &Matrix) -> f64 {
    let n = dists.rows();
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            upper.push(dists[(i, j)]);
        }
    }
    let m = upper.len();
    let (below, &mut mid, _) = upper.select_nth_unstable_by(m / 2, f64::total_cmp);
    let median = if m % 2 == 1 {
        mid
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + mid)
    };
    if median > 0.0 {
        (median / 2.0).sqrt()
    } else {
        1.0
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )))
    }
}

fn gram_from_dists(dists: &Matrix, sigma: f64) -> Matrix {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let n = dists.rows();
    let mut out = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = (-dists[(i, j)] * inv).exp();
            out[(i, j)] = k;
            out[(j, i)] = k;
        }
    }
    out
}

pub fn gaussian_gram(x: &SampleSet, sigma: f64) -> Result<Matrix> {
    check_sigma(sigma)?;
    Ok(gram_from_dists(&pairwise_sq_dists(x), sigma))
}

/// `I - J/n`.
pub fn centering_matrix(n: usize) -> Matrix {
    let mut w = Matrix::filled(n, n, -1.0 / n as f64);
    for i in 0..n {
        w[(i, i)] += 1.0;
    }
    w
}

/// Double-centers a symmetric matrix: returns `W K W`.
fn double_center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut out = k.clone();
    for i in 0..n {
        for j in 0..n {
            // column means equal row means for symmetric K
            out[(i, j)] = k[(i, j)] - row_means[i] - row_means[j] + grand;
        }
    }
    out
}

fn check_pair(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.n() != y.n() {
        return Err(Error::shape(format!(
            "HSIC needs paired samples, got {} and {}",
            x.n(),
            y.n()
        )));
    }
    if x.n() < 2 {
        return Err(Error::invalid(format!(
            "HSIC needs at least 2 samples, got {}",
            x.n()
        )));
    }
    Ok(())
}

/// Centered Gram matrix of one side of the estimator, reusable against many `y`.
#[derive(Clone, Debug)]
pub struct CenteredGram {
    centered: Matrix,
    sigma: f64,
}

impl CenteredGram {
    pub fn new(x: &SampleSet, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::from_dists(&pairwise_sq_dists(x), sigma))
    }

    /// Bandwidth chosen by `policy` on `x`.
    pub fn with_policy(x: &SampleSet, policy: BandwidthPolicy) -> Result<Self> {
        let dists = pairwise_sq_dists(x);
        let sigma = match policy {
            BandwidthPolicy::MedianHeuristic => {
                if x.n() < 2 {
                    return Err(Error::invalid("median bandwidth needs at least 2 samples"));
                }
                median_bandwidth_from_dists(&dists)
            }
            BandwidthPolicy::Fixed(s) => {
                check_sigma(s)?;
                s
            }
        };
        Ok(Self::from_dists(&dists, sigma))
    }

    fn from_dists(dists: &Matrix, sigma: f64) -> Self {
        CenteredGram {
            centered: double_center(&gram_from_dists(dists, sigma)),
            sigma,
        }
    }

    pub fn n(&self) -> usize {
        self.centered.rows()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check(&self, y: &SampleSet) -> Result<()> {
        if y.n() != self.n() {
            return Err(Error::shape(format!(
                "HSIC needs paired samples, got {} and {}",
                self.n(),
                y.n()
            )));
        }
        if y.n() < 2 {
            return Err(Error::invalid(format!(
                "HSIC needs at least 2 samples, got {}",
                y.n()
            )));
        }
        Ok(())
    }

    pub fn hsic(&self, y: &SampleSet, sigma_y: f64) -> Result<f64> {
        self.check(y)?;
        let l = gaussian_gram(y, sigma_y)?;
        Ok(self.hsic_with_gram(&l))
    }

    fn hsic_with_gram(&self, l: &Matrix) -> f64 {
        let n = self.n() as f64;
        let s: f64 = self
            .centered
            .as_slice()
            .iter()
            .zip(l.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        s / ((n - 1.0) * (n - 1.0))
    }

    /// HSIC value together with its gradient with respect to every entry of `y`.
    /// `sigma_y` is held constant.
    pub fn hsic_and_grad(&self, y: &SampleSet, sigma_y: f64) -> Result<(f64, Matrix)> {
        self.check(y)?;
        let l = gaussian_gram(y, sigma_y)?;
        Ok(self.value_and_grad(y, &l, sigma_y))
    }

    fn value_and_grad(&self, y: &SampleSet, l: &Matrix, sigma_y: f64) -> (f64, Matrix) {
        let value = self.hsic_with_gram(l);
        let n = y.n();
        let d = y.d();
        let coef = -2.0 / ((n as f64 - 1.0).powi(2) * sigma_y * sigma_y);
        let mut grad = Matrix::zeros(n, d);
        for i in 0..n {
            let yi = y.sample(i);
            let gi = grad.row_mut(i);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = coef * self.centered[(i, j)] * l[(i, j)];
                for ((g, a), b) in gi.iter_mut().zip(yi).zip(y.sample(j)) {
                    *g += w * (a - b);
                }
            }
        }
        (value, grad)
    }

    /// HSIC value and the bandwidth chosen for `y` by `policy`.
    pub fn hsic_with_policy(&self, y: &SampleSet, policy: BandwidthPolicy) -> Result<(f64, f64)> {
        self.check(y)?;
        let dists = pairwise_sq_dists(y);
        let sigma = match policy {
            BandwidthPolicy::MedianHeuristic => median_bandwidth_from_dists(&dists),
            BandwidthPolicy::Fixed(s) => {
                check_sigma(s)?;
                s
            }
        };
        Ok((self.hsic_with_gram(&gram_from_dists(&dists, sigma)), sigma))
    }

    /// HSIC value, the bandwidth used for `y` and the gradient with respect
    /// to `y`. Under the median heuristic the bandwidth is itself a function
    /// of `y` and its derivative is included, so the gradient is that of the
    /// full estimator (away from ties in the pairwise distances).
    pub fn hsic_and_grad_with_policy(
        &self,
        y: &SampleSet,
        policy: BandwidthPolicy,
    ) -> Result<(f64, f64, Matrix)> {
        self.check(y)?;
        if let BandwidthPolicy::Fixed(s) = policy {
            let (value, grad) = self.hsic_and_grad(y, s)?;
            return Ok((value, s, grad));
        }
        let dists = pairwise_sq_dists(y);
        let (median, pairs) = median_pairs(&dists);
        if median <= 0.0 {
            let (value, grad) = self.value_and_grad(y, &gram_from_dists(&dists, 1.0), 1.0);
            return Ok((value, 1.0, grad));
        }
        let sigma = (median / 2.0).sqrt();
        let l = gram_from_dists(&dists, sigma);
        let (value, mut grad) = self.value_and_grad(y, &l, sigma);
        let norm = (y.n() as f64 - 1.0).powi(2);
        let d_sigma: f64 = self
            .centered
            .as_slice()
            .iter()
            .zip(l.as_slice())
            .zip(dists.as_slice())
            .map(|((k, l), d)| k * l * d)
            .sum::<f64>()
            / (sigma.powi(3) * norm);
        let d_median = d_sigma / (4.0 * sigma);
        for (p, q, w) in pairs {
            let coef = 2.0 * w * d_median;
            for k in 0..y.d() {
                let diff = y.sample(p)[k] - y.sample(q)[k];
                grad[(p, k)] += coef * diff;
                grad[(q, k)] -= coef * diff;
            }
        }
        Ok((value, sigma, grad))
    }
}

/// Median of the upper-triangle distances and the pair(s) it is taken from,
/// with their weights in the median.
fn median_pairs(dists: &Matrix) -> (f64, Vec<(usize, usize, f64)>) {
    let n = dists.rows();
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            upper.push((dists[(i, j)], i, j));
        }
    }
    let m = upper.len();
    let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)));
    let (below, &mut (b, p, q), _) = upper.select_nth_unstable_by(m / 2, order);
    if m % 2 == 1 {
        (b, vec![(p, q, 1.0)])
    } else {
        let &(a, i, j) = below.iter().max_by(|x, y| order(x, y)).expect("at least two pairs");
        (0.5 * (a + b), vec![(i, j, 0.5), (p, q, 0.5)])
    }
}

/// Biased empirical HSIC, `tr(K_X W K_Y W) / (n - 1)^2`.
pub fn hsic_biased(x: &SampleSet, y: &SampleSet, sigma_x: f64, sigma_y: f64) -> Result<f64> {
    check_pair(x, y)?;
    CenteredGram::new(x, sigma_x)?.hsic(y, sigma_y)
}

/// Gradient of [`hsic_biased`] with respect to `y`, bandwidths held fixed.
pub fn hsic_grad_wrt_y(x: &SampleSet, y: &SampleSet, sigma_x: f64, sigma_y: f64) -> Result<Matrix> {
    check_pair(x, y)?;
    Ok(CenteredGram::new(x, sigma_x)?.hsic_and_grad(y, sigma_y)?.1)
}
