//! Plant dynamics, network constants and seeded noise.
//!
//! Every sub-system owns a [`PlantModel`]; the shared network is described by
//! a single [`NetworkModel`]. Disturbances come from [`NoiseStream`]s, one
//! independent counter-based stream per (replication, sub-system) pair, so that
//! two runs that differ only in their network policy see the same noise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as zero when factoring
/// covariances.
pub const PSD_CLAMP: f64 = 1e-10;

/// Constants of one linear sub-system `x' = A x + B u + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub index: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Stage state weight.
    pub q1: DMatrix<f64>,
    /// Terminal state weight.
    pub q2: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_x0: DMatrix<f64>,
    pub mean_x0: DVector<f64>,
    /// Largest tolerated move towards a faster link.
    pub alpha: usize,
    /// Largest tolerated move towards a slower link.
    pub beta: usize,
}

impl PlantModel {
    /// Unit weights, `Σ_x0 = Σ_w`, zero initial mean and zero tolerances.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        PlantModel {
            index: 0,
            q1: DMatrix::identity(n, n),
            q2: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
            sigma_x0: sigma_w.clone(),
            mean_x0: DVector::zeros(n),
            sigma_w,
            a,
            b,
            alpha: 0,
            beta: 0,
        }
    }

    /// Scalar plant, handy in tests and examples.
    pub fn scalar(a: f64, b: f64, q1: f64, q2: f64, r: f64, sigma_w: f64) -> Self {
        let mut p = PlantModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, sigma_w),
        );
        p.q1[(0, 0)] = q1;
        p.q2[(0, 0)] = q2;
        p.r[(0, 0)] = r;
        p
    }

    pub fn with_tolerances(mut self, alpha: usize, beta: usize) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Checks shapes and definiteness. `max_delay` bounds the tolerances when
    /// the paired network is known.
    pub fn validate(&self, max_delay: Option<usize>) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        let shape = |name: &'static str, mat: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if mat.nrows() != r || mat.ncols() != c {
                return Err(Error::Dimension {
                    context: name,
                    expected: format!("{r}x{c}"),
                    actual: format!("{}x{}", mat.nrows(), mat.ncols()),
                });
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("plant {}: {name} has non-finite entries", self.index)));
            }
            Ok(())
        };
        shape("A", &self.a, n, n)?;
        shape("B", &self.b, n, m)?;
        shape("Q1", &self.q1, n, n)?;
        shape("Q2", &self.q2, n, n)?;
        shape("R", &self.r, m, m)?;
        shape("SigmaW", &self.sigma_w, n, n)?;
        shape("SigmaX0", &self.sigma_x0, n, n)?;
        if self.mean_x0.len() != n {
            return Err(Error::Dimension {
                context: "meanX0",
                expected: n.to_string(),
                actual: self.mean_x0.len().to_string(),
            });
        }
        for (name, mat, strict) in [
            ("Q1", &self.q1, false),
            ("Q2", &self.q2, false),
            ("R", &self.r, true),
            ("SigmaW", &self.sigma_w, true),
            ("SigmaX0", &self.sigma_x0, true),
        ] {
            check_definite(mat, strict)
                .map_err(|why| Error::config(format!("plant {}: {name} {why}", self.index)))?;
        }
        if let Some(d) = max_delay {
            if self.alpha > d || self.beta > d {
                return Err(Error::config(format!(
                    "plant {}: tolerances ({}, {}) exceed max delay {d}",
                    self.index, self.alpha, self.beta
                )));
            }
        }
        Ok(())
    }
}

fn check_definite(mat: &DMatrix<f64>, strict: bool) -> std::result::Result<(), String> {
    let asym = (mat - mat.transpose()).abs().max();
    if asym > 1e-9 * (1.0 + mat.abs().max()) {
        return Err("is not symmetric".into());
    }
    let min_eig = SymmetricEigen::new(mat.clone()).eigenvalues.min();
    if strict && min_eig <= 0.0 {
        return Err(format!("is not positive definite (min eigenvalue {min_eig:e})"));
    }
    if !strict && min_eig < -PSD_CLAMP {
        return Err(format!("is not positive semi-definite (min eigenvalue {min_eig:e})"));
    }
    Ok(())
}

/// A transmission link choice `ℓ_d`, stored by its delay index rather than
/// as a one-hot vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkSelection(pub usize);

impl LinkSelection {
    pub fn delay(self) -> usize {
        self.0
    }

    pub fn one_hot(self, max_delay: usize) -> Vec<u8> {
        (0..=max_delay).map(|d| u8::from(d == self.0)).collect()
    }

    /// Inverse of [`one_hot`](Self::one_hot); `None` unless exactly one entry is set.
    pub fn from_one_hot(bits: &[u8]) -> Option<Self> {
        let mut found = None;
        for (d, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 if found.is_none() => found = Some(LinkSelection(d)),
                _ => return None,
            }
        }
        found
    }
}

/// The latency-tiered links `ℓ_0..ℓ_D`, their prices and capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkModel {
    pub max_delay: usize,
    pub prices: Vec<f64>,
    pub capacities: Vec<usize>,
}

impl NetworkModel {
    pub fn new(prices: Vec<f64>, capacities: Vec<usize>) -> Result<Self> {
        let net = NetworkModel {
            max_delay: prices.len().saturating_sub(1),
            prices,
            capacities,
        };
        net.validate(None)?;
        Ok(net)
    }

    pub fn num_links(&self) -> usize {
        self.max_delay + 1
    }

    pub fn price(&self, link: LinkSelection) -> f64 {
        self.prices[link.0]
    }

    /// `Δ = [0, 1, …, D]`.
    pub fn delay_vec(&self) -> Vec<usize> {
        (0..=self.max_delay).collect()
    }

    /// Validates the link tables; with `num_plants` also checks that the total
    /// capacity can carry every sub-system each step.
    pub fn validate(&self, num_plants: Option<usize>) -> Result<()> {
        let links = self.num_links();
        if self.prices.len() != links || self.capacities.len() != links {
            return Err(Error::config(format!(
                "network with D = {} needs {links} prices and capacities, got {} and {}",
                self.max_delay,
                self.prices.len(),
                self.capacities.len()
            )));
        }
        if self.prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("link prices must be finite"));
        }
        if self.prices.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config("link prices must be strictly decreasing in the delay"));
        }
        if self.prices[links - 1] < 0.0 {
            return Err(Error::config("link prices must be non-negative"));
        }
        if let Some(n) = num_plants {
            let total: usize = self.capacities.iter().sum();
            if total < n {
                return Err(Error::config(format!(
                    "total link capacity {total} cannot serve {n} sub-systems"
                )));
            }
        }
        Ok(())
    }

    /// True when some link cannot take every sub-system at once, i.e. the
    /// allocation problem is not trivially `ϑ = θ`.
    pub fn is_contended(&self, num_plants: usize) -> bool {
        self.capacities.iter().any(|&c| c < num_plants)
    }
}

/// Counter-based deterministic noise source (ChaCha20 keyed by the run seed,
/// one stream id per logical owner).
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, replication: u64, subsystem: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream((replication << 24) ^ subsystem);
        NoiseStream { rng }
    }

    pub fn from_seed(seed: u64) -> Self {
        NoiseStream::new(seed, 0, 0)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.rng.random::<f64>()
    }
}

/// Symmetric square root `S = V diag(√λ) Vᵀ` of a PSD matrix.
pub fn symmetric_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::Dimension {
            context: "covariance",
            expected: "square".into(),
            actual: format!("{}x{}", cov.nrows(), cov.ncols()),
        });
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_CLAMP {
            return Err(Error::config(format!(
                "covariance is not positive semi-definite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Pre-factored Gaussian `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                context: "gaussian covariance",
                expected: format!("{0}x{0}", mean.len()),
                actual: format!("{}x{}", cov.nrows(), cov.ncols()),
            });
        }
        let factor = symmetric_sqrt(cov)?;
        let zero = factor.iter().all(|&v| v == 0.0);
        Ok(GaussianSampler { mean, factor, zero })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut NoiseStream) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.standard_normal());
        if self.zero {
            return self.mean.clone();
        }
        &self.mean + &self.factor * z
    }
}

/// One draw from `N(mean, cov)`.
pub fn sample_gaussian(
    rng: &mut NoiseStream,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(mean.clone(), cov)?.sample(rng))
}

/// `A x + B u + w`.
pub fn step_plant(
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    model: &PlantModel,
) -> Result<DVector<f64>> {
    let n = model.state_dim();
    let m = model.input_dim();
    if x.len() != n || w.len() != n || u.len() != m {
        return Err(Error::Dimension {
            context: "step_plant",
            expected: format!("x,w ∈ R^{n}, u ∈ R^{m}"),
            actual: format!("x ∈ R^{}, w ∈ R^{}, u ∈ R^{}", x.len(), w.len(), u.len()),
        });
    }
    Ok(&model.a * x + &model.b * u + w)
}
