//! Coherent Point Drift: Gaussian-kernel deformation fields and their EM
//! estimation.
//!
//! A field is parametrized by a template cloud `S` (M points), a kernel
//! width `β` and an M×3 weight matrix `W`. It moves any point `z` to
//! `z + Σᵢ g(sᵢ, z)·Wᵢ` with `g(a, b) = exp(−‖a − b‖² / 2β²)`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::{lit, Real};

/// Registration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdParams<T: Real> {
    /// Kernel width `β`.
    pub beta: T,
    /// Smoothness trade-off `λ`.
    pub lambda: T,
    /// GMM variance `σ²` (m²). Held fixed unless `update_sigma2` is set.
    pub sigma2: T,
    /// Uniform outlier weight `ω ∈ [0, 1)`.
    pub omega: T,
    pub max_iters: usize,
    /// Stop when the objective changes by less than this.
    pub tol: T,
    pub update_sigma2: bool,
}

impl<T: Real> Default for CpdParams<T> {
    fn default() -> Self {
        Self {
            beta: T::one(),
            lambda: lit(3.0),
            sigma2: lit(0.01),
            omega: lit(0.1),
            max_iters: 150,
            tol: lit(1e-5),
            update_sigma2: false,
        }
    }
}

impl<T: Real> CpdParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.beta) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !positive(self.lambda) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !positive(self.sigma2) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        if !(self.omega >= T::zero() && self.omega < T::one()) {
            return Err(Error::invalid("omega must lie in [0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !positive(self.tol) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// Dense non-rigid transformation anchored at a canonical cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField<T: Real> {
    canonical: PointCloud<T>,
    weights: DMatrix<T>,
    beta: T,
}

impl<T: Real> DeformationField<T> {
    pub fn new(canonical: PointCloud<T>, weights: DMatrix<T>, beta: T) -> Result<Self> {
        if weights.nrows() != canonical.len() || weights.ncols() != 3 {
            return Err(Error::invalid(format!(
                "weights are {}×{}, expected {}×3",
                weights.nrows(),
                weights.ncols(),
                canonical.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("deformation weights must be finite"));
        }
        if !(beta > T::zero()) {
            return Err(Error::invalid("beta must be positive"));
        }
        Ok(Self {
            canonical,
            weights,
            beta,
        })
    }

    /// `W = 0`.
    pub fn identity(canonical: PointCloud<T>, beta: T) -> Self {
        let m = canonical.len();
        Self {
            canonical,
            weights: DMatrix::zeros(m, 3),
            beta,
        }
    }

    pub fn canonical(&self) -> &PointCloud<T> {
        &self.canonical
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// `v(z) = Σᵢ g(sᵢ, z)·Wᵢ`.
    pub fn displacement(&self, z: &Vector3<T>) -> Vector3<T> {
        let scale = kernel_scale(self.beta);
        let mut v = Vector3::zeros();
        for (i, s) in self.canonical.iter().enumerate() {
            let g = ((s - z).norm_squared() * scale).exp();
            v += Vector3::new(
                self.weights[(i, 0)],
                self.weights[(i, 1)],
                self.weights[(i, 2)],
            ) * g;
        }
        v
    }

    pub fn apply_point(&self, z: &Vector3<T>) -> Vector3<T> {
        z + self.displacement(z)
    }

    /// `C + G·W`, the deformed canonical cloud.
    pub fn deformed_canonical(&self) -> PointCloud<T> {
        let g = kernel(self.canonical.points(), self.canonical.points(), self.beta);
        PointCloud::new(deform_with_kernel(
            self.canonical.points(),
            &g,
            &self.weights,
        ))
        .expect("finite field yields finite points")
        .with_frame(self.canonical.frame_id())
    }
}

#[inline]
fn kernel_scale<T: Real>(beta: T) -> T {
    -T::one() / (lit::<T>(2.0) * beta * beta)
}

pub(crate) fn kernel<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>], beta: T) -> DMatrix<T> {
    let scale = kernel_scale(beta);
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        ((a[i] - b[j]).norm_squared() * scale).exp()
    })
}

/// Gaussian kernel matrix `gᵢⱼ = exp(−‖aᵢ − bⱼ‖² / 2β²)`.
pub fn kernel_matrix<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>, beta: T) -> DMatrix<T> {
    kernel(a.points(), b.points(), beta)
}

/// Rows `sₘ + (G·W)ₘ`.
pub(crate) fn deform_with_kernel<T: Real>(
    template: &[Vector3<T>],
    g: &DMatrix<T>,
    weights: &DMatrix<T>,
) -> Vec<Vector3<T>> {
    let disp = g * weights;
    template
        .iter()
        .enumerate()
        .map(|(m, s)| s + Vector3::new(disp[(m, 0)], disp[(m, 1)], disp[(m, 2)]))
        .collect()
}

/// Warps an arbitrary cloud through the field.
pub fn apply_deformation<T: Real>(field: &DeformationField<T>, z: &PointCloud<T>) -> PointCloud<T> {
    let g = kernel(field.canonical.points(), z.points(), field.beta);
    let disp = g.transpose() * &field.weights;
    let moved = z
        .iter()
        .enumerate()
        .map(|(j, p)| p + Vector3::new(disp[(j, 0)], disp[(j, 1)], disp[(j, 2)]))
        .collect();
    PointCloud::new(moved)
        .expect("finite field yields finite points")
        .with_frame(z.frame_id())
}

/// Posterior responsibilities plus, per observed point, the log of the
/// mixture normaliser `log(Σₘ aₘₙ + c)`.
pub(crate) struct Posteriors<T: Real> {
    pub p: DMatrix<T>,
    pub log_norm: Vec<T>,
}

/// Outlier constant `ω/(1−ω)·(2πσ²)^{D/2}/N`; zero when `ω = 0`.
fn outlier_constant<T: Real>(omega: T, sigma2: T, n: usize) -> T {
    if omega == T::zero() {
        return T::zero();
    }
    omega / (T::one() - omega) * (T::two_pi() * sigma2).powf(lit(1.5)) / lit(n as f64)
}

pub(crate) fn posteriors<T: Real>(
    deformed: &[Vector3<T>],
    observed: &[Vector3<T>],
    sigma2: T,
    omega: T,
) -> Posteriors<T> {
    let m = deformed.len();
    let n = observed.len();
    let c = outlier_constant(omega, sigma2, n);
    let log_c = if c > T::zero() { Some(c.ln()) } else { None };
    let scale = -T::one() / (lit::<T>(2.0) * sigma2);
    let mut p = DMatrix::zeros(m, n);
    let mut log_norm = Vec::with_capacity(n);
    let mut col = vec![T::zero(); m];
    for (j, o) in observed.iter().enumerate() {
        let mut max = log_c.unwrap_or_else(|| -T::max_value().unwrap());
        for (k, d) in deformed.iter().enumerate() {
            col[k] = (o - d).norm_squared() * scale;
            max = max.max(col[k]);
        }
        let mut sum = log_c.map_or(T::zero(), |lc| (lc - max).exp());
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for (k, v) in col.iter().enumerate() {
            p[(k, j)] = *v * inv;
        }
        log_norm.push(max + sum.ln());
    }
    Posteriors { p, log_norm }
}

/// E-step: `P` (M×N) with `pₘₙ` the responsibility of template point `m`
/// for observed point `n`, including the uniform outlier term.
pub fn e_step<T: Real>(
    canonical: &PointCloud<T>,
    observed: &PointCloud<T>,
    weights: &DMatrix<T>,
    params: &CpdParams<T>,
) -> DMatrix<T> {
    let g = kernel(canonical.points(), canonical.points(), params.beta);
    let deformed = deform_with_kernel(canonical.points(), &g, weights);
    posteriors(&deformed, observed.points(), params.sigma2, params.omega).p
}

/// M-step: solves `(G + λσ²·d(P1)⁻¹)·W = d(P1)⁻¹·P·X − S`.
///
/// Fails with [`Error::DegenerateCorrespondence`] when a template point
/// has zero total responsibility.
pub fn m_step<T: Real>(
    g: &DMatrix<T>,
    p: &DMatrix<T>,
    canonical: &PointCloud<T>,
    observed: &PointCloud<T>,
    params: &CpdParams<T>,
) -> Result<DMatrix<T>> {
    solve_m_step(
        g,
        p,
        canonical.points(),
        observed.points(),
        params.lambda * params.sigma2,
        T::zero(),
    )
}

/// `jitter` is added to every entry of `P1` before inversion.
pub(crate) fn solve_m_step<T: Real>(
    g: &DMatrix<T>,
    p: &DMatrix<T>,
    template: &[Vector3<T>],
    observed: &[Vector3<T>],
    lambda_sigma2: T,
    jitter: T,
) -> Result<DMatrix<T>> {
    let m = template.len();
    let p1: DVector<T> = p.column_sum().add_scalar(jitter);
    if let Some(index) = p1.iter().position(|v| !(*v > T::zero())) {
        return Err(Error::DegenerateCorrespondence { index });
    }
    let x = points_matrix(observed);
    let px = p * x;
    let mut a = g.clone();
    let mut rhs = DMatrix::zeros(m, 3);
    for i in 0..m {
        let inv = T::one() / p1[i];
        a[(i, i)] += lambda_sigma2 * inv;
        for d in 0..3 {
            rhs[(i, d)] = px[(i, d)] * inv - template[i][d];
        }
    }
    solve_spd(a, rhs)
}

/// Cholesky solve, retried with a 1e-9 diagonal jitter, then LU.
pub(crate) fn solve_spd<T: Real>(a: DMatrix<T>, rhs: DMatrix<T>) -> Result<DMatrix<T>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let mut jittered = a.clone();
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += lit(1e-9);
    }
    if let Some(chol) = jittered.cholesky() {
        log::debug!("M-step system needed diagonal jitter");
        return Ok(chol.solve(&rhs));
    }
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("M-step linear system is singular".into()))
}

pub(crate) fn points_matrix<T: Real>(points: &[Vector3<T>]) -> DMatrix<T> {
    DMatrix::from_fn(points.len(), 3, |i, d| points[i][d])
}

/// Negative log-likelihood `−Σₙ log Σₘ exp(−‖xₙ − T(sₘ)‖² / 2σ²)`.
pub fn energy<T: Real>(
    canonical: &PointCloud<T>,
    observed: &PointCloud<T>,
    weights: &DMatrix<T>,
    beta: T,
    sigma2: T,
) -> T {
    let g = kernel(canonical.points(), canonical.points(), beta);
    let deformed = deform_with_kernel(canonical.points(), &g, weights);
    let post = posteriors(&deformed, observed.points(), sigma2, T::zero());
    -post.log_norm.iter().fold(T::zero(), |a, &b| a + b)
}

/// Regularised EM objective `−Σₙ log(Σₘ aₘₙ + c) + (λ/2)·tr(WᵀGW)`, with
/// `c` the outlier constant. Equals the data energy plus regulariser when
/// `ω = 0`.
pub fn objective<T: Real>(
    canonical: &PointCloud<T>,
    observed: &PointCloud<T>,
    weights: &DMatrix<T>,
    params: &CpdParams<T>,
) -> T {
    let g = kernel(canonical.points(), canonical.points(), params.beta);
    let deformed = deform_with_kernel(canonical.points(), &g, weights);
    let post = posteriors(&deformed, observed.points(), params.sigma2, params.omega);
    -post.log_norm.iter().fold(T::zero(), |a, &b| a + b) + regulariser(&g, weights, params.lambda)
}

fn regulariser<T: Real>(g: &DMatrix<T>, weights: &DMatrix<T>, lambda: T) -> T {
    let gw = g * weights;
    lambda * lit(0.5) * weights.dot(&gw)
}

/// Outcome of [`register`].
#[derive(Debug, Clone)]
pub struct Registration<T: Real> {
    pub field: DeformationField<T>,
    pub sigma2: T,
    /// Regularised objective before every M-step, plus the value at the
    /// returned weights.
    pub energy_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> Registration<T> {
    pub fn final_energy(&self) -> T {
        *self.energy_trace.last().expect("trace is never empty")
    }
}

/// Non-rigidly registers `canonical` (template) onto `target` by EM.
pub fn register<T: Real>(
    canonical: &PointCloud<T>,
    target: &PointCloud<T>,
    params: &CpdParams<T>,
) -> Result<Registration<T>> {
    params.validate()?;
    let template = canonical.points();
    let observed = target.points();
    let m = template.len();
    let g = kernel(template, template, params.beta);
    let mut weights = DMatrix::zeros(m, 3);
    let mut sigma2 = params.sigma2;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let evaluate = |weights: &DMatrix<T>, sigma2: T| -> Result<(Posteriors<T>, T)> {
        let deformed = deform_with_kernel(template, &g, weights);
        let post = posteriors(&deformed, observed, sigma2, params.omega);
        let data = -post.log_norm.iter().fold(T::zero(), |a, &b| a + b);
        let value = data + regulariser(&g, weights, params.lambda);
        if !value.is_finite() {
            return Err(Error::Numerical(
                "CPD objective is not finite; sigma2 is too small for the data scale".into(),
            ));
        }
        Ok((post, value))
    };

    for _ in 0..params.max_iters {
        let (post, value) = evaluate(&weights, sigma2)?;
        if let Some(&prev) = trace.last() {
            if (value - prev).abs() < params.tol {
                trace.push(value);
                converged = true;
                break;
            }
        }
        trace.push(value);
        let lambda_sigma2 = params.lambda * sigma2;
        weights = match solve_m_step(&g, &post.p, template, observed, lambda_sigma2, T::zero()) {
            Err(Error::DegenerateCorrespondence { index }) => {
                log::debug!("template point {index} lost all support; jittering P1");
                solve_m_step(&g, &post.p, template, observed, lambda_sigma2, lit(1e-9))?
            }
            other => other?,
        };
        iterations += 1;
        if params.update_sigma2 {
            let deformed = deform_with_kernel(template, &g, &weights);
            sigma2 = reestimate_sigma2(&post.p, &deformed, observed).max(lit(1e-10));
        }
    }
    if !converged {
        let (_, value) = evaluate(&weights, sigma2)?;
        trace.push(value);
    }
    Ok(Registration {
        field: DeformationField::new(canonical.clone(), weights, params.beta)?,
        sigma2,
        energy_trace: trace,
        iterations,
        converged,
    })
}

/// Standard CPD variance update `Σ pₘₙ‖xₙ − yₘ‖² / (3·Σ pₘₙ)`.
fn reestimate_sigma2<T: Real>(
    p: &DMatrix<T>,
    deformed: &[Vector3<T>],
    observed: &[Vector3<T>],
) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for (j, o) in observed.iter().enumerate() {
        for (k, d) in deformed.iter().enumerate() {
            let w = p[(k, j)];
            num += w * (o - d).norm_squared();
            den += w;
        }
    }
    num / (lit::<T>(3.0) * den)
}
