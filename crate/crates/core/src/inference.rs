//! Joint latent-shape and rigid fitting to an observed cloud.
//!
//! The deformed template for latent `x` is linear in `x`:
//!
//! ```text
//! u(x) = C + G·W(x) = rest + Σₖ xₖ·Bₖ
//! ```
//!
//! so [`ShapeBasis`] precomputes `rest` and the per-component point
//! displacements `Bₖ` once per model. The fitted energy is a sum of negative
//! log Gaussian mixtures between the rigidly moved template and the
//! observation, minimised by preconditioned gradient descent with Armijo
//! backtracking.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, SVector, UnitQuaternion, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpd::kernel;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidParams};
use crate::latent::{unflatten_weights, LatentSpace, LatentVector};
use crate::scalar::{lit, to_f64, Real};

/// Which cloud indexes the outer sum of the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyOrientation {
    /// `−Σₘ log Σₙ exp(−‖Oₙ − yₘ‖²/2σ²)`: every template point must be
    /// explained by the observation.
    #[default]
    TemplateOuter,
    /// `−Σₙ log Σₘ exp(−‖Oₙ − yₘ‖²/2σ²)`: every observed point must be
    /// explained by the template. Better suited to partial views.
    ObservedOuter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceParams<T: Real> {
    pub sigma2: T,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: T,
    /// Stop once an accepted step changes the energy by less than this.
    pub energy_tol: T,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Step shrink factor on rejection.
    pub backtrack: T,
    pub max_backtracks: usize,
    pub init_theta: RigidParams<T>,
    pub orientation: EnergyOrientation,
    /// Weight `w` of the optional Gaussian latent prior
    /// `½·w·Σₖ xₖ²/varₖ`, with `varₖ` the training variance of component
    /// `k`. Zero (the default) fits the data term alone; a positive weight
    /// keeps partial-view fits inside the learned shape span.
    pub latent_prior: T,
    /// Extra starts from random latent draws; the lowest energy wins.
    pub restarts: usize,
    pub seed: u64,
}

impl<T: Real> Default for InferenceParams<T> {
    fn default() -> Self {
        Self {
            sigma2: lit(0.01),
            max_iters: 500,
            grad_tol: lit(1e-5),
            energy_tol: lit(1e-8),
            armijo: lit(1e-4),
            backtrack: lit(0.5),
            max_backtracks: 60,
            init_theta: RigidParams::identity(),
            orientation: EnergyOrientation::TemplateOuter,
            latent_prior: T::zero(),
            restarts: 0,
            seed: 0,
        }
    }
}

impl<T: Real> InferenceParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > T::zero()) || !self.sigma2.is_finite() {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.armijo > T::zero() && self.armijo < T::one()) {
            return Err(Error::invalid("Armijo constant must lie in (0, 1)"));
        }
        if !(self.latent_prior >= T::zero()) || !self.latent_prior.is_finite() {
            return Err(Error::invalid("latent prior weight must be non-negative"));
        }
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return Err(Error::invalid("backtracking factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Result of [`infer_shape`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFit<T: Real> {
    pub x: LatentVector<T>,
    pub theta: RigidParams<T>,
    pub final_energy: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct ShapeFitJson {
    x: Vec<f64>,
    quaternion: [f64; 4],
    translation: [f64; 3],
    energy: f64,
    iterations: usize,
    converged: bool,
}

impl<T: Real> ShapeFit<T> {
    pub fn to_json(&self) -> String {
        let t = &self.theta.translation;
        let doc = ShapeFitJson {
            x: self.x.iter().map(|v| to_f64(*v)).collect(),
            quaternion: self.theta.wxyz().map(to_f64),
            translation: [to_f64(t.x), to_f64(t.y), to_f64(t.z)],
            energy: to_f64(self.final_energy),
            iterations: self.iterations,
            converged: self.converged,
        };
        serde_json::to_string_pretty(&doc).expect("fit serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ShapeFitJson = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("shape fit JSON: {e}")))?;
        let theta = RigidParams::from_wxyz(
            doc.quaternion.map(lit),
            Vector3::new(
                lit(doc.translation[0]),
                lit(doc.translation[1]),
                lit(doc.translation[2]),
            ),
        )?;
        Ok(Self {
            x: DVector::from_iterator(doc.x.len(), doc.x.into_iter().map(lit)),
            theta,
            final_energy: lit(doc.energy),
            iterations: doc.iterations,
            converged: doc.converged,
        })
    }
}

/// Linearised shape model: `u(x) = rest + B·x` over the full canonical cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBasis<T: Real> {
    /// 3M, row-major points of the mean-deformed canonical cloud.
    rest: DVector<T>,
    /// 3M×q.
    basis: DMatrix<T>,
    centre: Vector3<T>,
    variance: DVector<T>,
}

impl<T: Real> ShapeBasis<T> {
    pub fn new(canonical: &PointCloud<T>, beta: T, latent: &LatentSpace<T>) -> Result<Self> {
        let m = canonical.len();
        if latent.point_count() != m {
            return Err(Error::invalid(format!(
                "latent space covers {} points but the canonical cloud has {m}",
                latent.point_count()
            )));
        }
        let g = kernel(canonical.points(), canonical.points(), beta);
        let norm = latent.normalization();

        let mean_disp = &g * unflatten_weights(&norm.mean);
        let mut rest = DVector::zeros(3 * m);
        for (i, p) in canonical.iter().enumerate() {
            for c in 0..3 {
                rest[3 * i + c] = p[c] + mean_disp[(i, c)];
            }
        }

        let q = latent.q();
        let l = latent.components();
        let mut basis = DMatrix::zeros(3 * m, q);
        for k in 0..q {
            let scaled = l.row(k).transpose().component_mul(&norm.std);
            let disp = &g * unflatten_weights(&scaled);
            for i in 0..m {
                for c in 0..3 {
                    basis[(3 * i + c, k)] = disp[(i, c)];
                }
            }
        }

        let mut centre = Vector3::zeros();
        for i in 0..m {
            centre += Vector3::new(rest[3 * i], rest[3 * i + 1], rest[3 * i + 2]);
        }
        centre /= lit::<T>(m as f64);

        Ok(Self {
            rest,
            basis,
            centre,
            variance: latent.explained_variance().clone(),
        })
    }

    pub fn point_count(&self) -> usize {
        self.rest.len() / 3
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Deformed canonical points `u(x)`, before the rigid transform.
    pub fn deformed(&self, x: &LatentVector<T>) -> Vec<Vector3<T>> {
        let flat = &self.rest + &self.basis * x;
        flat.as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }

    /// Per-component prior precision `w / varₖ` (zero where undefined).
    fn prior_precision(&self, weight: T) -> DVector<T> {
        self.variance.map(|v| {
            if weight > T::zero() && v > T::zero() {
                weight / v
            } else {
                T::zero()
            }
        })
    }

    fn check_latent(&self, x: &LatentVector<T>) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::invalid(format!(
                "latent vector has length {}, expected {}",
                x.len(),
                self.latent_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("latent vector is not finite"));
        }
        Ok(())
    }
}

/// Energy of `(x, θ)` against `observed`.
pub fn energy_latent<T: Real>(
    basis: &ShapeBasis<T>,
    x: &LatentVector<T>,
    theta: &RigidParams<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
) -> Result<T> {
    basis.check_latent(x)?;
    let state = State::from_theta(x.clone(), theta, &Vector3::zeros());
    Ok(evaluate(basis, &state, &Vector3::zeros(), observed, params, false).energy)
}

/// Analytic gradient of [`energy_latent`]: the latent part, then
/// `(∂/∂w, ∂/∂x, ∂/∂y, ∂/∂z, ∂/∂tx, ∂/∂ty, ∂/∂tz)`.
///
/// The quaternion is treated as four free parameters entering through
/// `R(q/|q|)`, so its gradient is tangent to the unit sphere.
pub fn energy_gradient<T: Real>(
    basis: &ShapeBasis<T>,
    x: &LatentVector<T>,
    theta: &RigidParams<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
) -> Result<(DVector<T>, SVector<T, 7>)> {
    basis.check_latent(x)?;
    let state = State::from_theta(x.clone(), theta, &Vector3::zeros());
    let eval = evaluate(basis, &state, &Vector3::zeros(), observed, params, true);
    let grad = eval.grad.expect("gradient requested");
    let mut rigid = SVector::<T, 7>::zeros();
    rigid.fixed_rows_mut::<4>(0).copy_from(&grad.q);
    rigid.fixed_rows_mut::<3>(4).copy_from(&grad.s);
    Ok((grad.x, rigid))
}

/// Fits `(x, θ)` to `observed`, starting from `x = 0` and
/// `params.init_theta`.
pub fn infer_shape<T: Real>(
    basis: &ShapeBasis<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
) -> Result<ShapeFit<T>> {
    params.validate()?;
    let q = basis.latent_dim();
    let mut best = descend(basis, observed, params, DVector::zeros(q))?;
    if params.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for r in 0..params.restarts {
            let x0 = DVector::from_fn(q, |k, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                lit::<T>(z) * basis.variance[k].max(T::zero()).sqrt()
            });
            let fit = descend(basis, observed, params, x0)?;
            log::debug!("restart {r}: energy {}", to_f64(fit.final_energy));
            if fit.final_energy < best.final_energy {
                best = fit;
            }
        }
    }
    Ok(best)
}

/// Full canonical cloud deformed by `fit.x` and moved by `fit.theta`,
/// including regions absent from the observation.
pub fn complete_shape<T: Real>(basis: &ShapeBasis<T>, fit: &ShapeFit<T>) -> Result<PointCloud<T>> {
    basis.check_latent(&fit.x)?;
    PointCloud::new(
        basis
            .deformed(&fit.x)
            .iter()
            .map(|u| fit.theta.apply_point(u))
            .collect(),
    )
}

/// Optimisation variables. The rigid map is `y = R(q/|q|)·(u − c) + s`
/// for a fixed centre `c`; with `c = 0`, `s` is the usual translation.
#[derive(Debug, Clone)]
struct State<T: Real> {
    x: DVector<T>,
    q: Vector4<T>,
    s: Vector3<T>,
}

impl<T: Real> State<T> {
    fn from_theta(x: DVector<T>, theta: &RigidParams<T>, centre: &Vector3<T>) -> Self {
        let w = theta.wxyz();
        Self {
            x,
            q: Vector4::new(w[0], w[1], w[2], w[3]),
            s: theta.translation + theta.rotation * centre,
        }
    }

    fn rotation(&self) -> UnitQuaternion<T> {
        UnitQuaternion::new_normalize(Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]))
    }

    fn to_theta(&self, centre: &Vector3<T>) -> RigidParams<T> {
        let r = self.rotation();
        RigidParams::new(r, self.s - r * centre)
    }
}

struct Gradient<T: Real> {
    x: DVector<T>,
    q: Vector4<T>,
    s: Vector3<T>,
}

struct Evaluation<T: Real> {
    energy: T,
    grad: Option<Gradient<T>>,
    /// Responsibility mass of each template point (empty without the
    /// gradient).
    mass: Vec<T>,
}

/// Skip mixture terms this far (in exponent units) below the largest.
const LOG_CUTOFF: f64 = 40.0;

fn evaluate<T: Real>(
    basis: &ShapeBasis<T>,
    state: &State<T>,
    centre: &Vector3<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
    need_grad: bool,
) -> Evaluation<T> {
    let r = state.rotation().to_rotation_matrix().into_inner();
    let local: Vec<Vector3<T>> = basis
        .deformed(&state.x)
        .iter()
        .map(|u| u - centre)
        .collect();
    let y: Vec<Vector3<T>> = local.iter().map(|u| r * u + state.s).collect();
    let obs = observed.points();
    let inv = T::one() / (lit::<T>(2.0) * params.sigma2);
    let cutoff = lit::<T>(LOG_CUTOFF);

    // Per template point: Σₙ Pₘₙ and Σₙ Pₘₙ·Oₙ.
    let mut mass = vec![T::zero(); y.len()];
    let mut pull = vec![Vector3::zeros(); y.len()];
    let mut energy = T::zero();

    match params.orientation {
        EnergyOrientation::TemplateOuter => {
            let mut a = vec![T::zero(); obs.len()];
            for (m, ym) in y.iter().enumerate() {
                let mut top = -T::max_value().unwrap();
                for (n, o) in obs.iter().enumerate() {
                    a[n] = -(o - ym).norm_squared() * inv;
                    top = top.max(a[n]);
                }
                let mut sum = T::zero();
                for v in a.iter_mut() {
                    *v = if *v - top > -cutoff {
                        (*v - top).exp()
                    } else {
                        T::zero()
                    };
                    sum += *v;
                }
                energy -= top + sum.ln();
                if need_grad {
                    let mut acc = Vector3::zeros();
                    for (n, v) in a.iter().enumerate() {
                        if *v > T::zero() {
                            acc += obs[n] * *v;
                        }
                    }
                    mass[m] = T::one();
                    pull[m] = acc / sum;
                }
            }
        }
        EnergyOrientation::ObservedOuter => {
            let mut a = vec![T::zero(); y.len()];
            for o in obs {
                let mut top = -T::max_value().unwrap();
                for (m, ym) in y.iter().enumerate() {
                    a[m] = -(o - ym).norm_squared() * inv;
                    top = top.max(a[m]);
                }
                let mut sum = T::zero();
                for v in a.iter_mut() {
                    *v = if *v - top > -cutoff {
                        (*v - top).exp()
                    } else {
                        T::zero()
                    };
                    sum += *v;
                }
                energy -= top + sum.ln();
                if need_grad {
                    for (m, v) in a.iter().enumerate() {
                        if *v > T::zero() {
                            let w = *v / sum;
                            mass[m] += w;
                            pull[m] += o * w;
                        }
                    }
                }
            }
        }
    }

    let precision = basis.prior_precision(params.latent_prior);
    energy += state.x.component_mul(&precision).dot(&state.x) * lit(0.5);
    if !need_grad {
        return Evaluation {
            energy,
            grad: None,
            mass: Vec::new(),
        };
    }

    let mut gs = Vector3::zeros();
    let mut gr = Matrix3::zeros();
    let mut local_grad = DVector::zeros(3 * y.len());
    for m in 0..y.len() {
        // ∂E/∂yₘ = (Σₙ Pₘₙ·(yₘ − Oₙ)) / σ²
        let g = (y[m] * mass[m] - pull[m]) / params.sigma2;
        gs += g;
        gr += g * local[m].transpose();
        let back = r.tr_mul(&g);
        local_grad[3 * m] = back.x;
        local_grad[3 * m + 1] = back.y;
        local_grad[3 * m + 2] = back.z;
    }
    let gx = basis.basis.tr_mul(&local_grad) + state.x.component_mul(&precision);

    let norm = state.q.norm();
    let qh = state.q / norm;
    let raw = Vector4::from_fn(|c, _| rotation_derivative(&qh, c).component_mul(&gr).sum());
    let gq = (raw - qh * qh.dot(&raw)) / norm;

    Evaluation {
        energy,
        grad: Some(Gradient {
            x: gx,
            q: gq,
            s: gs,
        }),
        mass,
    }
}

/// `∂R/∂q_c` for the unit-quaternion rotation formula, `q = (w, x, y, z)`.
fn rotation_derivative<T: Real>(q: &Vector4<T>, c: usize) -> Matrix3<T> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let o = T::zero();
    let two = lit::<T>(2.0);
    let m = match c {
        0 => Matrix3::new(o, -z, y, z, o, -x, -y, x, o),
        1 => Matrix3::new(o, y, z, y, -two * x, -w, z, w, -two * x),
        2 => Matrix3::new(-two * y, x, w, x, o, z, -w, z, -two * y),
        _ => Matrix3::new(-two * z, -w, x, w, -two * z, y, x, y, o),
    };
    m * two
}

fn descend<T: Real>(
    basis: &ShapeBasis<T>,
    observed: &PointCloud<T>,
    params: &InferenceParams<T>,
    x0: DVector<T>,
) -> Result<ShapeFit<T>> {
    let centre = basis.centre;
    let mut state = State::from_theta(x0, &params.init_theta, &centre);
    let mut eval = evaluate(basis, &state, &centre, observed, params, true);
    if !eval.energy.is_finite() {
        return Err(Error::Numerical(format!(
            "initial energy is {}; sigma2 does not suit the data scale",
            to_f64(eval.energy)
        )));
    }

    let q = basis.latent_dim();
    let precision = basis.prior_precision(params.latent_prior);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = T::one();
    while iterations < params.max_iters {
        let grad = eval.grad.as_ref().expect("gradient requested");
        let mut g = DVector::zeros(q + 7);
        g.rows_mut(0, q).copy_from(&grad.x);
        g.fixed_rows_mut::<4>(q).copy_from(&grad.q);
        g.fixed_rows_mut::<3>(q + 4).copy_from(&grad.s);
        if g.norm() < params.grad_tol {
            converged = true;
            break;
        }
        let d = -metric(
            basis,
            &state,
            &centre,
            &eval.mass,
            params.sigma2,
            &precision,
        )
        .solve(&g);
        let slope = g.dot(&d);

        let mut alpha = (step * lit(2.0)).min(T::one());
        let mut accepted = None;
        for _ in 0..params.max_backtracks {
            let trial = State {
                x: &state.x + d.rows(0, q) * alpha,
                q: state.q + d.fixed_rows::<4>(q) * alpha,
                s: state.s + d.fixed_rows::<3>(q + 4) * alpha,
            };
            let e = evaluate(basis, &trial, &centre, observed, params, false).energy;
            if e <= eval.energy + params.armijo * alpha * slope {
                accepted = Some((trial, e));
                break;
            }
            alpha *= params.backtrack;
        }
        let Some((mut trial, e)) = accepted else {
            // No representable decrease left along the descent direction.
            converged = true;
            break;
        };
        trial.q /= trial.q.norm();
        let change = eval.energy - e;
        state = trial;
        step = alpha;
        iterations += 1;
        eval = evaluate(basis, &state, &centre, observed, params, true);
        if change.abs() < params.energy_tol {
            converged = true;
            break;
        }
    }

    Ok(ShapeFit {
        theta: state.to_theta(&centre),
        x: state.x,
        final_energy: eval.energy,
        iterations,
        converged,
    })
}

/// Positive definite preconditioner `Σₘ Pₘ·JₘᵀJₘ / σ²` over
/// `(x, q, s)`, where `Jₘ = ∂yₘ/∂(x, q, s)` and `Pₘ` is the point's
/// responsibility mass. The flat radial quaternion direction gets the mean
/// rotational curvature, and each block is lightly damped with a multiple of
/// the identity so the metric stays rotation-equivariant.
fn metric<T: Real>(
    basis: &ShapeBasis<T>,
    state: &State<T>,
    centre: &Vector3<T>,
    mass: &[T],
    sigma2: T,
    precision: &DVector<T>,
) -> Preconditioner<T> {
    let q = basis.latent_dim();
    let n = q + 7;
    let r = state.rotation().to_rotation_matrix().into_inner();
    let norm = state.q.norm();
    let qh = state.q / norm;
    let project = (nalgebra::Matrix4::identity() - qh * qh.transpose()) / norm;
    let dr: Vec<Matrix3<T>> = (0..4).map(|c| rotation_derivative(&qh, c)).collect();

    let mut h = DMatrix::zeros(n, n);
    let mut j = DMatrix::zeros(3, n);
    for (m, u) in basis.deformed(&state.x).iter().enumerate() {
        if mass[m] == T::zero() {
            continue;
        }
        let a = u - centre;
        let rb = r * basis.basis.fixed_rows::<3>(3 * m);
        j.columns_mut(0, q).copy_from(&rb);
        let mut dq = nalgebra::Matrix3x4::zeros();
        for (c, d) in dr.iter().enumerate() {
            dq.set_column(c, &(d * a));
        }
        j.fixed_view_mut::<3, 4>(0, q).copy_from(&(dq * project));
        j.fixed_view_mut::<3, 3>(0, q + 4)
            .copy_from(&Matrix3::identity());
        h.gemm_tr(mass[m], &j, &j, T::one());
    }
    h /= sigma2;
    for k in 0..q {
        h[(k, k)] += precision[k];
    }

    let damping = lit::<T>(1e-8);
    let rot = (0..4).fold(T::zero(), |acc, c| acc + h[(q + c, q + c)]) / lit(3.0);
    let rot = if rot > T::zero() { rot } else { T::one() };
    for a in 0..4 {
        for b in 0..4 {
            h[(q + a, q + b)] += rot * qh[a] * qh[b];
        }
        h[(q + a, q + a)] += damping * rot;
    }
    let trans = (0..3).fold(T::zero(), |acc, c| acc + h[(q + 4 + c, q + 4 + c)]) / lit(3.0);
    let trans = if trans > T::zero() { trans } else { T::one() };
    for c in 0..3 {
        h[(q + 4 + c, q + 4 + c)] += damping * trans;
    }
    for k in 0..q {
        let d = h[(k, k)];
        h[(k, k)] += if d > T::zero() { damping * d } else { T::one() };
    }
    match h.clone().cholesky() {
        Some(c) => Preconditioner::Cholesky(c),
        None => {
            Preconditioner::Diagonal(
                h.diagonal()
                    .map(|d| if d > T::zero() { d } else { T::one() }),
            )
        }
    }
}

enum Preconditioner<T: Real> {
    Cholesky(nalgebra::Cholesky<T, nalgebra::Dyn>),
    Diagonal(DVector<T>),
}

impl<T: Real> Preconditioner<T> {
    fn solve(&self, g: &DVector<T>) -> DVector<T> {
        match self {
            Self::Cholesky(c) => c.solve(g),
            Self::Diagonal(d) => g.component_div(d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Normalization;

    fn small_model() -> (PointCloud<f64>, LatentSpace<f64>) {
        let pts: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.5;
                [0.1 * a.cos(), 0.1 * a.sin(), 0.02 * i as f64]
            })
            .collect();
        let canonical = PointCloud::from_arrays(&pts).unwrap();
        let p = 36;
        let mut l = DMatrix::zeros(2, p);
        for j in 0..p {
            l[(0, j)] = ((j as f64) * 0.7).sin();
            l[(1, j)] = ((j as f64) * 1.3).cos();
        }
        let l = crate::latent::orthonormal_rows(&l);
        let norm = Normalization {
            mean: DVector::from_fn(p, |j, _| 0.001 * (j as f64).sin()),
            std: DVector::from_element(p, 0.01),
        };
        let latent = LatentSpace::new(l, norm, DVector::from_vec(vec![2.0, 1.0])).unwrap();
        (canonical, latent)
    }

    #[test]
    fn rest_shape_matches_decoded_mean_field() {
        let (c, latent) = small_model();
        let basis = ShapeBasis::new(&c, 0.1, &latent).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let field =
            crate::cpd::DeformationField::new(c.clone(), latent.decode_weights(&x), 0.1).unwrap();
        let want = field.deformed_canonical();
        for (a, b) in basis.deformed(&x).iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn coincident_single_points_have_zero_energy() {
        let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]]).unwrap();
        let norm = Normalization {
            mean: DVector::zeros(3),
            std: DVector::from_element(3, 1.0),
        };
        let latent = LatentSpace::new(
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            norm,
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let basis = ShapeBasis::new(&c, 1.0, &latent).unwrap();
        let params = InferenceParams::default();
        let e = energy_latent(
            &basis,
            &DVector::zeros(1),
            &RigidParams::identity(),
            &c,
            &params,
        )
        .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn wrong_latent_length_is_rejected() {
        let (c, latent) = small_model();
        let basis = ShapeBasis::new(&c, 0.1, &latent).unwrap();
        let params = InferenceParams::default();
        assert!(energy_latent(
            &basis,
            &DVector::zeros(3),
            &RigidParams::identity(),
            &c,
            &params
        )
        .is_err());
    }

    #[test]
    fn orientations_agree_on_symmetric_pairs() {
        let (c, latent) = small_model();
        let basis = ShapeBasis::new(&c, 0.1, &latent).unwrap();
        let observed = PointCloud::new(basis.deformed(&DVector::zeros(2))).unwrap();
        let mut params = InferenceParams::default();
        let a = energy_latent(
            &basis,
            &DVector::zeros(2),
            &RigidParams::identity(),
            &observed,
            &params,
        )
        .unwrap();
        params.orientation = EnergyOrientation::ObservedOuter;
        let b = energy_latent(
            &basis,
            &DVector::zeros(2),
            &RigidParams::identity(),
            &observed,
            &params,
        )
        .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn self_fit_stays_at_identity() {
        let (c, latent) = small_model();
        let basis = ShapeBasis::new(&c, 0.1, &latent).unwrap();
        let observed = PointCloud::new(basis.deformed(&DVector::zeros(2))).unwrap();
        let params = InferenceParams {
            sigma2: 1e-4,
            ..Default::default()
        };
        let fit = infer_shape(&basis, &observed, &params).unwrap();
        assert!(fit.converged);
        assert!(fit.x.norm() < 1e-3);
        assert!(fit.theta.rotation_angle() < 1e-3);
        assert!(fit.theta.translation.norm() < 1e-4);
    }

    #[test]
    fn json_round_trip() {
        let fit = ShapeFit {
            x: DVector::from_vec(vec![0.1, -2.5]),
            theta: RigidParams::from_axis_angle(Vector3::z(), 0.3, Vector3::new(0.1, 0.2, 0.3)),
            final_energy: -12.25,
            iterations: 7,
            converged: true,
        };
        let back = ShapeFit::<f64>::from_json(&fit.to_json()).unwrap();
        assert_eq!(back.x, fit.x);
        assert_eq!(back.iterations, 7);
        assert!((back.theta.rotation.angle_to(&fit.theta.rotation)) < 1e-15);
    }

    #[test]
    fn identity_completion_is_mean_shape() {
        let (c, latent) = small_model();
        let basis = ShapeBasis::new(&c, 0.1, &latent).unwrap();
        let fit = ShapeFit {
            x: DVector::zeros(2),
            theta: RigidParams::identity(),
            final_energy: 0.0,
            iterations: 0,
            converged: true,
        };
        let done = complete_shape(&basis, &fit).unwrap();
        assert_eq!(done.len(), c.len());
        let mean = crate::cpd::DeformationField::new(c.clone(), latent.decode_weights(&fit.x), 0.1)
            .unwrap()
            .deformed_canonical();
        for (a, b) in done.iter().zip(mean.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
