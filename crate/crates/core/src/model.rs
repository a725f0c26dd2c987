//! Six-dimensional state model used by the filter.
//!
//! The state stacks the conditional moments and the unknown frequency,
//! `x = (X, P, σ_x, σ_p, σ_xp, ω)`, and obeys
//! `dx = F(x) dt + G(x) dw`, `dy = H x dt + dw`.

use nalgebra::{Matrix6, RowVector6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{GaussianState, OscillatorParams};

pub const IX: usize = 0;
pub const IP: usize = 1;
pub const ISX: usize = 2;
pub const ISP: usize = 3;
pub const ISXP: usize = 4;
pub const IOMEGA: usize = 5;

/// Filter state vector `(X, P, σ_x, σ_p, σ_xp, ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterVector(pub Vector6<f64>);

impl FilterVector {
    pub fn new(x: f64, p: f64, sigma_x: f64, sigma_p: f64, sigma_xp: f64, omega: f64) -> Self {
        Self(Vector6::new(x, p, sigma_x, sigma_p, sigma_xp, omega))
    }

    /// Vacuum moments with the given frequency.
    pub fn vacuum(omega: f64) -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0, 0.0, omega)
    }

    pub fn from_state(state: &GaussianState, omega: f64) -> Self {
        Self::new(
            state.x(),
            state.p(),
            state.sigma_x(),
            state.sigma_p(),
            state.sigma_xp(),
            omega,
        )
    }

    pub fn to_state(&self) -> GaussianState {
        let v = &self.0;
        GaussianState {
            r: Vector2::new(v[IX], v[IP]),
            sigma: nalgebra::Matrix2::new(v[ISX], v[ISXP], v[ISXP], v[ISP]),
        }
    }

    pub fn omega(&self) -> f64 {
        self.0[IOMEGA]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Known controls entering the state model: everything but the frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ContextRepr", into = "ContextRepr")]
pub struct ModelContext {
    pub epsilon: f64,
    pub kappa: f64,
    pub eta: f64,
    pub phi: f64,
    cos_phi: f64,
    sin_phi: f64,
}

#[derive(Serialize, Deserialize)]
struct ContextRepr {
    epsilon: f64,
    kappa: f64,
    eta: f64,
    phi: f64,
}

impl From<ContextRepr> for ModelContext {
    fn from(r: ContextRepr) -> Self {
        ModelContext::new(r.epsilon, r.kappa, r.eta, r.phi)
    }
}

impl From<ModelContext> for ContextRepr {
    fn from(c: ModelContext) -> Self {
        ContextRepr {
            epsilon: c.epsilon,
            kappa: c.kappa,
            eta: c.eta,
            phi: c.phi,
        }
    }
}

impl ModelContext {
    pub fn new(epsilon: f64, kappa: f64, eta: f64, phi: f64) -> Self {
        let (sin_phi, cos_phi) = phi.sin_cos();
        Self {
            epsilon,
            kappa,
            eta,
            phi,
            cos_phi,
            sin_phi,
        }
    }

    pub fn cos_phi(&self) -> f64 {
        self.cos_phi
    }

    pub fn sin_phi(&self) -> f64 {
        self.sin_phi
    }

    /// Full parameter set for a given frequency.
    pub fn with_omega(&self, omega: f64) -> OscillatorParams {
        OscillatorParams {
            omega,
            epsilon: self.epsilon,
            kappa: self.kappa,
            eta: self.eta,
            phi: self.phi,
        }
    }

    /// `σ₁ = cos φ (σ_x − 1) + sin φ σ_xp`, `σ₂ = sin φ (σ_p − 1) + cos φ σ_xp`.
    #[inline]
    fn backaction_components(&self, x: &Vector6<f64>) -> (f64, f64) {
        let (c, s) = (self.cos_phi, self.sin_phi);
        (
            c * (x[ISX] - 1.0) + s * x[ISXP],
            s * (x[ISP] - 1.0) + c * x[ISXP],
        )
    }
}

impl From<&OscillatorParams> for ModelContext {
    fn from(p: &OscillatorParams) -> Self {
        ModelContext::new(p.epsilon, p.kappa, p.eta, p.phi)
    }
}

/// Drift vector `F(x)`.
pub fn drift_f(x: &FilterVector, ctx: &ModelContext) -> Vector6<f64> {
    let v = &x.0;
    let (k, e, w) = (ctx.kappa, ctx.epsilon, v[IOMEGA]);
    let (s1, s2) = ctx.backaction_components(v);
    let ek = ctx.eta * k;
    Vector6::new(
        -0.5 * k * v[IX] + (w - e) * v[IP],
        -(w + e) * v[IX] - 0.5 * k * v[IP],
        2.0 * (w - e) * v[ISXP] - k * (v[ISX] - 1.0) - ek * s1 * s1,
        -2.0 * (w + e) * v[ISXP] - k * (v[ISP] - 1.0) - ek * s2 * s2,
        -(w + e) * v[ISX] + (w - e) * v[ISP] - k * v[ISXP] - ek * s1 * s2,
        0.0,
    )
}

/// Diffusion vector `G(x)`.
pub fn diffusion_g(x: &FilterVector, ctx: &ModelContext) -> Vector6<f64> {
    let (s1, s2) = ctx.backaction_components(&x.0);
    let g = (0.5 * ctx.eta * ctx.kappa).sqrt();
    Vector6::new(g * s1, g * s2, 0.0, 0.0, 0.0, 0.0)
}

/// Observation row `H`.
pub fn observation_h(ctx: &ModelContext) -> RowVector6<f64> {
    let h = (2.0 * ctx.kappa * ctx.eta).sqrt();
    RowVector6::new(h * ctx.cos_phi, h * ctx.sin_phi, 0.0, 0.0, 0.0, 0.0)
}

/// Closed-form Jacobian `∇F(x)`.
pub fn jacobian_f(x: &FilterVector, ctx: &ModelContext) -> Matrix6<f64> {
    let v = &x.0;
    let (k, e, w) = (ctx.kappa, ctx.epsilon, v[IOMEGA]);
    let (c, s) = (ctx.cos_phi, ctx.sin_phi);
    let (s1, s2) = ctx.backaction_components(v);
    let ek = ctx.eta * k;
    #[rustfmt::skip]
    let j = Matrix6::new(
        -0.5 * k, w - e, 0.0, 0.0, 0.0, v[IP],
        -(w + e), -0.5 * k, 0.0, 0.0, 0.0, -v[IX],
        0.0, 0.0, -k - 2.0 * ek * c * s1, 0.0, 2.0 * (w - e) - 2.0 * ek * s * s1, 2.0 * v[ISXP],
        0.0, 0.0, 0.0, -k - 2.0 * ek * s * s2, -2.0 * (w + e) - 2.0 * ek * c * s2, -2.0 * v[ISXP],
        0.0, 0.0, -(w + e) - ek * c * s2, (w - e) - ek * s * s1, -k - ek * c * s1 - ek * s * s2, -v[ISX] + v[ISP],
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    );
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{drift_matrix, riccati_rhs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> (FilterVector, ModelContext) {
        let x = FilterVector(Vector6::from_fn(|i, _| match i {
            ISX | ISP => rng.random_range(0.2..4.0),
            IOMEGA => rng.random_range(0.0..3.0),
            _ => rng.random_range(-3.0..3.0),
        }));
        let ctx = ModelContext::new(
            rng.random_range(0.0..1.5),
            1.0,
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..std::f64::consts::PI),
        );
        (x, ctx)
    }

    fn central_difference(x: &FilterVector, ctx: &ModelContext, h: f64) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        for j in 0..6 {
            let mut plus = *x;
            let mut minus = *x;
            plus.0[j] += h;
            minus.0[j] -= h;
            let col = (drift_f(&plus, ctx) - drift_f(&minus, ctx)) / (2.0 * h);
            out.set_column(j, &col);
        }
        out
    }

    #[test]
    fn drift_at_vacuum() {
        let ctx = ModelContext::new(0.8, 1.0, 0.6, 0.4);
        let f = drift_f(&FilterVector::vacuum(1.3), &ctx);
        let expected = Vector6::new(0.0, 0.0, 0.0, 0.0, -1.6, 0.0);
        assert!((f - expected).abs().max() < 1e-15);
    }

    #[test]
    fn drift_linear_part() {
        let ctx = ModelContext::new(1.0, 1.0, 1.0, 0.3);
        let x = FilterVector::new(1.0, 0.0, 1.0, 1.0, 0.0, 0.7);
        let f = drift_f(&x, &ctx);
        assert!((f[0] + 0.5).abs() < 1e-15);
        assert!((f[1] + 1.7).abs() < 1e-15);
    }

    #[test]
    fn frequency_is_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (x, ctx) = random_point(&mut rng);
            assert_eq!(drift_f(&x, &ctx)[IOMEGA], 0.0);
            assert_eq!(diffusion_g(&x, &ctx)[IOMEGA], 0.0);
        }
    }

    #[test]
    fn diffusion_values() {
        let ctx = ModelContext::new(1.0, 1.0, 1.0, 0.0);
        assert_eq!(diffusion_g(&FilterVector::vacuum(1.0), &ctx), Vector6::zeros());
        let g = diffusion_g(&FilterVector::new(0.3, 0.1, 2.0, 1.0, 0.0, 1.0), &ctx);
        assert!((g[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        let blind = ModelContext::new(1.0, 1.0, 0.0, 0.3);
        let g = diffusion_g(&FilterVector::new(0.3, 0.1, 2.0, 3.0, 0.5, 1.0), &blind);
        assert_eq!(g, Vector6::zeros());
    }

    #[test]
    fn observation_row() {
        let h = observation_h(&ModelContext::new(1.0, 1.0, 1.0, 0.0));
        assert!((h[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(h.columns(1, 5).abs().max(), 0.0);
        assert_eq!(observation_h(&ModelContext::new(1.0, 1.0, 0.0, 0.3)), RowVector6::zeros());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (x, ctx) = random_point(&mut rng);
            let direct = (2.0 * ctx.kappa * ctx.eta).sqrt()
                * (x.0[IX] * ctx.phi.cos() + x.0[IP] * ctx.phi.sin());
            assert!(((observation_h(&ctx) * x.0)[0] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (x, ctx) = random_point(&mut rng);
            let j = jacobian_f(&x, &ctx);
            assert_eq!(j.row(5).abs().max(), 0.0);
            for &(r, c) in &[(2, 0), (2, 1), (3, 0), (3, 1)] {
                assert_eq!(j[(r, c)], 0.0);
            }
            assert_eq!(j[(0, 5)], x.0[IP]);
            assert_eq!(j[(1, 5)], -x.0[IX]);
        }
        let j = jacobian_f(&FilterVector::vacuum(1.0), &ModelContext::new(0.5, 1.0, 1.0, 0.0));
        assert_eq!(j[(2, 2)], -1.0);
        assert_eq!(j[(4, 5)], 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (x, ctx) = random_point(&mut rng);
            let analytic = jacobian_f(&x, &ctx);
            let numeric = central_difference(&x, &ctx, 1e-6);
            for (a, n) in analytic.iter().zip(numeric.iter()) {
                let rel = (a - n).abs() / a.abs().max(1.0);
                assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn drift_agrees_with_moment_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let (x, ctx) = random_point(&mut rng);
            let params = ctx.with_omega(x.omega());
            let state = x.to_state();
            let f = drift_f(&x, &ctx);
            let mean = drift_matrix(&params) * state.r;
            let cov = riccati_rhs(&state.sigma, &params);
            let scale = 1.0 + f.abs().max();
            assert!((f[IX] - mean[0]).abs() < 1e-12 * scale);
            assert!((f[IP] - mean[1]).abs() < 1e-12 * scale);
            assert!((f[ISX] - cov[(0, 0)]).abs() < 1e-12 * scale);
            assert!((f[ISP] - cov[(1, 1)]).abs() < 1e-12 * scale);
            assert!((f[ISXP] - cov[(0, 1)]).abs() < 1e-12 * scale);
        }
    }
}
