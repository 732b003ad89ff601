//! Coupling schedules `sigma_t` with exact cumulative integrals.
//!
//! The exact trajectory sampler and every filter formula consume the coupling
//! only through `int σ ds`, `int σ² ds` and (for the increment filter)
//! `int σ⁻² ds`, so each schedule kind carries closed forms for these rather
//! than relying on pointwise quadrature. Tabulated schedules interpolate
//! linearly between samples and integrate each segment in closed form, which
//! is exact for the interpolant.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative distance from the horizon below which finite-time evaluations are
/// clamped; the dynamics are only ever evaluated strictly before the horizon.
pub const FINITE_TIME_CLAMP: f64 = 1e-12;

/// A positive, deterministic coupling function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSchedule {
    /// `σ_t = σ`
    Constant { sigma: f64 },
    /// Parametrized through its squared integral `∫₀ᵗ σ² ds = scale · t^alpha`,
    /// i.e. `σ_t = sqrt(scale·alpha) · t^{(alpha-1)/2}`.
    PowerLaw { alpha: f64, scale: f64 },
    /// `σ_t = σ e^{-λ t}`; square-integrable, so reduction stays incomplete.
    ExponentialDecay { sigma: f64, lambda: f64 },
    /// `σ_t = σ T / (T - t)` on `[0, T)`; the squared integral diverges as
    /// `t → T`, forcing collapse within the finite horizon.
    FiniteTime { sigma: f64, horizon: f64 },
    /// Piecewise-linear interpolation of `(t, σ)` samples covering `[0, t_max]`.
    Tabulated { table: Vec<(f64, f64)> },
}

/// Collapse classification of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    CompleteInfiniteHorizon,
    Partial,
    FiniteTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRegime {
    pub tag: RegimeTag,
    /// Horizon time for the finite-time regime.
    pub horizon: Option<f64>,
}

impl CouplingSchedule {
    pub fn constant(sigma: f64) -> Result<Self> {
        require_positive("coupling.sigma", sigma)?;
        Ok(CouplingSchedule::Constant { sigma })
    }

    pub fn power_law(alpha: f64, scale: f64) -> Result<Self> {
        require_positive("coupling.alpha", alpha)?;
        require_positive("coupling.scale", scale)?;
        Ok(CouplingSchedule::PowerLaw { alpha, scale })
    }

    pub fn exponential_decay(sigma: f64, lambda: f64) -> Result<Self> {
        require_positive("coupling.sigma", sigma)?;
        require_positive("coupling.lambda", lambda)?;
        Ok(CouplingSchedule::ExponentialDecay { sigma, lambda })
    }

    pub fn finite_time(sigma: f64, horizon: f64) -> Result<Self> {
        require_positive("coupling.sigma", sigma)?;
        require_positive("coupling.T", horizon)?;
        Ok(CouplingSchedule::FiniteTime { sigma, horizon })
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::validation(
                "coupling.table",
                "needs at least two (t, sigma) samples",
            ));
        }
        if table[0].0 != 0.0 {
            return Err(Error::validation(
                "coupling.table",
                "first sample must be at t = 0",
            ));
        }
        for w in table.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::validation(
                    "coupling.table",
                    "sample times must be strictly increasing",
                ));
            }
        }
        if table
            .iter()
            .any(|&(t, s)| !t.is_finite() || !(s > 0.0) || !s.is_finite())
        {
            return Err(Error::validation(
                "coupling.table",
                "all samples must be finite with sigma > 0",
            ));
        }
        Ok(CouplingSchedule::Tabulated { table })
    }

    /// Horizon for finite-time schedules, table end for tabulated ones.
    pub fn horizon(&self) -> Option<f64> {
        match self {
            CouplingSchedule::FiniteTime { horizon, .. } => Some(*horizon),
            CouplingSchedule::Tabulated { table } => Some(table.last().unwrap().0),
            _ => None,
        }
    }

    /// Pointwise coupling value.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("sigma evaluated at t = {t}")));
        }
        match self {
            CouplingSchedule::Constant { sigma } => Ok(*sigma),
            CouplingSchedule::PowerLaw { alpha, scale } => {
                // σ_t = sqrt(scale·alpha) t^{(alpha-1)/2}; the t = 0 endpoint is
                // taken as the one-sided limit, which is unbounded for alpha < 1.
                if t == 0.0 && *alpha < 1.0 {
                    return Err(Error::Domain(
                        "power-law coupling with alpha < 1 is unbounded at t = 0".into(),
                    ));
                }
                Ok((scale * alpha).sqrt() * t.powf((alpha - 1.0) / 2.0))
            }
            CouplingSchedule::ExponentialDecay { sigma, lambda } => Ok(sigma * (-lambda * t).exp()),
            CouplingSchedule::FiniteTime { sigma, horizon } => {
                if t >= *horizon {
                    return Err(Error::Domain(format!(
                        "t = {t} is not before the finite-time horizon T = {horizon}"
                    )));
                }
                let t = clamp_to_horizon(t, *horizon);
                Ok(sigma * horizon / (horizon - t))
            }
            CouplingSchedule::Tabulated { table } => interp_linear(table, t),
        }
    }

    /// `∫ₐᵇ σ_s ds`. `b = +inf` is accepted and yields the (possibly infinite)
    /// total integral for schedules defined on `[0, ∞)`.
    pub fn int_sigma(&self, a: f64, b: f64) -> Result<f64> {
        self.check_interval(a, b)?;
        match self {
            CouplingSchedule::Constant { sigma } => Ok(sigma * (b - a)),
            CouplingSchedule::PowerLaw { alpha, scale } => {
                let p = (alpha + 1.0) / 2.0;
                Ok((scale * alpha).sqrt() * (b.powf(p) - a.powf(p)) / p)
            }
            CouplingSchedule::ExponentialDecay { sigma, lambda } => {
                let eb = if b.is_infinite() {
                    0.0
                } else {
                    (-lambda * b).exp()
                };
                Ok(sigma / lambda * ((-lambda * a).exp() - eb))
            }
            CouplingSchedule::FiniteTime { sigma, horizon } => {
                let a = clamp_to_horizon(a, *horizon);
                let b = clamp_to_horizon(b, *horizon);
                Ok(sigma * horizon * ((horizon - a) / (horizon - b)).ln())
            }
            CouplingSchedule::Tabulated { table } => {
                integrate_segments(table, a, b, |s0, s1, h| 0.5 * (s0 + s1) * h)
            }
        }
    }

    /// `∫ₐᵇ σ_s² ds`, same conventions as [`CouplingSchedule::int_sigma`].
    pub fn int_sigma_sq(&self, a: f64, b: f64) -> Result<f64> {
        self.check_interval(a, b)?;
        match self {
            CouplingSchedule::Constant { sigma } => Ok(sigma * sigma * (b - a)),
            CouplingSchedule::PowerLaw { alpha, scale } => {
                Ok(scale * (b.powf(*alpha) - a.powf(*alpha)))
            }
            CouplingSchedule::ExponentialDecay { sigma, lambda } => {
                let eb = if b.is_infinite() {
                    0.0
                } else {
                    (-2.0 * lambda * b).exp()
                };
                Ok(sigma * sigma / (2.0 * lambda) * ((-2.0 * lambda * a).exp() - eb))
            }
            CouplingSchedule::FiniteTime { sigma, horizon } => {
                let a = clamp_to_horizon(a, *horizon);
                let b = clamp_to_horizon(b, *horizon);
                let s2t2 = sigma * sigma * horizon * horizon;
                Ok(s2t2 * (1.0 / (horizon - b) - 1.0 / (horizon - a)))
            }
            CouplingSchedule::Tabulated { table } => {
                integrate_segments(table, a, b, |s0, s1, h| {
                    h * (s0 * s0 + s0 * s1 + s1 * s1) / 3.0
                })
            }
        }
    }

    /// `∫ₐᵇ σ_s⁻² ds`; the per-step observation variance of the
    /// increment-decomposition filter. May be `+inf` (a zero-information step).
    pub fn int_inv_sigma_sq(&self, a: f64, b: f64) -> Result<f64> {
        self.check_interval(a, b)?;
        match self {
            CouplingSchedule::Constant { sigma } => Ok((b - a) / (sigma * sigma)),
            CouplingSchedule::PowerLaw { alpha, scale } => {
                // integrand t^{1-alpha} / (scale·alpha)
                let c = scale * alpha;
                if (*alpha - 2.0).abs() < 1e-15 {
                    if a == 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    Ok((b / a).ln() / c)
                } else {
                    let p = 2.0 - alpha;
                    if a == 0.0 && p < 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    Ok((b.powf(p) - a.powf(p)) / (c * p))
                }
            }
            CouplingSchedule::ExponentialDecay { sigma, lambda } => {
                if b.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                Ok(((2.0 * lambda * b).exp() - (2.0 * lambda * a).exp())
                    / (2.0 * lambda * sigma * sigma))
            }
            CouplingSchedule::FiniteTime { sigma, horizon } => {
                let a = clamp_to_horizon(a, *horizon);
                let b = clamp_to_horizon(b, *horizon);
                let ta = horizon - a;
                let tb = horizon - b;
                Ok((ta * ta * ta - tb * tb * tb) / (3.0 * sigma * sigma * horizon * horizon))
            }
            CouplingSchedule::Tabulated { table } => {
                // For linear σ on a segment, ∫ dt/σ² = h/(σ₀σ₁) exactly.
                integrate_segments(table, a, b, |s0, s1, h| h / (s0 * s1))
            }
        }
    }

    /// Total squared integral `∫₀^∞ σ² ds` (over the full domain for
    /// horizon-limited schedules). Infinite exactly when reduction completes.
    pub fn total_int_sigma_sq(&self) -> f64 {
        match self {
            CouplingSchedule::Constant { .. } | CouplingSchedule::PowerLaw { .. } => f64::INFINITY,
            CouplingSchedule::ExponentialDecay { sigma, lambda } => sigma * sigma / (2.0 * lambda),
            CouplingSchedule::FiniteTime { .. } => f64::INFINITY,
            CouplingSchedule::Tabulated { table } => {
                let end = table.last().unwrap().0;
                self.int_sigma_sq(0.0, end).unwrap()
            }
        }
    }

    /// Classify the schedule by what its squared integral does.
    pub fn classify(&self) -> CollapseRegime {
        match self {
            CouplingSchedule::Constant { .. } | CouplingSchedule::PowerLaw { .. } => {
                CollapseRegime {
                    tag: RegimeTag::CompleteInfiniteHorizon,
                    horizon: None,
                }
            }
            CouplingSchedule::ExponentialDecay { .. } | CouplingSchedule::Tabulated { .. } => {
                CollapseRegime {
                    tag: RegimeTag::Partial,
                    horizon: None,
                }
            }
            CouplingSchedule::FiniteTime { horizon, .. } => CollapseRegime {
                tag: RegimeTag::FiniteTime,
                horizon: Some(*horizon),
            },
        }
    }

    fn check_interval(&self, a: f64, b: f64) -> Result<()> {
        if a.is_nan() || b.is_nan() {
            return Err(Error::NonFinite("integration bounds".into()));
        }
        if a < 0.0 || b < a {
            return Err(Error::Domain(format!(
                "bad integration interval [{a}, {b}]"
            )));
        }
        match self {
            CouplingSchedule::FiniteTime { horizon, .. } => {
                if b >= *horizon {
                    return Err(Error::Domain(format!(
                        "interval end {b} not before the finite-time horizon T = {horizon}"
                    )));
                }
            }
            CouplingSchedule::Tabulated { table } => {
                let end = table.last().unwrap().0;
                if b > end {
                    return Err(Error::Domain(format!(
                        "interval end {b} beyond the tabulated domain [0, {end}]"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn require_positive(field: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("must be finite and > 0, got {x}"),
        ))
    }
}

fn clamp_to_horizon(t: f64, horizon: f64) -> f64 {
    t.min(horizon * (1.0 - FINITE_TIME_CLAMP))
}

fn interp_linear(table: &[(f64, f64)], t: f64) -> Result<f64> {
    let end = table.last().unwrap().0;
    if t > end {
        return Err(Error::Domain(format!(
            "t = {t} beyond the tabulated domain [0, {end}]"
        )));
    }
    let k = match table.binary_search_by(|&(s, _)| s.partial_cmp(&t).unwrap()) {
        Ok(k) => return Ok(table[k].1),
        Err(k) => k, // first index with time > t; k >= 1 because table starts at 0
    };
    let (t0, s0) = table[k - 1];
    let (t1, s1) = table[k];
    Ok(s0 + (s1 - s0) * (t - t0) / (t1 - t0))
}

/// Integrate a per-segment closed form of the linear interpolant over `[a, b]`,
/// splitting partial segments at interpolated endpoints.
fn integrate_segments(
    table: &[(f64, f64)],
    a: f64,
    b: f64,
    segment: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for w in table.windows(2) {
        let (t0, _) = w[0];
        let (t1, _) = w[1];
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let s_lo = interp_linear(table, lo)?;
        let s_hi = interp_linear(table, hi)?;
        total += segment(s_lo, s_hi, hi - lo);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn constant_pointwise_and_integrals() {
        let c = CouplingSchedule::constant(1.0).unwrap();
        assert_abs_diff_eq!(c.sigma(7.0).unwrap(), 1.0);
        let c2 = CouplingSchedule::constant(2.0).unwrap();
        assert_abs_diff_eq!(c2.int_sigma(0.0, 3.0).unwrap(), 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.int_sigma_sq(0.0, 5.5).unwrap(), 5.5, epsilon = 1e-14);
    }

    #[test]
    fn finite_time_matches_closed_forms() {
        let s = CouplingSchedule::finite_time(1.0, 1.0).unwrap();
        // σ T/(T-t) at t = 0.5
        assert_abs_diff_eq!(s.sigma(0.5).unwrap(), 2.0, epsilon = 1e-12);
        // σT ln(T/(T-t))
        assert_abs_diff_eq!(
            s.int_sigma(0.0, 0.5).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // σ²T² (1/(T-t) - 1/T) = tT/(T-t) for σ = T = 1
        assert_abs_diff_eq!(s.int_sigma_sq(0.0, 0.5).unwrap(), 1.0, epsilon = 1e-12);
        assert!(s.sigma(1.0).is_err());
        assert!(s.int_sigma_sq(0.0, 1.0).is_err());
    }

    #[test]
    fn power_law_sigma_value() {
        // ∫σ² = t², so σ_t = sqrt(2) t^{1/2}
        let s = CouplingSchedule::power_law(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            s.sigma(1.0).unwrap(),
            std::f64::consts::SQRT_2,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(s.int_sigma_sq(0.0, 3.0).unwrap(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_decay_total_integral() {
        let s = CouplingSchedule::exponential_decay(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            s.int_sigma_sq(0.0, f64::INFINITY).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(s.total_int_sigma_sq(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn reversed_interval_is_rejected() {
        let s = CouplingSchedule::constant(1.0).unwrap();
        assert!(s.int_sigma(2.0, 1.0).is_err());
        assert!(s.int_sigma_sq(2.0, 1.0).is_err());
    }

    #[test]
    fn classification_by_kind() {
        assert_eq!(
            CouplingSchedule::constant(1.0).unwrap().classify().tag,
            RegimeTag::CompleteInfiniteHorizon
        );
        assert_eq!(
            CouplingSchedule::exponential_decay(1.0, 1.0)
                .unwrap()
                .classify()
                .tag,
            RegimeTag::Partial
        );
        let ft = CouplingSchedule::finite_time(2.0, 3.0).unwrap().classify();
        assert_eq!(ft.tag, RegimeTag::FiniteTime);
        assert_eq!(ft.horizon, Some(3.0));
    }

    /// Adaptive Simpson quadrature, used only as an independent oracle here.
    fn simpson_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(
            f: &impl Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, tol / 2.0, depth - 1)
                    + recurse(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        recurse(f, a, b, simpson(f, a, b), tol, 40)
    }

    #[test]
    fn tabulated_integrals_match_simpson_oracle_on_smooth_function() {
        // Dense table sampled from a smooth positive function; the tabulated
        // integrals must agree with adaptive quadrature of the original
        // function within the interpolation error budget.
        let f = |t: f64| 1.0 + 0.5 * (1.2 * t).sin().powi(2);
        let n = 20_000;
        let t_max = 2.0;
        let table: Vec<(f64, f64)> = (0..=n)
            .map(|k| {
                let t = t_max * k as f64 / n as f64;
                (t, f(t))
            })
            .collect();
        let s = CouplingSchedule::tabulated(table).unwrap();

        let i1 = s.int_sigma(0.3, 1.9).unwrap();
        let o1 = simpson_adaptive(&f, 0.3, 1.9, 1e-12);
        assert_abs_diff_eq!(i1, o1, epsilon = 1e-8);

        let f2 = |t: f64| f(t) * f(t);
        let i2 = s.int_sigma_sq(0.0, 2.0).unwrap();
        let o2 = simpson_adaptive(&f2, 0.0, 2.0, 1e-12);
        assert_abs_diff_eq!(i2, o2, epsilon = 1e-8);

        let finv = |t: f64| 1.0 / (f(t) * f(t));
        let i3 = s.int_inv_sigma_sq(0.1, 1.7).unwrap();
        let o3 = simpson_adaptive(&finv, 0.1, 1.7, 1e-12);
        assert_abs_diff_eq!(i3, o3, epsilon = 1e-8);
    }

    #[test]
    fn finite_time_integral_diverges_monotonically_near_horizon() {
        let s = CouplingSchedule::finite_time(1.0, 1.0).unwrap();
        let mut prev = 0.0;
        for k in 1..=10 {
            let t = 1.0 - 0.5f64.powi(k);
            let i = s.int_sigma_sq(0.0, t).unwrap();
            assert!(i > prev);
            prev = i;
        }
        assert!(prev > 1000.0);
    }

    #[test]
    fn inverse_square_integrals() {
        let s = CouplingSchedule::finite_time(1.0, 2.0).unwrap();
        // ((T-a)³ - (T-b)³) / (3 σ² T²)
        let v = s.int_inv_sigma_sq(0.0, 1.0).unwrap();
        assert_relative_eq!(v, (8.0 - 1.0) / 12.0, epsilon = 1e-12);

        // power law alpha = 2 has a log-divergent inverse-square integral at 0
        let p = CouplingSchedule::power_law(2.0, 1.0).unwrap();
        assert!(p.int_inv_sigma_sq(0.0, 1.0).unwrap().is_infinite());
        assert_relative_eq!(
            p.int_inv_sigma_sq(1.0, std::f64::consts::E).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    proptest::proptest! {
        #[test]
        fn additivity_over_adjacent_intervals(
            a in 0.0f64..1.0,
            mid in 0.0f64..1.0,
            c in 0.0f64..1.0,
            kind in 0usize..4,
        ) {
            let schedule = match kind {
                0 => CouplingSchedule::constant(1.3).unwrap(),
                1 => CouplingSchedule::power_law(1.5, 0.7).unwrap(),
                2 => CouplingSchedule::exponential_decay(1.1, 0.4).unwrap(),
                _ => CouplingSchedule::finite_time(0.8, 4.0).unwrap(),
            };
            let (mut lo, mut hi) = (a, c);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            let m = lo + mid * (hi - lo);
            let whole = schedule.int_sigma(lo, hi).unwrap();
            let parts = schedule.int_sigma(lo, m).unwrap() + schedule.int_sigma(m, hi).unwrap();
            proptest::prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));

            let whole2 = schedule.int_sigma_sq(lo, hi).unwrap();
            let parts2 =
                schedule.int_sigma_sq(lo, m).unwrap() + schedule.int_sigma_sq(m, hi).unwrap();
            proptest::prop_assert!((whole2 - parts2).abs() <= 1e-12 * (1.0 + whole2.abs()));
        }

        #[test]
        fn cauchy_schwarz_between_integrals(
            t in 1e-3f64..3.0,
            kind in 0usize..4,
        ) {
            let schedule = match kind {
                0 => CouplingSchedule::constant(0.9).unwrap(),
                1 => CouplingSchedule::power_law(2.0, 1.0).unwrap(),
                2 => CouplingSchedule::exponential_decay(1.5, 0.8).unwrap(),
                _ => CouplingSchedule::finite_time(1.0, 4.0).unwrap(),
            };
            let s1 = schedule.int_sigma(0.0, t).unwrap();
            let s2 = schedule.int_sigma_sq(0.0, t).unwrap();
            proptest::prop_assert!(s1 * s1 <= t * s2 * (1.0 + 1e-10) + 1e-10);
        }
    }
}
