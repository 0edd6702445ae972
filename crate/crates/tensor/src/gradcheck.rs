//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};

/// Smallest denominator used when forming relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    #[default]
    ThreePoint,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`, error O(h^4).
    /// Allows a larger step, which shrinks cancellation error on small
    /// gradients.
    FivePoint,
}

impl Stencil {
    /// Offsets in units of `h` and their weights in units of `1 / h`.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::ThreePoint => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[
                (-2.0, 1.0 / 12.0),
                (-1.0, -8.0 / 12.0),
                (1.0, 8.0 / 12.0),
                (2.0, -1.0 / 12.0),
            ],
        }
    }

    /// Forward taps of the same order; negate both columns for backward.
    fn forward_taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::ThreePoint => &[(0.0, -1.5), (1.0, 2.0), (2.0, -0.5)],
            Stencil::FivePoint => &[
                (0.0, -25.0 / 12.0),
                (1.0, 4.0),
                (2.0, -3.0),
                (3.0, 4.0 / 3.0),
                (4.0, -0.25),
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub stencil: Stencil,
    /// Check at most this many coordinates per parameter tensor, chosen
    /// uniformly with `seed`. `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Times the step is halved when a stencil point changes which ReLU
    /// inputs are positive. A coordinate still crossing a kink after that
    /// is counted in [`GradCheckReport::kinked`] and left out of the error.
    pub kink_retries: usize,
    /// Before halving, try a one-sided stencil on whichever side keeps the
    /// activation pattern. That side is the smooth piece reverse mode
    /// differentiates.
    pub one_sided: bool,
}

impl GradCheckConfig {
    pub fn exhaustive(eps: f64) -> Self {
        GradCheckConfig {
            eps,
            stencil: Stencil::ThreePoint,
            max_coords_per_param: None,
            seed: 0,
            kink_retries: 0,
            one_sided: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Step the estimate was taken with.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared, excluding kinked ones.
    pub coords_checked: usize,
    /// Coordinates whose every step crossed a ReLU kink.
    pub kinked: usize,
    /// Coordinates that needed a smaller step than `eps`.
    pub step_reduced: usize,
    /// Coordinates estimated from one side of a kink.
    pub one_sided: usize,
    pub worst: Option<CoordinateError>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let out = f(&mut g)?;
    Ok((g.value(out).item(), g.relu_pattern()))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// finite differences. A difference is only trusted when every stencil
/// point leaves the ReLU activation pattern of the base point unchanged;
/// otherwise a one-sided stencil is tried (if enabled) and then the step is
/// halved, up to `kink_retries` times.
pub fn grad_check_with<F>(
    f: F,
    params: &ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let (analytic, base_value, base_pattern) = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        (g.backward(out)?, g.value(out).item(), g.relu_pattern())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        kinked: 0,
        step_reduced: 0,
        one_sided: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let len = params.get(id).len();
        let coords: Vec<usize> = match config.max_coords_per_param {
            Some(k) if k < len => {
                let mut picked = sample(&mut rng, len, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        for k in coords {
            let original = params.get(id).data()[k];
            let mut h = config.eps;
            let mut estimate = None;
            for attempt in 0..=config.kink_retries {
                // Values and smoothness at each offset, evaluated lazily.
                let mut cache: Vec<(f64, f64, bool)> = Vec::new();
                let mut at = |offset: f64| -> Result<(f64, bool)> {
                    if offset == 0.0 {
                        return Ok((base_value, true));
                    }
                    if let Some(&(_, v, ok)) = cache.iter().find(|c| c.0 == offset) {
                        return Ok((v, ok));
                    }
                    work.get_mut(id).data_mut()[k] = original + offset * h;
                    let (v, pattern) = evaluate(&f, &work)?;
                    let ok = pattern == base_pattern;
                    cache.push((offset, v, ok));
                    Ok((v, ok))
                };
                let mut attempt_with = |taps: &[(f64, f64)], sign: f64| -> Result<Option<f64>> {
                    let mut numeric = 0.0;
                    for &(offset, weight) in taps {
                        let (v, ok) = at(sign * offset)?;
                        if !ok {
                            return Ok(None);
                        }
                        numeric += sign * weight * v / h;
                    }
                    Ok(Some(numeric))
                };
                let mut found = attempt_with(config.stencil.taps(), 1.0)?;
                if found.is_none() && config.one_sided {
                    found = attempt_with(config.stencil.forward_taps(), 1.0)?;
                    if found.is_none() {
                        found = attempt_with(config.stencil.forward_taps(), -1.0)?;
                    }
                    if found.is_some() {
                        report.one_sided += 1;
                    }
                }
                if let Some(numeric) = found {
                    if attempt > 0 {
                        report.step_reduced += 1;
                    }
                    estimate = Some(numeric);
                    break;
                }
                h /= 2.0;
            }
            work.get_mut(id).data_mut()[k] = original;
            let Some(numeric) = estimate else {
                report.kinked += 1;
                continue;
            };

            let a = analytic.get(id).data()[k];
            let err = rel_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(CoordinateError {
                    param: params.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                    rel_error: err,
                    step: h,
                });
            }
        }
    }
    Ok(report)
}

/// Maximum relative error over every coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    grad_check_with(f, params, &GradCheckConfig::exhaustive(eps)).map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]));
        let err = grad_check(
            |g| {
                let xn = g.param(x);
                let sq = g.mul(xn, xn)?;
                g.sum(sq)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.3]));
        let quartic = |g: &mut Graph| {
            let xn = g.param(x);
            let sq = g.mul(xn, xn)?;
            let q = g.mul(sq, sq)?;
            g.sum(q)
        };
        let check = |stencil| {
            let config = GradCheckConfig {
                eps: 1e-2,
                stencil,
                max_coords_per_param: None,
                seed: 0,
                kink_retries: 0,
                one_sided: false,
            };
            grad_check_with(quartic, &store, &config)
                .unwrap()
                .max_rel_error
        };
        assert!(check(Stencil::FivePoint) < 1e-12);
        assert!(check(Stencil::ThreePoint) > 1e-5);
    }

    fn shifted_relu_check(x0: f64, kink_retries: usize, one_sided: bool) -> GradCheckReport {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![x0]));
        let f = |g: &mut Graph| {
            let xn = g.param(x);
            let shift = g.constant(Tensor::vector(vec![-0.3]));
            let z = g.add(xn, shift)?;
            let r = g.relu(z)?;
            g.sum(r)
        };
        let config = GradCheckConfig {
            eps: 1e-3,
            stencil: Stencil::ThreePoint,
            max_coords_per_param: None,
            seed: 0,
            kink_retries,
            one_sided,
        };
        grad_check_with(f, &store, &config).unwrap()
    }

    #[test]
    fn kinks_shrink_the_step_or_are_reported() {
        // relu(x - 0.3) at x = 0.3 + 1e-7: a step of 1e-3 straddles the
        // kink, 1e-3 / 2^14 does not.
        let naive = shifted_relu_check(0.3 + 1e-7, 0, false);
        assert_eq!((naive.kinked, naive.coords_checked), (1, 0));
        let halving = shifted_relu_check(0.3 + 1e-7, 20, false);
        assert_eq!(
            (halving.kinked, halving.coords_checked, halving.step_reduced),
            (0, 1, 1)
        );
        assert!(halving.max_rel_error < 1e-6);
    }

    #[test]
    fn one_sided_differences_stay_on_the_base_side_of_a_kink() {
        let r = shifted_relu_check(0.3 + 1e-7, 0, true);
        assert_eq!(
            (r.kinked, r.coords_checked, r.one_sided, r.step_reduced),
            (0, 1, 1, 0)
        );
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
        // Exactly on the kink the analytic slope is 0, matched from the left.
        let r = shifted_relu_check(0.3, 0, true);
        assert_eq!((r.kinked, r.coords_checked, r.one_sided), (0, 1, 1));
        assert_eq!(r.worst.unwrap().numeric, 0.0);
    }

    #[test]
    fn one_sided_taps_are_exact_on_low_degree_polynomials() {
        // Second order is exact on quadratics, fourth order on quartics.
        let h = 1e-2;
        for (stencil, degree) in [(Stencil::ThreePoint, 2), (Stencil::FivePoint, 4)] {
            for sign in [1.0, -1.0] {
                let numeric: f64 = stencil
                    .forward_taps()
                    .iter()
                    .map(|&(o, w)| sign * w * (1.3 + sign * o * h).powi(degree) / h)
                    .sum();
                let exact = degree as f64 * 1.3f64.powi(degree - 1);
                assert!(
                    (numeric - exact).abs() < 1e-10,
                    "{stencil:?} {sign}: {numeric}"
                );
            }
        }
    }

    #[test]
    fn sampling_limits_coordinates() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::from_fn(&[10, 10], |i| i as f64 * 0.01));
        let config = GradCheckConfig {
            eps: 1e-6,
            stencil: Stencil::ThreePoint,
            max_coords_per_param: Some(7),
            kink_retries: 0,
            one_sided: false,
            seed: 3,
        };
        let report = grad_check_with(
            |g| {
                let xn = g.param(x);
                g.logsumexp(xn)
            },
            &store,
            &config,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 7);
        assert!(report.max_rel_error < 1e-6);
    }
}
