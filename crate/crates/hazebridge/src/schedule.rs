//! Closed-form per-timestep quantities of the pinned diffusion process.
//!
//! For a process with `T` steps and variance scale `s`, the state at step `t`
//! given both endpoints is Gaussian with mean `(1 - m_t) z_0 + m_t z_T` and
//! variance `delta_t`, where `m_t = t / T` and `delta_t = 2 s (m_t - m_t^2)`.
//! Everything else here (one-step transition variances, reverse-step
//! coefficients, posterior variances) is derived from that marginal by
//! Gaussian conditioning; `docs/posterior-derivation.md` carries the algebra.
//!
//! All schedule arithmetic is 64-bit. `delta_t` is evaluated as
//! `s * 2 t (T - t) / T^2` so that the symmetry `delta_t = delta_{T-t}` and
//! the scaling law `delta(T, s) = s * delta(T, 1)` hold exactly in floating
//! point, not just to rounding.

use crate::error::{Error, Result};

/// Coefficients of one reverse step: the conditional distribution of the
/// state at `to` given the state at `from`, the endpoint, and a clean-state
/// estimate is `N(a * z_from + b * z_T + c * z0_hat, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoeffs {
    /// Weight of the current state `z_t`.
    pub a: f64,
    /// Weight of the pinned endpoint `z_T`.
    pub b: f64,
    /// Weight of the predicted clean state.
    pub c: f64,
    /// Posterior variance.
    pub var: f64,
}

/// The alternative printed parameterization in which the network output is
/// combined as `ct * z_t + c_end * z_T + c_pred * prediction`. Unlike
/// [`ReverseCoeffs`] these weights do not sum to one when the prediction is
/// read as the clean state; they are exposed for the compatibility sampler
/// and for inspection. See `docs/posterior-derivation.md`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiteralCoeffs {
    pub ct: f64,
    pub c_end: f64,
    pub c_pred: f64,
    pub var: f64,
}

/// Precomputed bridge quantities for a `(T, s)` configuration.
#[derive(Debug, Clone)]
pub struct BridgeSchedule {
    steps: usize,
    scale: f64,
    /// `m_t = t / T`, indices `0..=T`.
    m: Vec<f64>,
    /// Marginal variance `delta_t`, indices `0..=T`.
    delta: Vec<f64>,
    /// One-step transition variance `delta_{t|t-1}`, valid for `t >= 1`
    /// (index 0 stored as zero).
    delta_cond: Vec<f64>,
    /// Reverse-step coefficients for `t = 1..=T` (index 0 unused).
    reverse: Vec<ReverseCoeffs>,
}

impl BridgeSchedule {
    /// Build the schedule. `steps >= 1`, `scale > 0`.
    pub fn new(steps: usize, scale: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("step count must be >= 1".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "variance scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self::new_unchecked(steps, scale))
    }

    /// Test-only constructor that additionally admits `scale = 0` (the
    /// deterministic interpolation limit). Not part of the public contract.
    #[doc(hidden)]
    pub fn degenerate_for_tests(steps: usize, scale: f64) -> Self {
        assert!(steps >= 1 && scale >= 0.0);
        Self::new_unchecked(steps, scale)
    }

    fn new_unchecked(steps: usize, scale: f64) -> Self {
        let t_f = steps as f64;
        let m: Vec<f64> = (0..=steps).map(|t| t as f64 / t_f).collect();
        // delta_t = s * 2 t (T - t) / T^2, exact under t <-> T - t.
        let delta: Vec<f64> = (0..=steps)
            .map(|t| scale * Self::unit_delta_for(steps, t))
            .collect();
        let mut delta_cond = vec![0.0; steps + 1];
        for t in 1..=steps {
            let k = Self::shrink(steps, t, t - 1);
            delta_cond[t] = delta[t] - delta[t - 1] * k * k;
        }
        let mut sched = Self {
            steps,
            scale,
            m,
            delta,
            delta_cond,
            reverse: Vec::new(),
        };
        let mut reverse = Vec::with_capacity(steps + 1);
        reverse.push(ReverseCoeffs {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            var: 0.0,
        });
        for t in 1..=steps {
            reverse.push(sched.jump_coefficients_unchecked(t, t - 1));
        }
        sched.reverse = reverse;
        sched
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Interpolation weight `m_t = t / T`.
    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    /// `1 - m_t` evaluated as `(T - t) / T` for exact endpoint behavior.
    pub fn one_minus_m(&self, t: usize) -> f64 {
        (self.steps - t) as f64 / self.steps as f64
    }

    /// Marginal variance `delta_t`.
    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    pub fn ms(&self) -> &[f64] {
        &self.m
    }

    /// One-step transition variance `delta_{t|t-1}` for `t >= 1`.
    pub fn delta_cond(&self, t: usize) -> f64 {
        self.delta_cond[t]
    }

    /// Mean shrink factor `(1 - m_to) / (1 - m_from)` of the transition from
    /// step `from` toward the endpoint, evaluated on exact integer ratios.
    fn shrink(steps: usize, to: usize, from: usize) -> f64 {
        (steps - to) as f64 / (steps - from) as f64
    }

    /// `delta_t` at unit scale; reverse-step weights are ratios of these,
    /// which keeps them well defined even in the `s = 0` test limit.
    fn unit_delta_for(steps: usize, t: usize) -> f64 {
        let t_f = steps as f64;
        2.0 * (t * (steps - t)) as f64 / (t_f * t_f)
    }

    fn unit_delta(&self, t: usize) -> f64 {
        Self::unit_delta_for(self.steps, t)
    }

    /// Transition distribution of `z_to` given `z_from` (for `to > from`):
    /// mean `k * z_from + (m_to - k * m_from) * z_T`, variance
    /// `delta_{to|from}`.
    pub fn transition(&self, from: usize, to: usize) -> Result<(f64, f64, f64)> {
        if to == 0 || to <= from || to > self.steps {
            return Err(Error::TimestepOutOfRange {
                t: to,
                lo: from + 1,
                hi: self.steps,
            });
        }
        let k = Self::shrink(self.steps, to, from);
        let endpoint = self.m(to) - k * self.m(from);
        let var = self.delta(to) - self.delta(from) * k * k;
        Ok((k, endpoint, var))
    }

    /// Reverse-step coefficients for the full-chain step `t -> t-1`,
    /// `1 <= t <= T`.
    ///
    /// Interior steps come from Gaussian conditioning of the one-step
    /// transition against the marginal. The endpoints are exact limits:
    /// at `t = 1` the posterior collapses onto the clean estimate with zero
    /// variance, and at `t = T` (where `delta_T = 0` makes the general
    /// expression indeterminate) the step distribution equals the marginal
    /// at `T - 1` with the clean estimate in place of `z_0`.
    pub fn reverse_coefficients(&self, t: usize) -> Result<ReverseCoeffs> {
        if t == 0 || t > self.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok(self.reverse[t])
    }

    /// Reverse-step coefficients for an arbitrary jump `from -> to` with
    /// `0 <= to < from <= T`; used by skip sampling. The conditional is
    /// computed directly at the target step from schedule constants, with the
    /// same structure as the one-step case.
    pub fn jump_coefficients(&self, from: usize, to: usize) -> Result<ReverseCoeffs> {
        if from == 0 || from > self.steps || to >= from {
            return Err(Error::TimestepOutOfRange {
                t: to,
                lo: 0,
                hi: from.saturating_sub(1),
            });
        }
        Ok(self.jump_coefficients_unchecked(from, to))
    }

    fn jump_coefficients_unchecked(&self, from: usize, to: usize) -> ReverseCoeffs {
        if from == self.steps {
            // First reverse step: the endpoint value carries no extra
            // information beyond z_T itself, so the conditional equals the
            // marginal at the target step.
            return ReverseCoeffs {
                a: 0.0,
                b: self.m(to),
                c: self.one_minus_m(to),
                var: self.delta(to),
            };
        }
        let k = Self::shrink(self.steps, from, to);
        let d_from = self.unit_delta(from);
        let d_to = self.unit_delta(to);
        let d_cond = d_from - d_to * k * k;
        let a = k * d_to / d_from;
        let b = self.m(to) - self.m(from) * k * d_to / d_from;
        let c = self.one_minus_m(to) * d_cond / d_from;
        let var = self.scale * (d_to * d_cond / d_from);
        ReverseCoeffs { a, b, c, var }
    }

    /// The printed reverse-step triple `(c_t, c_end, c_pred)` together with
    /// the posterior variance, exactly as published. Defined for interior
    /// steps `2 <= t <= T - 1` where the involved ratios exist.
    pub fn literal_coefficients(&self, t: usize) -> Result<LiteralCoeffs> {
        if t < 2 || t + 1 > self.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 2,
                hi: self.steps.saturating_sub(1),
            });
        }
        let d_t = self.unit_delta(t);
        let d_prev = self.unit_delta(t - 1);
        let d_cond = d_t - d_prev * Self::shrink(self.steps, t, t - 1).powi(2);
        let k = Self::shrink(self.steps, t, t - 1);
        let ct = (d_prev / d_t) * k + self.one_minus_m(t - 1) * d_cond / d_t;
        let c_end = self.m(t - 1) - self.m(t) * k * (d_prev / d_t);
        let c_pred = self.one_minus_m(t - 1) * d_cond / d_t;
        let var = self.scale * (d_cond * d_prev / d_t);
        Ok(LiteralCoeffs {
            ct,
            c_end,
            c_pred,
            var,
        })
    }
}
