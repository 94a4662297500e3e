use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper limit of the admissible decay exponent, 10/63.
pub const GAMMA_MAX_NUM: i64 = 10;
pub const GAMMA_MAX_DEN: i64 = 63;

/// Tunable constants of the certification chain. `k1` and `k2` are the
/// interpolation and pressure-iteration constants (any admissible value at
/// least as large as the true ones keeps the chain sound; 2 is a safe
/// default for both), `zeta` the smallness threshold of the final check,
/// `eps1`/`eps2` thresholds of the auxiliary pointwise criteria.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConstants {
    pub zeta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for CriteriaConstants {
    fn default() -> Self {
        CriteriaConstants { zeta: 0.01, eps1: 0.01, eps2: 0.01, k1: 2.0, k2: 2.0 }
    }
}

impl CriteriaConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("zeta", self.zeta),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("k1", self.k1),
            ("k2", self.k2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("constant {name} must be positive, got {v}")));
            }
        }
        if self.k1 < 1.0 || self.k2 < 1.0 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        Ok(())
    }

    /// Constant of the local kinetic-energy bound, 40 (64 pi)^(2/5).
    pub fn k3(&self) -> f64 {
        40.0 * (64.0 * std::f64::consts::PI).powf(0.4)
    }
}

/// Derived iteration parameters for one decay exponent `gamma`.
///
/// `n` is the ladder depth, `beta = 1/(6n)` the per-rung shrink exponent,
/// `alpha` the entry exponent, `epsilon` the hypothesis smallness scale and
/// `rho0` the largest admissible base radius. `strict` records whether
/// `rho0` is the provably sufficient value or a user override.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ParameterSchedule {
    pub gamma: f64,
    pub n: u32,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub rho0: f64,
    pub strict: bool,
    pub constants: CriteriaConstants,
}

impl ParameterSchedule {
    /// Shrink factor between consecutive ladder radii.
    pub fn theta(&self, rho: f64) -> f64 {
        rho.powf(self.beta)
    }

    /// Ladder radius `R_j = rho^(alpha + j beta)`, `j = 0 ..= n`.
    pub fn radius(&self, rho: f64, j: u32) -> f64 {
        rho.powf(self.alpha + j as f64 * self.beta)
    }

    /// Right-hand side of the smallness hypothesis on `Q(z, 2 rho)`.
    pub fn hypothesis_rhs(&self, rho: f64) -> f64 {
        (2.0 * rho).powf(5.0 / 3.0 - self.gamma) * self.epsilon
    }

    /// Bound the energy functional must satisfy at scale `rho`.
    pub fn step1_a_bound(&self, rho: f64) -> f64 {
        self.constants.k3() * rho.powf(-0.9 * self.gamma) * self.epsilon.powf(0.6)
    }

    /// Bound the dissipation functional must satisfy at scale `rho`.
    pub fn step1_e_bound(&self, rho: f64) -> f64 {
        (2.0f64).powf(5.0 / 3.0) * rho.powf(2.0 / 3.0 - self.gamma) * self.epsilon
    }

    /// Bound on the iterated-pressure remainder after `n` rungs.
    pub fn term_i_bound(&self) -> f64 {
        self.constants.k2.powi(self.n as i32) * self.constants.k3() * self.epsilon.powf(0.9)
    }

    /// Bound on the accumulated interpolation sum along the ladder.
    pub fn term_ii_bound(&self) -> f64 {
        4.0 * self.constants.k2.powi(self.n as i32)
            * self.constants.k1
            * self.constants.k3().powf(1.5)
            * self.epsilon.powf(0.9)
    }

    /// Replace the base-radius ceiling. The provable ceiling is far below
    /// what sampled data can resolve, so practical runs relax it; the
    /// resulting certificates are marked non-strict.
    pub fn with_rho0(mut self, rho0: f64) -> Result<Self> {
        if !(rho0.is_finite() && rho0 > 0.0 && rho0 < 1.0) {
            return Err(Error::Config(format!("rho0 must lie in (0, 1), got {rho0}")));
        }
        if rho0 > self.rho0 {
            self.strict = false;
        }
        self.rho0 = rho0;
        Ok(self)
    }
}

/// Smallest ladder depth `n` with `1/(6n) < (10 - 63 gamma)/135`, as f64.
fn ladder_depth_f64(gamma: f64) -> u32 {
    let rhs = (10.0 - 63.0 * gamma) / 135.0;
    let mut n = (22.5 / (10.0 - 63.0 * gamma)).floor().max(1.0) as u32;
    while n > 1 && 1.0 / (6.0 * (n - 1) as f64) < rhs {
        n -= 1;
    }
    while 1.0 / (6.0 * n as f64) >= rhs {
        n += 1;
    }
    n
}

/// Derive the full schedule for a decay exponent `gamma` in (0, 10/63).
pub fn make_schedule(gamma: f64, constants: CriteriaConstants) -> Result<ParameterSchedule> {
    constants.validate()?;
    let gamma_max = GAMMA_MAX_NUM as f64 / GAMMA_MAX_DEN as f64;
    if !(gamma.is_finite() && gamma > 0.0 && gamma < gamma_max) {
        return Err(Error::Config(format!(
            "gamma must lie strictly between 0 and 10/63 ~ {gamma_max:.6}, got {gamma}"
        )));
    }
    let n = ladder_depth_f64(gamma);
    if n > 4000 {
        return Err(Error::Config(format!(
            "gamma = {gamma} needs a ladder of depth {n}; the iteration constants overflow \
             well before that, so such exponents are not certifiable numerically"
        )));
    }
    let beta = 1.0 / (6.0 * n as f64);
    let alpha = (550.0 - 9.0 * gamma) / 540.0;
    let k3 = constants.k3();
    let k2n = constants.k2.powi(n as i32);
    let denom = k2n * k3 + 4.0 * k2n * constants.k1 * k3.powf(1.5);
    if !denom.is_finite() {
        return Err(Error::Numerical(format!(
            "iteration constants overflow at ladder depth {n}"
        )));
    }
    let epsilon = 0.9 * (constants.zeta / denom).powf(10.0 / 9.0).min(1.0);
    if epsilon <= 0.0 {
        return Err(Error::Numerical(format!(
            "smallness scale underflows to zero at ladder depth {n}"
        )));
    }
    // theta = rho^beta < 1/2 requires rho < 2^(-6n); stay a hair below
    let rho0 = 0.99 * (2.0f64).powi(-(6 * n as i32)).min(1.0);
    Ok(ParameterSchedule { gamma, n, beta, alpha, epsilon, rho0, strict: true, constants })
}

/// Exact-arithmetic confirmation of the exponent bookkeeping behind the
/// schedule, for one rational `gamma = p/q`.
#[derive(Clone, Debug)]
pub struct ScheduleIdentities {
    pub n: u64,
    pub beta: BigRational,
    pub alpha: BigRational,
    /// `3/2 - 3 alpha / 2 + n beta - 9 gamma / 10`, which must equal
    /// `(10 - 63 gamma) / 72` and be positive.
    pub decay_exponent: BigRational,
    /// `2/9 - 3 beta - 7 gamma / 5`, which must equal
    /// `(10 - 63 gamma) / 45 - 3 beta` and be positive.
    pub gap_exponent: BigRational,
}

fn rat(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

/// Recompute the ladder depth and both exponent identities in exact rational
/// arithmetic, returning an error if either identity fails to match its
/// closed form or comes out nonpositive.
pub fn check_schedule_identities(gamma: &BigRational) -> Result<ScheduleIdentities> {
    let zero = BigRational::from(BigInt::from(0));
    let gamma_max = rat(GAMMA_MAX_NUM, GAMMA_MAX_DEN);
    if gamma <= &zero || gamma >= &gamma_max {
        return Err(Error::Config(format!("gamma {gamma} outside (0, 10/63)")));
    }
    // smallest n with 1/(6n) < (10 - 63 gamma)/135, i.e. n > 45 / (2 (10 - 63 gamma))
    let margin = rat(10, 1) - rat(63, 1) * gamma;
    let threshold = rat(45, 2) / margin.clone();
    let n_floor = threshold.floor().to_integer();
    let mut n_big = n_floor + BigInt::from(1);
    if n_big < BigInt::from(1) {
        n_big = BigInt::from(1);
    }
    let n_rat = BigRational::from(n_big.clone());
    // confirm minimality from the defining inequality itself
    let rhs = margin.clone() / rat(135, 1);
    let beta = rat(1, 1) / (rat(6, 1) * n_rat.clone());
    if beta >= rhs {
        return Err(Error::Internal(format!("ladder depth {n_big} fails its own bound")));
    }
    if n_big > BigInt::from(1) {
        let prev = rat(1, 1) / (rat(6, 1) * BigRational::from(n_big.clone() - BigInt::from(1)));
        if prev < rhs {
            return Err(Error::Internal(format!("ladder depth {n_big} is not minimal")));
        }
    }
    let alpha = (rat(550, 1) - rat(9, 1) * gamma) / rat(540, 1);
    let decay = rat(3, 2) - rat(3, 2) * alpha.clone() + n_rat * beta.clone()
        - rat(9, 10) * gamma;
    let decay_expected = margin.clone() / rat(72, 1);
    if decay != decay_expected {
        return Err(Error::Numerical(format!(
            "decay exponent mismatch: got {decay}, closed form {decay_expected}"
        )));
    }
    let gap = rat(2, 9) - rat(3, 1) * beta.clone() - rat(7, 5) * gamma;
    let gap_expected = margin / rat(45, 1) - rat(3, 1) * beta.clone();
    if gap != gap_expected {
        return Err(Error::Numerical(format!(
            "gap exponent mismatch: got {gap}, closed form {gap_expected}"
        )));
    }
    if decay <= zero || gap <= zero {
        return Err(Error::Numerical(format!(
            "exponent positivity fails: decay {decay}, gap {gap}"
        )));
    }
    let n_u64 = u64::try_from(n_big).map_err(|_| Error::Internal("depth overflow".into()))?;
    Ok(ScheduleIdentities { n: n_u64, beta, alpha, decay_exponent: decay, gap_exponent: gap })
}
