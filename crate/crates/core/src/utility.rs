//! Normalized application utilities and the per-user aggregate.
//!
//! Two shapes are supported: an S-shaped utility for real-time traffic and a
//! concave logarithmic utility for delay-tolerant traffic. Both satisfy
//! `U(0) = 0` and are log-concave, so every solver in this crate works with
//! `ln U` and its derivative rather than `U` itself.

use crate::error::{Error, Result};

/// Largest `a * b` accepted for a sigmoidal utility. `e^{ab}` is still finite
/// in `f64` at this bound.
pub const MAX_SIGMOID_EXPONENT: f64 = 700.0;

/// Normalized sigmoidal utility with steepness `a` and inflection rate `b`.
///
/// The textbook form is `c (1 / (1 + e^{-a(r-b)}) - d)` with
/// `c = (1 + e^{ab}) / e^{ab}` and `d = 1 / (1 + e^{ab})`. It simplifies to
/// `(1 - e^{-ar}) / (1 + e^{-a(r-b)})`, which is what `eval` computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidalUtility {
    a: f64,
    b: f64,
}

impl SigmoidalUtility {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::domain(format!("sigmoid steepness must be > 0, got {a}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::domain(format!("sigmoid inflection must be > 0, got {b}")));
        }
        if a * b > MAX_SIGMOID_EXPONENT {
            return Err(Error::domain(format!(
                "sigmoid a*b = {} exceeds {MAX_SIGMOID_EXPONENT}",
                a * b
            )));
        }
        Ok(Self { a, b })
    }

    pub fn steepness(&self) -> f64 {
        self.a
    }

    pub fn inflection(&self) -> f64 {
        self.b
    }

    /// Normalization multiplier `(1 + e^{ab}) / e^{ab}`.
    pub fn c_norm(&self) -> f64 {
        1.0 + (-self.a * self.b).exp()
    }

    /// Normalization shift `1 / (1 + e^{ab})`.
    pub fn d_norm(&self) -> f64 {
        let t = (-self.a * self.b).exp();
        t / (1.0 + t)
    }

    fn value(&self, r: f64) -> f64 {
        -(-self.a * r).exp_m1() / (1.0 + (-self.a * (r - self.b)).exp())
    }

    fn log_value(&self, r: f64) -> f64 {
        if r == 0.0 {
            return f64::NEG_INFINITY;
        }
        let ar = self.a * r;
        let head = if ar > 1.0 {
            (-(-ar).exp()).ln_1p()
        } else {
            (-(-ar).exp_m1()).ln()
        };
        head - softplus(-self.a * (r - self.b))
    }

    fn log_slope(&self, r: f64) -> f64 {
        let a = self.a;
        a / (a * r).exp_m1() + a * logistic(-a * (r - self.b))
    }
}

/// Normalized logarithmic utility `ln(1 + k r) / ln(1 + k r_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogarithmicUtility {
    k: f64,
    r_max: f64,
}

impl LogarithmicUtility {
    pub fn new(k: f64, r_max: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::domain(format!("logarithmic k must be > 0, got {k}")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::domain(format!("r_max must be > 0, got {r_max}")));
        }
        Ok(Self { k, r_max })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    fn norm(&self) -> f64 {
        (self.k * self.r_max).ln_1p()
    }

    // Past r_max the same formula is used, so values exceed 1.
    fn value(&self, r: f64) -> f64 {
        if r == self.r_max {
            return 1.0;
        }
        (self.k * r).ln_1p() / self.norm()
    }

    fn log_value(&self, r: f64) -> f64 {
        if r == 0.0 {
            return f64::NEG_INFINITY;
        }
        if r == self.r_max {
            return 0.0;
        }
        (self.k * r).ln_1p().ln() - self.norm().ln()
    }

    fn log_slope(&self, r: f64) -> f64 {
        let kr = self.k * r;
        self.k / ((1.0 + kr) * kr.ln_1p())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFunction {
    Sigmoidal(SigmoidalUtility),
    Logarithmic(LogarithmicUtility),
}

impl UtilityFunction {
    pub fn sigmoidal(a: f64, b: f64) -> Result<Self> {
        SigmoidalUtility::new(a, b).map(Self::Sigmoidal)
    }

    pub fn logarithmic(k: f64, r_max: f64) -> Result<Self> {
        LogarithmicUtility::new(k, r_max).map(Self::Logarithmic)
    }

    /// Characteristic rate of the curve: the inflection `b` for a sigmoid,
    /// `r_max` for a logarithm. Used to seed brackets and sampling grids.
    pub fn scale(&self) -> f64 {
        match self {
            Self::Sigmoidal(s) => s.b,
            Self::Logarithmic(l) => l.r_max,
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        check_rate(r)?;
        Ok(match self {
            Self::Sigmoidal(s) => s.value(r),
            Self::Logarithmic(l) => l.value(r),
        })
    }

    /// `ln U(r)`; `-inf` at `r = 0`.
    pub fn log_eval(&self, r: f64) -> Result<f64> {
        check_rate(r)?;
        Ok(self.log_value(r))
    }

    /// `d/dr ln U(r)`, defined for `r > 0`.
    pub fn dlog_eval(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!(
                "log-utility slope needs a positive rate, got {r}"
            )));
        }
        Ok(self.log_slope(r))
    }

    // Unchecked variants for the solvers' inner loops; callers guarantee r >= 0 (r > 0 for the slope).
    pub(crate) fn log_value(&self, r: f64) -> f64 {
        match self {
            Self::Sigmoidal(s) => s.log_value(r),
            Self::Logarithmic(l) => l.log_value(r),
        }
    }

    pub(crate) fn log_slope(&self, r: f64) -> f64 {
        match self {
            Self::Sigmoidal(s) => s.log_slope(r),
            Self::Logarithmic(l) => l.log_slope(r),
        }
    }
}

fn check_rate(r: f64) -> Result<()> {
    if r >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("rate must be >= 0, got {r}")))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One application running on a UE.
#[derive(Debug, Clone, PartialEq)]
pub struct Application {
    pub utility: UtilityFunction,
    /// Usage weight α in `[0, 1]`.
    pub weight: f64,
    /// Network-assigned target rate, VIP users only.
    pub target_rate: Option<f64>,
}

impl Application {
    pub fn new(utility: UtilityFunction, weight: f64) -> Self {
        Self {
            utility,
            weight,
            target_rate: None,
        }
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target_rate = Some(target);
        self
    }

    /// Rate offset added before evaluating the utility: the target rate if
    /// one is assigned, otherwise 0.
    pub fn offset(&self) -> f64 {
        self.target_rate.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UserClass {
    Vip,
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub id: String,
    pub class: UserClass,
    /// Subscription weight β.
    pub beta: f64,
    pub apps: Vec<Application>,
}

impl UserProfile {
    pub fn new(id: impl Into<String>, class: UserClass, beta: f64, apps: Vec<Application>) -> Self {
        Self {
            id: id.into(),
            class,
            beta,
            apps,
        }
    }

    pub fn is_vip(&self) -> bool {
        self.class == UserClass::Vip
    }

    /// Sum of the application target rates (absent targets count as 0).
    pub fn total_target(&self) -> f64 {
        self.apps.iter().filter_map(|a| a.target_rate).sum()
    }
}

/// Aggregated user utility `∏_j U_j(r_j + c_j)^{α_j}`, evaluated in the log
/// domain. Applications with zero weight contribute a factor of 1.
pub fn aggregate_user_utility(user: &UserProfile, rates: &[f64]) -> Result<f64> {
    if rates.len() != user.apps.len() {
        return Err(Error::contract(format!(
            "user {} has {} applications but {} rates were given",
            user.id,
            user.apps.len(),
            rates.len()
        )));
    }
    let mut log_sum = 0.0;
    for (app, &r) in user.apps.iter().zip(rates) {
        check_rate(r)?;
        if app.weight == 0.0 {
            continue;
        }
        log_sum += app.weight * app.utility.log_value(r + app.offset());
    }
    Ok(log_sum.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(a: f64, b: f64) -> UtilityFunction {
        UtilityFunction::sigmoidal(a, b).unwrap()
    }

    fn log(k: f64, r_max: f64) -> UtilityFunction {
        UtilityFunction::logarithmic(k, r_max).unwrap()
    }

    fn textbook_sigmoid(a: f64, b: f64, r: f64) -> f64 {
        let e = (a * b).exp();
        let c = (1.0 + e) / e;
        let d = 1.0 / (1.0 + e);
        c * (1.0 / (1.0 + (-a * (r - b)).exp()) - d)
    }

    #[test]
    fn sigmoid_matches_textbook_form() {
        for &(a, b) in &[(3.0, 20.0), (1.0, 30.0), (0.5, 10.0), (2.0, 4.0)] {
            let u = sig(a, b);
            for i in 0..=80 {
                let r = i as f64 * b / 20.0;
                let got = u.eval(r).unwrap();
                let want = textbook_sigmoid(a, b, r);
                assert!((got - want).abs() < 1e-12, "a={a} b={b} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn normalization_constants() {
        let s = SigmoidalUtility::new(1.0, 2.0).unwrap();
        let e = 2f64.exp();
        assert!((s.c_norm() - (1.0 + e) / e).abs() < 1e-15);
        assert!((s.d_norm() - 1.0 / (1.0 + e)).abs() < 1e-15);
        // stays finite at the largest accepted exponent
        let s = SigmoidalUtility::new(7.0, 100.0).unwrap();
        assert!(s.c_norm().is_finite() && s.d_norm() >= 0.0);
        assert_eq!(sig(7.0, 100.0).eval(0.0).unwrap(), 0.0);
        assert!(SigmoidalUtility::new(8.0, 100.0).is_err());
    }

    #[test]
    fn eval_examples() {
        assert_eq!(sig(3.0, 20.0).eval(0.0).unwrap(), 0.0);
        assert_eq!(log(3.0, 100.0).eval(100.0).unwrap(), 1.0);
        // (e^60 - 1) / (2 e^60), high-precision value 0.49999999999999999999999999562
        let v = sig(3.0, 20.0).eval(20.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_rate_is_a_domain_error() {
        assert!(matches!(sig(3.0, 20.0).eval(-1.0), Err(Error::Domain(_))));
        assert!(matches!(log(3.0, 100.0).log_eval(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(log(3.0, 100.0).dlog_eval(0.0), Err(Error::Domain(_))));
        assert!(sig(3.0, 20.0).eval(f64::NAN).is_err());
    }

    #[test]
    fn log_eval_examples() {
        assert_eq!(log(3.0, 100.0).log_eval(100.0).unwrap(), 0.0);
        assert_eq!(sig(3.0, 20.0).log_eval(0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log(0.5, 100.0).log_eval(0.0).unwrap(), f64::NEG_INFINITY);
        // ln((e^30 - 1) / (2 e^30)), high-precision value
        let v = sig(1.0, 30.0).log_eval(30.0).unwrap();
        assert!((v - (-0.693_147_180_560_038_9)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn logarithmic_slope_closed_form() {
        let k = 3.0;
        let u = log(k, 100.0);
        for &r in &[0.1, 1.0, 10.0, 55.0, 100.0, 180.0] {
            let want = k / ((1.0 + k * r) * (1.0 + k * r).ln());
            let got = u.dlog_eval(r).unwrap();
            assert!((got - want).abs() <= 1e-14 * want, "r={r}");
        }
    }

    #[test]
    fn slope_matches_finite_differences() {
        for u in [sig(3.0, 20.0), sig(1.0, 30.0), log(3.0, 100.0), log(0.5, 100.0)] {
            for &r in &[5.0, 20.0, 40.0] {
                let h = 1e-6 * f64::max(r, 1.0);
                let fd = (u.log_eval(r + h).unwrap() - u.log_eval(r - h).unwrap()) / (2.0 * h);
                let d = u.dlog_eval(r).unwrap();
                assert!(((d - fd) / d).abs() < 1e-5, "{u:?} r={r}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn inflection_of_sigmoid_is_at_b() {
        // second difference of U changes sign at b
        let u = sig(3.0, 20.0);
        let h = 1e-3;
        let curv = |r: f64| {
            u.eval(r + h).unwrap() - 2.0 * u.eval(r).unwrap() + u.eval(r - h).unwrap()
        };
        assert!(curv(19.9) > 0.0);
        assert!(curv(20.1) < 0.0);
    }

    #[test]
    fn sigmoid_saturates_below_one() {
        let u = sig(3.0, 20.0);
        let near = u.eval(20.0 + 10.0 / 3.0).unwrap();
        assert!(near > 0.999 && near < 1.0);
        assert!(u.eval(30.0).unwrap() < 1.0);
    }

    #[test]
    fn logarithmic_extends_past_r_max() {
        let u = log(3.0, 100.0);
        assert!(u.eval(150.0).unwrap() > 1.0);
        assert!(u.log_eval(150.0).unwrap() > 0.0);
    }

    fn ue1() -> UserProfile {
        UserProfile::new(
            "UE1",
            UserClass::Vip,
            1.0,
            vec![
                Application::new(sig(3.0, 20.0), 0.5),
                Application::new(log(3.0, 100.0), 0.5),
            ],
        )
    }

    #[test]
    fn aggregate_examples() {
        let user = ue1();
        assert_eq!(aggregate_user_utility(&user, &[0.0, 0.0]).unwrap(), 0.0);
        let v = aggregate_user_utility(&user, &[20.0, 100.0]).unwrap();
        assert!((v - 0.707_106_781_186_547_5).abs() < 1e-14, "{v}");

        let single = UserProfile::new(
            "solo",
            UserClass::Regular,
            1.0,
            vec![Application::new(log(0.5, 100.0), 1.0)],
        );
        let direct = log(0.5, 100.0).eval(42.0).unwrap();
        assert!((aggregate_user_utility(&single, &[42.0]).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn aggregate_rejects_length_mismatch() {
        assert!(matches!(
            aggregate_user_utility(&ue1(), &[1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_weight_app_is_neutral() {
        let mut user = ue1();
        user.apps[1].weight = 0.0;
        user.apps[0].weight = 1.0;
        let with_zero_rate = aggregate_user_utility(&user, &[20.0, 0.0]).unwrap();
        let direct = sig(3.0, 20.0).eval(20.0).unwrap();
        assert!((with_zero_rate - direct).abs() < 1e-15);
    }

    #[test]
    fn offsets_shift_the_argument() {
        let mut user = ue1();
        user.apps[0].target_rate = Some(20.0);
        let v = aggregate_user_utility(&user, &[0.0, 100.0]).unwrap();
        assert!((v - 0.707_106_781_186_547_5).abs() < 1e-14);
        assert_eq!(user.total_target(), 20.0);
    }
}
