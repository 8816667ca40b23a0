//! Price-taking demand: how much rate an application or a user asks for when
//! every unit of rate costs `p`.
//!
//! All subproblems here maximize `α ln U(r + c) - p r`, which is strictly
//! concave because the utilities are log-concave. The maximizer is found by
//! bisection on the derivative `α (ln U)'(r + c) - p`, which is strictly
//! decreasing in `r`.

use crate::error::{Error, Result};
use crate::protocol::CaseFlag;
use crate::utility::{Application, UserProfile};

/// Whether target-rate offsets enter the utility argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetMode {
    /// Evaluate `U(r + c)`; the second-case objective.
    WithOffsets,
    /// Evaluate `U(r)`; the first-case objective.
    WithoutOffsets,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSettings {
    /// Width of the final bracket, in rate units.
    pub abs_tol: f64,
    pub max_iters: usize,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            max_iters: 200,
        }
    }
}

const MAX_DOUBLINGS: usize = 60;

/// Rate maximizing `α ln U(r + c) - p r` over `[0, cap]`.
pub fn app_rate_at_price(
    app: &Application,
    price: f64,
    cap: Option<f64>,
    mode: OffsetMode,
    settings: &BisectionSettings,
) -> Result<f64> {
    check_price(price)?;
    if let Some(cap) = cap {
        if !(cap >= 0.0) {
            return Err(Error::domain(format!("rate cap must be >= 0, got {cap}")));
        }
    }
    if app.weight == 0.0 {
        return Ok(0.0);
    }
    let offset = match mode {
        OffsetMode::WithOffsets => app.offset(),
        OffsetMode::WithoutOffsets => 0.0,
    };
    let u = &app.utility;
    let alpha = app.weight;
    let g = |r: f64| alpha * u.log_slope(r + offset) - price;

    let mut lo = if offset > 0.0 { 0.0 } else { settings.abs_tol };
    if g(lo) <= 0.0 {
        return Ok(0.0);
    }
    if let Some(cap) = cap {
        if cap <= lo || g(cap) >= 0.0 {
            return Ok(cap);
        }
    }

    let mut hi = u.scale();
    let mut doublings = 0;
    loop {
        if let Some(cap) = cap {
            if hi >= cap {
                hi = cap;
                break;
            }
        }
        if g(hi) < 0.0 {
            break;
        }
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Solver {
                iters: doublings,
                lo,
                hi,
            });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }

    let tol = settings.abs_tol.max(4.0 * f64::EPSILON * hi);
    let mut iters = 0;
    while hi - lo > tol {
        if iters == settings.max_iters {
            return Err(Error::Solver { iters, lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    Ok(0.5 * (lo + hi))
}

/// A user's demand at a given price, split per application.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDemand {
    /// Total requested rate (excludes target offsets).
    pub total: f64,
    pub app_rates: Vec<f64>,
    /// Price actually faced by the applications. Equals the posted price
    /// unless the user cap binds, in which case it is the higher price at
    /// which the capped demand exactly fills the cap.
    pub internal_price: f64,
}

/// Total rate a user demands at price `p`.
///
/// Without a cap the problem is separable and each application responds to
/// `p / β`. With a cap (first case), target-bearing applications are also
/// capped at their own targets.
pub fn user_rate_at_price(
    user: &UserProfile,
    price: f64,
    user_cap: Option<f64>,
    mode: OffsetMode,
    settings: &BisectionSettings,
) -> Result<f64> {
    user_demand_at_price(user, price, user_cap, mode, settings).map(|d| d.total)
}

pub fn user_demand_at_price(
    user: &UserProfile,
    price: f64,
    user_cap: Option<f64>,
    mode: OffsetMode,
    settings: &BisectionSettings,
) -> Result<UserDemand> {
    check_price(price)?;
    let beta = user.beta;
    let rates_at = |p: f64, capped: bool| -> Result<Vec<f64>> {
        user.apps
            .iter()
            .map(|app| {
                let cap = if capped { app.target_rate } else { None };
                app_rate_at_price(app, p / beta, cap, mode, settings)
            })
            .collect()
    };

    let Some(cap) = user_cap else {
        let app_rates = rates_at(price, false)?;
        return Ok(UserDemand {
            total: app_rates.iter().sum(),
            app_rates,
            internal_price: price,
        });
    };
    if !(cap >= 0.0) {
        return Err(Error::domain(format!("user cap must be >= 0, got {cap}")));
    }

    let app_rates = rates_at(price, true)?;
    let total: f64 = app_rates.iter().sum();
    if total <= cap {
        return Ok(UserDemand {
            total,
            app_rates,
            internal_price: price,
        });
    }

    // Raise the internal price until the capped demand fits.
    let mut lo = price;
    let mut hi = price;
    let mut lo_rates = app_rates.clone();
    let mut hi_rates = app_rates;
    let mut doublings = 0;
    while hi_rates.iter().sum::<f64>() > cap {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Solver {
                iters: doublings,
                lo,
                hi,
            });
        }
        lo = hi;
        hi *= 2.0;
        lo_rates = std::mem::replace(&mut hi_rates, rates_at(hi, true)?);
        doublings += 1;
    }
    let mut iters = 0;
    while hi / lo - 1.0 > 1e-14 && iters < settings.max_iters {
        let mid = (lo * hi).sqrt();
        let rates = rates_at(mid, true)?;
        if rates.iter().sum::<f64>() > cap {
            lo = mid;
            lo_rates = rates;
        } else {
            hi = mid;
            hi_rates = rates;
        }
        iters += 1;
    }
    // Demand may jump across the cap at one price (flat sigmoid log-slope);
    // mix both sides so the split fills the cap.
    let (below, above): (f64, f64) = (hi_rates.iter().sum(), lo_rates.iter().sum());
    if below < cap && above > below {
        let theta = (cap - below) / (above - below);
        for (h, l) in hi_rates.iter_mut().zip(&lo_rates) {
            *h += theta * (l - *h);
        }
    }
    Ok(UserDemand {
        total: cap,
        app_rates: hi_rates,
        internal_price: hi,
    })
}

/// Exponentially decaying cap `l1 e^{-n / l2}` on per-round bid changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationDecay {
    pub l1: f64,
    pub l2: f64,
}

impl FluctuationDecay {
    pub fn bound(&self, n: usize) -> f64 {
        self.l1 * (-(n as f64) / self.l2).exp()
    }

    pub fn apply(&self, proposed: f64, prev: f64, n: usize) -> f64 {
        damp_bid(proposed, prev, n, self.l1, self.l2)
    }
}

/// Limits the move from `prev` to `proposed` to at most `l1 e^{-n/l2}`.
pub fn damp_bid(proposed: f64, prev: f64, n: usize, l1: f64, l2: f64) -> f64 {
    debug_assert!(n >= 1 && l1 > 0.0 && l2 > 0.0);
    let step = l1 * (-(n as f64) / l2).exp();
    let diff = proposed - prev;
    if diff.abs() > step {
        prev + step.copysign(diff)
    } else {
        proposed
    }
}

/// Undamped bid `w = p * (requested rate)` a user would send at price `p`.
///
/// VIP users in the first case respond with their capped, offset-free
/// demand. In the second case they bid for their demand on top of their
/// targets. Regular users only bid in the second case.
pub fn proposed_bid(
    user: &UserProfile,
    price: f64,
    case: CaseFlag,
    settings: &BisectionSettings,
) -> Result<f64> {
    match (user.is_vip(), case) {
        (true, CaseFlag::TargetsExceedCapacity) => {
            let r = user_rate_at_price(
                user,
                price,
                Some(user.total_target()),
                OffsetMode::WithoutOffsets,
                settings,
            )?;
            Ok(price * r)
        }
        (true, CaseFlag::TargetsBelowCapacity) => {
            let r = user_rate_at_price(user, price, None, OffsetMode::WithOffsets, settings)?;
            Ok(price * (r + user.total_target()))
        }
        (false, CaseFlag::TargetsBelowCapacity) => {
            let r = user_rate_at_price(user, price, None, OffsetMode::WithOffsets, settings)?;
            Ok(price * r)
        }
        (false, CaseFlag::TargetsExceedCapacity) => Err(Error::Protocol(format!(
            "regular user {} does not bid while VIP targets exceed capacity",
            user.id
        ))),
    }
}

/// Damped bid of a VIP user for round `n`.
pub fn vip_bid(
    user: &UserProfile,
    price: f64,
    case: CaseFlag,
    n: usize,
    prev_bid: f64,
    decay: &FluctuationDecay,
    settings: &BisectionSettings,
) -> Result<f64> {
    if !user.is_vip() {
        return Err(Error::contract(format!("user {} is not a VIP user", user.id)));
    }
    Ok(decay.apply(proposed_bid(user, price, case, settings)?, prev_bid, n))
}

/// Damped bid of a regular user for round `n` (second case only).
pub fn regular_bid(
    user: &UserProfile,
    price: f64,
    n: usize,
    prev_bid: f64,
    decay: &FluctuationDecay,
    settings: &BisectionSettings,
) -> Result<f64> {
    if user.is_vip() {
        return Err(Error::contract(format!("user {} is a VIP user", user.id)));
    }
    let w = proposed_bid(user, price, CaseFlag::TargetsBelowCapacity, settings)?;
    Ok(decay.apply(w, prev_bid, n))
}

fn check_price(price: f64) -> Result<()> {
    if price > 0.0 && price.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("price must be > 0, got {price}")))
    }
}
