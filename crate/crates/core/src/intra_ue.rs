//! Second stage: split a user's allocated rate among its applications.

use crate::error::{Error, Result};
use crate::price_response::{app_rate_at_price, BisectionSettings, OffsetMode};
use crate::protocol::CaseFlag;
use crate::utility::UserProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct InternalAllocation {
    /// Per-application rate, including the target offset in the second case.
    pub rates: Vec<f64>,
    pub internal_price: f64,
    /// Unused part of the user's budget.
    pub slack: f64,
}

const PRICE_LOW: f64 = 1e-12;
const MAX_ITERS: usize = 200;

fn mode_for(case: CaseFlag) -> OffsetMode {
    match case {
        CaseFlag::TargetsExceedCapacity => OffsetMode::WithoutOffsets,
        CaseFlag::TargetsBelowCapacity => OffsetMode::WithOffsets,
    }
}

fn offsets(user: &UserProfile, case: CaseFlag) -> Vec<f64> {
    match case {
        CaseFlag::TargetsExceedCapacity => vec![0.0; user.apps.len()],
        CaseFlag::TargetsBelowCapacity => user.apps.iter().map(|a| a.offset()).collect(),
    }
}

/// Splits `r_opt` among the user's applications by searching for the
/// internal price at which their combined demand uses the whole budget.
///
/// In the scarce case the objective is `Σ α ln U(r)` with target-bearing
/// applications capped at their targets. Otherwise it is `Σ α ln U(r + c)`
/// and each application receives `r + c`.
pub fn allocate_internal(
    user: &UserProfile,
    r_opt: f64,
    case: CaseFlag,
) -> Result<InternalAllocation> {
    if !(r_opt >= 0.0 && r_opt.is_finite()) {
        return Err(Error::domain(format!("allocated rate must be >= 0, got {r_opt}")));
    }
    let c = offsets(user, case);
    let floor: f64 = c.iter().sum();
    if r_opt < floor - 1e-6 * floor.max(1.0) {
        return Err(Error::contract(format!(
            "user {} was allocated {r_opt}, below its total target {floor}",
            user.id
        )));
    }
    let budget = (r_opt - floor).max(0.0);
    let finish = |excess: Vec<f64>, price: f64| {
        let rates: Vec<f64> = excess.iter().zip(&c).map(|(r, c)| r + c).collect();
        let slack = r_opt - rates.iter().sum::<f64>();
        InternalAllocation {
            rates,
            internal_price: price,
            slack,
        }
    };

    if user.apps.iter().all(|a| a.weight == 0.0) {
        log::warn!("user {} has no application with positive weight", user.id);
        return Ok(finish(vec![0.0; user.apps.len()], 0.0));
    }
    if budget == 0.0 {
        return Ok(finish(vec![0.0; user.apps.len()], f64::INFINITY));
    }

    let settings = BisectionSettings::default();
    let mode = mode_for(case);
    let capped = case == CaseFlag::TargetsExceedCapacity;
    let demand = |p: f64| -> Result<Vec<f64>> {
        user.apps
            .iter()
            .map(|app| {
                let cap = if capped { app.target_rate } else { None };
                app_rate_at_price(app, p, cap, mode, &settings)
            })
            .collect()
    };
    let total = |v: &[f64]| v.iter().sum::<f64>();

    let low = demand(PRICE_LOW)?;
    if total(&low) <= budget {
        return Ok(finish(low, PRICE_LOW));
    }
    let mut lo = PRICE_LOW;
    let mut lo_rates = low;
    let mut hi = 1.0;
    let mut hi_rates = demand(hi)?;
    let mut doublings = 0;
    while total(&hi_rates) > budget {
        if doublings == 60 {
            return Err(Error::Solver {
                iters: doublings,
                lo,
                hi,
            });
        }
        lo = hi;
        hi *= 2.0;
        lo_rates = std::mem::replace(&mut hi_rates, demand(hi)?);
        doublings += 1;
    }
    let tol = 1e-9 * budget.max(1.0);
    for _ in 0..MAX_ITERS {
        if budget - total(&hi_rates) <= tol || hi / lo - 1.0 < 1e-15 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let rates = demand(mid)?;
        if total(&rates) > budget {
            lo = mid;
            lo_rates = rates;
        } else {
            hi = mid;
            hi_rates = rates;
        }
    }
    // Demand can jump at a single price when a sigmoid's log-slope is flat
    // to machine precision below its inflection. Any mix of the two sides
    // satisfies the optimality condition there.
    let (t_lo, t_hi) = (total(&lo_rates), total(&hi_rates));
    if budget - t_hi > tol && t_lo > t_hi {
        let theta = (budget - t_hi) / (t_lo - t_hi);
        for (h, l) in hi_rates.iter_mut().zip(&lo_rates) {
            *h += theta * (l - *h);
        }
    }
    Ok(finish(hi_rates, hi))
}

/// Log-domain value `Σ α ln U(r + c)` of a split, where `rates` exclude the
/// target offsets. Applications with zero weight contribute nothing.
pub fn split_value(user: &UserProfile, rates: &[f64], case: CaseFlag) -> Result<f64> {
    if rates.len() != user.apps.len() {
        return Err(Error::contract(format!(
            "expected {} rates, got {}",
            user.apps.len(),
            rates.len()
        )));
    }
    let c = offsets(user, case);
    let mut value = 0.0;
    for ((app, &r), c) in user.apps.iter().zip(rates).zip(c) {
        if !(r >= 0.0) {
            return Err(Error::contract(format!("rate must be >= 0, got {r}")));
        }
        if case == CaseFlag::TargetsExceedCapacity {
            if let Some(t) = app.target_rate {
                if r > t + 1e-9 {
                    return Err(Error::contract(format!("rate {r} exceeds target cap {t}")));
                }
            }
        }
        if app.weight > 0.0 {
            value += app.weight * app.utility.log_value(r + c);
        }
    }
    Ok(value)
}
