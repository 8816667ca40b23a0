//! Centralized reference solvers for the global allocation problem.
//!
//! Nothing here calls into the price-response or protocol code: demands are
//! recomputed from the log-utilities by golden-section search, so an error in
//! the distributed pipeline cannot certify itself.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::protocol::{determine_case, CaseFlag};
use crate::utility::{Application, UserProfile};

/// Largest total application count [`grid_search_solve`] accepts.
pub const GRID_APP_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    DualBisection,
    GridSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub case: CaseFlag,
    /// Per-user totals, target offsets included.
    pub user_rates: Vec<f64>,
    /// Per-application rates, target offsets included.
    pub app_rates: Vec<Vec<f64>>,
    /// `Σ β Σ α ln U` over the users served in this case.
    pub objective: f64,
    pub method: OracleMethod,
    /// Global dual price (dual bisection only).
    pub price: Option<f64>,
}

/// Log-domain objective of a full allocation. `app_rates` include offsets;
/// users not served in `case` are skipped.
pub fn objective(users: &[UserProfile], case: CaseFlag, app_rates: &[Vec<f64>]) -> f64 {
    users
        .iter()
        .zip(app_rates)
        .filter(|(u, _)| case.includes(u))
        .map(|(u, rates)| {
            u.beta
                * u.apps
                    .iter()
                    .zip(rates)
                    .filter(|(a, _)| a.weight > 0.0)
                    .map(|(a, &r)| a.weight * a.utility.log_value(r))
                    .sum::<f64>()
        })
        .sum()
}

/// Maximizer of a unimodal `f` on `[a, b]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = 1e-12 * b.abs().max(1.0);
    for _ in 0..300 {
        if b - a <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the optimum may sit on a boundary that golden section only approaches
    [a, mid, b]
        .into_iter()
        .fold((mid, f(mid)), |best, x| {
            let v = f(x);
            if v > best.1 { (x, v) } else { best }
        })
        .0
}

/// Rate above the offset maximizing `w ln U(r + c) - λ r` on `[0, cap]`.
fn oracle_app_demand(app: &Application, w: f64, lambda: f64, offset: f64, cap: Option<f64>) -> f64 {
    if app.weight == 0.0 {
        return 0.0;
    }
    let u = &app.utility;
    let f = |r: f64| w * u.log_value(r + offset) - lambda * r;
    let mut h = u.scale();
    while f(2.0 * h) >= f(h) && h < 1e15 {
        h *= 2.0;
    }
    let upper = cap.map_or(2.0 * h, |c| c.min(2.0 * h));
    if upper <= 0.0 {
        return 0.0;
    }
    golden_section_max(f, 0.0, upper)
}

/// Excess rates (offsets excluded) a participating user demands at `lambda`.
fn oracle_user_demand(user: &UserProfile, case: CaseFlag, lambda: f64) -> Vec<f64> {
    match case {
        CaseFlag::TargetsBelowCapacity => user
            .apps
            .iter()
            .map(|a| oracle_app_demand(a, user.beta * a.weight, lambda, a.offset(), None))
            .collect(),
        CaseFlag::TargetsExceedCapacity => {
            let at = |l: f64| -> Vec<f64> {
                user.apps
                    .iter()
                    .map(|a| oracle_app_demand(a, user.beta * a.weight, l, 0.0, a.target_rate))
                    .collect()
            };
            let cap = user.total_target();
            let rates = at(lambda);
            if rates.iter().sum::<f64>() <= cap {
                return rates;
            }
            let (mut lo, mut hi) = (lambda, 2.0 * lambda);
            let mut lo_rates = rates;
            let mut hi_rates = at(hi);
            while hi_rates.iter().sum::<f64>() > cap {
                lo = hi;
                hi *= 2.0;
                lo_rates = std::mem::replace(&mut hi_rates, at(hi));
            }
            for _ in 0..100 {
                let mid = (lo * hi).sqrt();
                let r = at(mid);
                if r.iter().sum::<f64>() > cap {
                    lo = mid;
                    lo_rates = r;
                } else {
                    hi = mid;
                    hi_rates = r;
                }
            }
            blend_to_total(hi_rates, &lo_rates, cap)
        }
    }
}

/// Moves `under` toward `over` until its sum reaches `target`. Used where
/// demand jumps across the target at a single price.
fn blend_to_total(mut under: Vec<f64>, over: &[f64], target: f64) -> Vec<f64> {
    let (s_under, s_over): (f64, f64) = (under.iter().sum(), over.iter().sum());
    if s_under < target && s_over > s_under {
        let theta = ((target - s_under) / (s_over - s_under)).min(1.0);
        for (u, o) in under.iter_mut().zip(over) {
            *u += theta * (o - *u);
        }
    }
    under
}

fn served_budget(users: &[UserProfile], capacity: f64, case: CaseFlag) -> f64 {
    match case {
        CaseFlag::TargetsExceedCapacity => capacity,
        CaseFlag::TargetsBelowCapacity => {
            capacity
                - users
                    .iter()
                    .filter(|u| u.is_vip())
                    .map(UserProfile::total_target)
                    .sum::<f64>()
        }
    }
}

fn check_capacity(capacity: f64) -> Result<()> {
    if capacity > 0.0 && capacity.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("capacity must be > 0, got {capacity}")))
    }
}

/// Solves the global problem by bisection on a single price `λ` for the
/// shared capacity constraint.
pub fn centralized_solve(users: &[UserProfile], capacity: f64) -> Result<OracleResult> {
    check_capacity(capacity)?;
    let case = determine_case(users, capacity);
    let budget = served_budget(users, capacity, case);
    let demand = |lambda: f64| -> Vec<Vec<f64>> {
        users
            .iter()
            .map(|u| {
                if case.includes(u) {
                    oracle_user_demand(u, case, lambda)
                } else {
                    vec![0.0; u.apps.len()]
                }
            })
            .collect()
    };
    let total = |d: &[Vec<f64>]| d.iter().flatten().sum::<f64>();

    let mut lo = 1e-12;
    let mut hi = 1.0;
    let mut best = demand(lo);
    let mut price = lo;
    if total(&best) > budget {
        let mut over = std::mem::replace(&mut best, demand(hi));
        while total(&best) > budget {
            lo = hi;
            hi *= 2.0;
            over = std::mem::replace(&mut best, demand(hi));
        }
        for _ in 0..100 {
            if hi / lo - 1.0 < 1e-14 {
                break;
            }
            let mid = (lo * hi).sqrt();
            let d = demand(mid);
            if total(&d) > budget {
                lo = mid;
                over = d;
            } else {
                hi = mid;
                best = d;
            }
        }
        let flat_best: Vec<f64> = best.iter().flatten().copied().collect();
        let flat_over: Vec<f64> = over.iter().flatten().copied().collect();
        let mut mixed = blend_to_total(flat_best, &flat_over, budget).into_iter();
        for rates in &mut best {
            for r in rates.iter_mut() {
                *r = mixed.next().expect("same shape");
            }
        }
        price = hi;
    }
    Ok(assemble(users, case, best, OracleMethod::DualBisection, Some(price)))
}

fn assemble(
    users: &[UserProfile],
    case: CaseFlag,
    excess: Vec<Vec<f64>>,
    method: OracleMethod,
    price: Option<f64>,
) -> OracleResult {
    let app_rates: Vec<Vec<f64>> = users
        .iter()
        .zip(excess)
        .map(|(u, rates)| {
            if case == CaseFlag::TargetsBelowCapacity {
                rates.iter().zip(&u.apps).map(|(r, a)| r + a.offset()).collect()
            } else {
                rates
            }
        })
        .collect();
    OracleResult {
        case,
        user_rates: app_rates.iter().map(|r| r.iter().sum()).collect(),
        objective: objective(users, case, &app_rates),
        app_rates,
        method,
        price,
    }
}

struct GridVar {
    user: usize,
    app: usize,
    /// Value of `β α ln U` at every grid point.
    values: Vec<f64>,
    cap_units: usize,
}

/// Exhaustive search over allocations on a `step` grid. Refuses scenarios
/// with more than [`GRID_APP_LIMIT`] applications.
///
/// Every free coordinate except the last is enumerated; the last one takes
/// the largest feasible grid value, which is optimal because the objective
/// is strictly increasing in it. Ties go to the lexicographically smallest
/// tuple.
pub fn grid_search_solve(users: &[UserProfile], capacity: f64, step: f64) -> Result<OracleResult> {
    let apps: usize = users.iter().map(|u| u.apps.len()).sum();
    if apps > GRID_APP_LIMIT {
        return Err(Error::GridGuard {
            apps,
            limit: GRID_APP_LIMIT,
        });
    }
    check_capacity(capacity)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("grid step must be > 0, got {step}")));
    }
    let case = determine_case(users, capacity);
    let budget = served_budget(users, capacity, case);
    let units = |x: f64| (x / step + 1e-9).floor().max(0.0) as usize;
    let total_units = units(budget);
    let first = case == CaseFlag::TargetsExceedCapacity;

    let mut vars = Vec::new();
    for (i, u) in users.iter().enumerate() {
        if !case.includes(u) {
            continue;
        }
        for (j, a) in u.apps.iter().enumerate() {
            if a.weight == 0.0 {
                continue;
            }
            let offset = if first { 0.0 } else { a.offset() };
            let cap_units = match (first, a.target_rate) {
                (true, Some(t)) => units(t),
                _ => total_units,
            };
            let values = (0..=cap_units.min(total_units))
                .map(|k| u.beta * a.weight * a.utility.log_value(k as f64 * step + offset))
                .collect();
            vars.push(GridVar {
                user: i,
                app: j,
                values,
                cap_units,
            });
        }
    }
    let user_caps: Vec<usize> = users
        .iter()
        .map(|u| if first { units(u.total_target()) } else { total_units })
        .collect();

    let tuple = if vars.is_empty() {
        Vec::new()
    } else {
        let search = GridSearch {
            vars: &vars,
            user_caps: &user_caps,
        };
        let first_max = search.max_units(0, total_units, &vec![0; users.len()]);
        let candidates: Vec<(f64, Vec<usize>)> = (0..=first_max)
            .into_par_iter()
            .map(|k0| search.best_with_first(k0, total_units))
            .collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for cand in candidates {
            if best.as_ref().is_none_or(|b| cand.0 > b.0) {
                best = Some(cand);
            }
        }
        best.expect("grid has at least one point").1
    };

    let mut excess: Vec<Vec<f64>> = users.iter().map(|u| vec![0.0; u.apps.len()]).collect();
    for (var, k) in vars.iter().zip(tuple) {
        excess[var.user][var.app] = k as f64 * step;
    }
    Ok(assemble(users, case, excess, OracleMethod::GridSearch, None))
}

struct GridSearch<'a> {
    vars: &'a [GridVar],
    user_caps: &'a [usize],
}

impl GridSearch<'_> {
    fn max_units(&self, v: usize, remaining: usize, used: &[usize]) -> usize {
        let var = &self.vars[v];
        remaining
            .min(var.cap_units)
            .min(self.user_caps[var.user].saturating_sub(used[var.user]))
    }

    fn best_with_first(&self, k0: usize, total: usize) -> (f64, Vec<usize>) {
        let mut used = vec![0; self.user_caps.len()];
        used[self.vars[0].user] += k0;
        let mut tuple = vec![k0];
        let mut best = None;
        self.descend(1, total - k0, &mut used, &mut tuple, &mut best);
        best.expect("at least one completion")
    }

    fn descend(
        &self,
        v: usize,
        remaining: usize,
        used: &mut [usize],
        tuple: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if v == self.vars.len() {
            let value: f64 = tuple
                .iter()
                .zip(self.vars)
                .map(|(&k, var)| var.values[k])
                .sum();
            if best.as_ref().is_none_or(|b| value > b.0) {
                *best = Some((value, tuple.clone()));
            }
            return;
        }
        let max = self.max_units(v, remaining, used);
        let user = self.vars[v].user;
        let range = if v + 1 == self.vars.len() { max..=max } else { 0..=max };
        for k in range {
            used[user] += k;
            tuple.push(k);
            self.descend(v + 1, remaining - k, used, tuple, best);
            tuple.pop();
            used[user] -= k;
        }
    }
}
