mod common;

use nura::intra_ue::{allocate_internal, split_value};
use nura::{Application, CaseFlag, UserClass, UserProfile, UtilityFunction};
use proptest::prelude::*;

fn any_utility() -> impl Strategy<Value = UtilityFunction> {
    prop_oneof![
        (0.3f64..3.0, 5.0f64..35.0).prop_map(|(a, b)| common::sig(a, b)),
        (0.2f64..4.0, 50.0f64..150.0).prop_map(|(k, m)| common::log(k, m)),
    ]
}

/// VIP user with two or three apps. The first carries a target and the last
/// is logarithmic, so some application always absorbs extra budget.
fn any_user(max_apps: usize) -> impl Strategy<Value = UserProfile> {
    (
        prop::collection::vec((any_utility(), 0.1f64..1.0), 1..max_apps),
        (0.2f64..4.0, 50.0f64..150.0, 0.1f64..1.0),
        2.0f64..30.0,
    )
        .prop_map(|(mut parts, (k, m, w), target)| {
            parts.push((common::log(k, m), w));
            let total: f64 = parts.iter().map(|s| s.1).sum();
            let apps = parts
                .into_iter()
                .enumerate()
                .map(|(j, (u, w))| {
                    let app = Application::new(u, w / total);
                    if j == 0 { app.with_target(target) } else { app }
                })
                .collect();
            UserProfile::new("u", UserClass::Vip, 1.0, apps)
        })
}

fn case() -> impl Strategy<Value = CaseFlag> {
    prop_oneof![Just(CaseFlag::TargetsExceedCapacity), Just(CaseFlag::TargetsBelowCapacity)]
}

/// Budget valid for the case: at least the targets in the second case.
fn budget(user: &UserProfile, case: CaseFlag, extra: f64) -> f64 {
    match case {
        CaseFlag::TargetsBelowCapacity => user.total_target() + extra,
        CaseFlag::TargetsExceedCapacity => extra,
    }
}

fn excess(user: &UserProfile, rates: &[f64], case: CaseFlag) -> Vec<f64> {
    rates
        .iter()
        .zip(&user.apps)
        .map(|(r, a)| match case {
            CaseFlag::TargetsBelowCapacity => r - a.offset(),
            CaseFlag::TargetsExceedCapacity => *r,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_pairwise_transfer_improves_the_split(user in any_user(3), c in case(), extra in 0.5f64..80.0) {
        let r_opt = budget(&user, c, extra);
        let alloc = allocate_internal(&user, r_opt, c).unwrap();
        let x = excess(&user, &alloc.rates, c);
        let base = split_value(&user, &x, c).unwrap();
        let eps = 0.01;
        for from in 0..x.len() {
            for to in 0..x.len() {
                if from == to || x[from] < eps {
                    continue;
                }
                let mut y = x.clone();
                y[from] -= eps;
                y[to] += eps;
                if c == CaseFlag::TargetsExceedCapacity {
                    if let Some(t) = user.apps[to].target_rate {
                        if y[to] > t {
                            continue;
                        }
                    }
                }
                let moved = split_value(&user, &y, c).unwrap();
                prop_assert!(moved <= base + 1e-6, "{} -> {}: {} vs {}", from, to, moved, base);
            }
        }
    }

    #[test]
    fn budget_binds_and_targets_are_kept(user in any_user(3), c in case(), extra in 0.5f64..80.0) {
        let r_opt = budget(&user, c, extra);
        let alloc = allocate_internal(&user, r_opt, c).unwrap();
        let total: f64 = alloc.rates.iter().sum();
        prop_assert!(total <= r_opt + 1e-6);
        prop_assert!(alloc.slack.abs() <= 1e-6 * r_opt.max(1.0));
        prop_assert!(alloc.rates.iter().all(|&r| r >= 0.0));
        for (a, &r) in user.apps.iter().zip(&alloc.rates) {
            match (c, a.target_rate) {
                (CaseFlag::TargetsBelowCapacity, Some(t)) => prop_assert!(r >= t),
                (CaseFlag::TargetsExceedCapacity, Some(t)) => prop_assert!(r <= t),
                _ => {}
            }
        }
    }

    #[test]
    fn two_app_split_matches_grid(user in any_user(2), c in case(), extra in 0.5f64..60.0) {
        let r_opt = budget(&user, c, extra);
        let alloc = allocate_internal(&user, r_opt, c).unwrap();
        let x = excess(&user, &alloc.rates, c);
        let free = match c {
            CaseFlag::TargetsBelowCapacity => extra,
            CaseFlag::TargetsExceedCapacity => r_opt,
        };
        let cap0 = match c {
            CaseFlag::TargetsExceedCapacity => user.apps[0].target_rate.unwrap().min(free),
            CaseFlag::TargetsBelowCapacity => free,
        };
        let steps = (cap0 / 0.01).floor() as usize;
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=steps {
            let a = i as f64 * 0.01;
            let v = split_value(&user, &[a, free - a], c).unwrap();
            if v > best.1 {
                best = (a, v);
            }
        }
        prop_assert!((x[0] - best.0).abs() <= 0.05, "split {:?} grid {}", x, best.0);
    }
}

#[test]
fn all_zero_weights_fall_back_to_offsets() {
    let user = UserProfile::new(
        "z",
        UserClass::Vip,
        1.0,
        vec![
            Application::new(common::sig(3.0, 20.0), 0.0).with_target(20.0),
            Application::new(common::log(3.0, 100.0), 0.0),
        ],
    );
    let alloc = allocate_internal(&user, 50.0, CaseFlag::TargetsBelowCapacity).unwrap();
    assert_eq!(alloc.rates, vec![20.0, 0.0]);
    assert_eq!(alloc.slack, 30.0);
}

#[test]
fn saturated_sigmoids_leave_slack() {
    let user = UserProfile::new(
        "s",
        UserClass::Regular,
        1.0,
        vec![
            Application::new(common::sig(3.0, 20.0), 0.5),
            Application::new(common::sig(1.0, 30.0), 0.5),
        ],
    );
    let alloc = allocate_internal(&user, 500.0, CaseFlag::TargetsBelowCapacity).unwrap();
    assert_eq!(alloc.internal_price, 1e-12);
    assert!(alloc.slack > 0.0);
    assert!((alloc.slack + alloc.rates.iter().sum::<f64>() - 500.0).abs() < 1e-9);
}

#[test]
fn zero_weight_app_gets_nothing() {
    let user = UserProfile::new(
        "z",
        UserClass::Vip,
        1.0,
        vec![
            Application::new(common::sig(3.0, 20.0), 1.0).with_target(20.0),
            Application::new(common::log(3.0, 100.0), 0.0),
        ],
    );
    let alloc = allocate_internal(&user, 70.0, CaseFlag::TargetsBelowCapacity).unwrap();
    assert_eq!(alloc.rates[1], 0.0);
    assert!(alloc.rates[0] > 20.0);
    assert!((alloc.rates[0] + alloc.slack - 70.0).abs() < 1e-9);
}
