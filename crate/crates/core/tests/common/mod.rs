#![allow(dead_code)]

use nura::{Application, ScenarioConfig, UserClass, UserProfile, UtilityFunction};

pub fn sig(a: f64, b: f64) -> UtilityFunction {
    UtilityFunction::sigmoidal(a, b).unwrap()
}

pub fn log(k: f64, r_max: f64) -> UtilityFunction {
    UtilityFunction::logarithmic(k, r_max).unwrap()
}

pub fn scenario(name: &str, capacity: f64, users: Vec<UserProfile>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: String::new(),
        capacity,
        protocol: Default::default(),
        users,
    }
}

/// Small scenarios (at most three applications) that the grid oracle can
/// handle, covering both cases, both classes and a non-unit beta.
pub fn reduced_scenarios() -> Vec<ScenarioConfig> {
    vec![
        scenario(
            "two_log",
            10.0,
            vec![
                UserProfile::new("a", UserClass::Regular, 1.0, vec![Application::new(log(3.0, 100.0), 1.0)]),
                UserProfile::new("b", UserClass::Regular, 1.0, vec![Application::new(log(0.5, 100.0), 1.0)]),
            ],
        ),
        scenario(
            "vip_plus_reg",
            30.0,
            vec![
                UserProfile::new(
                    "vip",
                    UserClass::Vip,
                    1.0,
                    vec![Application::new(sig(3.0, 20.0), 1.0).with_target(20.0)],
                ),
                UserProfile::new("reg", UserClass::Regular, 1.0, vec![Application::new(log(3.0, 100.0), 1.0)]),
            ],
        ),
        scenario(
            "two_vip_first",
            40.0,
            vec![
                UserProfile::new(
                    "v1",
                    UserClass::Vip,
                    1.0,
                    vec![
                        Application::new(sig(3.0, 20.0), 0.5).with_target(20.0),
                        Application::new(log(3.0, 100.0), 0.5),
                    ],
                ),
                UserProfile::new(
                    "v2",
                    UserClass::Vip,
                    1.0,
                    vec![Application::new(sig(1.0, 30.0), 1.0).with_target(30.0)],
                ),
            ],
        ),
        scenario(
            "reg_sig_log",
            15.0,
            vec![
                UserProfile::new(
                    "r1",
                    UserClass::Regular,
                    2.0,
                    vec![
                        Application::new(sig(3.0, 20.0), 0.5),
                        Application::new(log(3.0, 100.0), 0.5),
                    ],
                ),
                UserProfile::new("r2", UserClass::Regular, 1.0, vec![Application::new(log(0.5, 100.0), 1.0)]),
            ],
        ),
    ]
}
