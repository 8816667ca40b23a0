//! Scenario files, sweeps over the capacity, weight schedules and CSV output.
//!
//! Scenarios and schedules are TOML documents. See `scenarios/four_ue.toml`
//! and `scenarios/four_ue_schedule.toml` for the layout.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intra_ue::allocate_internal;
use crate::protocol::{run_first_stage, CaseFlag, IterationTrace, ProtocolParams};
use crate::utility::{
    Application, UserClass, UserProfile, UtilityFunction, MAX_SIGMOID_EXPONENT,
};

/// The bundled four-user scenario.
pub const FOUR_UE_SCENARIO: &str = include_str!("../scenarios/four_ue.toml");
/// Three-epoch weight schedule for [`FOUR_UE_SCENARIO`].
pub const FOUR_UE_SCHEDULE: &str = include_str!("../scenarios/four_ue_schedule.toml");

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    /// Cell capacity `R`.
    pub capacity: f64,
    pub protocol: ProtocolParams,
    pub users: Vec<UserProfile>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    protocol: Option<RawProtocol>,
    #[serde(default)]
    users: Vec<RawUser>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    delta: Option<f64>,
    l1: Option<f64>,
    l2: Option<f64>,
    max_rounds: Option<i64>,
    initial_price: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default)]
    apps: Vec<RawApp>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApp {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            line,
            message: e.message().to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    ScenarioConfig::from_toml_str(&read(path.as_ref())?)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenario = parse_toml(text)?;
        let mut errors = Vec::new();

        let capacity = raw.capacity.unwrap_or(f64::NAN);
        match raw.capacity {
            None => errors.push("capacity is missing".to_string()),
            Some(r) if !(r > 0.0 && r.is_finite()) => {
                errors.push(format!("capacity must be > 0, got {r}"))
            }
            _ => {}
        }

        let defaults = ProtocolParams::default();
        let rp = raw.protocol.unwrap_or_default();
        let max_rounds = match rp.max_rounds {
            Some(m) if m < 0 => {
                errors.push(format!("protocol.max_rounds must be >= 2, got {m}"));
                defaults.max_rounds
            }
            Some(m) => m as usize,
            None => defaults.max_rounds,
        };
        let protocol = ProtocolParams {
            delta: rp.delta.unwrap_or(defaults.delta),
            l1: rp.l1.unwrap_or(defaults.l1),
            l2: rp.l2.unwrap_or(defaults.l2),
            max_rounds,
            initial_price: rp.initial_price.unwrap_or(defaults.initial_price),
        };
        errors.extend(protocol.violations());

        if raw.users.is_empty() {
            errors.push("at least one user is required".to_string());
        }
        let mut users = Vec::new();
        for (i, ru) in raw.users.into_iter().enumerate() {
            if let Some(user) = convert_user(i, ru, &mut errors) {
                users.push(user);
            }
        }
        for (i, u) in users.iter().enumerate() {
            if users[..i].iter().any(|v| v.id == u.id) {
                errors.push(format!("duplicate user id {:?}", u.id));
            }
        }

        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let config = ScenarioConfig {
            name: raw.name.unwrap_or_default(),
            description: raw.description.unwrap_or_default(),
            capacity,
            protocol,
            users,
        };
        config.warn_about_saturation();
        Ok(config)
    }

    /// The bundled four-user scenario at its default capacity.
    pub fn four_ue() -> Self {
        Self::from_toml_str(FOUR_UE_SCENARIO).expect("bundled scenario is valid")
    }

    fn warn_about_saturation(&self) {
        for u in &self.users {
            for (j, a) in u.apps.iter().enumerate() {
                if let UtilityFunction::Logarithmic(l) = a.utility {
                    if self.capacity > l.r_max() {
                        log::warn!(
                            "capacity {} exceeds r_max {} of {} app {}; rates above r_max push utility past 1",
                            self.capacity,
                            l.r_max(),
                            u.id,
                            j
                        );
                    }
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        let raw = RawScenario {
            name: Some(self.name.clone()),
            description: Some(self.description.clone()),
            capacity: Some(self.capacity),
            protocol: Some(RawProtocol {
                delta: Some(self.protocol.delta),
                l1: Some(self.protocol.l1),
                l2: Some(self.protocol.l2),
                max_rounds: Some(self.protocol.max_rounds as i64),
                initial_price: Some(self.protocol.initial_price),
            }),
            users: self.users.iter().map(raw_user).collect(),
        };
        toml::to_string(&raw).expect("scenario serializes")
    }

    pub fn with_capacity(&self, capacity: f64) -> Self {
        Self {
            capacity,
            ..self.clone()
        }
    }

    /// Copy with application weights replaced row by row.
    pub fn with_weights(&self, weights: &[Vec<f64>]) -> Result<Self> {
        let errors = weight_matrix_violations(&self.users, weights, "weights");
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let mut out = self.clone();
        for (user, row) in out.users.iter_mut().zip(weights) {
            for (app, &w) in user.apps.iter_mut().zip(row) {
                app.weight = w;
            }
        }
        Ok(out)
    }
}

fn convert_user(i: usize, ru: RawUser, errors: &mut Vec<String>) -> Option<UserProfile> {
    let start = errors.len();
    let label = ru.id.clone().unwrap_or_else(|| format!("#{}", i + 1));
    let id = match ru.id {
        Some(id) if !id.trim().is_empty() => id,
        _ => {
            errors.push(format!("user {label}: id is missing or empty"));
            String::new()
        }
    };
    let class = match ru.class.as_deref() {
        Some("vip") => UserClass::Vip,
        Some("regular") => UserClass::Regular,
        Some(other) => {
            errors.push(format!(
                "user {label}: class must be \"vip\" or \"regular\", got {other:?}"
            ));
            UserClass::Regular
        }
        None => {
            errors.push(format!("user {label}: class is missing"));
            UserClass::Regular
        }
    };
    let beta = ru.beta.unwrap_or(1.0);
    if !(beta > 0.0 && beta.is_finite()) {
        errors.push(format!("user {label}: beta must be > 0, got {beta}"));
    }
    if ru.apps.is_empty() {
        errors.push(format!("user {label}: at least one application is required"));
    }
    let mut apps = Vec::new();
    for (j, ra) in ru.apps.into_iter().enumerate() {
        let where_ = format!("user {label} app {}", j + 1);
        if let Some(app) = convert_app(&where_, ra, class, errors) {
            apps.push(app);
        }
    }
    let weight_sum: f64 = apps.iter().map(|a| a.weight).sum();
    if !apps.is_empty() && (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL {
        errors.push(format!("user {label}: weights sum to {weight_sum}, expected 1"));
    }
    (errors.len() == start).then(|| UserProfile::new(id, class, beta, apps))
}

fn convert_app(
    where_: &str,
    ra: RawApp,
    class: UserClass,
    errors: &mut Vec<String>,
) -> Option<Application> {
    let start = errors.len();
    let mut need = |name: &str, v: Option<f64>| -> f64 {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => x,
            Some(x) => {
                errors.push(format!("{where_}: {name} must be > 0, got {x}"));
                f64::NAN
            }
            None => {
                errors.push(format!("{where_}: {name} is missing"));
                f64::NAN
            }
        }
    };
    let utility = match ra.kind.as_deref() {
        Some("sigmoidal") => {
            let (a, b) = (need("a", ra.a), need("b", ra.b));
            if a * b > MAX_SIGMOID_EXPONENT {
                errors.push(format!(
                    "{where_}: a*b = {} exceeds {MAX_SIGMOID_EXPONENT}",
                    a * b
                ));
            }
            UtilityFunction::sigmoidal(a, b).ok()
        }
        Some("logarithmic") => {
            let (k, r_max) = (need("k", ra.k), need("r_max", ra.r_max));
            UtilityFunction::logarithmic(k, r_max).ok()
        }
        Some(other) => {
            errors.push(format!(
                "{where_}: kind must be \"sigmoidal\" or \"logarithmic\", got {other:?}"
            ));
            None
        }
        None => {
            errors.push(format!("{where_}: kind is missing"));
            None
        }
    };
    let weight = match ra.weight {
        Some(w) if (0.0..=1.0).contains(&w) => w,
        Some(w) => {
            errors.push(format!("{where_}: weight must lie in [0, 1], got {w}"));
            f64::NAN
        }
        None => {
            errors.push(format!("{where_}: weight is missing"));
            f64::NAN
        }
    };
    if let Some(t) = ra.target {
        if class == UserClass::Regular {
            errors.push(format!("{where_}: regular users cannot carry target rates"));
        } else if !(t > 0.0 && t.is_finite()) {
            errors.push(format!("{where_}: target must be > 0, got {t}"));
        }
    }
    if errors.len() > start {
        return None;
    }
    let app = Application::new(utility?, weight);
    Some(match ra.target {
        Some(t) => app.with_target(t),
        None => app,
    })
}

fn raw_user(u: &UserProfile) -> RawUser {
    RawUser {
        id: Some(u.id.clone()),
        class: Some(
            match u.class {
                UserClass::Vip => "vip",
                UserClass::Regular => "regular",
            }
            .to_string(),
        ),
        beta: Some(u.beta),
        apps: u
            .apps
            .iter()
            .map(|a| {
                let mut raw = RawApp {
                    weight: Some(a.weight),
                    target: a.target_rate,
                    ..Default::default()
                };
                match a.utility {
                    UtilityFunction::Sigmoidal(s) => {
                        raw.kind = Some("sigmoidal".into());
                        raw.a = Some(s.steepness());
                        raw.b = Some(s.inflection());
                    }
                    UtilityFunction::Logarithmic(l) => {
                        raw.kind = Some("logarithmic".into());
                        raw.k = Some(l.k());
                        raw.r_max = Some(l.r_max());
                    }
                }
                raw
            })
            .collect(),
    }
}

fn weight_matrix_violations(users: &[UserProfile], weights: &[Vec<f64>], what: &str) -> Vec<String> {
    let mut errors = Vec::new();
    if weights.len() != users.len() {
        errors.push(format!(
            "{what}: expected {} rows, got {}",
            users.len(),
            weights.len()
        ));
        return errors;
    }
    for (u, row) in users.iter().zip(weights) {
        if row.len() != u.apps.len() {
            errors.push(format!(
                "{what}: user {} expects {} entries, got {}",
                u.id,
                u.apps.len(),
                row.len()
            ));
            continue;
        }
        if let Some(w) = row.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            errors.push(format!("{what}: user {} has weight {w} outside [0, 1]", u.id));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            errors.push(format!("{what}: user {} weights sum to {sum}, expected 1", u.id));
        }
    }
    errors
}

/// Time-varying application weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSchedule {
    pub epochs: Vec<Epoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epoch {
    pub start: f64,
    pub end: f64,
    /// One row per user, one entry per application.
    pub weights: Vec<Vec<f64>>,
}

impl WeightSchedule {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn four_ue() -> Self {
        Self::from_toml_str(FOUR_UE_SCHEDULE).expect("bundled schedule is valid")
    }

    /// Collects every problem with this schedule for the given scenario.
    pub fn validate_for(&self, config: &ScenarioConfig) -> Result<()> {
        let mut errors = Vec::new();
        if self.epochs.is_empty() {
            errors.push("schedule has no epochs".to_string());
        }
        for (i, e) in self.epochs.iter().enumerate() {
            let what = format!("epoch {}", i + 1);
            if !(e.start < e.end) {
                errors.push(format!("{what}: start {} is not before end {}", e.start, e.end));
            }
            if let Some(next) = self.epochs.get(i + 1) {
                if next.start != e.end {
                    errors.push(format!(
                        "{what}: ends at {} but the next epoch starts at {}",
                        e.end, next.start
                    ));
                }
            }
            errors.extend(weight_matrix_violations(&config.users, &e.weights, &what));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

pub fn load_schedule(path: impl AsRef<Path>) -> Result<WeightSchedule> {
    WeightSchedule::from_toml_str(&read(path.as_ref())?)
}

/// Outcome of one full two-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub capacity: f64,
    pub case: CaseFlag,
    pub user_ids: Vec<String>,
    pub user_rates: Vec<f64>,
    /// Per-application rates, target offsets included.
    pub app_rates: Vec<Vec<f64>>,
    pub rounds: usize,
    pub final_price: f64,
    pub trace: IterationTrace,
}

/// Bidding protocol followed by the per-user split.
pub fn run_once(config: &ScenarioConfig) -> Result<RunRecord> {
    let first = run_first_stage(&config.users, config.capacity, &config.protocol)?;
    let app_rates = config
        .users
        .iter()
        .zip(&first.rates)
        .map(|(u, &r)| allocate_internal(u, r, first.case).map(|a| a.rates))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        scenario: config.name.clone(),
        capacity: config.capacity,
        case: first.case,
        user_ids: config.users.iter().map(|u| u.id.clone()).collect(),
        user_rates: first.rates,
        app_rates,
        rounds: first.rounds_used,
        final_price: first.final_price,
        trace: first.trace,
    })
}

#[derive(Debug)]
pub struct SweepFailure {
    pub capacity: f64,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    /// Successful runs in ascending capacity.
    pub records: Vec<RunRecord>,
    pub failures: Vec<SweepFailure>,
}

/// Capacities `start, start + step, ...` up to `end` inclusive.
pub fn capacity_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start > 0.0 && start <= end && end.is_finite()) {
        return Err(Error::domain(format!(
            "need 0 < r_start <= r_end, got {start} and {end}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("r_step must be > 0, got {step}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Independent runs over a range of capacities. Every run is attempted;
/// failures are reported alongside the successful records.
pub fn sweep_r(config: &ScenarioConfig, start: f64, end: f64, step: f64) -> Result<SweepOutcome> {
    let results: Vec<(f64, Result<RunRecord>)> = capacity_grid(start, end, step)?
        .into_par_iter()
        .map(|r| (r, run_once(&config.with_capacity(r))))
        .collect();
    let mut out = SweepOutcome::default();
    for (capacity, res) in results {
        match res {
            Ok(rec) => out.records.push(rec),
            Err(error) => out.failures.push(SweepFailure { capacity, error }),
        }
    }
    Ok(out)
}

/// Solves every epoch of `schedule` from scratch.
pub fn run_schedule(
    config: &ScenarioConfig,
    schedule: &WeightSchedule,
) -> Result<Vec<(usize, RunRecord)>> {
    schedule.validate_for(config)?;
    schedule
        .epochs
        .par_iter()
        .enumerate()
        .map(|(i, e)| Ok((i, run_once(&config.with_weights(&e.weights)?)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    /// `R,case,user_id,rate,rounds,final_price`
    Allocations,
    /// `R,user_id,app_index,rate`
    AppAllocations,
    /// `round,user_id,bid,price`, for every record's trace in turn.
    Trace,
}

impl CsvKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            CsvKind::Allocations => &["R", "case", "user_id", "rate", "rounds", "final_price"],
            CsvKind::AppAllocations => &["R", "user_id", "app_index", "rate"],
            CsvKind::Trace => &["round", "user_id", "bid", "price"],
        }
    }
}

/// Formats `x` rounded to 9 significant digits, without exponent notation.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("float round-trips");
    rounded.to_string()
}

/// Writes `records` as CSV to any writer.
pub fn write_csv<W: Write>(records: &[RunRecord], out: W, kind: CsvKind) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(kind.header())?;
    for rec in records {
        let r = format_sig9(rec.capacity);
        match kind {
            CsvKind::Allocations => {
                let rounds = rec.rounds.to_string();
                let price = format_sig9(rec.final_price);
                for (id, &rate) in rec.user_ids.iter().zip(&rec.user_rates) {
                    w.write_record([
                        r.as_str(),
                        rec.case.label(),
                        id,
                        &format_sig9(rate),
                        &rounds,
                        &price,
                    ])?;
                }
            }
            CsvKind::AppAllocations => {
                for (id, rates) in rec.user_ids.iter().zip(&rec.app_rates) {
                    for (j, &rate) in rates.iter().enumerate() {
                        w.write_record([r.as_str(), id, &j.to_string(), &format_sig9(rate)])?;
                    }
                }
            }
            CsvKind::Trace => {
                for t in rec.trace.records() {
                    w.write_record([
                        t.round.to_string().as_str(),
                        t.user_id,
                        &format_sig9(t.bid),
                        &format_sig9(t.price),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[RunRecord], path: impl AsRef<Path>, kind: CsvKind) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::contract("nothing to write"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file), kind).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}
