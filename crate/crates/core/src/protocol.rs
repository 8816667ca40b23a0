//! First-stage bidding between the base station and the users, simulated in
//! synchronous rounds.
//!
//! Each round the base station receives one bid per participating user,
//! either stops (all bids moved by less than `delta` since the previous
//! round) or broadcasts the price `p = Σ w / R`. Users answer with the bid
//! `p * demand(p)`, limited to a change of `l1 e^{-n/l2}` per round.

use crate::error::{Error, Result};
use crate::price_response::{proposed_bid, BisectionSettings, FluctuationDecay};
use crate::utility::UserProfile;

/// Smallest price the base station will broadcast.
pub const PRICE_FLOOR: f64 = 1e-9;

/// Scarcity regime, fixed for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseFlag {
    /// VIP target rates add up to at least the capacity; only VIP users are served.
    TargetsExceedCapacity,
    /// VIP targets fit; every user takes part.
    TargetsBelowCapacity,
}

impl CaseFlag {
    /// Short label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            CaseFlag::TargetsExceedCapacity => "first",
            CaseFlag::TargetsBelowCapacity => "second",
        }
    }

    pub fn includes(self, user: &UserProfile) -> bool {
        user.is_vip() || self == CaseFlag::TargetsBelowCapacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Stop once every bid moves by less than this between rounds.
    pub delta: f64,
    pub l1: f64,
    pub l2: f64,
    pub max_rounds: usize,
    /// Price implied by the opening bids: each participant starts at
    /// `initial_price * R / P`.
    pub initial_price: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            l1: 5.0,
            l2: 10.0,
            max_rounds: 10_000,
            initial_price: 0.5,
        }
    }
}

impl ProtocolParams {
    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            out.push(format!("protocol.delta must be > 0, got {}", self.delta));
        }
        if !(self.l1 > 0.0 && self.l1.is_finite()) {
            out.push(format!("protocol.l1 must be > 0, got {}", self.l1));
        }
        if !(self.l2 > 0.0 && self.l2.is_finite()) {
            out.push(format!("protocol.l2 must be > 0, got {}", self.l2));
        }
        if self.max_rounds < 2 {
            out.push(format!("protocol.max_rounds must be >= 2, got {}", self.max_rounds));
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            out.push(format!(
                "protocol.initial_price must be > 0, got {}",
                self.initial_price
            ));
        }
        out
    }

    pub fn decay(&self) -> FluctuationDecay {
        FluctuationDecay {
            l1: self.l1,
            l2: self.l2,
        }
    }
}

/// Bids and price of one round. `bids[i]` is `None` for users that do not
/// take part in the current case.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub n: usize,
    pub bids: Vec<Option<f64>>,
    pub price: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<'a> {
    pub round: usize,
    pub user_id: &'a str,
    pub bid: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub user_ids: Vec<String>,
    pub rounds: Vec<RoundState>,
}

impl IterationTrace {
    /// Flattened `(round, user, bid, price)` rows in round then user order.
    pub fn records(&self) -> Vec<TraceRecord<'_>> {
        self.rounds
            .iter()
            .flat_map(|round| {
                round
                    .bids
                    .iter()
                    .zip(&self.user_ids)
                    .filter_map(move |(bid, id)| {
                        bid.map(|bid| TraceRecord {
                            round: round.n,
                            user_id: id,
                            bid,
                            price: round.price,
                        })
                    })
            })
            .collect()
    }

    /// Bid history of user `i` (empty when the user never bid).
    pub fn bids_of(&self, i: usize) -> Vec<f64> {
        self.rounds.iter().filter_map(|r| r.bids[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageResult {
    pub case: CaseFlag,
    /// Per-user allocated rate, in declaration order.
    pub rates: Vec<f64>,
    pub final_price: f64,
    pub trace: IterationTrace,
    pub rounds_used: usize,
}

pub fn determine_case(users: &[UserProfile], capacity: f64) -> CaseFlag {
    let vip_targets: f64 = users
        .iter()
        .filter(|u| u.is_vip())
        .map(UserProfile::total_target)
        .sum();
    if vip_targets >= capacity {
        CaseFlag::TargetsExceedCapacity
    } else {
        CaseFlag::TargetsBelowCapacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnodebDecision {
    /// Bids have settled; allocate at this price.
    Stop { price: f64 },
    Broadcast { price: f64 },
}

/// One base-station decision given this round's bids and the previous
/// round's bids (absent in round 1).
pub fn enodeb_step(
    bids: &[f64],
    prev_bids: Option<&[f64]>,
    capacity: f64,
    params: &ProtocolParams,
) -> Result<EnodebDecision> {
    if bids.is_empty() {
        return Err(Error::Protocol("no participating users".into()));
    }
    if !(capacity > 0.0) {
        return Err(Error::domain(format!("capacity must be > 0, got {capacity}")));
    }
    let price = (bids.iter().sum::<f64>() / capacity).max(PRICE_FLOOR);
    let settled = match prev_bids {
        Some(prev) if prev.len() == bids.len() => bids
            .iter()
            .zip(prev)
            .all(|(w, w0)| (w - w0).abs() < params.delta),
        Some(prev) => {
            return Err(Error::Protocol(format!(
                "bid vector changed size from {} to {}",
                prev.len(),
                bids.len()
            )))
        }
        None => false,
    };
    Ok(if settled {
        EnodebDecision::Stop { price }
    } else {
        EnodebDecision::Broadcast { price }
    })
}

/// Runs the bidding protocol to STOP and returns per-user rates `w_i / p`.
pub fn run_first_stage(
    users: &[UserProfile],
    capacity: f64,
    params: &ProtocolParams,
) -> Result<FirstStageResult> {
    let problems = params.violations();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(Error::domain(format!("capacity must be > 0, got {capacity}")));
    }
    let case = determine_case(users, capacity);
    let participants: Vec<usize> = (0..users.len())
        .filter(|&i| case.includes(&users[i]))
        .collect();
    if participants.is_empty() {
        return Err(Error::Protocol("no participating users".into()));
    }

    let settings = BisectionSettings::default();
    let decay = params.decay();
    let opening = params.initial_price * capacity / participants.len() as f64;
    let mut bids = vec![opening; participants.len()];
    let mut prev: Option<Vec<f64>> = None;
    let mut trace = IterationTrace {
        user_ids: users.iter().map(|u| u.id.clone()).collect(),
        rounds: Vec::new(),
    };
    let spread = |bids: &[f64]| {
        let mut row = vec![None; users.len()];
        for (&i, &w) in participants.iter().zip(bids) {
            row[i] = Some(w);
        }
        row
    };

    for n in 1.. {
        let decision = enodeb_step(&bids, prev.as_deref(), capacity, params)?;
        match decision {
            EnodebDecision::Stop { price } => {
                trace.rounds.push(RoundState {
                    n,
                    bids: spread(&bids),
                    price,
                    converged: true,
                });
                let mut rates = vec![0.0; users.len()];
                for (&i, &w) in participants.iter().zip(&bids) {
                    rates[i] = w / price;
                }
                return Ok(FirstStageResult {
                    case,
                    rates,
                    final_price: price,
                    trace,
                    rounds_used: n,
                });
            }
            EnodebDecision::Broadcast { price } => {
                trace.rounds.push(RoundState {
                    n,
                    bids: spread(&bids),
                    price,
                    converged: false,
                });
                if n >= params.max_rounds {
                    return Err(Error::NonConvergence {
                        rounds: n,
                        trace: Box::new(trace),
                    });
                }
                let next = participants
                    .iter()
                    .zip(&bids)
                    .map(|(&i, &w)| {
                        let target = proposed_bid(&users[i], price, case, &settings)?;
                        Ok(decay.apply(target, w, n + 1))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                prev = Some(std::mem::replace(&mut bids, next));
            }
        }
    }
    unreachable!("round counter overflowed")
}
