use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{aggregate, eaflm_gate_sq_norm, select_clients, Algorithm, ClientReport, EaflmConfig, FlError};
use crate::nn::ParamVector;

/// Previous global models kept for the EAFLM drift term.
const DEFAULT_HISTORY: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global_params: ParamVector,
    pub n_clients: usize,
    pub round_index: u64,
    /// Previous global models, oldest first. Bounded by `history_cap`.
    pub history: Vec<ParamVector>,
    pub history_cap: usize,
}

impl ServerState {
    pub fn new(global_params: ParamVector, n_clients: usize) -> Result<Self, FlError> {
        if n_clients == 0 {
            return Err(FlError::Invalid("server needs at least one client".into()));
        }
        Ok(Self {
            global_params,
            n_clients,
            round_index: 0,
            history: Vec::new(),
            history_cap: DEFAULT_HISTORY,
        })
    }

    /// The last `depth` previous models followed by the current one.
    fn recent(&self, depth: usize) -> Vec<ParamVector> {
        let start = self.history.len().saturating_sub(depth);
        let mut h = self.history[start..].to_vec();
        h.push(self.global_params.clone());
        h
    }
}

/// Model uploads: `c_t0` counts what an ungated run would have sent (one per
/// report), `c_t1` what was actually sent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub c_t0: u64,
    pub c_t1: u64,
    pub rounds: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u64,
    pub reported: u64,
    pub uploaded: u64,
}

impl CommLedger {
    fn record(&mut self, round: u64, reported: u64, uploaded: u64) {
        debug_assert!(uploaded <= reported);
        self.c_t0 += reported;
        self.c_t1 += uploaded;
        self.rounds.push(LedgerEntry {
            round,
            reported,
            uploaded,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub state: ServerState,
    pub selected: BTreeSet<u16>,
    /// Selected clients whose model actually arrived, ascending.
    pub fetched: Vec<u16>,
    pub dropped: Vec<u16>,
}

/// One server round under `algorithm`.
///
/// Reports are handled in client-id order. Only selected clients are asked for
/// their model; a failed fetch drops that client from this round's average.
/// If nothing arrives the global model is carried over unchanged.
pub fn run_round<F, E>(
    server: ServerState,
    algorithm: &Algorithm,
    reports: &[ClientReport],
    mut fetch_model: F,
    ledger: &mut CommLedger,
) -> Result<RoundOutcome, FlError>
where
    F: FnMut(u16) -> Result<ParamVector, E>,
    E: std::fmt::Display,
{
    let mut reports = reports.to_vec();
    reports.sort_by_key(|r| r.client_id);

    let selected: BTreeSet<u16> = if reports.is_empty() {
        BTreeSet::new()
    } else {
        match algorithm {
            Algorithm::Afl => reports.iter().map(|r| r.client_id).collect(),
            Algorithm::Vafl => select_clients(&reports)?,
            Algorithm::Eaflm(cfg) => eaflm_select(&server, &reports, cfg)?,
        }
    };

    let mut fetched = Vec::new();
    let mut dropped = Vec::new();
    let mut models = Vec::new();
    let mut counts = Vec::new();
    for r in reports.iter().filter(|r| selected.contains(&r.client_id)) {
        match fetch_model(r.client_id) {
            Ok(m) if m.len() == server.global_params.len() => {
                fetched.push(r.client_id);
                models.push(m);
                counts.push(r.sample_count);
            }
            Ok(m) => {
                log::warn!(
                    "client {} uploaded {} parameters, expected {}; dropped",
                    r.client_id,
                    m.len(),
                    server.global_params.len()
                );
                dropped.push(r.client_id);
            }
            Err(e) => {
                log::warn!("fetch from client {} failed: {e}; dropped", r.client_id);
                dropped.push(r.client_id);
            }
        }
    }

    let next_global = if models.is_empty() {
        server.global_params.clone()
    } else {
        let refs: Vec<&ParamVector> = models.iter().collect();
        aggregate(&refs, &counts)?
    };

    let round = server.round_index + 1;
    ledger.record(round, reports.len() as u64, fetched.len() as u64);

    let ServerState {
        global_params,
        n_clients,
        mut history,
        history_cap,
        ..
    } = server;
    history.push(global_params);
    if history.len() > history_cap {
        history.drain(..history.len() - history_cap);
    }
    Ok(RoundOutcome {
        state: ServerState {
            global_params: next_global,
            n_clients,
            round_index: round,
            history,
            history_cap,
        },
        selected,
        fetched,
        dropped,
    })
}

fn eaflm_select(server: &ServerState, reports: &[ClientReport], cfg: &EaflmConfig) -> Result<BTreeSet<u16>, FlError> {
    let recent = server.recent(cfg.depth);
    let mut out = BTreeSet::new();
    for r in reports {
        if !eaflm_gate_sq_norm(r.grad_sq_norm, &recent, cfg, server.n_clients)? {
            out.insert(r.client_id);
        }
    }
    Ok(out)
}

/// VAFL round: mean-threshold selection on the reported values.
pub fn server_round<F, E>(
    server: ServerState,
    reports: &[ClientReport],
    fetch_model: F,
    ledger: &mut CommLedger,
) -> Result<RoundOutcome, FlError>
where
    F: FnMut(u16) -> Result<ParamVector, E>,
    E: std::fmt::Display,
{
    run_round(server, &Algorithm::Vafl, reports, fetch_model, ledger)
}

/// Plain asynchronous FedAvg: every reporting client uploads.
pub fn afl_round<F, E>(
    server: ServerState,
    reports: &[ClientReport],
    fetch_model: F,
    ledger: &mut CommLedger,
) -> Result<RoundOutcome, FlError>
where
    F: FnMut(u16) -> Result<ParamVector, E>,
    E: std::fmt::Display,
{
    run_round(server, &Algorithm::Afl, reports, fetch_model, ledger)
}

/// EAFLM baseline: clients the gate marks lazy do not upload.
pub fn eaflm_round<F, E>(
    server: ServerState,
    cfg: &EaflmConfig,
    reports: &[ClientReport],
    fetch_model: F,
    ledger: &mut CommLedger,
) -> Result<RoundOutcome, FlError>
where
    F: FnMut(u16) -> Result<ParamVector, E>,
    E: std::fmt::Display,
{
    run_round(server, &Algorithm::Eaflm(cfg.clone()), reports, fetch_model, ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn models() -> BTreeMap<u16, ParamVector> {
        [(1, pv(&[1.0])), (2, pv(&[2.0])), (3, pv(&[4.0]))].into()
    }

    fn reports(values: &[f64]) -> Vec<ClientReport> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ClientReport::with_value(i as u16 + 1, v, 1))
            .collect()
    }

    fn fetcher(m: &BTreeMap<u16, ParamVector>) -> impl FnMut(u16) -> Result<ParamVector, String> + '_ {
        |id| m.get(&id).cloned().ok_or_else(|| "gone".to_string())
    }

    #[test]
    fn vafl_fetches_only_selected() {
        let m = models();
        let mut ledger = CommLedger::default();
        let s = ServerState::new(pv(&[0.0]), 3).unwrap();
        let out = server_round(s, &reports(&[1.0, 2.0, 3.0]), fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.fetched, vec![2, 3]);
        assert_eq!((ledger.c_t0, ledger.c_t1), (3, 2));
        assert_eq!(out.state.global_params, pv(&[3.0]));
        assert_eq!(out.state.round_index, 1);
        assert_eq!(out.state.history, vec![pv(&[0.0])]);
    }

    #[test]
    fn all_selected_matches_afl() {
        let m = models();
        let rs = reports(&[2.0, 2.0, 2.0]);
        let mut l1 = CommLedger::default();
        let mut l2 = CommLedger::default();
        let s = ServerState::new(pv(&[0.0]), 3).unwrap();
        let a = server_round(s.clone(), &rs, fetcher(&m), &mut l1).unwrap();
        let b = afl_round(s, &rs, fetcher(&m), &mut l2).unwrap();
        assert_eq!(a, b);
        assert_eq!(l1, l2);
        assert_eq!(l2.c_t0, l2.c_t1);
    }

    #[test]
    fn afl_counts_every_upload() {
        let m: BTreeMap<u16, ParamVector> = (1..=7).map(|i| (i, pv(&[i as f64]))).collect();
        let rs: Vec<_> = (1..=7).map(|i| ClientReport::with_value(i, 0.0, 1)).collect();
        let mut ledger = CommLedger::default();
        let mut s = ServerState::new(pv(&[0.0]), 7).unwrap();
        for _ in 0..5 {
            s = afl_round(s, &rs, fetcher(&m), &mut ledger).unwrap().state;
        }
        assert_eq!((ledger.c_t0, ledger.c_t1), (35, 35));
        assert_eq!(ledger.rounds.len(), 5);
    }

    #[test]
    fn failed_fetch_is_dropped_not_fatal() {
        let mut m = models();
        m.remove(&3);
        let mut ledger = CommLedger::default();
        let s = ServerState::new(pv(&[0.0]), 3).unwrap();
        let out = server_round(s, &reports(&[1.0, 2.0, 3.0]), fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.dropped, vec![3]);
        assert_eq!(out.state.global_params, pv(&[2.0]));
        assert_eq!(ledger.c_t1, 1);
    }

    #[test]
    fn nothing_arrives_keeps_global() {
        let m = BTreeMap::new();
        let mut ledger = CommLedger::default();
        let s = ServerState::new(pv(&[5.0]), 3).unwrap();
        let out = server_round(s, &reports(&[1.0]), fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.state.global_params, pv(&[5.0]));
        let out = server_round(out.state, &[], fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.state.round_index, 2);
        assert_eq!((ledger.c_t0, ledger.c_t1), (1, 0));
    }

    #[test]
    fn eaflm_suppresses_lazy_clients_once_history_fills() {
        let m = models();
        let cfg = EaflmConfig {
            m: Some(1.0),
            ..EaflmConfig::default()
        };
        let mut rs = reports(&[0.0, 0.0, 0.0]);
        rs[0].grad_sq_norm = 0.0;
        rs[1].grad_sq_norm = 100.0;
        rs[2].grad_sq_norm = 0.5;
        let mut ledger = CommLedger::default();
        let s = ServerState::new(pv(&[0.0]), 3).unwrap();
        // no history yet: everyone communicates
        let out = eaflm_round(s, &cfg, &rs, fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.fetched, vec![1, 2, 3]);
        // global moved 0 -> 7/3; threshold = (7/3)^2 / 0.9604 ≈ 5.67
        let out = eaflm_round(out.state, &cfg, &rs, fetcher(&m), &mut ledger).unwrap();
        assert_eq!(out.fetched, vec![2]);
        assert_eq!((ledger.c_t0, ledger.c_t1), (6, 4));
    }

    #[test]
    fn history_is_bounded() {
        let m = models();
        let mut ledger = CommLedger::default();
        let mut s = ServerState::new(pv(&[0.0]), 3).unwrap();
        s.history_cap = 2;
        for _ in 0..5 {
            s = afl_round(s, &reports(&[1.0, 1.0, 1.0]), fetcher(&m), &mut ledger)
                .unwrap()
                .state;
        }
        assert_eq!(s.history.len(), 2);
    }
}
