use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataMode, EventKind, EventQueue, ExperimentConfig, SimError, SimEvent};
use crate::data::{make_iid_plan, make_noniid_plan, shared_eval_split, DataBundle, Dataset, Partition, PartitionPlan};
use crate::fl::{client_update, run_round, ClientEnv, ClientReport, ClientState, CommLedger, FlError, ServerState};
use crate::nn::{init_params, NnError, ParamVector, Trainer};
use crate::rng::{client_seed, derive_seed, rng_from, stream};

/// Everything about a run that depends only on the seed and the data layout,
/// never on the algorithm. Sharing one across algorithms pairs the runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub plan: PartitionPlan,
    pub partitions: Vec<Partition>,
    /// Shared split every client scores its local accuracy on.
    pub eval_set: Dataset,
    /// Held-out rows measuring the global model.
    pub test_set: Dataset,
    pub initial_params: ParamVector,
}

pub fn prepare(cfg: &ExperimentConfig, data: &DataBundle) -> Result<PreparedData, SimError> {
    cfg.validate()?;
    if data.train.dim() != cfg.model.input_dim() {
        return Err(SimError::Invalid(format!(
            "data has {} features, model expects {}",
            data.train.dim(),
            cfg.model.input_dim()
        )));
    }
    let partition_seed = derive_seed(cfg.seed, &[stream::PARTITION]);
    let plan = match &cfg.data {
        DataMode::Iid { per_client_count } => {
            make_iid_plan(&data.train, cfg.n_clients, *per_client_count, partition_seed)?
        }
        DataMode::NonIid { skew } => make_noniid_plan(&data.train, cfg.n_clients, skew, partition_seed)?,
    };
    plan.validate(&data.train)?;
    let partitions = plan.materialize(&data.train);
    let (eval_set, test_set) = eval_split(cfg, &data.test)?;
    let initial_params = init_params(&cfg.model, derive_seed(cfg.seed, &[stream::INIT]));
    Ok(PreparedData {
        plan,
        partitions,
        eval_set,
        test_set,
        initial_params,
    })
}

/// Splits `test` into the shared client evaluation rows and the rows that
/// measure the global model.
pub fn eval_split(cfg: &ExperimentConfig, test: &Dataset) -> Result<(Dataset, Dataset), SimError> {
    let seed = derive_seed(cfg.seed, &[stream::EVAL_SPLIT]);
    Ok(shared_eval_split(test, cfg.eval_fraction, seed)?)
}

/// One closed server round. Round 0 is the untrained initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub test_acc: f64,
    /// Clients whose report reached the server this round.
    pub reported: Vec<u16>,
    pub selected: Vec<u16>,
    /// Selected clients whose model was aggregated.
    pub fetched: Vec<u16>,
    pub c_t0: u64,
    pub c_t1: u64,
    /// Simulated tick at which the new global model was ready.
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub ledger: CommLedger,
    pub final_params: ParamVector,
    /// Every processed event, in processing order.
    pub events: Vec<SimEvent>,
    /// Set when training diverged and the run stopped early.
    pub aborted: Option<String>,
}

impl RunResult {
    pub fn final_acc(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.test_acc)
    }

    /// First round whose global test accuracy reaches `target`.
    pub fn round_reaching(&self, target: f64) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.test_acc >= target)
    }
}

/// Uploads spent before the global model first reached `target`, or `None`
/// if it never did.
pub fn communications_to_target(result: &RunResult, target: f64) -> Option<u64> {
    result.round_reaching(target).map(|r| r.c_t1)
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &DataBundle) -> Result<RunResult, SimError> {
    let prepared = prepare(cfg, data)?;
    run_prepared(cfg, &prepared)
}

struct Dispatch {
    client: u16,
    arrival: u64,
    upload_delay: u64,
}

struct Pending {
    state: ClientState,
    report: ClientReport,
    upload_delay: u64,
}

/// Runs `cfg` on data produced by [`prepare`] for a config with the same seed
/// and data layout.
pub fn run_prepared(cfg: &ExperimentConfig, prepared: &PreparedData) -> Result<RunResult, SimError> {
    cfg.validate()?;
    if prepared.partitions.len() != cfg.n_clients {
        return Err(SimError::Invalid(format!(
            "{} partitions for {} clients",
            prepared.partitions.len(),
            cfg.n_clients
        )));
    }
    prepared.initial_params.check_len(&cfg.model)?;

    let ids: Vec<u16> = prepared.partitions.iter().map(|p| p.client_id).collect();
    let mut clients: BTreeMap<u16, ClientState> = prepared
        .partitions
        .iter()
        .map(|p| {
            let seed = client_seed(cfg.seed, p.client_id);
            let state = ClientState::new(p.client_id, prepared.initial_params.clone(), p.train.len() as u64, seed);
            (p.client_id, state)
        })
        .collect();
    let partitions: BTreeMap<u16, &Partition> = prepared.partitions.iter().map(|p| (p.client_id, p)).collect();

    let mut server = ServerState::new(prepared.initial_params.clone(), cfg.n_clients)?;
    let mut ledger = CommLedger::default();
    let mut queue = EventQueue::new();
    let mut events = Vec::new();
    let mut in_flight: BTreeMap<u16, Pending> = BTreeMap::new();
    let mut evaluator = Trainer::new(&cfg.model);
    let test_batch = prepared.test_set.as_batch()?;

    let initial_acc = evaluator.accuracy(server.global_params.as_slice(), &test_batch)?;
    let mut rounds = vec![RoundRecord {
        round: 0,
        test_acc: initial_acc,
        reported: Vec::new(),
        selected: Vec::new(),
        fetched: Vec::new(),
        c_t0: 0,
        c_t1: 0,
        time: 0,
    }];
    let mut now = 0u64;
    let mut aborted = None;

    let target_hit = |acc: f64| cfg.stop_at_target && acc >= cfg.target_acc;
    if target_hit(initial_acc) {
        return Ok(finish(cfg, rounds, ledger, server.global_params, events, aborted));
    }

    for t in 1..=cfg.hp.total_rounds as u64 {
        events.push(SimEvent {
            time: now,
            kind: EventKind::RoundTrigger,
            client_id: 0,
            round: t,
        });

        let mut dispatch = Vec::new();
        for &id in &ids {
            if in_flight.contains_key(&id) {
                continue;
            }
            if cfg.latency.dropout_prob > 0.0
                && rng_from(cfg.seed, &[stream::DROPOUT, t, id as u64]).random_bool(cfg.latency.dropout_prob)
            {
                queue.push(SimEvent {
                    time: now,
                    kind: EventKind::ClientDropout,
                    client_id: id,
                    round: t,
                });
                continue;
            }
            let mut rng = rng_from(cfg.seed, &[stream::LATENCY, t, id as u64]);
            let compute = cfg.latency.compute.sample(&mut rng) as f64 * cfg.latency.speed_factor(id);
            let report_delay = cfg.latency.network.sample(&mut rng);
            let upload_delay = cfg.latency.network.sample(&mut rng);
            dispatch.push(Dispatch {
                client: id,
                arrival: now + compute.round() as u64 + report_delay,
                upload_delay,
            });
        }

        let global = &server.global_params;
        let train = |d: &Dispatch| {
            let env = ClientEnv {
                spec: &cfg.model,
                partition: partitions[&d.client],
                eval_set: &prepared.eval_set,
                hp: &cfg.hp,
                n_clients: cfg.n_clients,
            };
            client_update(&clients[&d.client], global, t, &env)
        };
        let updates: Vec<Result<(ClientState, ClientReport), FlError>> = if cfg.parallel {
            dispatch.par_iter().map(train).collect()
        } else {
            dispatch.iter().map(train).collect()
        };

        for (d, update) in dispatch.iter().zip(updates) {
            match update {
                Ok((state, report)) => {
                    queue.push(SimEvent {
                        time: d.arrival,
                        kind: EventKind::ReportArrival,
                        client_id: d.client,
                        round: t,
                    });
                    in_flight.insert(
                        d.client,
                        Pending {
                            state,
                            report,
                            upload_delay: d.upload_delay,
                        },
                    );
                }
                Err(e) if is_divergence(&e) => {
                    aborted = Some(format!("round {t}, client {}: {e}", d.client));
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if aborted.is_some() {
            break;
        }

        let deadline = cfg.latency.deadline.map(|d| now + d);
        let mut arrived: BTreeMap<u16, Pending> = BTreeMap::new();
        let mut close = now;
        while let Some(ev) = queue.pop_until(deadline.unwrap_or(u64::MAX)) {
            close = close.max(ev.time);
            events.push(ev);
            if ev.kind == EventKind::ReportArrival {
                let p = in_flight
                    .remove(&ev.client_id)
                    .expect("arrival for a dispatched client");
                arrived.insert(ev.client_id, p);
            }
        }
        if let Some(d) = deadline {
            if !in_flight.is_empty() {
                close = d;
            }
        }

        let reports: Vec<ClientReport> = arrived.values().map(|p| p.report.clone()).collect();
        let outcome = run_round(
            server,
            &cfg.algorithm,
            &reports,
            |id| {
                arrived
                    .get(&id)
                    .map(|p| p.state.params.clone())
                    .ok_or("no pending model")
            },
            &mut ledger,
        )?;
        server = outcome.state;

        let mut ready = close;
        for &id in &outcome.fetched {
            let time = close + arrived[&id].upload_delay;
            ready = ready.max(time);
            queue.push(SimEvent {
                time,
                kind: EventKind::ModelArrival,
                client_id: id,
                round: t,
            });
        }
        while let Some(ev) = queue.peek() {
            if ev.kind != EventKind::ModelArrival {
                break;
            }
            events.push(queue.pop().expect("peeked"));
        }
        now = ready;

        for (id, p) in arrived {
            clients.insert(id, p.state);
        }

        let test_acc = evaluator.accuracy(server.global_params.as_slice(), &test_batch)?;
        log::debug!(
            "{} {} round {t}: acc {test_acc:.4}, uploads {}/{}",
            cfg.name,
            cfg.algorithm.kind(),
            outcome.fetched.len(),
            reports.len()
        );
        rounds.push(RoundRecord {
            round: t,
            test_acc,
            reported: reports.iter().map(|r| r.client_id).collect(),
            selected: outcome.selected.into_iter().collect(),
            fetched: outcome.fetched,
            c_t0: ledger.c_t0,
            c_t1: ledger.c_t1,
            time: now,
        });
        if target_hit(test_acc) {
            break;
        }
    }

    Ok(finish(cfg, rounds, ledger, server.global_params, events, aborted))
}

fn finish(
    cfg: &ExperimentConfig,
    rounds: Vec<RoundRecord>,
    ledger: CommLedger,
    final_params: ParamVector,
    events: Vec<SimEvent>,
    aborted: Option<String>,
) -> RunResult {
    if let Some(msg) = &aborted {
        log::warn!("{} {} aborted: {msg}", cfg.name, cfg.algorithm.kind());
    }
    RunResult {
        config: cfg.clone(),
        rounds,
        ledger,
        final_params,
        events,
        aborted,
    }
}

fn is_divergence(e: &FlError) -> bool {
    matches!(e, FlError::NonFinite(_) | FlError::Nn(NnError::NonFinite(_)))
}
