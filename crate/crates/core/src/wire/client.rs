use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use super::frame::{read_message, write_message, Message};
use super::WireError;
use crate::data::{DataBundle, Dataset, Partition, PartitionPlan};
use crate::fl::{client_update, ClientEnv, ClientState, HyperParams};
use crate::nn::{ModelSpec, ParamVector};
use crate::rng::client_seed;
use crate::sim::{eval_split, ExperimentConfig, PreparedData, SimError};

/// Everything a wire client trains with.
#[derive(Debug, Clone)]
pub struct ClientSetup {
    pub client_id: u16,
    /// Seed for the client's local shuffles.
    pub seed: u64,
    pub model: ModelSpec,
    pub hp: HyperParams,
    pub partition: Partition,
    pub eval_set: Dataset,
}

impl ClientSetup {
    /// The setup client `client_id` gets in a simulated run of `cfg`.
    pub fn from_prepared(cfg: &ExperimentConfig, prepared: &PreparedData, client_id: u16) -> Option<Self> {
        let partition = prepared.partitions.iter().find(|p| p.client_id == client_id)?;
        Some(Self {
            client_id,
            seed: client_seed(cfg.seed, client_id),
            model: cfg.model.clone(),
            hp: cfg.hp.clone(),
            partition: partition.clone(),
            eval_set: prepared.eval_set.clone(),
        })
    }

    /// The setup for `client_id` from a written partition plan. `data` must be
    /// the bundle the plan was made from.
    pub fn from_plan(
        cfg: &ExperimentConfig,
        plan: &PartitionPlan,
        data: &DataBundle,
        client_id: u16,
    ) -> Result<Option<Self>, SimError> {
        let Some(entry) = plan.client(client_id) else {
            return Ok(None);
        };
        let single = PartitionPlan {
            clients: vec![entry.clone()],
        };
        single.validate(&data.train)?;
        let partition = single.materialize(&data.train).remove(0);
        let (eval_set, _) = eval_split(cfg, &data.test)?;
        Ok(Some(Self {
            client_id,
            seed: client_seed(cfg.seed, client_id),
            model: cfg.model.clone(),
            hp: cfg.hp.clone(),
            partition,
            eval_set,
        }))
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Reconnect attempts after a lost connection.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on every further attempt.
    pub initial_backoff: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientSummary {
    pub rounds: u32,
    pub uploads: u32,
}

/// Connects to `server` and takes part in rounds until the server sends a
/// terminal ROUND_DONE. Connection failures are retried with exponential
/// backoff; protocol errors end the session at once.
pub fn client_main(
    server: impl ToSocketAddrs,
    setup: &ClientSetup,
    opts: &ClientOptions,
) -> Result<ClientSummary, WireError> {
    let addrs: Vec<_> = server.to_socket_addrs()?.collect();
    let mut state = ClientState::new(
        setup.client_id,
        ParamVector::zeros(setup.model.param_count()),
        setup.partition.train.len() as u64,
        setup.seed,
    );
    let mut summary = ClientSummary::default();
    let mut backoff = opts.initial_backoff;
    let mut attempt = 0;
    loop {
        let result = TcpStream::connect(&addrs[..])
            .map_err(WireError::from)
            .and_then(|stream| session(stream, setup, &mut state, &mut summary));
        match result {
            Ok(()) => return Ok(summary),
            Err(e) if e.is_transient() && attempt < opts.max_retries => {
                attempt += 1;
                log::warn!(
                    "client {}: {e}; retry {attempt}/{} in {backoff:?}",
                    setup.client_id,
                    opts.max_retries
                );
                thread::sleep(backoff);
                backoff *= 2;
            }
            Err(e) => return Err(e),
        }
    }
}

fn session(
    stream: TcpStream,
    setup: &ClientSetup,
    state: &mut ClientState,
    summary: &mut ClientSummary,
) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = &stream;
    let sample_count = u32::try_from(setup.partition.train.len())
        .map_err(|_| WireError::Protocol("partition too large for the frame field".into()))?;
    write_message(
        &mut writer,
        &Message::Hello {
            client_id: setup.client_id,
            sample_count,
        },
    )?;

    let mut trained_round = None;
    loop {
        let msg = read_message(&mut reader)?.ok_or(WireError::ConnectionLost)?;
        match msg {
            Message::GlobalModel {
                round,
                n_clients,
                params,
            } => {
                let global = ParamVector::new(params)?;
                let env = ClientEnv {
                    spec: &setup.model,
                    partition: &setup.partition,
                    eval_set: &setup.eval_set,
                    hp: &setup.hp,
                    n_clients: n_clients as usize,
                };
                let (next, report) = client_update(state, &global, round as u64, &env)?;
                *state = next;
                trained_round = Some(round);
                summary.rounds += 1;
                write_message(&mut writer, &Message::from_report(&report)?)?;
            }
            Message::ModelRequest { round } => {
                if trained_round != Some(round) {
                    return Err(WireError::Protocol(format!(
                        "model requested for untrained round {round}"
                    )));
                }
                write_message(
                    &mut writer,
                    &Message::ModelUpload {
                        client_id: setup.client_id,
                        round,
                        params: state.params.as_slice().to_vec(),
                    },
                )?;
                summary.uploads += 1;
            }
            Message::RoundDone { terminal, .. } => {
                if terminal {
                    return Ok(());
                }
            }
            Message::Error { code, message } => return Err(WireError::Remote { code, message }),
            other => {
                return Err(WireError::Protocol(format!(
                    "unexpected message type {:#04x} from server",
                    other.msg_type()
                )))
            }
        }
    }
}
