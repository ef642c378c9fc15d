use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::ErrorKind;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{code, read_message, write_message, Message};
use super::WireError;
use crate::fl::{run_round, ClientReport, CommLedger, ServerState};
use crate::nn::{ParamVector, Trainer};
use crate::sim::{ExperimentConfig, PreparedData, RoundRecord, RunResult};

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// How long to wait for every client to say HELLO. `None` waits forever.
    pub accept_timeout: Option<Duration>,
    /// How long to wait for any single report or upload before the client is
    /// disconnected and counted as dropped. `None` waits forever.
    pub round_timeout: Option<Duration>,
}

enum Inbound {
    Hello {
        conn: u64,
        client_id: u16,
        stream: TcpStream,
    },
    Frame {
        conn: u64,
        msg: Message,
    },
    Closed {
        conn: u64,
    },
}

struct Session {
    conn: u64,
    stream: TcpStream,
}

/// Runs `cfg` over live connections accepted on `listener` and returns the
/// same record a simulated run produces (without simulator events).
///
/// The server waits for `cfg.n_clients` clients, then for each round
/// broadcasts the global model, collects one report per live client, requests
/// models from the selected clients only and aggregates what arrives. A
/// client that disconnects, times out or breaks the protocol is dropped.
pub fn serve(
    listener: TcpListener,
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
    opts: &ServeOptions,
) -> Result<RunResult, WireError> {
    cfg.validate()?;
    prepared.initial_params.check_len(&cfg.model)?;
    let n_clients: u16 = cfg.n_clients.try_into().expect("validated client count");

    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };

    let mut coord = Coordinator {
        rx,
        sessions: BTreeMap::new(),
        conns: HashMap::new(),
        n_clients,
        round_timeout: opts.round_timeout,
    };
    let result = coord.run(cfg, prepared, opts.accept_timeout);

    stop.store(true, Ordering::SeqCst);
    for s in coord.sessions.values() {
        let _ = s.stream.shutdown(Shutdown::Both);
    }
    let _ = acceptor.join();
    result
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next_conn = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                next_conn += 1;
                let conn = next_conn;
                log::debug!("connection {conn} from {peer}");
                let tx = tx.clone();
                thread::spawn(move || read_loop(conn, stream, tx));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn read_loop(conn: u64, stream: TcpStream, tx: Sender<Inbound>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let Ok(mut reader) = stream.try_clone() else { return };
    let mut greeted = false;
    loop {
        match read_message(&mut reader) {
            Ok(Some(Message::Hello { client_id, .. })) if !greeted => {
                greeted = true;
                let Ok(writer) = stream.try_clone() else { break };
                if tx
                    .send(Inbound::Hello {
                        conn,
                        client_id,
                        stream: writer,
                    })
                    .is_err()
                {
                    return;
                }
            }
            Ok(Some(msg)) if greeted => {
                if tx.send(Inbound::Frame { conn, msg }).is_err() {
                    return;
                }
            }
            Ok(Some(msg)) => {
                reject(
                    &stream,
                    code::UNEXPECTED,
                    &format!("expected HELLO, got type {:#04x}", msg.msg_type()),
                );
                break;
            }
            Ok(None) => break,
            Err(WireError::Io(_)) => break,
            Err(e) => {
                reject(&stream, code::MALFORMED, &e.to_string());
                break;
            }
        }
    }
    let _ = tx.send(Inbound::Closed { conn });
}

/// Sends an ERROR frame and closes the connection.
fn reject(stream: &TcpStream, code: u16, message: &str) {
    log::warn!("rejecting connection: {message}");
    let mut s = stream;
    let _ = write_message(
        &mut s,
        &Message::Error {
            code,
            message: message.to_string(),
        },
    );
    let _ = stream.shutdown(Shutdown::Both);
}

struct Coordinator {
    rx: Receiver<Inbound>,
    sessions: BTreeMap<u16, Session>,
    conns: HashMap<u64, u16>,
    n_clients: u16,
    round_timeout: Option<Duration>,
}

/// What the coordinator is waiting for.
enum Expect<'a> {
    Reports { round: u32, pending: &'a BTreeSet<u16> },
    Upload { round: u32, client: u16 },
}

enum Got {
    Report(ClientReport),
    Upload(Vec<f64>),
    Lost(u16),
    Timeout,
}

impl Coordinator {
    fn run(
        &mut self,
        cfg: &ExperimentConfig,
        prepared: &PreparedData,
        accept_timeout: Option<Duration>,
    ) -> Result<RunResult, WireError> {
        self.register_all(accept_timeout)?;

        let mut server = ServerState::new(prepared.initial_params.clone(), cfg.n_clients)?;
        let mut ledger = CommLedger::default();
        let mut evaluator = Trainer::new(&cfg.model);
        let test = prepared.test_set.as_batch()?;
        let initial_acc = evaluator.accuracy(server.global_params.as_slice(), &test)?;
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
        let start = Instant::now();
        let mut aborted = None;
        let total = cfg.hp.total_rounds;

        for t in 1..=total {
            if self.sessions.is_empty() {
                aborted = Some(format!("every client disconnected before round {t}"));
                break;
            }
            let global = Message::GlobalModel {
                round: t,
                n_clients: self.n_clients,
                params: server.global_params.as_slice().to_vec(),
            };
            let live: Vec<u16> = self.sessions.keys().copied().collect();
            for id in live {
                self.send(id, &global);
            }

            let mut pending: BTreeSet<u16> = self.sessions.keys().copied().collect();
            let mut reports = Vec::new();
            while !pending.is_empty() {
                match self.wait(Expect::Reports {
                    round: t,
                    pending: &pending,
                })? {
                    Got::Report(r) => {
                        pending.remove(&r.client_id);
                        reports.push(r);
                    }
                    Got::Lost(id) => {
                        pending.remove(&id);
                    }
                    Got::Timeout => {
                        for id in std::mem::take(&mut pending) {
                            self.drop_client(id, code::UNEXPECTED, "report timed out");
                        }
                    }
                    Got::Upload(_) => unreachable!("uploads are only accepted when requested"),
                }
            }

            let outcome = run_round(server, &cfg.algorithm, &reports, |id| self.fetch(id, t), &mut ledger)?;
            server = outcome.state;

            let test_acc = evaluator.accuracy(server.global_params.as_slice(), &test)?;
            let mut reported: Vec<u16> = reports.iter().map(|r| r.client_id).collect();
            reported.sort_unstable();
            rounds.push(RoundRecord {
                round: t as u64,
                test_acc,
                reported,
                selected: outcome.selected.into_iter().collect(),
                fetched: outcome.fetched,
                c_t0: ledger.c_t0,
                c_t1: ledger.c_t1,
                time: start.elapsed().as_millis() as u64,
            });
            log::info!("round {t}: acc {test_acc:.4}, uploads {}/{}", ledger.c_t1, ledger.c_t0);

            let terminal = t == total || (cfg.stop_at_target && test_acc >= cfg.target_acc);
            let done = Message::RoundDone { round: t, terminal };
            let live: Vec<u16> = self.sessions.keys().copied().collect();
            for id in live {
                self.send(id, &done);
            }
            if terminal {
                break;
            }
        }

        Ok(RunResult {
            config: cfg.clone(),
            rounds,
            ledger,
            final_params: server.global_params,
            events: Vec::new(),
            aborted,
        })
    }

    fn register_all(&mut self, timeout: Option<Duration>) -> Result<(), WireError> {
        let deadline = timeout.map(|d| Instant::now() + d);
        while self.sessions.len() < self.n_clients as usize {
            let ev = match deadline {
                Some(d) => match self.rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                    Ok(ev) => ev,
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(WireError::Timeout(format!(
                            "{} of {} clients",
                            self.n_clients as usize - self.sessions.len(),
                            self.n_clients
                        )))
                    }
                    Err(RecvTimeoutError::Disconnected) => return Err(WireError::ConnectionLost),
                },
                None => self.rx.recv().map_err(|_| WireError::ConnectionLost)?,
            };
            match ev {
                Inbound::Hello {
                    conn,
                    client_id,
                    stream,
                } => self.hello(conn, client_id, stream),
                Inbound::Frame { conn, msg } => {
                    if let Some(id) = self.conns.get(&conn).copied() {
                        self.drop_client(
                            id,
                            code::UNEXPECTED,
                            &format!("{:#04x} before the first round", msg.msg_type()),
                        );
                    }
                }
                Inbound::Closed { conn } => {
                    self.closed(conn);
                }
            }
        }
        log::info!("{} clients registered", self.n_clients);
        Ok(())
    }

    fn hello(&mut self, conn: u64, client_id: u16, stream: TcpStream) {
        if client_id == 0 || client_id > self.n_clients {
            reject(
                &stream,
                code::REJECTED,
                &format!("client id {client_id} outside 1..={}", self.n_clients),
            );
        } else if self.sessions.contains_key(&client_id) {
            reject(
                &stream,
                code::DUPLICATE_CLIENT,
                &format!("client {client_id} is already connected"),
            );
        } else {
            log::debug!("client {client_id} registered on connection {conn}");
            self.conns.insert(conn, client_id);
            self.sessions.insert(client_id, Session { conn, stream });
        }
    }

    fn closed(&mut self, conn: u64) -> Option<u16> {
        let id = self.conns.remove(&conn)?;
        if self.sessions.get(&id).is_some_and(|s| s.conn == conn) {
            log::warn!("client {id} disconnected");
            self.sessions.remove(&id);
            return Some(id);
        }
        None
    }

    fn drop_client(&mut self, id: u16, code: u16, why: &str) {
        if let Some(s) = self.sessions.remove(&id) {
            self.conns.remove(&s.conn);
            reject(&s.stream, code, &format!("client {id}: {why}"));
        }
    }

    fn send(&mut self, id: u16, msg: &Message) {
        let Some(s) = self.sessions.get(&id) else { return };
        let mut w = &s.stream;
        if let Err(e) = write_message(&mut w, msg) {
            log::warn!("send to client {id} failed: {e}");
            if let Some(s) = self.sessions.remove(&id) {
                self.conns.remove(&s.conn);
                let _ = s.stream.shutdown(Shutdown::Both);
            }
        }
    }

    fn fetch(&mut self, id: u16, round: u32) -> Result<ParamVector, String> {
        if !self.sessions.contains_key(&id) {
            return Err("client is gone".into());
        }
        self.send(id, &Message::ModelRequest { round });
        match self
            .wait(Expect::Upload { round, client: id })
            .map_err(|e| e.to_string())?
        {
            Got::Upload(params) => ParamVector::new(params).map_err(|e| e.to_string()),
            Got::Timeout => {
                self.drop_client(id, code::UNEXPECTED, "upload timed out");
                Err("upload timed out".into())
            }
            Got::Lost(_) => Err("disconnected before uploading".into()),
            Got::Report(_) => unreachable!("reports are not accepted while fetching"),
        }
    }

    /// Waits for the next event relevant to `expect`, handling everything
    /// else (late joiners, disconnects, protocol violations) on the way.
    fn wait(&mut self, expect: Expect<'_>) -> Result<Got, WireError> {
        let deadline = self.round_timeout.map(|d| Instant::now() + d);
        loop {
            let ev = match deadline {
                Some(d) => match self.rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                    Ok(ev) => ev,
                    Err(RecvTimeoutError::Timeout) => return Ok(Got::Timeout),
                    Err(RecvTimeoutError::Disconnected) => return Err(WireError::ConnectionLost),
                },
                None => self.rx.recv().map_err(|_| WireError::ConnectionLost)?,
            };
            let (conn, msg) = match ev {
                Inbound::Hello {
                    conn,
                    client_id,
                    stream,
                } => {
                    self.hello(conn, client_id, stream);
                    continue;
                }
                Inbound::Closed { conn } => {
                    let Some(id) = self.closed(conn) else { continue };
                    let relevant = match &expect {
                        Expect::Reports { pending, .. } => pending.contains(&id),
                        Expect::Upload { client, .. } => *client == id,
                    };
                    if relevant {
                        return Ok(Got::Lost(id));
                    }
                    continue;
                }
                Inbound::Frame { conn, msg } => (conn, msg),
            };
            let Some(id) = self.conns.get(&conn).copied() else {
                continue;
            };

            match (&expect, msg) {
                (Expect::Reports { round, pending }, msg @ Message::Report { .. }) if pending.contains(&id) => {
                    let report = msg.to_report().expect("report message");
                    if report.client_id != id || report.round_index != *round as u64 {
                        self.drop_client(
                            id,
                            code::UNEXPECTED,
                            &format!("report for client {} round {}", report.client_id, report.round_index),
                        );
                        return Ok(Got::Lost(id));
                    }
                    return Ok(Got::Report(report));
                }
                (
                    Expect::Upload { round, client },
                    Message::ModelUpload {
                        client_id,
                        round: r,
                        params,
                    },
                ) if *client == id => {
                    if client_id != id || r != *round {
                        self.drop_client(
                            id,
                            code::UNEXPECTED,
                            &format!("upload for client {client_id} round {r}"),
                        );
                        return Ok(Got::Lost(id));
                    }
                    return Ok(Got::Upload(params));
                }
                (_, msg) => {
                    self.drop_client(
                        id,
                        code::UNEXPECTED,
                        &format!("unexpected message type {:#04x}", msg.msg_type()),
                    );
                    let relevant = match &expect {
                        Expect::Reports { pending, .. } => pending.contains(&id),
                        Expect::Upload { client, .. } => *client == id,
                    };
                    if relevant {
                        return Ok(Got::Lost(id));
                    }
                }
            }
        }
    }
}
