//! Reference implementations the library is checked against. Nothing here
//! calls into the code under test except to convert inputs and outputs.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vafl::fl::{aggregate, comm_value, run_round, Algorithm, ClientReport, CommLedger, CommValue, ServerState};
use vafl::nn::{loss_and_grad, sgd_step, Batch, GradSnapshot, ModelSpec, ParamVector};

/// Mean softmax cross-entropy of a dense ReLU network, written out naively.
/// Each layer stores an input-major `fan_in × fan_out` weight block followed
/// by `fan_out` biases.
pub fn naive_loss(sizes: &[usize], params: &[f64], inputs: &[f64], labels: &[u8]) -> f64 {
    let dim = sizes[0];
    let n = labels.len();
    let mut total = 0.0;
    for s in 0..n {
        let mut a: Vec<f64> = inputs[s * dim..(s + 1) * dim].to_vec();
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; fo];
            for o in 0..fo {
                let mut acc = params[offset + fi * fo + o];
                for i in 0..fi {
                    acc += a[i] * params[offset + i * fo + o];
                }
                z[o] = acc;
            }
            offset += (fi + 1) * fo;
            if l + 2 < sizes.len() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - a[labels[s] as usize];
    }
    total / n as f64
}

pub struct GradCheck {
    pub max_rel_err: f64,
    /// Largest gap between the library loss and the naive one.
    pub loss_gap: f64,
}

/// Floor on the relative-error denominator so roundoff on near-zero
/// gradient entries does not dominate.
pub const REL_FLOOR: f64 = 1e-4;

/// Compares analytic gradients against central differences of [`naive_loss`]
/// on one random network and batch.
pub fn gradient_case(sizes: &[usize], seed: u64, step: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::new(sizes.to_vec()).unwrap();
    let params: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows = rng.random_range(1..=4);
    let dim = sizes[0];
    let inputs: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..rows)
        .map(|_| rng.random_range(0..*sizes.last().unwrap()) as u8)
        .collect();

    let pv = ParamVector::new(params.clone()).unwrap();
    let batch = Batch::new(&inputs, &labels, dim).unwrap();
    let (loss, grad) = loss_and_grad(&spec, &pv, &batch).unwrap();
    let reference = naive_loss(sizes, &params, &inputs, &labels);

    let mut max_rel_err: f64 = 0.0;
    let mut p = params.clone();
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + step;
        let up = naive_loss(sizes, &p, &inputs, &labels);
        p[k] = orig - step;
        let down = naive_loss(sizes, &p, &inputs, &labels);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grad.values[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel_err = max_rel_err.max(rel);
    }
    GradCheck {
        max_rel_err,
        loss_gap: (loss - reference).abs(),
    }
}

/// A client of the toy protocol: a 2-parameter model with loss
/// `½ a ‖θ − c‖²`, trained by plain gradient descent.
#[derive(Debug, Clone)]
pub struct ToyClient {
    pub id: u16,
    pub center: [f64; 2],
    pub curvature: f64,
    pub samples: u64,
}

#[derive(Debug, Clone)]
pub struct ToyScenario {
    pub clients: Vec<ToyClient>,
    pub init: [f64; 2],
    pub eta: f64,
    pub steps: usize,
    pub rounds: usize,
    /// Accuracy is a fixed function of distance to this point.
    pub target: [f64; 2],
}

impl ToyScenario {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let clients = (1..=n)
            .map(|id| ToyClient {
                id,
                center: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                curvature: rng.random_range(0.2..2.0),
                samples: rng.random_range(1..500),
            })
            .collect();
        Self {
            clients,
            init: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            eta: rng.random_range(0.01..0.5),
            steps: rng.random_range(1..=4),
            rounds: rng.random_range(1..=3),
            target: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRound {
    pub selected: BTreeSet<u16>,
    pub global: [f64; 2],
}

fn toy_acc(theta: [f64; 2], target: [f64; 2]) -> f64 {
    let d = (theta[0] - target[0]).powi(2) + (theta[1] - target[1]).powi(2);
    (-d).exp()
}

/// The protocol as straight-line arithmetic: local descent, pseudo-gradient,
/// value, mean threshold with first-round bootstrap, weighted mean.
pub fn toy_reference(s: &ToyScenario) -> Vec<ToyRound> {
    let n = s.clients.len();
    let mut global = s.init;
    let mut last_grad: Vec<Option<[f64; 2]>> = vec![None; n];
    let mut out = Vec::new();
    for _ in 0..s.rounds {
        let mut models = Vec::new();
        let mut values = Vec::new();
        for (k, c) in s.clients.iter().enumerate() {
            let mut th = global;
            for _ in 0..s.steps {
                let g0 = c.curvature * (th[0] - c.center[0]);
                let g1 = c.curvature * (th[1] - c.center[1]);
                th = [th[0] - s.eta * g0, th[1] - s.eta * g1];
            }
            let pg = [(global[0] - th[0]) / s.eta, (global[1] - th[1]) / s.eta];
            let acc = toy_acc(th, s.target);
            let v = last_grad[k].map(|prev| {
                let d = (prev[0] - pg[0]).powi(2) + (prev[1] - pg[1]).powi(2);
                d * (1.0 + n as f64 / 1000.0).powf(acc)
            });
            last_grad[k] = Some(pg);
            models.push(th);
            values.push(v);
        }
        let finite: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mut selected = BTreeSet::new();
        let mut total = 0u64;
        for (k, c) in s.clients.iter().enumerate() {
            if values[k].is_none_or(|v| v >= mean) {
                selected.insert(c.id);
                total += c.samples;
            }
        }
        let mut next = [0.0, 0.0];
        for (k, c) in s.clients.iter().enumerate() {
            if selected.contains(&c.id) {
                let w = c.samples as f64 / total as f64;
                next[0] += w * models[k][0];
                next[1] += w * models[k][1];
            }
        }
        global = next;
        out.push(ToyRound { selected, global });
    }
    out
}

/// The same scenario driven through the library's value, selection and
/// aggregation code.
pub fn toy_library(s: &ToyScenario) -> Vec<ToyRound> {
    let n = s.clients.len();
    let mut server = ServerState::new(ParamVector::new(s.init.to_vec()).unwrap(), n).unwrap();
    let mut ledger = CommLedger::default();
    let mut last: BTreeMap<u16, GradSnapshot> = BTreeMap::new();
    let mut out = Vec::new();
    for round in 1..=s.rounds as u64 {
        let mut reports = Vec::new();
        let mut models = BTreeMap::new();
        for c in &s.clients {
            let mut th = server.global_params.clone();
            for _ in 0..s.steps {
                let p = th.as_slice();
                let g = vec![c.curvature * (p[0] - c.center[0]), c.curvature * (p[1] - c.center[1])];
                th = sgd_step(&th, &GradSnapshot::new(g, round).unwrap(), s.eta).unwrap();
            }
            let pg: Vec<f64> = server
                .global_params
                .as_slice()
                .iter()
                .zip(th.as_slice())
                .map(|(b, a)| (b - a) / s.eta)
                .collect();
            let pg = GradSnapshot::new(pg, round).unwrap();
            let acc = toy_acc([th.as_slice()[0], th.as_slice()[1]], s.target);
            let value = match last.get(&c.id) {
                Some(prev) => CommValue::Value(comm_value(prev, &pg, n, acc).unwrap()),
                None => CommValue::Bootstrap,
            };
            last.insert(c.id, pg);
            reports.push(ClientReport {
                client_id: c.id,
                value,
                grad_sq_norm: 0.0,
                local_acc: acc,
                sample_count: c.samples,
                round_index: round,
            });
            models.insert(c.id, th);
        }
        let outcome = run_round(
            server,
            &Algorithm::Vafl,
            &reports,
            |id| models.get(&id).cloned().ok_or("missing"),
            &mut ledger,
        )
        .unwrap();
        // aggregate() is what run_round uses; check it agrees when called directly
        let chosen: Vec<&ParamVector> = outcome.selected.iter().map(|id| &models[id]).collect();
        let counts: Vec<u64> = outcome
            .selected
            .iter()
            .map(|id| s.clients.iter().find(|c| c.id == *id).unwrap().samples)
            .collect();
        assert_eq!(aggregate(&chosen, &counts).unwrap(), outcome.state.global_params);

        server = outcome.state;
        let g = server.global_params.as_slice();
        out.push(ToyRound {
            selected: outcome.selected,
            global: [g[0], g[1]],
        });
    }
    out
}

/// Largest element-wise gap between two traces, or `None` when selections
/// differ or the traces have different lengths.
pub fn trace_gap(a: &[ToyRound], b: &[ToyRound]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut gap: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.selected != y.selected {
            return None;
        }
        for k in 0..2 {
            gap = gap.max((x.global[k] - y.global[k]).abs());
        }
    }
    Some(gap)
}
