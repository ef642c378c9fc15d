use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{comm_value, ClientReport, CommValue, FlError, GradientStrategy, HyperParams};
use crate::data::{Dataset, Partition};
use crate::nn::{Batch, GradSnapshot, ModelSpec, ParamVector, Trainer};
use crate::rng::rng_from;

/// Everything a client remembers between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: u16,
    pub params: ParamVector,
    pub prev_grad: Option<GradSnapshot>,
    pub last_grad: Option<GradSnapshot>,
    pub local_acc: f64,
    pub sample_count: u64,
    pub seed: u64,
}

impl ClientState {
    pub fn new(client_id: u16, params: ParamVector, sample_count: u64, seed: u64) -> Self {
        Self {
            client_id,
            params,
            prev_grad: None,
            last_grad: None,
            local_acc: 0.0,
            sample_count,
            seed,
        }
    }
}

/// Read-only context for a client's local pass.
#[derive(Debug, Clone, Copy)]
pub struct ClientEnv<'a> {
    pub spec: &'a ModelSpec,
    pub partition: &'a Partition,
    pub eval_set: &'a Dataset,
    pub hp: &'a HyperParams,
    pub n_clients: usize,
}

/// Mini-batches run per local epoch for `rows` samples.
pub fn local_steps(rows: usize, hp: &HyperParams) -> usize {
    let per_epoch = rows.div_ceil(hp.batch_size).max(1);
    per_epoch.div_ceil(hp.local_rounds as usize)
}

/// One local pass starting from `global_params`.
///
/// The client trains `local_epochs` times over `local_steps` mini-batches of a
/// fresh seeded shuffle, derives its gradient snapshot, evaluates on the
/// shared eval set and scores itself with [`comm_value`]. A partition smaller
/// than one batch trains on a single short batch.
pub fn client_update(
    state: &ClientState,
    global_params: &ParamVector,
    round: u64,
    env: &ClientEnv<'_>,
) -> Result<(ClientState, ClientReport), FlError> {
    global_params.check_len(env.spec)?;
    let hp = env.hp;
    hp.validate()?;
    let data = &env.partition.train;
    if data.is_empty() {
        return Err(FlError::Empty("train on"));
    }
    let dim = data.dim();
    let steps = local_steps(data.len(), hp);

    let mut trainer = Trainer::new(env.spec);
    let mut params = global_params.as_slice().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut inputs = Vec::with_capacity(hp.batch_size * dim);
    let mut labels = Vec::with_capacity(hp.batch_size);

    for epoch in 0..hp.local_epochs {
        let mut rng = rng_from(state.seed, &[round, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size).take(steps) {
            inputs.clear();
            labels.clear();
            for &i in chunk {
                inputs.extend_from_slice(data.row(i));
                labels.push(data.labels()[i]);
            }
            let batch = Batch::new(&inputs, &labels, dim)?;
            trainer.step(&mut params, &batch, hp.learning_rate)?;
        }
    }

    let grad_values = match hp.gradient {
        GradientStrategy::PseudoGradient if hp.learning_rate > 0.0 => global_params
            .as_slice()
            .iter()
            .zip(&params)
            .map(|(before, after)| (before - after) / hp.learning_rate)
            .collect(),
        GradientStrategy::PseudoGradient => vec![0.0; params.len()],
        GradientStrategy::LastMinibatch => trainer.last_gradient().to_vec(),
    };
    let grad = GradSnapshot::new(grad_values, round)?;
    let params = ParamVector::new(params)?;
    let local_acc = trainer.accuracy(params.as_slice(), &env.eval_set.as_batch()?)?;

    let value = match &state.last_grad {
        Some(prev) => CommValue::Value(comm_value(prev, &grad, env.n_clients, local_acc)?),
        None => CommValue::Bootstrap,
    };
    let report = ClientReport {
        client_id: state.client_id,
        value,
        grad_sq_norm: grad.squared_norm(),
        local_acc,
        sample_count: data.len() as u64,
        round_index: round,
    };
    let next = ClientState {
        client_id: state.client_id,
        params,
        prev_grad: state.last_grad.clone(),
        last_grad: Some(grad),
        local_acc,
        sample_count: data.len() as u64,
        seed: state.seed,
    };
    Ok((next, report))
}
