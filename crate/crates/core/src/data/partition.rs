//! Client partition plans.
//!
//! A plan is pure bookkeeping: for each client, which labels it may hold and
//! which rows of the source dataset it received. Plans serialize to JSON as an
//! array of `{client_id, labels, count, indices}` records so that a wire-mode
//! client can rebuild exactly the partition the simulator would use.
//!
//! Client ids are 1-based.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, NUM_CLASSES};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPlan {
    pub client_id: u16,
    pub labels: Vec<u8>,
    pub count: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionPlan {
    pub clients: Vec<ClientPlan>,
}

impl PartitionPlan {
    pub fn client(&self, id: u16) -> Option<&ClientPlan> {
        self.clients.iter().find(|c| c.client_id == id)
    }

    /// Full scan of the plan against its source dataset.
    pub fn validate(&self, dataset: &Dataset) -> Result<(), DataError> {
        for c in &self.clients {
            if c.indices.len() != c.count || c.count == 0 {
                return Err(DataError::Invalid(format!(
                    "client {} declares {} samples but lists {}",
                    c.client_id,
                    c.count,
                    c.indices.len()
                )));
            }
            let allowed: BTreeSet<u8> = c.labels.iter().copied().collect();
            for &i in &c.indices {
                let label = *dataset
                    .labels()
                    .get(i)
                    .ok_or_else(|| DataError::Invalid(format!("client {} index {} out of range", c.client_id, i)))?;
                if !allowed.contains(&label) {
                    return Err(DataError::Invalid(format!(
                        "client {} holds label {} outside its label set",
                        c.client_id, label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn materialize(&self, dataset: &Dataset) -> Vec<Partition> {
        self.clients
            .iter()
            .map(|c| Partition {
                client_id: c.client_id,
                train: dataset.subset(&c.indices),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DataError> {
        serde_json::from_str(s).map_err(|e| DataError::Invalid(format!("plan json: {e}")))
    }
}

/// One client's training rows.
#[derive(Debug, Clone)]
pub struct Partition {
    pub client_id: u16,
    pub train: Dataset,
}

/// Label-set size and sample count for one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSkew {
    pub label_count: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewConfig {
    pub clients: Vec<ClientSkew>,
    /// When false, no dataset row is handed to more than one client.
    #[serde(default)]
    pub allow_overlap: bool,
}

impl SkewConfig {
    /// Three clients: everything, four labels, two labels.
    pub fn three_client_default() -> Self {
        Self::from_pairs(&[(10, 20_000), (4, 12_000), (2, 4_000)])
    }

    /// Seven clients, from two all-label clients down to a single-label one.
    pub fn seven_client_default() -> Self {
        Self::from_pairs(&[
            (10, 10_000),
            (10, 10_000),
            (5, 6_000),
            (4, 5_000),
            (3, 4_000),
            (2, 3_000),
            (1, 2_000),
        ])
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        Self {
            clients: pairs
                .iter()
                .map(|&(label_count, sample_count)| ClientSkew {
                    label_count,
                    sample_count,
                })
                .collect(),
            allow_overlap: false,
        }
    }
}

fn all_labels() -> Vec<u8> {
    (0..NUM_CLASSES as u8).collect()
}

/// Every client gets `per_client_count` rows covering all labels. Rows are
/// disjoint across clients when the dataset is large enough; otherwise each
/// client draws independently (overlap across clients, never within one).
pub fn make_iid_plan(
    dataset: &Dataset,
    n_clients: usize,
    per_client_count: usize,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if n_clients == 0 || per_client_count == 0 {
        return Err(DataError::Invalid("need at least one client and one sample".into()));
    }
    let n = dataset.len();
    if per_client_count > n {
        return Err(DataError::Infeasible(format!(
            "{per_client_count} samples per client from {n} rows"
        )));
    }
    let mut rng = rng_from(seed, &[]);
    let clients = if n_clients * per_client_count <= n {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        perm.chunks(per_client_count)
            .take(n_clients)
            .enumerate()
            .map(|(i, chunk)| ClientPlan {
                client_id: i as u16 + 1,
                labels: all_labels(),
                count: per_client_count,
                indices: chunk.to_vec(),
            })
            .collect()
    } else {
        (0..n_clients)
            .map(|i| ClientPlan {
                client_id: i as u16 + 1,
                labels: all_labels(),
                count: per_client_count,
                indices: index::sample(&mut rng, n, per_client_count).into_vec(),
            })
            .collect()
    };
    Ok(PartitionPlan { clients })
}

/// Label- and quantity-skewed plan. Label sets are dealt round-robin from a
/// seeded permutation of the classes: client `i` takes the next `L_i` labels
/// after the ones dealt to clients before it (wrapping).
pub fn make_noniid_plan(
    dataset: &Dataset,
    n_clients: usize,
    skew: &SkewConfig,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if n_clients == 0 || skew.clients.len() != n_clients {
        return Err(DataError::Invalid(format!(
            "skew config describes {} clients, expected {}",
            skew.clients.len(),
            n_clients
        )));
    }
    let mut rng = rng_from(seed, &[]);
    let mut perm = all_labels();
    perm.shuffle(&mut rng);
    let by_label = dataset.indices_by_label();
    let mut used = vec![false; dataset.len()];

    let mut offset = 0;
    let mut clients = Vec::with_capacity(n_clients);
    for (i, cs) in skew.clients.iter().enumerate() {
        if !(1..=NUM_CLASSES).contains(&cs.label_count) || cs.sample_count == 0 {
            return Err(DataError::Invalid(format!(
                "client {}: label count {} / sample count {}",
                i + 1,
                cs.label_count,
                cs.sample_count
            )));
        }
        let mut labels: Vec<u8> = (0..cs.label_count).map(|j| perm[(offset + j) % NUM_CLASSES]).collect();
        labels.sort_unstable();
        offset += cs.label_count;

        let pool: Vec<usize> = labels
            .iter()
            .flat_map(|&l| by_label[l as usize].iter().copied())
            .filter(|&r| skew.allow_overlap || !used[r])
            .collect();
        if pool.len() < cs.sample_count {
            return Err(DataError::Infeasible(format!(
                "client {} wants {} samples from labels {:?}, only {} available",
                i + 1,
                cs.sample_count,
                labels,
                pool.len()
            )));
        }
        let indices: Vec<usize> = index::sample(&mut rng, pool.len(), cs.sample_count)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        if !skew.allow_overlap {
            for &r in &indices {
                used[r] = true;
            }
        }
        clients.push(ClientPlan {
            client_id: i as u16 + 1,
            labels,
            count: cs.sample_count,
            indices,
        });
    }
    Ok(PartitionPlan { clients })
}

/// Seeded shuffle of `0..n` split into `(eval, rest)` index lists.
pub fn shared_eval_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!("eval fraction {fraction} not in (0, 1)")));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(DataError::Invalid(format!(
            "eval fraction {fraction} of {n} rows leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed, &[]));
    let rest = perm.split_off(k);
    Ok((perm, rest))
}

/// The evaluation split every client (and the server) shares.
pub fn shared_eval_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let (eval, rest) = shared_eval_indices(dataset.len(), fraction, seed)?;
    Ok((dataset.subset(&eval), dataset.subset(&rest)))
}
