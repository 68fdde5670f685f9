//! Synchronous FedAVG / FedProx with attachable hooks.
//!
//! The server is rank 0 and clients are ranks `1..=K`. Every round the
//! server broadcasts the global state, each client trains locally and
//! replies with an update, and the server reduces the updates in rank
//! order. Under Paillier the server only multiplies ciphertexts; the
//! clients decrypt the aggregate themselves.

mod client;
mod hooks;
mod server;
mod transport;
pub mod wire;

pub use client::{run_client, ClientOutcome, FedClient};
pub use hooks::{
    paillier_server_aggregate, update_from_local, ClientContext, ClientHook, ClientUpdate,
    GlobalRecorder, HookSet, IdentityHook, PaillierClientHook, ServerContext, ServerHook,
    SparseTopK, UpdateRecorder,
};
pub use server::{run_server, RoundMetrics, ServerOutcome};
pub use transport::{accept_clients, mem_pair, Channel, MemChannel, TcpChannel};
pub use wire::{FedMessage, MessageKind, Payload, WireError};

use std::net::TcpListener;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::{Dataset, Model, ModelError, ParamVector};
use crate::paillier::PaillierError;
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("client shard is empty")]
    EmptyShard,
    #[error("no updates to aggregate")]
    EmptyUpdates,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("round desync: expected {expected}, got {found}")]
    RoundDesync { expected: u32, found: u32 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Clients send `w_local − w_global`; the server adds the weighted mean.
    #[default]
    WeightedDelta,
    /// Clients send `w_local`; the weighted mean replaces the global model.
    WeightedParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub rounds: u32,
    pub clients: u32,
    pub local_epochs: usize,
    /// `None` trains on the whole shard as one batch.
    pub local_batch: Option<usize>,
    pub lr: f64,
    pub aggregation: Aggregation,
    pub fedprox_mu: f64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            clients: 2,
            local_epochs: 1,
            local_batch: None,
            lr: 0.1,
            aggregation: Aggregation::WeightedDelta,
            fedprox_mu: 0.0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |m: String| Err(FedError::InvalidConfig(m));
        if self.clients == 0 {
            return bad("need at least one client".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1".into());
        }
        if self.local_batch == Some(0) {
            return bad("local_batch must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {} is invalid", self.lr));
        }
        if !(self.fedprox_mu >= 0.0) || !self.fedprox_mu.is_finite() {
            return bad(format!(
                "fedprox_mu {} must be non-negative",
                self.fedprox_mu
            ));
        }
        Ok(())
    }
}

/// Runs local training from `global` and returns the update and shard size.
pub fn client_local_update(
    model: &Model,
    global: &ParamVector,
    shard: &Dataset,
    cfg: &FedConfig,
    rng: &mut Rng,
) -> Result<(ParamVector, u64), FedError> {
    if shard.is_empty() {
        return Err(FedError::EmptyShard);
    }
    let mut local = model.with_params(global)?;
    let n = shard.len();
    let batch = cfg.local_batch.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.local_epochs {
        if batch < n {
            order.shuffle(rng);
        }
        for idx in order.chunks(batch) {
            let part = shard.subset(idx);
            let (_, mut grad) = local.loss_and_grad(&part.x, &part.y)?;
            let w = local.params();
            if cfg.fedprox_mu > 0.0 {
                grad.axpy(cfg.fedprox_mu, &w.sub(global)?)?;
            }
            local.set_params(&crate::model::sgd_step(&w, &grad, cfg.lr)?)?;
        }
    }
    let update = update_from_local(cfg.aggregation, &local.params(), global)?;
    Ok((update, n as u64))
}

/// Applies server hooks around the sample-weighted mean of the updates.
pub fn server_aggregate(
    updates: Vec<ClientUpdate>,
    hooks: &mut [Box<dyn ServerHook>],
    ctx: &ServerContext,
) -> Result<ParamVector, FedError> {
    let mut updates = updates;
    for h in hooks.iter_mut() {
        updates = h.pre_aggregate(ctx, updates)?;
    }
    let mean = weighted_mean(&updates)?;
    let mut global = apply_aggregate(ctx.config.aggregation, ctx.global, mean)?;
    for h in hooks.iter_mut() {
        global = h.post_aggregate(ctx, global)?;
    }
    Ok(global)
}

/// Σ wₖ uₖ with wₖ = nₖ / Σ nⱼ, summed in rank order.
pub fn weighted_mean(updates: &[ClientUpdate]) -> Result<ParamVector, FedError> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.rank);
    let first = sorted.first().ok_or(FedError::EmptyUpdates)?;
    let total: u64 = sorted.iter().map(|u| u.n_samples).sum();
    if total == 0 {
        return Err(FedError::Protocol("total sample count is zero".into()));
    }
    let mut acc = ParamVector::zeros_like(&first.update);
    for u in sorted {
        acc.axpy(u.n_samples as f64 / total as f64, &u.update)?;
    }
    Ok(acc)
}

fn apply_aggregate(
    aggregation: Aggregation,
    global: Option<&ParamVector>,
    mean: ParamVector,
) -> Result<ParamVector, FedError> {
    match aggregation {
        Aggregation::WeightedParams => Ok(mean),
        Aggregation::WeightedDelta => {
            let g = global.ok_or_else(|| {
                FedError::Protocol("delta aggregation needs the global model".into())
            })?;
            Ok(g.add(&mean)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    /// Loopback TCP on an ephemeral port.
    Tcp,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub model: Model,
    pub server: ServerOutcome,
    pub clients: Vec<ClientOutcome>,
}

/// Runs server and clients in this process, one thread per client.
///
/// Client `k` (rank `k + 1`) trains on `shards[k]` with randomness from
/// the `client{rank}` stream of `seeds`.
pub fn run_federation(
    server_model: &Model,
    shards: &[Dataset],
    cfg: &FedConfig,
    mut hooks: HookSet,
    transport: Transport,
    seeds: &SeedTree,
) -> Result<FedOutcome, FedError> {
    cfg.validate()?;
    if shards.len() != cfg.clients as usize {
        return Err(FedError::InvalidConfig(format!(
            "{} shards for {} clients",
            shards.len(),
            cfg.clients
        )));
    }
    if shards.iter().any(Dataset::is_empty) {
        return Err(FedError::EmptyShard);
    }
    let mut clients = Vec::with_capacity(shards.len());
    for (i, shard) in shards.iter().enumerate() {
        let rank = i as u32 + 1;
        let mut c = FedClient::new(rank, server_model.clone(), shard, cfg.clone(), seeds);
        c.hooks = hooks.take_client_hooks(rank);
        c.paillier = hooks.paillier.clone();
        clients.push(c);
    }
    let pk = hooks.paillier.as_ref().map(|p| p.public_key().clone());

    let (server_side, client_side): (Vec<Box<dyn Channel>>, Vec<Box<dyn Channel>>) = match transport
    {
        Transport::InProcess => {
            let mut s: Vec<Box<dyn Channel>> = Vec::new();
            let mut c: Vec<Box<dyn Channel>> = Vec::new();
            for _ in 0..shards.len() {
                let (a, b) = mem_pair();
                s.push(Box::new(a));
                c.push(Box::new(b));
            }
            (s, c)
        }
        Transport::Tcp => {
            let listener =
                TcpListener::bind("127.0.0.1:0").map_err(|e| FedError::Transport(e.to_string()))?;
            let addr = listener
                .local_addr()
                .map_err(|e| FedError::Transport(e.to_string()))?;
            let mut c: Vec<Box<dyn Channel>> = Vec::new();
            for _ in 0..shards.len() {
                c.push(Box::new(TcpChannel::connect(addr, 20)?));
            }
            (accept_clients(&listener, shards.len())?, c)
        }
    };

    std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .into_iter()
            .zip(client_side)
            .map(|(client, mut ch)| scope.spawn(move || run_client(client, ch.as_mut())))
            .collect();
        let server = run_server(
            server_model,
            cfg,
            &mut hooks.server,
            pk.as_ref(),
            server_side,
        );
        let mut outcomes = Vec::new();
        let mut first_err = None;
        for h in handles {
            match h.join() {
                Ok(Ok(o)) => outcomes.push(o),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(FedError::Transport("client thread panicked".into()));
                }
            }
        }
        let server = server?;
        if let Some(e) = first_err {
            return Err(e);
        }
        // Under encryption only the clients know the final model.
        let final_params = match &server.global {
            Some(g) => g.clone(),
            None => outcomes[0].global.clone(),
        };
        Ok(FedOutcome {
            model: server_model.with_params(&final_params)?,
            server,
            clients: outcomes,
        })
    })
}

/// Splits a dataset into `k` contiguous shards of near-equal size.
pub fn shard_dataset(data: &Dataset, k: usize) -> Vec<Dataset> {
    let n = data.len();
    (0..k)
        .map(|i| {
            let lo = i * n / k;
            let hi = (i + 1) * n / k;
            data.subset(&(lo..hi).collect::<Vec<_>>())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Loss, Tensor};
    use crate::rng::seeded;
    use rand::Rng as _;

    fn upd(rank: u32, n: u64, v: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            rank,
            n_samples: n,
            update: ParamVector::flat(v),
        }
    }

    #[test]
    fn weighted_mean_examples() {
        let m = weighted_mean(&[upd(1, 1, vec![0.0]), upd(2, 3, vec![4.0])]).unwrap();
        assert_eq!(m.values(), &[3.0]);
        let same =
            weighted_mean(&[upd(1, 5, vec![1.5, -2.0]), upd(2, 9, vec![1.5, -2.0])]).unwrap();
        assert!((same.values()[0] - 1.5).abs() < 1e-15 && (same.values()[1] + 2.0).abs() < 1e-15);
        assert_eq!(weighted_mean(&[]).unwrap_err(), FedError::EmptyUpdates);
    }

    #[test]
    fn weighted_mean_matches_direct_sum_and_ignores_order() {
        let mut rng = seeded(3);
        let ups: Vec<ClientUpdate> = (1..=5)
            .map(|r| {
                upd(
                    r,
                    rng.gen_range(1..50),
                    (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let total: u64 = ups.iter().map(|u| u.n_samples).sum();
        let got = weighted_mean(&ups).unwrap();
        for j in 0..6 {
            let want: f64 = ups
                .iter()
                .map(|u| u.n_samples as f64 * u.update.values()[j])
                .sum::<f64>()
                / total as f64;
            assert!((got.values()[j] - want).abs() < 1e-12);
        }
        let mut rev = ups.clone();
        rev.reverse();
        assert_eq!(weighted_mean(&rev).unwrap(), got);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        assert!(weighted_mean(&[upd(1, 1, vec![0.0]), upd(2, 1, vec![0.0, 1.0])]).is_err());
    }

    fn toy() -> (Model, Dataset) {
        let mut rng = seeded(1);
        let model = Model::mlp(&[3, 4, 2], Activation::Tanh, Loss::CrossEntropy, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = (0..12).map(|i| i % 2).collect();
        (model, Dataset::from_rows(&rows, y).unwrap())
    }

    #[test]
    fn single_full_batch_step_is_minus_lr_grad() {
        let (model, data) = toy();
        let cfg = FedConfig {
            lr: 0.3,
            ..FedConfig::default()
        };
        let g0 = model.params();
        let (u, n) = client_local_update(&model, &g0, &data, &cfg, &mut seeded(0)).unwrap();
        assert_eq!(n, 12);
        let (_, grad) = model.loss_and_grad(&data.x, &data.y).unwrap();
        for (a, b) in u.values().iter().zip(grad.values()) {
            assert!((a + 0.3 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn proximal_term_shrinks_updates() {
        let (model, data) = toy();
        let mut last = f64::INFINITY;
        for mu in [0.0, 1.0, 10.0, 100.0] {
            let cfg = FedConfig {
                lr: 0.005,
                local_epochs: 20,
                local_batch: Some(3),
                fedprox_mu: mu,
                ..FedConfig::default()
            };
            let (u, _) =
                client_local_update(&model, &model.params(), &data, &cfg, &mut seeded(2)).unwrap();
            assert!(u.norm() < last, "mu={mu}");
            last = u.norm();
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let (model, _) = toy();
        let empty = Dataset::new(Tensor::zeros(vec![0, 3]), vec![]).unwrap();
        let err = client_local_update(
            &model,
            &model.params(),
            &empty,
            &FedConfig::default(),
            &mut seeded(0),
        );
        assert_eq!(err.unwrap_err(), FedError::EmptyShard);
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let (model, data) = toy();
        let cfg = FedConfig {
            rounds: 0,
            ..FedConfig::default()
        };
        let out = run_federation(
            &model,
            &shard_dataset(&data, 2),
            &cfg,
            HookSet::new(),
            Transport::InProcess,
            &SeedTree::new(0),
        )
        .unwrap();
        assert_eq!(out.model.params(), model.params());
        assert!(out.server.rounds.is_empty());
    }
}
