//! Rank-0 protocol loop. Holds at most a public key.

use num_bigint::BigUint;

use super::hooks::{paillier_server_aggregate, ClientUpdate, ServerContext, ServerHook};
use super::wire::{FedMessage, MessageKind, Payload};
use super::{server_aggregate, Channel, FedConfig, FedError};
use crate::model::{Model, ParamVector};
use crate::paillier::PaillierPublicKey;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    /// Sample-weighted mean of the clients' losses at the round's global model.
    pub global_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerOutcome {
    /// Final global parameters, `None` when aggregation was encrypted.
    pub global: Option<ParamVector>,
    pub rounds: Vec<RoundMetrics>,
    /// Weighted client loss at the final global model.
    pub final_loss: f64,
}

struct Peer {
    rank: u32,
    ch: Box<dyn Channel>,
}

fn handshake(channels: Vec<Box<dyn Channel>>, cfg: &FedConfig) -> Result<Vec<Peer>, FedError> {
    let k = cfg.clients;
    if channels.len() != k as usize {
        return Err(FedError::InvalidConfig(format!(
            "{} connections for {k} clients",
            channels.len()
        )));
    }
    let mut requested = Vec::with_capacity(channels.len());
    let mut chans = Vec::with_capacity(channels.len());
    for mut ch in channels {
        let hello = ch.recv()?;
        if hello.kind != MessageKind::Hello {
            return Err(FedError::Protocol(format!(
                "expected Hello, got {:?}",
                hello.kind
            )));
        }
        if hello.rank > k {
            return Err(FedError::Protocol(format!(
                "rank {} outside 1..={k}",
                hello.rank
            )));
        }
        requested.push(hello.rank);
        chans.push(ch);
    }
    let mut taken = vec![false; k as usize + 1];
    for &r in requested.iter().filter(|&&r| r != 0) {
        if taken[r as usize] {
            return Err(FedError::Protocol(format!("rank {r} claimed twice")));
        }
        taken[r as usize] = true;
    }
    // rank 0 in a Hello asks for the lowest free rank, in arrival order
    let mut next = 1;
    let mut peers = Vec::with_capacity(chans.len());
    for (ch, r) in chans.into_iter().zip(requested) {
        let rank = if r == 0 {
            while taken[next] {
                next += 1;
            }
            taken[next] = true;
            next as u32
        } else {
            r
        };
        peers.push(Peer { rank, ch });
    }
    peers.sort_by_key(|p| p.rank);
    for p in &mut peers {
        // the reply carries the assigned rank and the number of rounds
        p.ch.send(&FedMessage::new(MessageKind::Hello, cfg.rounds, p.rank))?;
    }
    Ok(peers)
}

fn expect(msg: &FedMessage, kind: MessageKind, round: u32, rank: u32) -> Result<(), FedError> {
    if msg.kind != kind {
        return Err(FedError::Protocol(format!(
            "rank {rank}: expected {kind:?}, got {:?}",
            msg.kind
        )));
    }
    if msg.round != round {
        return Err(FedError::RoundDesync {
            expected: round,
            found: msg.round,
        });
    }
    if msg.rank != rank {
        return Err(FedError::Protocol(format!(
            "message from rank {} on rank {rank}'s channel",
            msg.rank
        )));
    }
    Ok(())
}

fn weighted_loss(pairs: &[(u64, f64)]) -> f64 {
    let total: u64 = pairs.iter().map(|p| p.0).sum();
    pairs.iter().map(|(n, l)| *n as f64 * l).sum::<f64>() / total as f64
}

/// Runs `cfg.rounds` synchronous rounds over the given client channels.
pub fn run_server(
    model: &Model,
    cfg: &FedConfig,
    hooks: &mut [Box<dyn ServerHook>],
    pk: Option<&PaillierPublicKey>,
    channels: Vec<Box<dyn Channel>>,
) -> Result<ServerOutcome, FedError> {
    cfg.validate()?;
    let mut peers = handshake(channels, cfg)?;
    let mut global = Some(model.params());
    let mut pending: Option<(Vec<BigUint>, u64)> = None;
    let mut rounds = Vec::new();
    let update_kind = if pk.is_some() {
        MessageKind::EncUpdate
    } else {
        MessageKind::LocalUpdate
    };

    for r in 0..=cfg.rounds {
        let sync = match (&global, &pending) {
            (Some(g), _) => FedMessage::new(MessageKind::GlobalModel, r, 0)
                .with_payload(Payload::Params(g.values().to_vec())),
            (None, Some((agg, total))) => FedMessage::new(MessageKind::EncUpdate, r, 0)
                .with_samples(*total)
                .with_payload(Payload::Ciphers(agg.clone())),
            (None, None) => unreachable!("encrypted rounds always leave an aggregate"),
        };
        for p in &mut peers {
            p.ch.send(&sync)?;
        }

        if r == cfg.rounds {
            let mut losses = Vec::with_capacity(peers.len());
            for p in &mut peers {
                let bye = p.ch.recv()?;
                expect(&bye, MessageKind::Bye, r, p.rank)?;
                losses.push((bye.n_samples, bye.metric));
            }
            return Ok(ServerOutcome {
                global,
                rounds,
                final_loss: weighted_loss(&losses),
            });
        }

        let mut msgs = Vec::with_capacity(peers.len());
        for p in &mut peers {
            let m = p.ch.recv()?;
            expect(&m, update_kind, r, p.rank)?;
            if m.n_samples == 0 {
                return Err(FedError::Protocol(format!(
                    "rank {} reported zero samples",
                    p.rank
                )));
            }
            msgs.push(m);
        }
        let losses: Vec<(u64, f64)> = msgs.iter().map(|m| (m.n_samples, m.metric)).collect();
        rounds.push(RoundMetrics {
            round: r,
            global_loss: weighted_loss(&losses),
        });

        let ctx = ServerContext {
            round: r,
            global: global.as_ref(),
            config: cfg,
        };
        match pk {
            None => {
                let g = global.as_ref().expect("plaintext global");
                let mut updates = Vec::with_capacity(msgs.len());
                for m in msgs {
                    let Payload::Params(v) = m.payload else {
                        return Err(FedError::Protocol(format!(
                            "rank {} sent a non-parameter payload",
                            m.rank
                        )));
                    };
                    updates.push(ClientUpdate {
                        rank: m.rank,
                        n_samples: m.n_samples,
                        update: g.with_values(v)?,
                    });
                }
                let next = server_aggregate(updates, hooks, &ctx)?;
                global = Some(next);
            }
            Some(pk) => {
                let senders: Vec<(u32, u64)> = msgs.iter().map(|m| (m.rank, m.n_samples)).collect();
                for h in hooks.iter_mut() {
                    h.observe_encrypted(&ctx, &senders);
                }
                let mut enc = Vec::with_capacity(msgs.len());
                for m in msgs {
                    let Payload::Ciphers(cs) = m.payload else {
                        return Err(FedError::Protocol(format!(
                            "rank {} sent a plaintext payload",
                            m.rank
                        )));
                    };
                    let cs = cs
                        .into_iter()
                        .map(|c| pk.adopt(c))
                        .collect::<Result<Vec<_>, _>>()?;
                    enc.push((cs, m.n_samples));
                }
                let agg = paillier_server_aggregate(pk, &enc)?;
                let total = enc.iter().map(|e| e.1).sum();
                pending = Some((agg.iter().map(|c| c.value().clone()).collect(), total));
                global = None;
            }
        }
    }
    unreachable!("loop returns at the final round")
}
