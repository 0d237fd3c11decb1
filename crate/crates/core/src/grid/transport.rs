use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ids::ChannelId;

use super::sim::Rank;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkParams {
    /// Probability that a packet is lost.
    pub loss: f64,
    /// Extra delay drawn uniformly from 0..=max_delay ticks.
    pub max_delay: u32,
    /// Probability that a packet is delivered twice.
    pub duplicate: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            loss: 0.0,
            max_delay: 0,
            duplicate: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportConfig {
    /// Ticks without acknowledgement progress before unacked data is resent.
    pub retransmit_interval: u32,
    pub window: u32,
    pub link: LinkParams,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            retransmit_interval: 8,
            window: 32,
            link: LinkParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SendState {
    pub next_seq: u64,
    pub unacked: BTreeMap<u64, Vec<u8>>,
    /// Payloads waiting for window space.
    pub backlog: VecDeque<Vec<u8>>,
    /// Ticks since the last transmission or acknowledgement progress.
    pub timer: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecvState {
    /// Next in-order sequence number expected.
    pub expected: u64,
    pub out_of_order: BTreeMap<u64, Vec<u8>>,
}

/// Everything the transport keeps at the endpoints. In-flight packets are
/// not part of it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndpointState {
    pub channels: BTreeMap<ChannelId, (Rank, Rank)>,
    pub send: BTreeMap<ChannelId, SendState>,
    pub recv: BTreeMap<ChannelId, RecvState>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Packet {
    Data { channel: ChannelId, seq: u64, payload: Vec<u8> },
    Ack { channel: ChannelId, upto: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub sent: u64,
    pub retransmitted: u64,
    pub dropped: u64,
    pub duplicates_suppressed: u64,
    pub delivered: u64,
}

/// Reliable in-order channels over a lossy network: per-channel sequence
/// numbers from 1, cumulative acknowledgements, go-back-N retransmission on
/// a fixed interval measured in ticks.
#[derive(Clone, Debug)]
pub struct Transport {
    config: TransportConfig,
    ends: EndpointState,
    /// (arrival tick, order, packet)
    in_flight: Vec<(u64, u64, Packet)>,
    order: u64,
    tick: u64,
    rng: ChaCha8Rng,
    stats: TransportStats,
    /// Endpoints whose host is gone: nothing arrives there and their
    /// timers are frozen.
    down: BTreeSet<Rank>,
}

impl Transport {
    pub fn new(config: TransportConfig, seed: u64) -> Self {
        Transport {
            config,
            ends: EndpointState {
                channels: BTreeMap::new(),
                send: BTreeMap::new(),
                recv: BTreeMap::new(),
            },
            in_flight: Vec::new(),
            order: 0,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: TransportStats::default(),
            down: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    pub fn set_link(&mut self, link: LinkParams) {
        self.config.link = link;
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn open_channel(&mut self, ch: ChannelId, from: Rank, to: Rank) {
        self.ends.channels.insert(ch, (from, to));
        self.ends.send.insert(
            ch,
            SendState {
                next_seq: 1,
                ..Default::default()
            },
        );
        self.ends.recv.insert(
            ch,
            RecvState {
                expected: 1,
                ..Default::default()
            },
        );
    }

    pub fn set_down(&mut self, rank: Rank, down: bool) {
        if down {
            self.down.insert(rank);
        } else {
            self.down.remove(&rank);
        }
    }

    fn endpoint_down(&self, ch: ChannelId, receiving: bool) -> bool {
        self.ends
            .channels
            .get(&ch)
            .is_some_and(|(from, to)| self.down.contains(if receiving { to } else { from }))
    }

    pub fn channel(&self, ch: ChannelId) -> Result<(Rank, Rank)> {
        self.ends
            .channels
            .get(&ch)
            .copied()
            .ok_or(Error::UnknownChannel(ch))
    }

    pub fn channels(&self) -> impl Iterator<Item = (ChannelId, Rank, Rank)> + '_ {
        self.ends.channels.iter().map(|(c, (f, t))| (*c, *f, *t))
    }

    pub fn endpoint(&self, ch: ChannelId) -> Option<(&SendState, &RecvState)> {
        Some((self.ends.send.get(&ch)?, self.ends.recv.get(&ch)?))
    }

    /// True when every sent payload has been acknowledged.
    pub fn quiescent(&self) -> bool {
        self.ends
            .send
            .values()
            .all(|s| s.unacked.is_empty() && s.backlog.is_empty())
    }

    pub fn send(&mut self, ch: ChannelId, payload: Vec<u8>) -> Result<()> {
        let window = self.config.window as usize;
        let s = self.ends.send.get_mut(&ch).ok_or(Error::UnknownChannel(ch))?;
        if s.unacked.len() >= window {
            s.backlog.push_back(payload);
            return Ok(());
        }
        let seq = s.next_seq;
        s.next_seq += 1;
        if s.unacked.is_empty() {
            s.timer = 0;
        }
        s.unacked.insert(seq, payload.clone());
        self.stats.sent += 1;
        self.transmit(Packet::Data {
            channel: ch,
            seq,
            payload,
        });
        Ok(())
    }

    fn transmit(&mut self, p: Packet) {
        let link = self.config.link;
        if link.loss > 0.0 && self.rng.gen::<f64>() < link.loss {
            self.stats.dropped += 1;
            return;
        }
        let copies = if link.duplicate > 0.0 && self.rng.gen::<f64>() < link.duplicate {
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = if link.max_delay > 0 {
                self.rng.gen_range(0..=link.max_delay) as u64
            } else {
                0
            };
            self.order += 1;
            self.in_flight
                .push((self.tick + 1 + delay, self.order, p.clone()));
        }
    }

    /// Inject a copy of every data packet currently in flight.
    pub fn duplicate_in_flight(&mut self) {
        let copies: Vec<_> = self
            .in_flight
            .iter()
            .filter(|(_, _, p)| matches!(p, Packet::Data { .. }))
            .cloned()
            .collect();
        for (t, _, p) in copies {
            self.order += 1;
            self.in_flight.push((t, self.order, p));
        }
    }

    /// Advance one tick: deliver arrived packets, then run the
    /// retransmission timers. Returns payloads released in order.
    pub fn step(&mut self) -> Vec<(ChannelId, Vec<u8>)> {
        self.tick += 1;
        let now = self.tick;
        let mut arrived: Vec<(u64, u64, Packet)> = Vec::new();
        let mut rest = Vec::with_capacity(self.in_flight.len());
        for item in core::mem::take(&mut self.in_flight) {
            if item.0 <= now {
                arrived.push(item);
            } else {
                rest.push(item);
            }
        }
        self.in_flight = rest;
        arrived.sort_by_key(|(t, o, _)| (*t, *o));

        let mut out = Vec::new();
        for (_, _, p) in arrived {
            let lost = match &p {
                Packet::Data { channel, .. } => self.endpoint_down(*channel, true),
                Packet::Ack { channel, .. } => self.endpoint_down(*channel, false),
            };
            if lost {
                self.stats.dropped += 1;
                continue;
            }
            match p {
                Packet::Data {
                    channel,
                    seq,
                    payload,
                } => {
                    let window = self.config.window as u64;
                    let Some(r) = self.ends.recv.get_mut(&channel) else {
                        continue;
                    };
                    if seq < r.expected || r.out_of_order.contains_key(&seq) {
                        self.stats.duplicates_suppressed += 1;
                    } else if seq == r.expected {
                        out.push((channel, payload));
                        r.expected += 1;
                        while let Some(p) = r.out_of_order.remove(&r.expected) {
                            out.push((channel, p));
                            r.expected += 1;
                        }
                    } else if seq < r.expected + window {
                        r.out_of_order.insert(seq, payload);
                    }
                    let upto = r.expected - 1;
                    self.transmit(Packet::Ack { channel, upto });
                }
                Packet::Ack { channel, upto } => {
                    let Some(s) = self.ends.send.get_mut(&channel) else {
                        continue;
                    };
                    let before = s.unacked.len();
                    s.unacked.retain(|seq, _| *seq > upto);
                    if s.unacked.len() < before {
                        s.timer = 0;
                    }
                    self.refill(channel);
                }
            }
        }
        self.stats.delivered += out.len() as u64;

        let interval = self.config.retransmit_interval;
        let down = &self.down;
        let channels = &self.ends.channels;
        let due: Vec<ChannelId> = self
            .ends
            .send
            .iter_mut()
            .filter(|(c, s)| !s.unacked.is_empty() && !down.contains(&channels[*c].0))
            .filter_map(|(c, s)| {
                s.timer += 1;
                (s.timer >= interval).then(|| {
                    s.timer = 0;
                    *c
                })
            })
            .collect();
        for ch in due {
            let resend: Vec<(u64, Vec<u8>)> = self.ends.send[&ch]
                .unacked
                .iter()
                .map(|(k, v)| (*k, v.clone()))
                .collect();
            for (seq, payload) in resend {
                self.stats.retransmitted += 1;
                self.transmit(Packet::Data {
                    channel: ch,
                    seq,
                    payload,
                });
            }
        }
        out
    }

    fn refill(&mut self, ch: ChannelId) {
        let window = self.config.window as usize;
        loop {
            let s = self.ends.send.get_mut(&ch).unwrap();
            if s.unacked.len() >= window {
                break;
            }
            let Some(payload) = s.backlog.pop_front() else {
                break;
            };
            let seq = s.next_seq;
            s.next_seq += 1;
            s.unacked.insert(seq, payload.clone());
            self.stats.sent += 1;
            self.transmit(Packet::Data {
                channel: ch,
                seq,
                payload,
            });
        }
    }

    /// Endpoint state: sequence counters, unacked buffers, timer progress.
    pub fn endpoints(&self) -> EndpointState {
        self.ends.clone()
    }

    /// Reinstate endpoint state. Whatever was in flight is gone; the
    /// retransmission timers resume where they stood.
    pub fn restore_endpoints(&mut self, state: EndpointState) {
        self.ends = state;
        self.in_flight.clear();
        self.down.clear();
    }

    /// Drop every packet in flight.
    pub fn drop_in_flight(&mut self) -> usize {
        let n = self.in_flight.len();
        self.in_flight.clear();
        n
    }
}
