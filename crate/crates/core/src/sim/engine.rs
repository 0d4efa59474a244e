use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rustc_hash::FxHashMap;

use super::config::{Scenario, SimConfig, Timing};
use super::metrics::{ChannelCounters, PsnymRatio, PsnymRecord, RunReport, WaitRecord};
use super::topology::{self, Ring, Trajectory};
use crate::crypto::PcId;
use crate::messages::VehicleStatus;
use crate::receiver::{Receiver, ReceiverConfig, ValidationKind, ValidationOutcome};
use crate::sender::{AdversaryState, AdversaryStrategy, SenderConfig, SenderState};
use crate::store::{MessageStore, MsgId};
use crate::Micros;

/// Fixed propagation delay.
pub const PROPAGATION_US: Micros = 1;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_ADVERSARY: u64 = 3;
const STREAM_NODE_BASE: u64 = 16;

#[derive(Debug)]
enum Kind {
    Deliver { msg: MsgId, rx: Vec<u32> },
    CpuDone(u32),
    PcRotation(u32),
    Tx(u32),
    AdvTx(u32),
    Depart(u32),
    Arrival { eastbound: bool },
    AttackStart,
    Sample,
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::Deliver { .. } => 0,
            Kind::CpuDone(_) => 1,
            Kind::PcRotation(_) => 2,
            Kind::Tx(_) => 3,
            Kind::AdvTx(_) => 4,
            Kind::Depart(_) => 5,
            Kind::Arrival { .. } => 6,
            Kind::AttackStart => 7,
            Kind::Sample => 8,
        }
    }

    fn key(&self) -> u64 {
        match *self {
            Kind::Deliver { msg, .. } => u64::from(msg),
            Kind::CpuDone(n) | Kind::PcRotation(n) | Kind::Tx(n) | Kind::AdvTx(n) | Kind::Depart(n) => u64::from(n),
            Kind::Arrival { eastbound } => u64::from(eastbound),
            Kind::AttackStart | Kind::Sample => 0,
        }
    }
}

#[derive(Debug)]
struct Event {
    t: Micros,
    rank: u8,
    key: u64,
    seq: u64,
    kind: Kind,
}

impl Event {
    fn order(&self) -> (Micros, u8, u64, u64) {
        (self.t, self.rank, self.key, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.order() == other.order()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.order().cmp(&self.order())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Benign,
    Adversary,
}

#[derive(Clone, Copy, Debug, Default)]
struct PcTrack {
    first_seen: Option<Micros>,
    first_validated: Option<Micros>,
    close: bool,
}

struct Node {
    role: Role,
    ring: Option<Ring>,
    traj: Trajectory,
    active: bool,
    depart_at: Micros,
    sender: Option<SenderState>,
    receiver: Option<Receiver>,
    adversary: Option<AdversaryState>,
    cpu_busy_until: Micros,
    tracked: bool,
    psnyms: FxHashMap<PcId, PcTrack>,
}

pub(crate) struct Engine<'a> {
    cfg: &'a SimConfig,
    tm: Timing,
    audit: bool,
    run_seed: u64,
    now: Micros,
    seq: u64,
    heap: BinaryHeap<Event>,
    store: MessageStore,
    /// Whether each stored message came from its pseudonym's holder.
    legit: Vec<bool>,
    nodes: Vec<Node>,
    /// Nodes currently on the road, in arrival order.
    active: Vec<u32>,
    /// Static scenario: receivers within range of each node.
    neighbours: Vec<Vec<u32>>,
    benign_receivers: u64,
    channel_rng: ChaCha8Rng,
    traffic_rng: ChaCha8Rng,
    adversary_rng: ChaCha8Rng,
    pending_adversaries: u32,
    report: RunReport,
    neighbour_samples: (f64, u64),
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Engine<'a> {
    pub(crate) fn new(cfg: &'a SimConfig, tm: Timing, run_id: u32, audit: bool) -> Self {
        let run_seed = cfg.seed.wrapping_add(u64::from(run_id));
        Self {
            cfg,
            tm,
            audit,
            run_seed,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            store: MessageStore::new(),
            legit: Vec::new(),
            nodes: Vec::new(),
            active: Vec::new(),
            neighbours: Vec::new(),
            benign_receivers: 0,
            channel_rng: stream(run_seed, STREAM_CHANNEL),
            traffic_rng: stream(run_seed, STREAM_TRAFFIC),
            adversary_rng: stream(run_seed, STREAM_ADVERSARY),
            pending_adversaries: 0,
            report: RunReport {
                run_id,
                seed: run_seed,
                measure_start: tm.measure_start,
                end: tm.end,
                waiting: Vec::new(),
                psnym: Vec::new(),
                ratios: Vec::new(),
                channel: ChannelCounters::default(),
                mean_neighbors: 0.0,
                fictitious_accepted: 0,
            },
            neighbour_samples: (0.0, 0),
        }
    }

    fn push(&mut self, t: Micros, kind: Kind) {
        debug_assert!(t >= self.now, "event scheduled in the past");
        if t >= self.tm.end {
            return;
        }
        self.seq += 1;
        self.heap.push(Event {
            t,
            rank: kind.rank(),
            key: kind.key(),
            seq: self.seq,
            kind,
        });
    }

    /// Pseudonyms of all nodes change when benign beaconing starts.
    fn sender_cfg(&self) -> SenderConfig {
        SenderConfig {
            slot_us: self.tm.slot_us,
            pc_lifetime: self.tm.pc_lifetime_us,
            pc_epoch: self.tm.benign_start - self.tm.slot_us,
            alpha: self.cfg.effective_alpha(),
            checkpoint_stride: self.cfg.checkpoint_stride,
        }
    }

    fn node_rng(&self, id: u32, which: u64) -> ChaCha8Rng {
        stream(self.run_seed, STREAM_NODE_BASE + 3 * u64::from(id) + which)
    }

    fn new_benign(&mut self, ring: Option<Ring>, traj: Trajectory, depart_at: Micros, tracked: bool) -> u32 {
        let id = self.nodes.len() as u32;
        let sender = SenderState::new(self.sender_cfg(), id, self.now.max(self.tm.benign_start), self.node_rng(id, 0));
        let receiver = Receiver::new(
            ReceiverConfig {
                scheme: self.cfg.scheme,
                slot_us: self.tm.slot_us,
                t_vrfc: self.tm.t_vrfc_us,
                queue_cap: self.cfg.queue_cap,
            },
            self.node_rng(id, 1),
        );
        self.nodes.push(Node {
            role: Role::Benign,
            ring,
            traj,
            active: true,
            depart_at,
            sender: Some(sender),
            receiver: Some(receiver),
            adversary: None,
            cpu_busy_until: self.now,
            tracked,
            psnyms: FxHashMap::default(),
        });
        self.active.push(id);
        id
    }

    fn schedule_first_tx(&mut self, id: u32) {
        let start = self.now.max(self.tm.benign_start);
        let s = self.nodes[id as usize].sender.as_ref().expect("benign node");
        let t = s.next_tx_at_or_after(start);
        let rot = s.active_pc().valid_to;
        if let Some(r) = self.nodes[id as usize].receiver.as_mut() {
            r.set_t_next(t);
        }
        self.push(t, Kind::Tx(id));
        self.push(rot, Kind::PcRotation(id));
    }

    fn make_adversary(&mut self, id: u32) {
        // Fake pseudonyms claim validity from the start of the attack, so the
        // flood queued before benign nodes start does not expire with it.
        let cfg = SenderConfig {
            pc_epoch: self.tm.warmup_us - self.tm.slot_us,
            ..self.sender_cfg()
        };
        let rng = self.node_rng(id, 2);
        let node = &mut self.nodes[id as usize];
        node.role = Role::Adversary;
        node.sender = None;
        node.receiver = None;
        node.tracked = false;
        node.psnyms = FxHashMap::default();
        node.adversary = Some(AdversaryState::new(cfg, rng));
        let start = self.now.max(self.tm.warmup_us);
        let phase = self.adversary_rng.gen_range(0..self.tm.adv_period_us);
        self.push(start + phase, Kind::AdvTx(id));
    }

    fn setup_static(&mut self) {
        let mut rng = stream(self.run_seed, STREAM_PLACEMENT);
        let layout = topology::place_static(self.cfg, &mut rng);
        for (ring, traj) in layout {
            if ring == Ring::Adversary {
                let id = self.nodes.len() as u32;
                self.nodes.push(Node {
                    role: Role::Benign,
                    ring: Some(ring),
                    traj,
                    active: true,
                    depart_at: Micros::MAX,
                    sender: None,
                    receiver: None,
                    adversary: None,
                    cpu_busy_until: 0,
                    tracked: false,
                    psnyms: FxHashMap::default(),
                });
                self.active.push(id);
                self.make_adversary(id);
            } else {
                let id = self.new_benign(Some(ring), traj, Micros::MAX, ring == Ring::Centre);
                self.schedule_first_tx(id);
            }
        }
        let n = self.nodes.len();
        self.neighbours = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        j != i && self.nodes[j].receiver.is_some() && self.nodes[i].traj.distance(&self.nodes[j].traj, 0) <= self.cfg.range
                    })
                    .map(|j| j as u32)
                    .collect()
            })
            .collect();
        self.benign_receivers = self.nodes.iter().filter(|n| n.receiver.is_some()).count() as u64;
        self.report.mean_neighbors = self.neighbours[0].len() as f64;
    }

    fn setup_highway(&mut self) {
        self.push(0, Kind::Arrival { eastbound: true });
        self.push(0, Kind::Arrival { eastbound: false });
        if self.cfg.n_adv > 0 {
            self.push(self.tm.warmup_us, Kind::AttackStart);
        }
        self.push(self.tm.measure_start, Kind::Sample);
    }

    pub(crate) fn run(mut self) -> RunReport {
        match self.cfg.scenario {
            Scenario::Static => self.setup_static(),
            Scenario::Highway => self.setup_highway(),
        }
        while let Some(ev) = self.heap.pop() {
            debug_assert!(ev.t >= self.now);
            self.now = ev.t;
            match ev.kind {
                Kind::Deliver { msg, rx } => self.on_deliver(msg, &rx),
                Kind::CpuDone(n) => self.on_cpu_done(n),
                Kind::PcRotation(n) => self.on_rotation(n),
                Kind::Tx(n) => self.on_tx(n),
                Kind::AdvTx(n) => self.on_adv_tx(n),
                Kind::Depart(n) => self.on_depart(n),
                Kind::Arrival { eastbound } => self.on_arrival(eastbound),
                Kind::AttackStart => self.on_attack_start(),
                Kind::Sample => self.on_sample(),
            }
        }
        self.now = self.tm.end;
        self.finish()
    }

    fn status(&self, id: u32, t: Micros) -> VehicleStatus {
        let tr = &self.nodes[id as usize].traj;
        let (x, y) = tr.at(t);
        VehicleStatus {
            x,
            y,
            speed: tr.vx.abs(),
            heading: if tr.vx < 0.0 { std::f64::consts::PI } else { 0.0 },
        }
    }

    /// Runs the channel for a transmission by `tx` and schedules delivery.
    fn broadcast(&mut self, tx: u32, msg: MsgId, lossy: bool) {
        let mut rx = Vec::new();
        let tx_traj = self.nodes[tx as usize].traj;
        let ch = &mut self.report.channel;
        let mut consider = |j: u32, node: &mut Node, dist: f64, rng: &mut ChaCha8Rng, legit_pc: Option<PcId>| {
            if dist > self.cfg.range {
                ch.out_of_range += 1;
                return;
            }
            if let (Some(pc), true) = (legit_pc, node.tracked && dist < self.cfg.pair_filter) {
                node.psnyms.entry(pc).or_default().close = true;
            }
            if lossy && rng.gen::<f64>() < self.cfg.pr_loss {
                ch.lost += 1;
            } else {
                ch.delivered += 1;
                rx.push(j);
            }
        };
        let legit_pc = self.legit[msg as usize].then(|| self.store.get(msg).pc());
        match self.cfg.scenario {
            Scenario::Static => {
                let others = self.benign_receivers - u64::from(self.nodes[tx as usize].receiver.is_some());
                ch.attempts += others;
                let list = &self.neighbours[tx as usize];
                for &j in list {
                    let node = &mut self.nodes[j as usize];
                    let d = tx_traj.distance(&node.traj, self.now);
                    consider(j, node, d, &mut self.channel_rng, legit_pc);
                }
                ch.out_of_range += others - list.len() as u64;
            }
            Scenario::Highway => {
                for &j in &self.active {
                    let node = &mut self.nodes[j as usize];
                    if j == tx || node.receiver.is_none() {
                        continue;
                    }
                    ch.attempts += 1;
                    let d = tx_traj.distance(&node.traj, self.now);
                    consider(j, node, d, &mut self.channel_rng, legit_pc);
                }
            }
        }
        if tx != 0 && self.cfg.scenario == Scenario::Static && rx.contains(&0) && legit_pc.is_some() {
            self.report.channel.delivered_to_centre += 1;
        }
        if !rx.is_empty() {
            self.push(self.now + PROPAGATION_US, Kind::Deliver { msg, rx });
        }
    }

    fn on_tx(&mut self, id: u32) {
        let node = &self.nodes[id as usize];
        if !node.active || node.role != Role::Benign {
            return;
        }
        let status = self.status(id, self.now);
        let node = &mut self.nodes[id as usize];
        let sender = node.sender.as_mut().expect("benign node sends");
        let built = sender.build_beacon(self.now, status);
        let next = sender.next_tx_after(self.now);
        if let Some(r) = node.receiver.as_mut() {
            r.set_t_next(next);
        }
        self.push(next, Kind::Tx(id));
        let Ok(m) = built else { return };
        if self.cfg.adversary_strategy == AdversaryStrategy::ReplayValidPc {
            self.overhear(id, &m);
        }
        let msg = self.store.insert(m);
        self.legit.push(true);
        self.report.channel.transmissions += 1;
        self.broadcast(id, msg, true);
    }

    fn overhear(&mut self, tx: u32, m: &crate::messages::BeaconMessage) {
        let t = self.nodes[tx as usize].traj;
        let now = self.now;
        for &a in &self.active {
            let node = &mut self.nodes[a as usize];
            if let Some(adv) = node.adversary.as_mut() {
                if t.distance(&node.traj, now) <= self.cfg.range {
                    adv.overhear(m.beacon.pc, m.beacon.disclosed_key);
                }
            }
        }
    }

    fn on_adv_tx(&mut self, id: u32) {
        if !self.nodes[id as usize].active {
            return;
        }
        let status = self.status(id, self.now);
        let strategy = self.cfg.adversary_strategy;
        let adv = self.nodes[id as usize].adversary.as_mut().expect("adversary node");
        let m = adv.adversary_build(self.now, strategy, status);
        let msg = self.store.insert(m);
        self.legit.push(false);
        self.report.channel.adversary_transmissions += 1;
        self.broadcast(id, msg, false);
        self.push(self.now + self.tm.adv_period_us, Kind::AdvTx(id));
    }

    fn on_deliver(&mut self, msg: MsgId, rx: &[u32]) {
        let legit = self.legit[msg as usize];
        let pc = self.store.get(msg).pc();
        for &j in rx {
            let node = &mut self.nodes[j as usize];
            if !node.active {
                continue;
            }
            let Some(r) = node.receiver.as_mut() else { continue };
            r.on_receive(&self.store, msg, self.now);
            if legit && node.tracked {
                node.psnyms.entry(pc).or_default().first_seen.get_or_insert(self.now);
            }
            self.after_pipeline(j);
        }
    }

    fn on_cpu_done(&mut self, id: u32) {
        let node = &mut self.nodes[id as usize];
        if !node.active {
            return;
        }
        debug_assert_eq!(node.cpu_busy_until, self.now);
        let Some(r) = node.receiver.as_mut() else { return };
        r.finish_job(&self.store, self.now);
        self.after_pipeline(id);
    }

    /// Consumes validation outcomes of `id` and keeps its CPU busy.
    fn after_pipeline(&mut self, id: u32) {
        loop {
            let r = self.nodes[id as usize].receiver.as_mut().expect("receiving node");
            let outcomes: Vec<ValidationOutcome> = r.drain_outcomes().collect();
            for o in &outcomes {
                self.record(id, o);
            }
            let node = &mut self.nodes[id as usize];
            let r = node.receiver.as_mut().expect("receiving node");
            if !r.is_idle() || !r.has_work() {
                break;
            }
            // Selection can also drop expired elements, so loop to collect them.
            if let Some(job) = r.start_next(&self.store, self.now) {
                node.cpu_busy_until = self.now + job.cost;
                self.push(self.now + job.cost, Kind::CpuDone(id));
            }
        }
        if self.audit {
            let r = self.nodes[id as usize].receiver.as_ref().expect("receiving node");
            if let Err(e) = r.check_invariants(&self.store) {
                panic!("receiver {id} at {}: {e}", self.now);
            }
        }
    }

    fn record(&mut self, id: u32, o: &ValidationOutcome) {
        let Some(kind) = o.accepted() else { return };
        if !self.legit[o.msg as usize] {
            self.report.fictitious_accepted += 1;
            return;
        }
        let node = &mut self.nodes[id as usize];
        if kind == ValidationKind::SignatureVerified {
            if let Some(s) = node.sender.as_mut() {
                let m = self.store.get(o.msg);
                s.record_verified(m.digest, m.timestamp(), kind);
            }
        }
        if !node.tracked {
            return;
        }
        node.psnyms.entry(o.pc).or_default().first_validated.get_or_insert(o.at);
        let counted = match self.cfg.scenario {
            Scenario::Static => o.received_at >= self.tm.measure_start,
            Scenario::Highway => {
                o.received_at >= self.tm.measure_start && topology::in_measure_zone(self.cfg, node.traj.at(o.received_at).0)
            }
        };
        if counted {
            self.report.waiting.push(WaitRecord {
                node: id,
                pc: o.pc,
                received_at: o.received_at,
                validated_at: o.at,
                kind,
            });
        }
    }

    fn on_rotation(&mut self, id: u32) {
        let node = &mut self.nodes[id as usize];
        let Some(s) = node.sender.as_mut() else { return };
        if node.active && s.pc_rotation(self.now) {
            let next = s.active_pc().valid_to;
            self.push(next, Kind::PcRotation(id));
        }
    }

    fn on_arrival(&mut self, eastbound: bool) {
        let lane = self.traffic_rng.gen_range(0..topology::LANE_SPEEDS.len());
        let (traj, depart) = topology::highway_vehicle(self.cfg, eastbound, lane, self.now);
        if self.pending_adversaries > 0 {
            self.pending_adversaries -= 1;
            let id = self.new_benign(None, traj, depart, false);
            self.make_adversary(id);
        } else {
            let id = self.new_benign(None, traj, depart, true);
            self.schedule_first_tx(id);
        }
        let id = self.nodes.len() as u32 - 1;
        self.push(depart, Kind::Depart(id));
        let rate = topology::highway_arrival_rate(self.cfg);
        let gap = Exp::new(rate).expect("positive arrival rate").sample(&mut self.traffic_rng);
        self.push(self.now + crate::secs_to_micros(gap).max(1), Kind::Arrival { eastbound });
    }

    fn on_depart(&mut self, id: u32) {
        let node = &mut self.nodes[id as usize];
        node.active = false;
        self.active.retain(|&a| a != id);
        if node.role == Role::Adversary {
            self.pending_adversaries += 1;
        }
        self.close_trip(id);
        let node = &mut self.nodes[id as usize];
        node.receiver = None;
        node.sender = None;
        node.adversary = None;
    }

    fn on_attack_start(&mut self) {
        let candidates: Vec<u32> = self.active.iter().copied().filter(|&a| self.nodes[a as usize].role == Role::Benign).collect();
        let k = (self.cfg.n_adv as usize).min(candidates.len());
        let picks = sample(&mut self.adversary_rng, candidates.len(), k).into_vec();
        for p in picks {
            self.make_adversary(candidates[p]);
        }
        self.pending_adversaries = self.cfg.n_adv - k as u32;
    }

    fn on_sample(&mut self) {
        for &a in &self.active {
            let na = &self.nodes[a as usize];
            if !topology::in_measure_zone(self.cfg, na.traj.at(self.now).0) {
                continue;
            }
            let count = self
                .active
                .iter()
                .filter(|&&b| b != a && na.traj.distance(&self.nodes[b as usize].traj, self.now) <= self.cfg.range)
                .count();
            self.neighbour_samples.0 += count as f64;
            self.neighbour_samples.1 += 1;
        }
        self.push(self.now + crate::MICROS_PER_SEC, Kind::Sample);
    }

    /// Whether a highway node was inside the measurement zone at some point
    /// of the measurement window.
    fn measured(&self, id: u32) -> bool {
        let n = &self.nodes[id as usize];
        if n.role != Role::Benign || !n.tracked {
            return false;
        }
        if self.cfg.scenario == Scenario::Static {
            return n.ring == Some(Ring::Centre);
        }
        let lo = self.tm.measure_start.max(n.traj.t0);
        let hi = self.tm.end.min(n.depart_at);
        if lo > hi {
            return false;
        }
        let (a, b) = (n.traj.at(lo).0, n.traj.at(hi).0);
        let zlo = (self.cfg.road_length - self.cfg.measure_width) / 2.0;
        let zhi = zlo + self.cfg.measure_width;
        a.min(b) <= zhi && a.max(b) >= zlo
    }

    fn close_trip(&mut self, id: u32) {
        if !self.measured(id) {
            return;
        }
        let filter = self.cfg.scenario == Scenario::Highway;
        let node = &mut self.nodes[id as usize];
        let mut tracks: Vec<(PcId, PcTrack)> = std::mem::take(&mut node.psnyms).into_iter().collect();
        tracks.sort_unstable_by_key(|&(pc, t)| (t.first_seen, pc));
        let mut ratio = PsnymRatio {
            rx_node: id,
            encountered: 0,
            validated: 0,
        };
        for (pc, t) in tracks {
            let Some(seen) = t.first_seen else { continue };
            if seen < self.tm.measure_start || (filter && !t.close) {
                continue;
            }
            ratio.encountered += 1;
            ratio.validated += u32::from(t.first_validated.is_some());
            self.report.psnym.push(PsnymRecord {
                rx_node: id,
                pc,
                first_seen: seen,
                first_validated: t.first_validated,
            });
        }
        if ratio.encountered > 0 {
            self.report.ratios.push(ratio);
        }
    }

    fn finish(mut self) -> RunReport {
        let remaining: Vec<u32> = self.active.clone();
        for id in remaining {
            self.close_trip(id);
        }
        if self.cfg.scenario == Scenario::Highway {
            let (s, n) = self.neighbour_samples;
            self.report.mean_neighbors = if n > 0 { s / n as f64 } else { 0.0 };
        }
        self.report.waiting.sort_by_key(|w| (w.validated_at, w.node, w.received_at, w.pc));
        self.report.psnym.sort_by_key(|p| (p.rx_node, p.first_seen, p.pc));
        self.report.ratios.sort_by_key(|r| r.rx_node);
        self.report
    }
}
