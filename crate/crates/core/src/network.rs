//! Lattice topology, AWGN superposition channel and the slotted session loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::protocol::{decode_received, NodeState, Packet, SinkState};
use crate::seed::{rng_from_seed, SimRng};
use crate::sensing::{SensingParams, SignatureMatrix};
use crate::solver::{DecodedMeasurement, IstaConfig};

/// Square lattice of `side * side` nodes, ids 1-based in row-major order.
/// Each node hears its 4-connected neighbours at distance `spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeTopology {
    side: usize,
    spacing: f64,
    sink: usize,
    adjacency: Vec<Vec<usize>>,
}

impl LatticeTopology {
    /// Lattice for `n_nodes` (a perfect square >= 4). The sink defaults to
    /// the centre node.
    pub fn new(n_nodes: usize, sink: Option<usize>) -> Result<Self> {
        let side = (n_nodes as f64).sqrt().round() as usize;
        if side < 2 || side * side != n_nodes {
            return Err(Error::param(format!(
                "n_nodes must be a perfect square >= 4, got {n_nodes}"
            )));
        }
        let sink = sink.unwrap_or_else(|| Self::center(side));
        if sink < 1 || sink > n_nodes {
            return Err(Error::Index(format!("sink {sink} outside 1..={n_nodes}")));
        }
        let adjacency = (1..=n_nodes)
            .map(|id| {
                let (r, c) = ((id - 1) / side, (id - 1) % side);
                let mut nb = Vec::with_capacity(4);
                if r > 0 {
                    nb.push(id - side);
                }
                if c > 0 {
                    nb.push(id - 1);
                }
                if c + 1 < side {
                    nb.push(id + 1);
                }
                if r + 1 < side {
                    nb.push(id + side);
                }
                nb
            })
            .collect();
        Ok(LatticeTopology {
            side,
            spacing: 1.0,
            sink,
            adjacency,
        })
    }

    fn center(side: usize) -> usize {
        let mid = (side - 1) / 2;
        mid * side + mid + 1
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_nodes(&self) -> usize {
        self.side * self.side
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// Neighbours of `node`, ascending.
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        if node < 1 || node > self.n_nodes() {
            return Err(Error::Index(format!(
                "node {node} outside 1..={}",
                self.n_nodes()
            )));
        }
        Ok(&self.adjacency[node - 1])
    }

    /// Grid (Manhattan) distance in hops.
    pub fn hop_distance(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = ((a - 1) / self.side, (a - 1) % self.side);
        let (rb, cb) = ((b - 1) / self.side, (b - 1) % self.side);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    pub fn diameter(&self) -> usize {
        2 * (self.side - 1)
    }
}

/// Additive white Gaussian noise with unit link gain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelModel {
    pub snr_db: f64,
}

impl ChannelModel {
    pub fn new(snr_db: f64) -> Self {
        ChannelModel { snr_db }
    }

    pub fn noiseless() -> Self {
        ChannelModel {
            snr_db: f64::INFINITY,
        }
    }

    /// Per-chip noise variance `10^(-snr_db / 10)`.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// Sum of the payloads plus i.i.d. Gaussian noise on every chip.
pub fn superimpose_with_noise(
    packets: &[&Packet],
    seq_len: usize,
    channel: &ChannelModel,
    rng: &mut SimRng,
) -> Vec<f64> {
    let mut y = vec![0.0; seq_len];
    for p in packets {
        debug_assert_eq!(p.payload.len(), seq_len);
        y.iter_mut().zip(&p.payload).for_each(|(yi, pi)| *yi += pi);
    }
    let var = channel.noise_variance();
    if var > 0.0 {
        let normal = Normal::new(0.0, var.sqrt()).expect("finite noise variance");
        y.iter_mut().for_each(|yi| *yi += normal.sample(rng));
    }
    y
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SessionConfig {
    pub sensing: SensingParams,
    pub k_sources: usize,
    pub t_out: usize,
    pub channel: ChannelModel,
    pub ista: IstaConfig,
    pub tau: f64,
    pub seed: u64,
    /// Sink node id; centre of the lattice when `None`.
    pub sink: Option<usize>,
    /// Chance that a node with queued data transmits in a given slot. At 1
    /// every node forwards in the slot after reception; lower values defer
    /// at random and let queued stamps merge.
    pub forward_probability: f64,
}

impl SessionConfig {
    /// Defaults: λ = 0.5, SNR = 10 dB, τ = 0.5, centre sink.
    pub fn new(sensing: SensingParams, k_sources: usize, t_out: usize, seed: u64) -> Self {
        SessionConfig {
            sensing,
            k_sources,
            t_out,
            channel: ChannelModel::new(10.0),
            ista: IstaConfig::default(),
            tau: 0.5,
            seed,
            sink: None,
            forward_probability: 1.0,
        }
    }

    pub fn validate(&self) -> Result<LatticeTopology> {
        self.sensing.validate()?;
        self.ista.validate()?;
        let topo = LatticeTopology::new(self.sensing.n_nodes, self.sink)?;
        let n = self.sensing.n_nodes;
        if self.k_sources < 1 || self.k_sources > n - 1 {
            return Err(Error::param(format!(
                "k_sources must lie in 1..={}, got {}",
                n - 1,
                self.k_sources
            )));
        }
        if self.t_out < 1 {
            return Err(Error::param("t_out must be >= 1"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::param(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.forward_probability > 0.0 && self.forward_probability <= 1.0) {
            return Err(Error::param(format!(
                "forward_probability must lie in (0, 1], got {}",
                self.forward_probability
            )));
        }
        if self.channel.snr_db.is_nan() {
            return Err(Error::param("snr_db is NaN"));
        }
        Ok(topo)
    }
}

/// One source event of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceEvent {
    pub node: usize,
    pub value: i8,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotStats {
    pub transmitters: usize,
    pub receivers: usize,
    pub decoded: usize,
    pub forwarded: usize,
    /// Stamps present in a reception that the decoder did not return.
    pub missed: usize,
    /// Decoded stamps that were not present, or came out with the wrong sign.
    pub spurious: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAction {
    Originate,
    Transmit,
    Decode,
    Discard,
    SinkIngest,
}

impl TraceAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceAction::Originate => "originate",
            TraceAction::Transmit => "transmit",
            TraceAction::Decode => "decode",
            TraceAction::Discard => "discard",
            TraceAction::SinkIngest => "sink_ingest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub slot: usize,
    pub node: usize,
    pub action: TraceAction,
    pub origin: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub x_hat: Vec<f64>,
    pub x0: Vec<f64>,
    pub packets_sent: usize,
    pub slots_run: usize,
    pub sources: Vec<SourceEvent>,
    pub slot_stats: Vec<SlotStats>,
    /// Protocol event log; empty unless tracing was requested.
    pub trace: Vec<TraceEvent>,
}

impl SessionResult {
    /// Writes the event log as `slot,node,action,origin,hop` CSV.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "node", "action", "origin", "hop"])?;
        for e in &self.trace {
            w.write_record([
                e.slot.to_string(),
                e.node.to_string(),
                e.action.as_str().to_string(),
                e.origin.to_string(),
                e.hop.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_session(config: &SessionConfig, a: &SignatureMatrix) -> Result<SessionResult> {
    simulate(config, a, false)
}

/// [`run_session`] with the per-slot event log filled in.
pub fn run_session_traced(config: &SessionConfig, a: &SignatureMatrix) -> Result<SessionResult> {
    simulate(config, a, true)
}

/// Draws K distinct non-sink sources with ±1 values and event slots uniform
/// in `0..=t_out/2`.
fn draw_sources(config: &SessionConfig, sink: usize, rng: &mut SimRng) -> Vec<SourceEvent> {
    let n = config.sensing.n_nodes;
    let candidates: Vec<usize> = (1..=n).filter(|&id| id != sink).collect();
    let mut picked: Vec<usize> = sample(rng, candidates.len(), config.k_sources)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|node| {
            let value = if rng.random_bool(0.5) { 1 } else { -1 };
            let slot = rng.random_range(0..=config.t_out / 2);
            SourceEvent { node, value, slot }
        })
        .collect()
}

fn simulate(config: &SessionConfig, a: &SignatureMatrix, tracing: bool) -> Result<SessionResult> {
    let topo = config.validate()?;
    if a.params().n_nodes != config.sensing.n_nodes
        || a.params().max_hops != config.sensing.max_hops
        || a.params().seq_len != config.sensing.seq_len
    {
        return Err(Error::param("signature matrix does not match the session's sensing params"));
    }
    let n = config.sensing.n_nodes;
    let m = config.sensing.seq_len;
    let sink_id = topo.sink();
    let mut rng = rng_from_seed(config.seed);

    let sources = draw_sources(config, sink_id, &mut rng);
    let mut x0 = vec![0.0; n];
    for s in &sources {
        x0[s.node - 1] = f64::from(s.value);
    }

    let mut nodes: Vec<NodeState> = (1..=n)
        .map(|id| NodeState::new(id, config.sensing.max_hops))
        .collect();
    let mut sink = SinkState::new();
    let mut packets_sent = 0;
    let mut slot_stats = Vec::with_capacity(config.t_out);
    let mut trace = Vec::new();
    let mut log = |slot, node, action, origin, hop| {
        if tracing {
            trace.push(TraceEvent {
                slot,
                node,
                action,
                origin,
                hop,
            });
        }
    };

    let mut outgoing: Vec<Option<Packet>> = vec![None; n];
    for slot in 0..config.t_out {
        let mut stats = SlotStats::default();

        // transmit phase
        for node in nodes.iter_mut() {
            let id = node.id;
            if id == sink_id {
                continue;
            }
            let go = node.has_outbound()
                && (config.forward_probability >= 1.0
                    || rng.random_bool(config.forward_probability));
            let mut packet = if go {
                node.take_forward_packet(a)?
            } else {
                None
            };
            for ev in sources.iter().filter(|s| s.node == id && s.slot == slot) {
                let own = node.originate(ev.value, a)?;
                log(slot, id, TraceAction::Originate, id, 0);
                packet = Some(match packet {
                    Some(p) => p.superimpose(own),
                    None => own,
                });
            }
            if let Some(p) = &packet {
                for s in &p.stamps {
                    log(slot, id, TraceAction::Transmit, s.origin, s.hop);
                }
            }
            outgoing[id - 1] = packet;
        }
        stats.transmitters = outgoing.iter().filter(|p| p.is_some()).count();
        packets_sent += stats.transmitters;

        // receive phase
        for id in 1..=n {
            if outgoing[id - 1].is_some() {
                continue;
            }
            let heard: Vec<&Packet> = topo
                .neighbors(id)?
                .iter()
                .filter_map(|&nb| outgoing[nb - 1].as_ref())
                .collect();
            if heard.is_empty() {
                continue;
            }
            stats.receivers += 1;
            let y = superimpose_with_noise(&heard, m, &config.channel, &mut rng);
            let decoded = decode_received(&y, a, &config.ista, config.tau)?;
            stats.decoded += decoded.len();
            let (missed, spurious) = score_decode(&heard, &decoded);
            stats.missed += missed;
            stats.spurious += spurious;
            if id == sink_id {
                for d in &decoded {
                    log(slot, id, TraceAction::SinkIngest, d.origin, d.hop);
                }
                sink.ingest(&decoded, slot);
            } else {
                let node = &mut nodes[id - 1];
                let kept = node.filter_duplicates(&decoded);
                for d in &decoded {
                    let action = if kept.contains(d) {
                        TraceAction::Decode
                    } else {
                        TraceAction::Discard
                    };
                    log(slot, id, action, d.origin, d.hop);
                }
                stats.forwarded += kept.iter().filter(|d| d.hop < config.sensing.max_hops).count();
                node.enqueue(&kept);
            }
        }
        slot_stats.push(stats);
        outgoing.iter_mut().for_each(|p| *p = None);
    }

    Ok(SessionResult {
        x_hat: sink.finalize(n),
        x0,
        packets_sent,
        slots_run: config.t_out,
        sources,
        slot_stats,
        trace,
    })
}

/// Compares a decode against the stamps actually superimposed. Copies of the
/// same stamp from several neighbours add up; a net-zero coefficient counts
/// as absent.
fn score_decode(heard: &[&Packet], decoded: &[DecodedMeasurement]) -> (usize, usize) {
    let mut truth: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    for p in heard {
        for s in &p.stamps {
            *truth.entry((s.origin, s.hop)).or_insert(0) += i64::from(s.value);
        }
    }
    truth.retain(|_, v| *v != 0);
    let spurious = decoded
        .iter()
        .filter(|d| {
            truth
                .get(&(d.origin, d.hop))
                .is_none_or(|v| v.signum() != i64::from(d.value))
        })
        .count();
    let missed = truth
        .keys()
        .filter(|k| !decoded.iter().any(|d| (d.origin, d.hop) == **k))
        .count();
    (missed, spurious)
}

/// Every `(origin, hop)` stamp a node transmitted more than once in a traced
/// session, as `(node, origin, hop)`.
pub fn repeated_transmissions(result: &SessionResult) -> Vec<(usize, usize, usize)> {
    let mut seen = std::collections::BTreeSet::new();
    let mut repeats = Vec::new();
    for e in result.trace.iter().filter(|e| e.action == TraceAction::Transmit) {
        if !seen.insert((e.node, e.origin, e.hop)) {
            repeats.push((e.node, e.origin, e.hop));
        }
    }
    repeats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::generate_signatures;

    #[test]
    fn lattice_neighbors_of_corner_and_edge() {
        let t = LatticeTopology::new(25, None).unwrap();
        assert_eq!(t.sink(), 13);
        assert_eq!(t.neighbors(1).unwrap(), &[2, 6]);
        assert_eq!(t.neighbors(7).unwrap(), &[2, 6, 8, 12]);
        assert_eq!(t.neighbors(3).unwrap(), &[2, 4, 8]);
        assert!(t.neighbors(0).is_err());
        assert!(t.neighbors(26).is_err());
    }

    #[test]
    fn lattice_degree_counts() {
        let t = LatticeTopology::new(25, None).unwrap();
        let mut counts = [0usize; 5];
        for id in 1..=25 {
            counts[t.neighbors(id).unwrap().len()] += 1;
        }
        assert_eq!(counts, [0, 0, 4, 12, 9]);
    }

    #[test]
    fn lattice_rejects_non_square() {
        assert!(LatticeTopology::new(24, None).is_err());
        assert!(LatticeTopology::new(25, Some(26)).is_err());
        assert_eq!(LatticeTopology::new(49, None).unwrap().sink(), 25);
        assert_eq!(LatticeTopology::new(25, None).unwrap().diameter(), 8);
    }

    #[test]
    fn neighbor_relation_is_symmetric() {
        let t = LatticeTopology::new(49, None).unwrap();
        for id in 1..=49 {
            for &nb in t.neighbors(id).unwrap() {
                assert!(t.neighbors(nb).unwrap().contains(&id));
                assert_eq!(t.hop_distance(id, nb), 1);
            }
        }
    }

    #[test]
    fn noise_variance_at_ten_db() {
        assert!((ChannelModel::new(10.0).noise_variance() - 0.1).abs() < 1e-15);
        assert_eq!(ChannelModel::noiseless().noise_variance(), 0.0);
    }

    #[test]
    fn superposition_examples() {
        let mut rng = rng_from_seed(0);
        let quiet = ChannelModel::noiseless();
        let p = Packet {
            payload: vec![1.0, -1.0, 2.0],
            transmitter: 1,
            stamps: vec![],
        };
        let q = Packet {
            payload: vec![-1.0, -1.0, 1.0],
            transmitter: 2,
            stamps: vec![],
        };
        assert_eq!(superimpose_with_noise(&[&p], 3, &quiet, &mut rng), p.payload);
        assert_eq!(superimpose_with_noise(&[], 3, &quiet, &mut rng), vec![0.0; 3]);
        assert_eq!(
            superimpose_with_noise(&[&p, &q], 3, &quiet, &mut rng),
            vec![0.0, -2.0, 3.0]
        );
    }

    #[test]
    fn noise_has_requested_variance() {
        let mut rng = rng_from_seed(5);
        let y = superimpose_with_noise(&[], 200_000, &ChannelModel::new(10.0), &mut rng);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 0.1).abs() < 0.003, "variance {var}");
    }

    fn noiseless_config(sensing: SensingParams, k: usize, t_out: usize, seed: u64) -> SessionConfig {
        let mut c = SessionConfig::new(sensing, k, t_out, seed);
        c.channel = ChannelModel::noiseless();
        c.ista.max_iters = 2000;
        c
    }

    #[test]
    fn config_validation() {
        let p = SensingParams::new(25, 5, 30, 1).unwrap();
        let a = generate_signatures(p).unwrap();
        assert!(run_session(&SessionConfig::new(p, 0, 30, 1), &a).is_err());
        assert!(run_session(&SessionConfig::new(p, 25, 30, 1), &a).is_err());
        assert!(run_session(&SessionConfig::new(p, 2, 0, 1), &a).is_err());
        let other = generate_signatures(SensingParams::new(25, 5, 31, 1).unwrap()).unwrap();
        assert!(run_session(&SessionConfig::new(p, 2, 30, 1), &other).is_err());
    }

    #[test]
    fn sources_exclude_sink_and_are_distinct() {
        let p = SensingParams::new(25, 5, 30, 1).unwrap();
        for seed in 0..50 {
            let c = SessionConfig::new(p, 24, 30, seed);
            let mut rng = rng_from_seed(seed);
            let s = draw_sources(&c, 13, &mut rng);
            assert_eq!(s.len(), 24);
            assert!(s.iter().all(|e| e.node != 13 && e.slot <= 15));
            let mut ids: Vec<usize> = s.iter().map(|e| e.node).collect();
            ids.dedup();
            assert_eq!(ids.len(), 24);
        }
    }

    #[test]
    fn flood_reaches_every_node_within_diameter() {
        // corner source, sink in the opposite corner, TTL long enough for the
        // whole lattice
        let p = SensingParams::new(25, 8, 40, 2).unwrap();
        let a = generate_signatures(p).unwrap();
        for seed in 0..20 {
            let mut c = noiseless_config(p, 1, 40, seed);
            c.sink = Some(25);
            let probe = {
                let mut rng = rng_from_seed(seed);
                let topo = c.validate().unwrap();
                draw_sources(&c, topo.sink(), &mut rng)
            };
            let r = run_session_traced(&c, &a).unwrap();
            assert_eq!(r.x_hat, r.x0);
            let src = probe[0];
            let topo = LatticeTopology::new(25, Some(25)).unwrap();
            for id in 1..=25 {
                let d = topo.hop_distance(src.node, id);
                if id == src.node {
                    continue;
                }
                let first = r
                    .trace
                    .iter()
                    .find(|e| {
                        e.node == id
                            && matches!(e.action, TraceAction::Decode | TraceAction::SinkIngest)
                            && e.origin == src.node
                    })
                    .unwrap_or_else(|| panic!("node {id} never heard source {}", src.node));
                assert_eq!(first.slot, src.slot + d - 1);
                assert_eq!(first.hop, d - 1);
            }
        }
    }

    #[test]
    fn corner_to_corner_delivery() {
        let p = SensingParams::new(25, 8, 40, 3).unwrap();
        let a = generate_signatures(p).unwrap();
        let mut found = false;
        for seed in 0..3000u64 {
            let mut c = noiseless_config(p, 1, 9, seed);
            c.sink = Some(25);
            let topo = c.validate().unwrap();
            let mut rng = rng_from_seed(seed);
            let src = draw_sources(&c, topo.sink(), &mut rng)[0];
            if src.node != 1 || src.slot != 0 {
                continue;
            }
            found = true;
            let r = run_session(&c, &a).unwrap();
            assert_eq!(r.x_hat, r.x0);
        }
        assert!(found, "no seed placed the source in the far corner at slot 0");
    }

    #[test]
    fn packet_count_bound_for_single_source() {
        let p = SensingParams::new(25, 5, 30, 1).unwrap();
        let a = generate_signatures(p).unwrap();
        for seed in 0..20 {
            let r = run_session(&noiseless_config(p, 1, 30, seed), &a).unwrap();
            assert!(r.packets_sent <= 25 * 6);
            assert!(r.packets_sent >= 1);
        }
    }

    #[test]
    fn sessions_are_deterministic() {
        let p = SensingParams::new(25, 5, 30, 1).unwrap();
        let a = generate_signatures(p).unwrap();
        let c = SessionConfig::new(p, 4, 30, 77);
        assert_eq!(run_session(&c, &a).unwrap(), run_session(&c, &a).unwrap());
    }

    #[test]
    fn trace_csv_has_header() {
        let p = SensingParams::new(25, 5, 30, 1).unwrap();
        let a = generate_signatures(p).unwrap();
        let r = run_session_traced(&noiseless_config(p, 1, 30, 4), &a).unwrap();
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("slot,node,action,origin,hop\n"));
        assert!(s.contains(",originate,"));
    }
}
