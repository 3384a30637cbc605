//! Per-node forwarding logic.
//!
//! A node decodes the superposition it hears, drops measurements it has
//! already seen with an equal or shorter hop count, stamps the survivors with
//! `hop + 1` and re-superimposes them into a single packet. The sink only
//! decodes and accumulates signed votes per origin.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::sensing::SignatureMatrix;
use crate::solver::{ista_solve, quantize_support, DecodedMeasurement, IstaConfig};

/// A transmitted packet: `payload = Σ value · a_{origin,hop}` over `stamps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub payload: Vec<f64>,
    pub transmitter: usize,
    /// The measurements superimposed in the payload, as transmitted.
    pub stamps: Vec<DecodedMeasurement>,
}

impl Packet {
    fn from_stamps(
        transmitter: usize,
        stamps: Vec<DecodedMeasurement>,
        a: &SignatureMatrix,
    ) -> Result<Self> {
        let mut payload = vec![0.0; a.rows()];
        for s in &stamps {
            let seq = a.sequence_of(s.origin, s.hop)?;
            let v = f64::from(s.value);
            payload.iter_mut().zip(seq).for_each(|(p, c)| *p += v * c);
        }
        Ok(Packet {
            payload,
            transmitter,
            stamps,
        })
    }

    /// Adds another packet from the same transmitter into this one.
    pub fn superimpose(mut self, other: Packet) -> Packet {
        debug_assert_eq!(self.transmitter, other.transmitter);
        self.payload
            .iter_mut()
            .zip(&other.payload)
            .for_each(|(p, o)| *p += o);
        self.stamps.extend(other.stamps);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: usize,
    max_hops: usize,
    table: BTreeSet<(usize, usize)>,
    outbound: Vec<DecodedMeasurement>,
}

impl NodeState {
    pub fn new(id: usize, max_hops: usize) -> Self {
        NodeState {
            id,
            max_hops,
            table: BTreeSet::new(),
            outbound: Vec::new(),
        }
    }

    /// The local table of `(origin, hop)` stamps seen so far.
    pub fn table(&self) -> &BTreeSet<(usize, usize)> {
        &self.table
    }

    /// Smallest hop recorded for `origin`.
    pub fn min_hop(&self, origin: usize) -> Option<usize> {
        self.table
            .range((origin, 0)..=(origin, usize::MAX))
            .next()
            .map(|(_, h)| *h)
    }

    /// Measurements kept from earlier receptions, awaiting the next transmit
    /// slot. Hops are as decoded (not yet incremented).
    pub fn outbound(&self) -> &[DecodedMeasurement] {
        &self.outbound
    }

    pub fn has_outbound(&self) -> bool {
        !self.outbound.is_empty()
    }

    pub fn insert_stamp(&mut self, origin: usize, hop: usize) {
        if hop <= self.max_hops {
            self.table.insert((origin, hop));
        }
    }

    /// Starts a new measurement: `value · a_{id,0}`. The node records
    /// `(id, 0)` so it never forwards copies of its own data.
    pub fn originate(&mut self, value: i8, a: &SignatureMatrix) -> Result<Packet> {
        if value != 1 && value != -1 {
            return Err(Error::param(format!("measurement must be ±1, got {value}")));
        }
        self.insert_stamp(self.id, 0);
        Packet::from_stamps(self.id, vec![DecodedMeasurement::new(self.id, 0, value)], a)
    }

    /// Drops decoded measurements whose origin is already in the table with
    /// an equal or smaller hop count. Every decoded stamp is recorded after
    /// its decision.
    pub fn filter_duplicates(&mut self, decoded: &[DecodedMeasurement]) -> Vec<DecodedMeasurement> {
        let mut kept = Vec::with_capacity(decoded.len());
        for d in decoded {
            let seen = self
                .table
                .range((d.origin, 0)..=(d.origin, d.hop))
                .next()
                .is_some();
            if !seen {
                kept.push(*d);
            }
            self.insert_stamp(d.origin, d.hop);
        }
        kept
    }

    /// Stamps each kept measurement with `hop + 1`, drops those beyond the
    /// TTL, and superimposes the rest. `None` when nothing survives.
    pub fn build_forward_packet(
        &self,
        kept: &[DecodedMeasurement],
        a: &SignatureMatrix,
    ) -> Result<Option<Packet>> {
        let stamps: Vec<DecodedMeasurement> = kept
            .iter()
            .filter(|d| d.hop < self.max_hops)
            .map(|d| DecodedMeasurement::new(d.origin, d.hop + 1, d.value))
            .collect();
        if stamps.is_empty() {
            return Ok(None);
        }
        Packet::from_stamps(self.id, stamps, a).map(Some)
    }

    /// Queues kept measurements for the next transmit slot. Entries with an
    /// `(origin, hop)` already queued are collapsed.
    pub fn enqueue(&mut self, kept: &[DecodedMeasurement]) {
        for d in kept {
            if !self
                .outbound
                .iter()
                .any(|o| o.origin == d.origin && o.hop == d.hop)
            {
                self.outbound.push(*d);
            }
        }
    }

    /// Builds the packet for the queued measurements and clears the queue.
    pub fn take_forward_packet(&mut self, a: &SignatureMatrix) -> Result<Option<Packet>> {
        let queued = std::mem::take(&mut self.outbound);
        self.build_forward_packet(&queued, a)
    }

    /// True when the queue would produce a packet.
    pub fn will_forward(&self) -> bool {
        self.outbound.iter().any(|d| d.hop < self.max_hops)
    }
}

/// ISTA followed by dead-zone quantization.
pub fn decode_received(
    y: &[f64],
    a: &SignatureMatrix,
    cfg: &IstaConfig,
    tau: f64,
) -> Result<Vec<DecodedMeasurement>> {
    let x = ista_solve(y, a, cfg)?;
    Ok(quantize_support(&x, a.params(), tau))
}

/// Signed-vote accumulator at the sink.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SinkState {
    pub votes: BTreeMap<usize, i64>,
    pub first_seen: BTreeMap<usize, usize>,
}

impl SinkState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&mut self, decoded: &[DecodedMeasurement], slot: usize) {
        for d in decoded {
            *self.votes.entry(d.origin).or_insert(0) += i64::from(d.value);
            self.first_seen.entry(d.origin).or_insert(slot);
        }
    }

    /// Majority decision per origin; zero for ties and unseen origins.
    pub fn finalize(&self, n_nodes: usize) -> Vec<f64> {
        let mut x = vec![0.0; n_nodes];
        for (&origin, &v) in &self.votes {
            if (1..=n_nodes).contains(&origin) {
                x[origin - 1] = v.signum() as f64;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{generate_signatures, SensingParams};

    fn matrix() -> SignatureMatrix {
        generate_signatures(SensingParams::new(25, 5, 30, 1).unwrap()).unwrap()
    }

    fn dm(origin: usize, hop: usize, value: i8) -> DecodedMeasurement {
        DecodedMeasurement::new(origin, hop, value)
    }

    #[test]
    fn originate_uses_hop_zero_sequence() {
        let a = matrix();
        let mut n1 = NodeState::new(1, 5);
        let p = n1.originate(1, &a).unwrap();
        assert_eq!(p.payload, a.sequence_of(1, 0).unwrap());
        assert_eq!(p.transmitter, 1);

        let mut n3 = NodeState::new(3, 5);
        let p = n3.originate(-1, &a).unwrap();
        let neg: Vec<f64> = a.sequence_of(3, 0).unwrap().iter().map(|v| -v).collect();
        assert_eq!(p.payload, neg);
        assert!(n3.originate(0, &a).is_err());
    }

    #[test]
    fn own_measurement_is_never_forwarded_back() {
        let a = matrix();
        let mut n = NodeState::new(4, 5);
        n.originate(1, &a).unwrap();
        for hop in 0..=5 {
            assert!(n.filter_duplicates(&[dm(4, hop, 1)]).is_empty());
        }
    }

    #[test]
    fn duplicate_rules() {
        let mut n = NodeState::new(9, 5);
        n.insert_stamp(5, 2);
        assert!(n.filter_duplicates(&[dm(5, 3, 1)]).is_empty());

        let mut n = NodeState::new(9, 5);
        n.insert_stamp(5, 3);
        assert_eq!(n.filter_duplicates(&[dm(5, 2, 1)]), vec![dm(5, 2, 1)]);
        assert_eq!(n.min_hop(5), Some(2));

        let mut n = NodeState::new(9, 5);
        assert_eq!(n.filter_duplicates(&[dm(7, 0, -1)]), vec![dm(7, 0, -1)]);
        // the same stamp a second time is discarded
        assert!(n.filter_duplicates(&[dm(7, 0, -1)]).is_empty());
    }

    #[test]
    fn filter_preserves_order() {
        let mut n = NodeState::new(9, 5);
        let input = [dm(3, 1, 1), dm(1, 0, -1), dm(8, 4, 1)];
        assert_eq!(n.filter_duplicates(&input), input.to_vec());
    }

    #[test]
    fn forward_packet_superimposes_incremented_stamps() {
        let a = matrix();
        let n2 = NodeState::new(2, 5);
        let p = n2
            .build_forward_packet(&[dm(1, 0, 1), dm(3, 0, 1)], &a)
            .unwrap()
            .unwrap();
        let expected: Vec<f64> = a
            .sequence_of(1, 1)
            .unwrap()
            .iter()
            .zip(a.sequence_of(3, 1).unwrap())
            .map(|(u, v)| u + v)
            .collect();
        assert_eq!(p.payload, expected);
        assert_eq!(p.stamps, vec![dm(1, 1, 1), dm(3, 1, 1)]);
        assert_eq!(n2.build_forward_packet(&[dm(4, 5, -1)], &a).unwrap(), None);
        assert_eq!(n2.build_forward_packet(&[], &a).unwrap(), None);
    }

    #[test]
    fn enqueue_collapses_repeats() {
        let mut n = NodeState::new(2, 5);
        n.enqueue(&[dm(1, 0, 1), dm(1, 0, 1), dm(3, 2, -1)]);
        n.enqueue(&[dm(3, 2, -1)]);
        assert_eq!(n.outbound().len(), 2);
        assert!(n.will_forward());
        let a = matrix();
        assert!(n.take_forward_packet(&a).unwrap().is_some());
        assert!(!n.has_outbound());
    }

    #[test]
    fn decode_two_superimposed_sources() {
        let a = matrix();
        let y: Vec<f64> = a
            .sequence_of(1, 0)
            .unwrap()
            .iter()
            .zip(a.sequence_of(3, 0).unwrap())
            .map(|(u, v)| u - v)
            .collect();
        let d = decode_received(&y, &a, &IstaConfig::default(), 0.5).unwrap();
        assert_eq!(d, vec![dm(1, 0, 1), dm(3, 0, -1)]);
        assert!(decode_received(&[0.0; 30], &a, &IstaConfig::default(), 0.5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn sink_voting() {
        let mut s = SinkState::new();
        s.ingest(&[dm(1, 2, 1)], 3);
        s.ingest(&[dm(1, 3, 1)], 4);
        assert_eq!(s.votes[&1], 2);
        assert_eq!(s.first_seen[&1], 3);

        let mut s = SinkState::new();
        s.ingest(&[dm(6, 1, 1), dm(6, 2, 1), dm(6, 3, -1)], 0);
        assert_eq!(s.votes[&6], 1);
        assert_eq!(s.finalize(25)[5], 1.0);

        assert_eq!(SinkState::new().finalize(25), vec![0.0; 25]);
    }

    #[test]
    fn sink_finalize_signs_and_ties() {
        let mut s = SinkState::new();
        s.votes.insert(1, 3);
        s.votes.insert(5, -2);
        s.votes.insert(2, 0);
        let x = s.finalize(25);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[4], -1.0);
        assert_eq!(x[1], 0.0);
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 2);
    }
}
