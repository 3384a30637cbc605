//! Reconstruction error and byte-overhead accounting.
//!
//! Three schemes are compared per session:
//!
//! * the compressed-sensing flood, `M` bits per transmitted packet;
//! * CDMA flooding with orthogonal codes, which needs one chip per
//!   `(origin, hop)` pair and so `N(L+1)` bits per packet (or `N·L` with
//!   [`CdmaLength::NodesTimesTtl`]); its packet count is taken from the same
//!   flood trace;
//! * AODV route discovery plus scheduled MAC delivery, modelled analytically
//!   per source measurement and multiplied by the number of sources.

use crate::error::{Error, Result};
use crate::network::{LatticeTopology, SessionConfig, SessionResult};

/// Message sizes of the conventional scheme.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OverheadModel {
    /// Route request, bytes.
    pub b_rreq: f64,
    /// Route reply, bytes.
    pub b_rrep: f64,
    /// Node id plus data, bits.
    pub b_id_data: f64,
    /// CRC, bits.
    pub b_crc: f64,
    /// MAC bytes charged per hop. Defaults to 2.5, the exact bit count
    /// `(11 + 8) / 8 = 2.375` rounded up.
    pub mac_bytes_per_hop: f64,
    pub cdma_length: CdmaLength,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel {
            b_rreq: 32.0,
            b_rrep: 28.0,
            b_id_data: 11.0,
            b_crc: 8.0,
            mac_bytes_per_hop: 2.5,
            cdma_length: CdmaLength::HopRange,
        }
    }
}

/// CDMA code length convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdmaLength {
    /// `N (L + 1)`, one code per stamp with hops `0..=L`.
    HopRange,
    /// `N L`
    NodesTimesTtl,
}

impl OverheadModel {
    /// Exact MAC bytes per hop from the bit counts, without rounding.
    pub fn exact_mac_bytes_per_hop(&self) -> f64 {
        (self.b_id_data + self.b_crc) / 8.0
    }

    /// `B_RREQ (N − 1) + B_RREP h + B_MAC h` bytes for one measurement routed
    /// over `h` hops.
    pub fn conventional(&self, n_nodes: usize, hops: usize) -> f64 {
        self.b_rreq * (n_nodes as f64 - 1.0)
            + self.b_rrep * hops as f64
            + self.mac_bytes_per_hop * hops as f64
    }

    pub fn cdma(&self, n_nodes: usize, max_hops: usize, packets: usize) -> f64 {
        let code_len = match self.cdma_length {
            CdmaLength::HopRange => n_nodes * (max_hops + 1),
            CdmaLength::NodesTimesTtl => n_nodes * max_hops,
        };
        (code_len * packets) as f64 / 8.0
    }
}

/// `‖x̂ − x₀‖₂ / ‖x₀‖₂`
pub fn reconstruction_error(x_hat: &[f64], x0: &[f64]) -> Result<f64> {
    if x_hat.len() != x0.len() {
        return Err(Error::Shape {
            expected: x0.len(),
            got: x_hat.len(),
        });
    }
    let ref_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let diff = x_hat
        .iter()
        .zip(x0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / ref_norm)
}

/// Conventional bytes per source measurement with the default model.
pub fn overhead_conventional(n_nodes: usize, hops: usize) -> f64 {
    OverheadModel::default().conventional(n_nodes, hops)
}

/// `M · P / 8` bytes.
pub fn overhead_proposed(seq_len: usize, packets_total: usize) -> f64 {
    (seq_len * packets_total) as f64 / 8.0
}

/// `N (L + 1) · P / 8` bytes.
pub fn overhead_cdma(n_nodes: usize, max_hops: usize, packets_total: usize) -> f64 {
    OverheadModel::default().cdma(n_nodes, max_hops, packets_total)
}

/// Aggregate over the sessions of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ExperimentSummary {
    pub sessions: usize,
    pub mean_error: f64,
    /// Sample standard deviation of the per-session error.
    pub error_std: f64,
    pub mean_packets: f64,
    pub mean_bytes_proposed: f64,
    pub mean_bytes_cdma: f64,
    pub bytes_conv_min: f64,
    pub bytes_conv_max: f64,
}

impl ExperimentSummary {
    pub fn error_stderr(&self) -> f64 {
        self.error_std / (self.sessions as f64).sqrt()
    }

    /// Byte reduction of the proposed scheme relative to the midpoint of the
    /// conventional bounds.
    pub fn reduction_vs_conventional(&self) -> f64 {
        1.0 - self.mean_bytes_proposed / (0.5 * (self.bytes_conv_min + self.bytes_conv_max))
    }

    pub fn reduction_vs_cdma(&self) -> f64 {
        1.0 - self.mean_bytes_proposed / self.mean_bytes_cdma
    }
}

/// Hop counts of the conventional lower and upper bounds: one hop, and the
/// distance from the farthest node to the sink.
pub fn conventional_hop_bounds(topology: &LatticeTopology) -> (usize, usize) {
    let sink = topology.sink();
    let far = (1..=topology.n_nodes())
        .map(|id| topology.hop_distance(id, sink))
        .max()
        .unwrap_or(1);
    (1, far.max(1))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(
    results: &[SessionResult],
    config: &SessionConfig,
    model: &OverheadModel,
) -> Result<ExperimentSummary> {
    if results.is_empty() {
        return Err(Error::param("cannot summarize an empty list of sessions"));
    }
    let topo = config.validate()?;
    let p = config.sensing;
    let errors: Vec<f64> = results
        .iter()
        .map(|r| reconstruction_error(&r.x_hat, &r.x0))
        .collect::<Result<_>>()?;
    let (mean_error, error_std) = mean_std(errors.iter().copied());
    let (mean_packets, _) = mean_std(results.iter().map(|r| r.packets_sent as f64));
    let (h_min, h_max) = conventional_hop_bounds(&topo);
    let k = config.k_sources as f64;
    Ok(ExperimentSummary {
        sessions: results.len(),
        mean_error,
        error_std,
        mean_packets,
        mean_bytes_proposed: mean_std(
            results
                .iter()
                .map(|r| overhead_proposed(p.seq_len, r.packets_sent)),
        )
        .0,
        mean_bytes_cdma: mean_std(
            results
                .iter()
                .map(|r| model.cdma(p.n_nodes, p.max_hops, r.packets_sent)),
        )
        .0,
        bytes_conv_min: k * model.conventional(p.n_nodes, h_min),
        bytes_conv_max: k * model.conventional(p.n_nodes, h_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::SensingParams;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn error_examples() {
        let x0 = vec![1.0, 0.0, -1.0, 1.0, -1.0];
        assert_eq!(reconstruction_error(&x0, &x0).unwrap(), 0.0);
        assert!(close(reconstruction_error(&[0.0; 5], &x0).unwrap(), 1.0));
        let missing_one = vec![1.0, 0.0, -1.0, 1.0, 0.0];
        assert!(close(reconstruction_error(&missing_one, &x0).unwrap(), 0.5));
        assert_eq!(
            reconstruction_error(&[1.0], &[0.0]),
            Err(Error::UndefinedMetric)
        );
        assert!(reconstruction_error(&[1.0], &x0).is_err());
    }

    #[test]
    fn conventional_examples() {
        assert!(close(overhead_conventional(25, 1), 798.5));
        assert!(close(overhead_conventional(25, 4), 890.0));
        assert!(close(overhead_conventional(49, 6), 1719.0));
        assert!(close(OverheadModel::default().exact_mac_bytes_per_hop(), 2.375));
    }

    #[test]
    fn proposed_examples() {
        assert_eq!(overhead_proposed(30, 0), 0.0);
        assert!(close(overhead_proposed(30, 100), 375.0));
        assert!(close(overhead_proposed(50, 80), 500.0));
    }

    #[test]
    fn cdma_examples() {
        assert!(close(overhead_cdma(25, 5, 1), 18.75));
        assert_eq!(overhead_cdma(25, 5, 0), 0.0);
        assert!(close(overhead_cdma(49, 7, 100), 4900.0));
        let literal = OverheadModel {
            cdma_length: CdmaLength::NodesTimesTtl,
            ..Default::default()
        };
        assert!(close(literal.cdma(25, 5, 8), 125.0));
    }

    #[test]
    fn per_packet_overhead_below_cdma_at_reference_sizes() {
        for (n, m, l) in [(25, 30, 5), (49, 50, 7)] {
            assert!(overhead_proposed(m, 1) < overhead_cdma(n, l, 1));
        }
    }

    #[test]
    fn hop_bounds_for_centre_sink() {
        assert_eq!(conventional_hop_bounds(&LatticeTopology::new(25, None).unwrap()), (1, 4));
        assert_eq!(conventional_hop_bounds(&LatticeTopology::new(49, None).unwrap()), (1, 6));
    }

    fn session(x_hat: Vec<f64>, x0: Vec<f64>, packets: usize) -> SessionResult {
        SessionResult {
            x_hat,
            x0,
            packets_sent: packets,
            slots_run: 30,
            sources: vec![],
            slot_stats: vec![],
            trace: vec![],
        }
    }

    #[test]
    fn summary_examples() {
        let cfg = SessionConfig::new(SensingParams::new(25, 5, 30, 1).unwrap(), 2, 30, 0);
        let model = OverheadModel::default();
        let x0 = {
            let mut v = vec![0.0; 25];
            v[0] = 1.0;
            v[4] = -1.0;
            v
        };
        let perfect = summarize(&[session(x0.clone(), x0.clone(), 40)], &cfg, &model).unwrap();
        assert_eq!(perfect.mean_error, 0.0);
        assert_eq!(perfect.error_std, 0.0);
        assert!(close(perfect.mean_bytes_proposed, 150.0));
        assert!(close(perfect.mean_bytes_cdma, 750.0));
        assert!(close(perfect.bytes_conv_min, 2.0 * 798.5));
        assert!(close(perfect.bytes_conv_max, 2.0 * 890.0));

        let two = summarize(
            &[session(x0.clone(), x0.clone(), 10), session(vec![0.0; 25], x0, 30)],
            &cfg,
            &model,
        )
        .unwrap();
        assert!(close(two.mean_error, 0.5));
        assert!(close(two.mean_packets, 20.0));
        assert!(close(two.error_std, 0.5f64.sqrt()));

        assert!(summarize(&[], &cfg, &model).is_err());
    }
}
