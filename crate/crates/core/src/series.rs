//! PL / IAT / DIR sequences over the first N nonzero-payload packets of
//! each biflow, and their variable-support averages across biflows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Biflow, Direction};

pub const DEFAULT_SERIES_LEN: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowVector {
    pub pl: Vec<u32>,
    pub iat_us: Vec<u64>,
    pub dir: Vec<i8>,
    /// Negative inter-arrival times clamped to zero.
    pub clamped_iat: u32,
}

impl FlowVector {
    pub fn len(&self) -> usize {
        self.pl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pl.is_empty()
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        self.dir.iter().map(|&d| Direction::from_sign(d).expect("dir is +1 or -1"))
    }
}

/// First `n` packets with nonzero payload, in capture order. Shorter flows
/// give shorter vectors.
pub fn extract_flow_vector(flow: &Biflow, n: usize) -> FlowVector {
    let mut v = FlowVector::default();
    let mut prev_ts: Option<u64> = None;
    for p in flow.payload_stream().take(n) {
        let ts = p.packet.ts_us;
        let iat = match prev_ts {
            None => 0,
            Some(prev) if ts >= prev => ts - prev,
            Some(_) => {
                v.clamped_iat += 1;
                0
            }
        };
        prev_ts = Some(ts);
        v.pl.push(p.packet.payload_len);
        v.iat_us.push(iat);
        v.dir.push(p.dir.sign());
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SeriesMetric {
    Pl,
    Iat,
    Dir,
}

impl SeriesMetric {
    pub const ALL: [SeriesMetric; 3] = [SeriesMetric::Pl, SeriesMetric::Iat, SeriesMetric::Dir];

    fn value(self, v: &FlowVector, k: usize) -> f64 {
        match self {
            SeriesMetric::Pl => v.pl[k] as f64,
            SeriesMetric::Iat => v.iat_us[k] as f64,
            SeriesMetric::Dir => v.dir[k] as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesMetric::Pl => "PL",
            SeriesMetric::Iat => "IAT",
            SeriesMetric::Dir => "DIR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSeries {
    pub metric: SeriesMetric,
    pub mean_at_index: Vec<f64>,
    pub support_at_index: Vec<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeriesError {
    #[error("no nonempty flow vectors to aggregate")]
    NoData,
}

/// Mean of `metric` at each packet index over the vectors that reach it.
/// Sums are accumulated in index-major order over vectors sorted by their
/// content, so the result does not depend on input order.
pub fn aggregate(vectors: &[FlowVector], metric: SeriesMetric) -> Result<AggregatedSeries, SeriesError> {
    let len = vectors.iter().map(FlowVector::len).max().unwrap_or(0);
    if len == 0 {
        return Err(SeriesError::NoData);
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); len];
    for v in vectors {
        for (k, col) in values.iter_mut().enumerate().take(v.len()) {
            col.push(metric.value(v, k));
        }
    }
    let mut mean_at_index = Vec::with_capacity(len);
    let mut support_at_index = Vec::with_capacity(len);
    for mut col in values {
        col.sort_by(f64::total_cmp);
        mean_at_index.push(col.iter().sum::<f64>() / col.len() as f64);
        support_at_index.push(col.len() as u64);
    }
    Ok(AggregatedSeries {
        metric,
        mean_at_index,
        support_at_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{IpProto, PacketRecord};
    use crate::flow::{Endpoint, FlowKey, FlowPacket};

    fn flow(pkts: &[(u64, usize, Direction)]) -> Biflow {
        let a = ("10.0.0.1".parse().unwrap(), 1);
        let b = ("10.0.0.2".parse().unwrap(), 2);
        let packets: Vec<FlowPacket> = pkts
            .iter()
            .map(|&(ts, len, dir)| FlowPacket {
                packet: PacketRecord::new(ts, IpProto::Tcp, a, b, vec![0; len]),
                dir,
            })
            .collect();
        Biflow {
            key: FlowKey::of(&packets[0].packet).unwrap(),
            client: Endpoint::new(a.0, a.1),
            packets,
            label: None,
            first_ts_us: 0,
            last_ts_us: 0,
            id: "f".into(),
        }
    }

    use Direction::{Downstream as D, Upstream as U};

    #[test]
    fn zero_pl_packets_dropped() {
        let f = flow(&[(0, 0, U), (1, 120, U), (2, 0, D), (3, 1460, D)]);
        let v = extract_flow_vector(&f, 50);
        assert_eq!(v.pl, vec![120, 1460]);
        assert_eq!(v.dir, vec![-1, 1]);
        assert_eq!(v.iat_us, vec![0, 2]);
    }

    #[test]
    fn iat_in_microseconds() {
        let f = flow(&[(1_000_000, 10, U), (1_020_000, 10, D)]);
        assert_eq!(extract_flow_vector(&f, 50).iat_us, vec![0, 20_000]);
    }

    #[test]
    fn n_one_and_empty() {
        let f = flow(&[(0, 5, U), (1, 6, D)]);
        let v = extract_flow_vector(&f, 1);
        assert_eq!((v.pl.len(), v.iat_us.len(), v.dir.len()), (1, 1, 1));
        assert!(extract_flow_vector(&flow(&[(0, 0, U)]), 50).is_empty());
    }

    #[test]
    fn negative_iat_clamped_and_counted() {
        let f = flow(&[(100, 1, U), (50, 1, D), (70, 1, U)]);
        let v = extract_flow_vector(&f, 50);
        assert_eq!(v.iat_us, vec![0, 0, 20]);
        assert_eq!(v.clamped_iat, 1);
    }

    #[test]
    fn variable_support_mean() {
        let a = FlowVector { pl: vec![100], iat_us: vec![0], dir: vec![-1], clamped_iat: 0 };
        let b = FlowVector { pl: vec![300, 500], iat_us: vec![0, 9], dir: vec![-1, 1], clamped_iat: 0 };
        let s = aggregate(&[a, b], SeriesMetric::Pl).unwrap();
        assert_eq!(s.mean_at_index, vec![200.0, 500.0]);
        assert_eq!(s.support_at_index, vec![2, 1]);
    }

    #[test]
    fn all_upstream_dir_is_minus_one() {
        let v = FlowVector { pl: vec![1, 1, 1], iat_us: vec![0, 1, 1], dir: vec![-1, -1, -1], clamped_iat: 0 };
        let s = aggregate(&[v.clone(), v], SeriesMetric::Dir).unwrap();
        assert!(s.mean_at_index.iter().all(|&m| m == -1.0));
    }

    #[test]
    fn all_empty_is_error() {
        assert_eq!(aggregate(&[FlowVector::default()], SeriesMetric::Pl), Err(SeriesError::NoData));
        assert_eq!(aggregate(&[], SeriesMetric::Iat), Err(SeriesError::NoData));
    }
}
