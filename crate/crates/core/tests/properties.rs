mod common;

use std::collections::BTreeSet;

use gentraffic::capture::{build_frame, read_capture, write_capture, write_raw_frames, CaptureTrace, LinkType, PacketRecord};
use gentraffic::classifier::cnn::softmax;
use gentraffic::classifier::stratified_split;
use gentraffic::dissect::tls::parse_client_hello;
use gentraffic::dissect::{dissect_all, sni_share_table};
use gentraffic::fixtures;
use gentraffic::flow::{assemble_biflows, Biflow, Direction};
use gentraffic::markov::{fit_binning, fit_sequences, PlBinning};
use gentraffic::metrics::{rate_series_for, summarize, Delta};
use gentraffic::series::{aggregate, extract_flow_vector, SeriesMetric};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn records(seed: u64, n: usize) -> Vec<PacketRecord> {
    common::multi_flow_records(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

fn flows_of(recs: &[PacketRecord]) -> Vec<Biflow> {
    assemble_biflows(&CaptureTrace::from_packets(recs.to_vec(), "p"))
}

fn swapped(r: &PacketRecord) -> PacketRecord {
    PacketRecord::new(r.ts_us, r.ip_proto, r.dst(), r.src(), r.payload.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pcap_round_trip(seed in any::<u64>(), n in 1usize..150) {
        let recs = common::random_records(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pcap");
        write_capture(&CaptureTrace::from_packets(recs.clone(), "r"), &path).unwrap();
        let back = read_capture(&path).unwrap();
        prop_assert_eq!(back.packets, recs);
    }

    #[test]
    fn frame_accounting(seed in any::<u64>(), n in 1usize..60, arp_every in 1usize..5) {
        let recs = common::random_records(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let arp = fixtures::arp_frames();
        let mut frames = Vec::new();
        for (i, r) in recs.iter().enumerate() {
            let (bytes, wire) = build_frame(r);
            frames.push((r.ts_us, bytes, wire));
            if i % arp_every == 0 {
                frames.push(arp[i % arp.len()].clone());
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcap");
        write_raw_frames(&path, LinkType::Ethernet, 65535, &frames).unwrap();
        let t = read_capture(&path).unwrap();
        prop_assert_eq!(t.stats.total_frames, frames.len() as u64);
        prop_assert_eq!(t.stats.decoded + t.stats.skipped(), t.stats.total_frames);
        prop_assert_eq!(t.stats.decoded, n as u64);
    }

    #[test]
    fn biflows_partition_packets(seed in any::<u64>(), n in 0usize..300) {
        let recs = records(seed, n);
        let flows = flows_of(&recs);
        prop_assert_eq!(flows.iter().map(|f| f.packets.len()).sum::<usize>(), n);
        let keys: BTreeSet<String> = flows.iter().map(|f| f.key.to_string()).collect();
        prop_assert_eq!(keys.len(), flows.len());
    }

    #[test]
    fn flow_keys_ignore_endpoint_order(seed in any::<u64>(), n in 1usize..200) {
        let recs = records(seed, n);
        let mirrored: Vec<PacketRecord> = recs.iter().map(swapped).collect();
        let a: BTreeSet<String> = flows_of(&recs).iter().map(|f| f.key.to_string()).collect();
        let b: BTreeSet<String> = flows_of(&mirrored).iter().map(|f| f.key.to_string()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn direction_follows_client(seed in any::<u64>(), n in 1usize..200) {
        for f in flows_of(&records(seed, n)) {
            prop_assert_eq!(f.packets[0].dir, Direction::Upstream);
            for p in &f.packets {
                let from_client = p.packet.src() == (f.client.addr, f.client.port);
                prop_assert_eq!(from_client, p.dir == Direction::Upstream);
            }
        }
    }

    #[test]
    fn windows_conserve_and_count(seed in any::<u64>(), n in 1usize..200, delta_ms in 1u64..20_000) {
        let flows = flows_of(&records(seed, n));
        let refs: Vec<&Biflow> = flows.iter().collect();
        let delta = Delta::from_micros(delta_ms * 1000).unwrap();
        let s = rate_series_for(&refs, delta);
        let bytes: u64 = s.windows.iter().map(|w| w.up_bytes + w.down_bytes).sum();
        prop_assert_eq!(bytes, flows.iter().map(|f| f.payload_bytes()).sum::<u64>());
        let pkts: u64 = s.windows.iter().map(|w| w.up_pkts + w.down_pkts).sum();
        prop_assert_eq!(pkts, n as u64);
        let t0 = flows.iter().map(|f| f.first_ts_us).min().unwrap();
        let t1 = flows.iter().map(|f| f.last_ts_us).max().unwrap();
        let expect = ((t1 - t0) as f64 / delta.micros() as f64).ceil().max(1.0) as u64;
        prop_assert_eq!(s.window_count, expect);
        prop_assert_eq!(s.window_count, s.windows.len() as u64 + s.empty_excluded);
        prop_assert!(s.windows.windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn doubling_payload_doubles_rates(seed in any::<u64>(), n in 1usize..150) {
        let recs = records(seed, n);
        let doubled: Vec<PacketRecord> = recs
            .iter()
            .map(|r| PacketRecord::new(r.ts_us, r.ip_proto, r.src(), r.dst(), [&r.payload[..], &r.payload[..]].concat()))
            .collect();
        let (a, b) = (flows_of(&recs), flows_of(&doubled));
        let ra: Vec<&Biflow> = a.iter().collect();
        let rb: Vec<&Biflow> = b.iter().collect();
        let (sa, sb) = (rate_series_for(&ra, Delta::ONE_SECOND), rate_series_for(&rb, Delta::ONE_SECOND));
        prop_assert_eq!(sa.window_count, sb.window_count);
        for (x, y) in sa.windows.iter().zip(&sb.windows) {
            prop_assert_eq!((2 * x.up_bytes, 2 * x.down_bytes), (y.up_bytes, y.down_bytes));
            prop_assert_eq!((x.up_pkts, x.down_pkts), (y.up_pkts, y.down_pkts));
        }
    }

    #[test]
    fn summary_percentages_bounded(seed in any::<u64>(), n in 1usize..200) {
        for row in summarize(&flows_of(&records(seed, n))) {
            for p in [row.packets_down_pct, row.volume_down_pct, row.wire_down_pct] {
                prop_assert!((0.0..=100.0).contains(&p));
            }
        }
    }

    #[test]
    fn series_support_and_direction(seed in any::<u64>(), n in 1usize..300, len in 1usize..60) {
        let flows = flows_of(&records(seed, n));
        let vectors: Vec<_> = flows.iter().map(|f| extract_flow_vector(f, len)).collect();
        prop_assume!(vectors.iter().any(|v| !v.is_empty()));
        for v in &vectors {
            prop_assert!(v.len() <= len);
            prop_assert!(v.pl.iter().all(|&p| p > 0));
            prop_assert!(v.dir.iter().all(|&d| d == 1 || d == -1));
        }
        let dir = aggregate(&vectors, SeriesMetric::Dir).unwrap();
        prop_assert!(dir.mean_at_index.iter().all(|m| (-1.0..=1.0).contains(m)));
        prop_assert!(dir.support_at_index.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn series_aggregate_ignores_flow_order(seed in any::<u64>(), n in 1usize..300, shift in 0usize..50) {
        let flows = flows_of(&records(seed, n));
        let mut vectors: Vec<_> = flows.iter().map(|f| extract_flow_vector(f, 50)).collect();
        prop_assume!(vectors.iter().any(|v| !v.is_empty()));
        let a = aggregate(&vectors, SeriesMetric::Pl).unwrap();
        let k = shift % vectors.len();
        vectors.rotate_left(k);
        vectors.reverse();
        let b = aggregate(&vectors, SeriesMetric::Pl).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn series_filter_idempotent(seed in any::<u64>(), n in 1usize..200) {
        for f in flows_of(&records(seed, n)) {
            let v = extract_flow_vector(&f, 50);
            let mut g = f.clone();
            g.packets.retain(|p| p.packet.payload_len > 0);
            prop_assert_eq!(extract_flow_vector(&g, 50), v);
        }
    }

    #[test]
    fn binning_is_monotone(values in prop::collection::vec(0u32..1500, 1..300), k in 1usize..12, seed in any::<u64>()) {
        let distinct = values.iter().collect::<BTreeSet<_>>().len();
        if k > distinct {
            prop_assert!(fit_binning(&values, k, seed).is_err());
            return Ok(());
        }
        let b = fit_binning(&values, k, seed).unwrap();
        prop_assert!(b.centroids.windows(2).all(|w| w[0] < w[1]));
        let mut sorted = values.clone();
        sorted.sort_unstable();
        let bins: Vec<usize> = sorted.iter().map(|&v| b.assign(v)).collect();
        prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(bins.iter().all(|&i| i < b.k));
    }

    #[test]
    fn markov_rows_stochastic_and_deterministic(
        seqs in prop::collection::vec(prop::collection::vec((0u32..1500, any::<bool>()), 1..40), 1..12),
    ) {
        let seqs: Vec<Vec<(u32, Direction)>> = seqs
            .into_iter()
            .map(|s| s.into_iter().map(|(pl, up)| (pl, if up { Direction::Upstream } else { Direction::Downstream })).collect())
            .collect();
        let binning = PlBinning::from_centroids(vec![100.0, 600.0, 1300.0]).unwrap();
        let m = fit_sequences(&seqs, &binning).unwrap();
        for (i, row) in m.transition.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if m.counts[i].iter().sum::<u64>() > 0 {
                prop_assert!((s - 1.0).abs() <= 1e-9);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
        prop_assert!((m.initial.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(fit_sequences(&seqs, &binning).unwrap(), m);
    }

    #[test]
    fn client_hello_sni_round_trip(
        host in "[a-z0-9]{1,20}(\\.[a-z0-9-]{1,15}){0,3}",
        grease in any::<bool>(),
        cut_a in 1usize..200,
        cut_b in 1usize..200,
    ) {
        let (msg, off, len) = common::hand_client_hello(&host, grease);
        let (stream, pos) = common::hand_records(&msg, &[cut_a.min(cut_b), cut_a.max(cut_b)]);
        let info = parse_client_hello(&stream).unwrap();
        prop_assert_eq!(info.sni.as_deref(), Some(host.as_str()));
        let r = info.sni_range.unwrap();
        prop_assert_eq!(r.offset, pos[off]);
        prop_assert_eq!(r.end(), pos[off + len - 1] + 1);
        let (whole, _) = common::hand_records(&msg, &[]);
        let r = parse_client_hello(&whole).unwrap().sni_range.unwrap();
        prop_assert_eq!(&whole[r.offset..r.end()], &msg[off..off + len]);
    }

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let mut out = vec![0.0; logits.len()];
        softmax(&logits, &mut out);
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn split_is_stratified(labels in prop::collection::vec(0usize..5, 2..200), frac in 0.1f64..0.9, seed in any::<u64>()) {
        let (train, test) = stratified_split(&labels, 5, frac, seed);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..5 {
            let n = labels.iter().filter(|&&l| l == c).count();
            if n < 2 {
                continue;
            }
            let k = train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert!((k as f64 - frac * n as f64).abs() <= 1.0, "class {c}: {k} of {n}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sni_shares_sum_to_hundred(picks in prop::collection::vec(0usize..6, 1..40), udp in 0u64..4) {
        let names = ["a.example", "b.example", "c.example", "d.example", "e.example", "f.example"];
        let mut flows = Vec::new();
        for (i, &p) in picks.iter().enumerate() {
            let mut f = assemble_biflows(&fixtures::tls_handshake_trace(names[p]));
            f.iter_mut().for_each(|f| f.id = format!("t#{i}"));
            flows.extend(f);
        }
        for s in 0..udp {
            flows.extend(assemble_biflows(&fixtures::plain_udp_trace(s)));
        }
        let ds = dissect_all(&flows);
        let all = sni_share_table(&flows, &ds, None);
        let total: f64 = all.iter().map(|r| r.biflow_pct).sum();
        prop_assert!((total - 100.0).abs() <= 0.5);
        for col in [|r: &gentraffic::dissect::SniShareRow| r.packet_pct, |r: &gentraffic::dissect::SniShareRow| r.volume_pct] {
            let t: f64 = all.iter().map(col).sum();
            prop_assert!((t - 100.0).abs() <= 0.5 || t == 0.0);
        }
        let kept = sni_share_table(&flows, &ds, Some(1.0));
        prop_assert!(kept.iter().map(|r| r.biflow_pct).sum::<f64>() <= 100.0 + 1e-9);
        prop_assert!(kept.iter().all(|r| r.sni.is_some() && r.biflow_pct > 1.0));
    }
}
