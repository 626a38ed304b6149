use std::collections::BTreeMap;
use std::ops::Range;

use super::record::FlowRecord;
use crate::error::{Error, Result};

fn check_window(window_seconds: f64) -> Result<()> {
    if window_seconds > 0.0 && window_seconds.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "window length must be positive, got {window_seconds}"
        )))
    }
}

fn window_key(r: &FlowRecord, window_seconds: f64) -> i64 {
    (r.timestamp / window_seconds).floor() as i64
}

/// Groups records into half-open time windows `[k·w, (k+1)·w)`.
///
/// Windows come back in increasing `k`; empty windows are omitted and records
/// keep their input order inside a window.
pub fn window_flows(records: Vec<FlowRecord>, window_seconds: f64) -> Result<Vec<Vec<FlowRecord>>> {
    check_window(window_seconds)?;
    let mut groups: BTreeMap<i64, Vec<FlowRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(window_key(&r, window_seconds)).or_default().push(r);
    }
    Ok(groups.into_values().collect())
}

/// In-place form of [`window_flows`]: stably sorts `records` by window and
/// returns the index range of each window. Input that is already in time
/// order is left untouched, so large captures are windowed without a copy.
pub fn window_spans(records: &mut [FlowRecord], window_seconds: f64) -> Result<Vec<Range<usize>>> {
    check_window(window_seconds)?;
    let key = |r: &FlowRecord| window_key(r, window_seconds);
    if !records.is_sorted_by_key(key) {
        records.sort_by_key(key);
    }
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || key(&records[i]) != key(&records[start]) {
            spans.push(start..i);
            start = i;
        }
    }
    Ok(spans)
}

/// Splits records by arrival time: the earliest `fraction` of records (by
/// timestamp, ties by input order) go to the first half.
pub fn split_by_time(records: &[FlowRecord], fraction: f64) -> Result<(Vec<FlowRecord>, Vec<FlowRecord>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in [0, 1], got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].timestamp.total_cmp(&records[b].timestamp));
    let cut = (records.len() as f64 * fraction).round() as usize;
    let mut first: Vec<usize> = order[..cut].to_vec();
    let mut second: Vec<usize> = order[cut..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((
        first.into_iter().map(|i| records[i].clone()).collect(),
        second.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(ts: f64, id: u64) -> FlowRecord {
        FlowRecord {
            flow_id: id,
            src_ip: "a".into(),
            dst_ip: "b".into(),
            timestamp: ts,
            features: vec![],
            label: None,
        }
    }

    #[test]
    fn half_open_boundary() {
        let g = window_flows(vec![at(0.0, 0), at(29.9, 1), at(30.0, 2)], 30.0).unwrap();
        let ids: Vec<Vec<u64>> = g.iter().map(|w| w.iter().map(|r| r.flow_id).collect()).collect();
        assert_eq!(ids, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn equal_timestamps_single_group() {
        let g = window_flows((0..5).map(|i| at(12.0, i)).collect(), 30.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].len(), 5);
    }

    #[test]
    fn order_preserved_within_window() {
        let g = window_flows(vec![at(5.0, 0), at(1.0, 1), at(40.0, 2), at(3.0, 3)], 30.0).unwrap();
        assert_eq!(g[0].iter().map(|r| r.flow_id).collect::<Vec<_>>(), [0, 1, 3]);
    }

    #[test]
    fn rejects_non_positive_window() {
        assert!(window_flows(vec![], 0.0).is_err());
        assert!(window_flows(vec![], -1.0).is_err());
    }

    #[test]
    fn spans_match_grouping() {
        let ts = [41.0, 5.0, 95.0, 1.0, 40.0, 3.0, 62.0, 29.99, 30.0];
        let recs: Vec<FlowRecord> = ts.iter().enumerate().map(|(i, &t)| at(t, i as u64)).collect();
        let grouped = window_flows(recs.clone(), 30.0).unwrap();
        let mut sorted = recs;
        let spans = window_spans(&mut sorted, 30.0).unwrap();
        let via_spans: Vec<Vec<u64>> = spans.into_iter().map(|s| sorted[s].iter().map(|r| r.flow_id).collect()).collect();
        let via_groups: Vec<Vec<u64>> = grouped.iter().map(|w| w.iter().map(|r| r.flow_id).collect()).collect();
        assert_eq!(via_spans, via_groups);
        assert!(window_spans(&mut [], 30.0).unwrap().is_empty());
    }

    #[test]
    fn time_split() {
        let recs = vec![at(3.0, 0), at(1.0, 1), at(2.0, 2), at(0.0, 3)];
        let (a, b) = split_by_time(&recs, 0.5).unwrap();
        assert_eq!(a.iter().map(|r| r.flow_id).collect::<Vec<_>>(), [1, 3]);
        assert_eq!(b.iter().map(|r| r.flow_id).collect::<Vec<_>>(), [0, 2]);
    }
}
