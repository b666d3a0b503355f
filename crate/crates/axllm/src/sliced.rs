//! P-way sliced lane: the weight, result-cache, and output buffers are split
//! into slices so up to P weights are fetched and up to P results retired per
//! cycle, with credit-based flow control on every queue.
//!
//! Structure per lane: P weight-buffer slices fetch in column-interleaved
//! order and route requests by weight magnitude to the owning RC slice. Each
//! RC slice round-robins over its P source queues, serving one request per
//! cycle: hits go to the source's output slice, first occurrences forward to
//! the shared multiplier's feed queue (one per RC slice). A repeat of an
//! in-flight value waits at its queue head rather than issuing a duplicate
//! multiply. Every push is credit-gated; producers hold instead of
//! overflowing. With one slice the cycle behavior reduces exactly to the
//! non-sliced lane.

use crate::lane::LaneTimingConfig;
use crate::quantizer::rc_index;
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

/// How weight magnitudes map onto RC slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RcSliceMapping {
    /// Slice k owns the contiguous magnitude range [k*128/n, (k+1)*128/n).
    /// Numerically close values collide on the same slice.
    Contiguous,
    /// Slice = magnitude mod n; spreads close values apart.
    Modulo,
}

/// Slicing geometry of one lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SliceConfig {
    /// P: weight/output buffer slices, also queues per RC slice.
    pub num_slices: usize,
    /// Entries per weight-buffer slice; a row segment must fit P slices.
    pub slice_size: usize,
    /// S: depth of every credit-managed queue.
    pub queue_depth: usize,
    /// RC partitions; must divide 128 under the contiguous mapping.
    pub rc_slices: usize,
    pub rc_mapping: RcSliceMapping,
}

impl SliceConfig {
    pub fn lane_buffer_entries(&self) -> usize {
        self.num_slices * self.slice_size
    }

    pub fn validate(&self) -> Result<(), SlicedLaneError> {
        if self.num_slices == 0 || self.slice_size == 0 || self.queue_depth == 0 {
            return Err(SlicedLaneError::BadConfig(
                "slice counts and queue depth must be positive",
            ));
        }
        if self.rc_slices == 0 || self.rc_slices > 128 {
            return Err(SlicedLaneError::BadConfig("rc_slices must be in 1..=128"));
        }
        if self.rc_mapping == RcSliceMapping::Contiguous && 128 % self.rc_slices != 0 {
            return Err(SlicedLaneError::BadConfig(
                "contiguous mapping needs rc_slices to divide 128",
            ));
        }
        Ok(())
    }
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            num_slices: 4,
            slice_size: 64,
            queue_depth: 4,
            rc_slices: 4,
            rc_mapping: RcSliceMapping::Contiguous,
        }
    }
}

/// RC slice owning a magnitude.
pub fn rc_slice_of(index: u8, cfg: &SliceConfig) -> usize {
    match cfg.rc_mapping {
        RcSliceMapping::Contiguous => index as usize / (128 / cfg.rc_slices),
        RcSliceMapping::Modulo => index as usize % cfg.rc_slices,
    }
}

/// Cycle-level outcome of one sliced-lane run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SlicedLaneTrace {
    pub total_cycles: u64,
    pub mults_issued: u64,
    pub reuses_issued: u64,
    /// Producer-cycles a fetch was held by a full request queue.
    pub credit_stall_cycles: u64,
    /// Slice-cycles lost to a pending value blocking every eligible head.
    pub hazard_wait_cycles: u64,
    /// Requests that wanted an RC slice another request wanted the same cycle.
    pub rc_collision_events: u64,
    /// All fetch requests (collision-rate denominator).
    pub fetch_requests: u64,
    pub rc_queue_peak: usize,
    pub feed_queue_peak: usize,
    pub out_queue_peak: usize,
    /// Per RC slice, cycle counts by total queued requests (0..=P*S).
    pub rc_occupancy_hist: Vec<Vec<u64>>,
}

impl SlicedLaneTrace {
    /// Same-cycle contention for one RC slice, 1.0 when every request
    /// collides every cycle.
    pub fn collision_rate(&self) -> f64 {
        if self.fetch_requests == 0 {
            0.0
        } else {
            self.rc_collision_events as f64 / self.fetch_requests as f64
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SlicedLaneError {
    #[error("bad slice config: {0}")]
    BadConfig(&'static str),
    #[error("row of {len} exceeds the {cap}-entry lane buffer")]
    SegmentTooLong { len: usize, cap: usize },
    #[error("queue exceeded its credit at cycle {cycle}")]
    CreditViolation { cycle: u64 },
    #[error("RC read and write hit entry {slot} in the same cycle {cycle}")]
    DualPortViolation { slot: u8, cycle: u64 },
}

/// Work-conserving round-robin pointer: scans all members starting after the
/// previous grant, so a persistently ready member is served within one full
/// rotation.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next: usize,
}

impl RoundRobin {
    /// Picks the first of `n` members accepted by `ready`, advancing the
    /// pointer past the grant.
    pub fn pick(&mut self, n: usize, mut ready: impl FnMut(usize) -> bool) -> Option<usize> {
        for k in 0..n {
            let i = (self.next + k) % n;
            if ready(i) {
                self.next = (i + 1) % n;
                return Some(i);
            }
        }
        None
    }
}

#[derive(Clone, Copy, PartialEq)]
enum SlotState {
    Invalid,
    Pending,
    Valid(u64),
}

#[derive(Clone, Copy)]
struct Request {
    slot: u8,
    src: usize,
}

struct CreditQueue<T> {
    q: VecDeque<T>,
    depth: usize,
}

impl<T> CreditQueue<T> {
    fn new(depth: usize) -> Self {
        Self {
            q: VecDeque::new(),
            depth,
        }
    }

    fn has_credit(&self) -> bool {
        self.q.len() < self.depth
    }

    fn push(&mut self, v: T, cycle: u64) -> Result<(), SlicedLaneError> {
        if !self.has_credit() {
            return Err(SlicedLaneError::CreditViolation { cycle });
        }
        self.q.push_back(v);
        Ok(())
    }
}

/// Runs one row segment through the sliced lane.
pub fn simulate_sliced_lane(
    w_row: &[i8],
    slice: &SliceConfig,
    timing: &LaneTimingConfig,
) -> Result<SlicedLaneTrace, SlicedLaneError> {
    slice.validate()?;
    timing
        .validate()
        .map_err(|_| SlicedLaneError::BadConfig("timing parameters must be positive"))?;
    let n = w_row.len();
    if n > slice.lane_buffer_entries() {
        return Err(SlicedLaneError::SegmentTooLong {
            len: n,
            cap: slice.lane_buffer_entries(),
        });
    }
    let mut trace = SlicedLaneTrace::default();
    let p = slice.num_slices;
    let r_n = slice.rc_slices;
    let s_depth = slice.queue_depth;
    trace.rc_occupancy_hist = vec![vec![0; p * s_depth + 1]; r_n];
    if n == 0 {
        return Ok(trace);
    }

    // column interleave: W_buff slice s streams columns j with j % P == s
    let mut streams: Vec<VecDeque<u8>> = vec![VecDeque::new(); p];
    for (j, &w) in w_row.iter().enumerate() {
        let mag = rc_index(w).expect("quantized weights exclude -128").index;
        streams[j % p].push_back(mag);
    }

    let mut rc = [SlotState::Invalid; 128];
    // rc_q[r][s]: requests from W slice s for RC slice r
    let mut rc_q: Vec<Vec<CreditQueue<Request>>> = (0..r_n)
        .map(|_| (0..p).map(|_| CreditQueue::new(s_depth)).collect())
        .collect();
    let mut rc_rr: Vec<RoundRobin> = vec![RoundRobin::default(); r_n];
    let mut rc_port_free = vec![0u64; r_n];

    let mut feed: Vec<CreditQueue<Request>> = (0..r_n).map(|_| CreditQueue::new(s_depth)).collect();
    let mut feed_rr = RoundRobin::default();
    let mut next_issue = 0u64;
    let mut in_flight: VecDeque<(Request, u64)> = VecDeque::new();

    // out_q[o][src]: src 0..r_n are the RC slices, src r_n is the multiplier
    let mut out_q: Vec<Vec<CreditQueue<u64>>> = (0..p)
        .map(|_| (0..=r_n).map(|_| CreditQueue::new(s_depth)).collect())
        .collect();
    let mut out_rr: Vec<RoundRobin> = vec![RoundRobin::default(); p];

    let mut retired = 0usize;
    let mut cycle = 0u64;
    let budget = 64
        + (n as u64)
            * (timing.mult_initiation_interval + timing.mult_latency + timing.buffer_access_latency + 8);

    while retired < n {
        debug_assert!(cycle <= budget, "sliced lane failed to drain");
        let mut written_this_cycle: Option<u8> = None;

        // 1) multiply completion: RC write plus writeback, held if the out
        //    queue has no credit
        if let Some(&(req, done)) = in_flight.front() {
            if done <= cycle && out_q[req.src][r_n].has_credit() {
                in_flight.pop_front();
                rc[req.slot as usize] = SlotState::Valid(cycle);
                written_this_cycle = Some(req.slot);
                out_q[req.src][r_n].push(cycle, cycle)?;
            }
        }

        // 2) RC serve: one request per slice, round-robin over source queues,
        //    skipping heads that are pending or out of downstream credit
        for r in 0..r_n {
            if cycle < rc_port_free[r] {
                continue;
            }
            let mut hazard_blocked = false;
            let grant = rc_rr[r].pick(p, |s| {
                let Some(req) = rc_q[r][s].q.front() else {
                    return false;
                };
                match rc[req.slot as usize] {
                    SlotState::Valid(wc) if wc < cycle => out_q[req.src][r].has_credit(),
                    SlotState::Invalid => feed[r].has_credit(),
                    _ => {
                        // pending (or written this very cycle): not readable
                        hazard_blocked = true;
                        false
                    }
                }
            });
            match grant {
                Some(s) => {
                    let req = rc_q[r][s].q.pop_front().unwrap();
                    match rc[req.slot as usize] {
                        SlotState::Valid(wc) => {
                            debug_assert!(wc < cycle);
                            if written_this_cycle == Some(req.slot) {
                                return Err(SlicedLaneError::DualPortViolation {
                                    slot: req.slot,
                                    cycle,
                                });
                            }
                            out_q[req.src][r].push(cycle + timing.buffer_access_latency, cycle)?;
                            rc_port_free[r] = cycle + timing.buffer_access_latency;
                            trace.reuses_issued += 1;
                        }
                        SlotState::Invalid => {
                            rc[req.slot as usize] = SlotState::Pending;
                            feed[r].push(req, cycle)?;
                            rc_port_free[r] = cycle + 1;
                            trace.mults_issued += 1;
                        }
                        SlotState::Pending => unreachable!("pick filtered pending heads"),
                    }
                }
                None => {
                    if hazard_blocked {
                        trace.hazard_wait_cycles += 1;
                    }
                }
            }
        }

        // 3) multiply issue, round-robin over the per-RC-slice feed queues
        if cycle >= next_issue {
            if let Some(r) = feed_rr.pick(r_n, |r| !feed[r].q.is_empty()) {
                let req = feed[r].q.pop_front().unwrap();
                in_flight.push_back((req, cycle + timing.mult_latency));
                next_issue = cycle + timing.mult_initiation_interval;
            }
        }

        // 4) retire: one writeback per output slice per cycle
        for o in 0..p {
            let grant = out_rr[o].pick(r_n + 1, |src| {
                out_q[o][src].q.front().is_some_and(|&ready| ready <= cycle)
            });
            if let Some(src) = grant {
                out_q[o][src].q.pop_front();
                retired += 1;
            }
        }

        if retired == n {
            trace.total_cycles = cycle + 1;
            break;
        }

        // 5) fetch: each W slice routes its next weight if the target request
        //    queue has credit; same-cycle same-slice wants are collisions
        let mut wants = [0u64; 129];
        for s in 0..p {
            if let Some(&mag) = streams[s].front() {
                let r = rc_slice_of(mag, slice);
                wants[r] += 1;
                trace.fetch_requests += 1;
                if rc_q[r][s].has_credit() {
                    streams[s].pop_front();
                    rc_q[r][s].push(Request { slot: mag, src: s }, cycle)?;
                } else {
                    trace.credit_stall_cycles += 1;
                }
            }
        }
        for &w in wants[..r_n].iter() {
            if w >= 2 {
                trace.rc_collision_events += w;
            }
        }

        // bookkeeping: occupancy histograms and peaks
        for r in 0..r_n {
            let total: usize = rc_q[r].iter().map(|q| q.q.len()).sum();
            trace.rc_occupancy_hist[r][total.min(p * s_depth)] += 1;
            for q in &rc_q[r] {
                trace.rc_queue_peak = trace.rc_queue_peak.max(q.q.len());
            }
            trace.feed_queue_peak = trace.feed_queue_peak.max(feed[r].q.len());
        }
        for o in 0..p {
            for q in &out_q[o] {
                trace.out_queue_peak = trace.out_queue_peak.max(q.q.len());
            }
        }

        cycle += 1;
    }

    debug_assert_eq!(trace.mults_issued + trace.reuses_issued, n as u64);
    Ok(trace)
}
