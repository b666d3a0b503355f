//! Cycle model of one processing lane: in-order weight fetch into a request
//! queue in front of the result cache, a multiply pipeline for misses, a
//! one-cycle read path for hits, and credit-managed writeback queues drained
//! one result per cycle.
//!
//! Timing follows the dataflow of the functional model exactly: the first
//! occurrence of a magnitude is queued for the multiplier, repeats take the
//! buffer read path, and a repeat of a value still in flight is a
//! read-after-write hazard that blocks the cache port until the entry becomes
//! readable (strictly after its write cycle). Every queue admits work only
//! when it has credit, so no structure ever overflows; a full queue holds the
//! producer instead.

use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

/// Lane latencies and structural depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LaneTimingConfig {
    /// Cycles from multiply issue to result writeback.
    pub mult_latency: u64,
    /// Cycles between successive multiply issues (non-pipelined when equal to
    /// the latency).
    pub mult_initiation_interval: u64,
    /// Result-cache read latency on the reuse path.
    pub buffer_access_latency: u64,
    /// Depth of every credit-managed queue in the lane (request, multiplier
    /// feed, writeback).
    pub out_queue_depth: usize,
    /// Issue interval of the all-multiply baseline.
    pub baseline_initiation_interval: u64,
}

impl LaneTimingConfig {
    pub fn validate(&self) -> Result<(), LaneError> {
        if self.mult_latency == 0
            || self.mult_initiation_interval == 0
            || self.buffer_access_latency == 0
            || self.baseline_initiation_interval == 0
            || self.out_queue_depth == 0
        {
            return Err(LaneError::BadConfig);
        }
        Ok(())
    }
}

impl Default for LaneTimingConfig {
    fn default() -> Self {
        Self {
            mult_latency: 3,
            mult_initiation_interval: 3,
            buffer_access_latency: 1,
            out_queue_depth: 4,
            baseline_initiation_interval: 3,
        }
    }
}

/// What one lane run did, cycle-accurate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LaneTrace {
    /// Last retire cycle + 1 (0 for an empty row).
    pub total_cycles: u64,
    /// Cycles the cache port sat blocked on a read-after-write hazard.
    pub stall_cycles: u64,
    /// Distinct hazard occurrences (repeat of an in-flight value).
    pub hazard_events: u64,
    /// Results retired later than their earliest writeback cycle.
    pub writeback_conflicts: u64,
    pub mults_issued: u64,
    pub reuses_issued: u64,
    /// Highest occupancy any writeback queue reached.
    pub out_queue_peak: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LaneError {
    #[error("timing parameters must be positive")]
    BadConfig,
    #[error("writeback queue overflowed at cycle {cycle}")]
    OutQueueOverflow { cycle: u64 },
}

#[derive(Clone, Copy, PartialEq)]
enum SlotState {
    Invalid,
    /// First occurrence dispatched, product not yet written.
    Pending,
    /// Written at this cycle; readable strictly after it.
    Valid(u64),
}

/// Runs one weight row (or row tile) through the lane. Timing depends only on
/// the magnitude stream, not on the input element's value.
///
/// Per cycle: (1) the oldest finished multiply delivers, writing the cache and
/// entering the multiply writeback queue, held while that queue is full;
/// (2) the cache port serves the request-queue head: a readable hit moves to
/// the hit writeback queue, a miss moves to the multiplier feed, a pending
/// repeat blocks the port and counts a stall cycle; (3) the multiplier issues
/// from the feed at its initiation interval; (4) one result retires, the two
/// writeback queues taken round-robin; (5) fetch routes the next weight into
/// the request queue if it has credit.
pub fn simulate_lane(w_row: &[i8], cfg: &LaneTimingConfig) -> Result<LaneTrace, LaneError> {
    cfg.validate()?;
    let n = w_row.len() as u64;
    let mut trace = LaneTrace::default();
    if n == 0 {
        return Ok(trace);
    }

    let depth = cfg.out_queue_depth;
    let mut rc = [SlotState::Invalid; 128];
    let mut fetch_idx = 0usize;
    let mut seq = 0u64;

    // (magnitude, fetch order), fetch order keys hazard-event dedup
    let mut rc_q: VecDeque<(u8, u64)> = VecDeque::new();
    let mut rc_port_free = 0u64;
    let mut last_hazard_seq: Option<u64> = None;

    let mut feed: VecDeque<u8> = VecDeque::new();
    let mut in_flight: VecDeque<(u8, u64)> = VecDeque::new();
    let mut next_issue = 0u64;

    // ready cycles; hits and multiply results retire through one port
    let mut out_hits: VecDeque<u64> = VecDeque::new();
    let mut out_mults: VecDeque<u64> = VecDeque::new();
    let mut out_rr = 0usize;

    let mut retired = 0u64;
    let mut cycle = 0u64;

    // safety bound: every weight costs at most II + latency + read + drain cycles
    let budget = 64
        + n * (cfg.mult_initiation_interval
            + cfg.mult_latency
            + cfg.buffer_access_latency
            + 8);

    while retired < n {
        debug_assert!(cycle <= budget, "lane failed to drain");

        // 1) multiply delivery: cache write plus writeback entry, held while
        //    the writeback queue is full
        if let Some(&(slot, done)) = in_flight.front() {
            if done <= cycle && out_mults.len() < depth {
                in_flight.pop_front();
                rc[slot as usize] = SlotState::Valid(cycle);
                out_mults.push_back(cycle);
            }
        }

        // 2) cache port serves the request-queue head
        if cycle >= rc_port_free {
            if let Some(&(slot, s)) = rc_q.front() {
                match rc[slot as usize] {
                    SlotState::Valid(wc) if wc < cycle => {
                        if out_hits.len() < depth {
                            rc_q.pop_front();
                            out_hits.push_back(cycle + cfg.buffer_access_latency);
                            rc_port_free = cycle + cfg.buffer_access_latency;
                            trace.reuses_issued += 1;
                        }
                    }
                    SlotState::Invalid => {
                        if feed.len() < depth {
                            rc_q.pop_front();
                            rc[slot as usize] = SlotState::Pending;
                            feed.push_back(slot);
                            rc_port_free = cycle + 1;
                            trace.mults_issued += 1;
                        }
                    }
                    // pending, or written this very cycle: not readable
                    _ => {
                        trace.stall_cycles += 1;
                        if last_hazard_seq != Some(s) {
                            trace.hazard_events += 1;
                            last_hazard_seq = Some(s);
                        }
                    }
                }
            }
        }

        // 3) multiply issue
        if cycle >= next_issue {
            if let Some(slot) = feed.pop_front() {
                in_flight.push_back((slot, cycle + cfg.mult_latency));
                next_issue = cycle + cfg.mult_initiation_interval;
            }
        }

        // 4) retire: one writeback per cycle, queues taken round-robin
        let queues: [&mut VecDeque<u64>; 2] = [&mut out_hits, &mut out_mults];
        for k in 0..2 {
            let i = (out_rr + k) % 2;
            if queues[i].front().is_some_and(|&ready| ready <= cycle) {
                let ready = queues[i].pop_front().expect("head just checked");
                if cycle > ready {
                    trace.writeback_conflicts += 1;
                }
                retired += 1;
                out_rr = (i + 1) % 2;
                break;
            }
        }

        if retired == n {
            trace.total_cycles = cycle + 1;
            break;
        }

        // 5) fetch into the request queue
        if fetch_idx < w_row.len() && rc_q.len() < depth {
            let mag = crate::quantizer::rc_index(w_row[fetch_idx])
                .expect("quantized weights exclude -128")
                .index;
            rc_q.push_back((mag, seq));
            fetch_idx += 1;
            seq += 1;
        }

        trace.out_queue_peak = trace
            .out_queue_peak
            .max(out_hits.len())
            .max(out_mults.len());
        cycle += 1;
    }

    debug_assert_eq!(trace.mults_issued + trace.reuses_issued, n);
    Ok(trace)
}

/// Baseline lane: same fetch and writeback structure, every weight takes the
/// multiply path at `baseline_initiation_interval`, spread over `multipliers`
/// units each with its own issue gate.
pub fn simulate_baseline_lane(
    row_len: usize,
    multipliers: usize,
    cfg: &LaneTimingConfig,
) -> Result<LaneTrace, LaneError> {
    cfg.validate()?;
    if multipliers == 0 {
        return Err(LaneError::BadConfig);
    }
    let n = row_len as u64;
    let mut trace = LaneTrace::default();
    if n == 0 {
        return Ok(trace);
    }

    let depth = cfg.out_queue_depth;
    let mut fetched = 0u64;
    let mut feed: VecDeque<()> = VecDeque::new();
    let feed_depth = depth.max(multipliers);
    let mut next_issue = vec![0u64; multipliers];
    let mut in_flight: VecDeque<u64> = VecDeque::new();
    let mut out: VecDeque<u64> = VecDeque::new();
    let mut retired = 0u64;
    let mut cycle = 0u64;

    while retired < n {
        // deliveries, oldest first, held while the writeback queue is full
        while in_flight
            .front()
            .is_some_and(|&done| done <= cycle && out.len() < depth)
        {
            in_flight.pop_front();
            out.push_back(cycle);
        }

        // issues
        for gate in next_issue.iter_mut() {
            if cycle >= *gate && feed.pop_front().is_some() {
                in_flight.push_back(cycle + cfg.mult_latency);
                *gate = cycle + cfg.baseline_initiation_interval;
                trace.mults_issued += 1;
            }
        }

        // fetch
        if fetched < n && feed.len() < feed_depth {
            feed.push_back(());
            fetched += 1;
        }

        // retire
        if out.front().is_some_and(|&ready| ready <= cycle) {
            let ready = out.pop_front().expect("head just checked");
            if cycle > ready {
                trace.writeback_conflicts += 1;
            }
            retired += 1;
        }

        if retired == n {
            trace.total_cycles = cycle + 1;
            break;
        }
        trace.out_queue_peak = trace.out_queue_peak.max(out.len());
        cycle += 1;
    }

    // in_flight completes out of order only with unequal latencies; here the
    // single latency keeps it FIFO
    debug_assert!(in_flight.is_empty());
    Ok(trace)
}

/// Fraction of cycles lost to hazard stalls.
pub fn stall_fraction(trace: &LaneTrace) -> f64 {
    if trace.total_cycles == 0 {
        0.0
    } else {
        trace.stall_cycles as f64 / trace.total_cycles as f64
    }
}
