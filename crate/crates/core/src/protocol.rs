//! Logical simulation of the token-passing execution of the distributed
//! engine.
//!
//! Every provider first broadcasts its native requests. A token then visits
//! the providers in round-robin order; the holder runs its primal block and
//! local multiplier updates, publishes its allocation block and hands the
//! token, together with the residual request matrix, to the next provider.
//! The last holder of a round also updates the shared request multipliers.
//! Payloads are counted in real numbers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{DistConfig, DistSolution, Engine};
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::report::SolverKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Broadcast,
    AllocationUpdate,
    MultiplierUpdate,
    Handoff,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolEvent {
    /// Algorithm round; broadcasts belong to round 0 together with the first
    /// round of updates.
    pub round: usize,
    pub kind: EventKind,
    pub sender: usize,
    /// `None` addresses every provider.
    pub receiver: Option<usize>,
    pub payload_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStats {
    pub broadcast: usize,
    pub allocation_update: usize,
    pub multiplier_update: usize,
    pub handoff: usize,
    pub converged: usize,
    pub total_events: usize,
    pub total_payload: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub events: Vec<ProtocolEvent>,
    pub stats: MessageStats,
    /// Rounds executed.
    pub rounds: usize,
    pub converged: bool,
}

/// Counts events and payload per kind.
pub fn message_stats(events: &[ProtocolEvent]) -> MessageStats {
    let mut s = MessageStats::default();
    for e in events {
        match e.kind {
            EventKind::Broadcast => s.broadcast += 1,
            EventKind::AllocationUpdate => s.allocation_update += 1,
            EventKind::MultiplierUpdate => s.multiplier_update += 1,
            EventKind::Handoff => s.handoff += 1,
            EventKind::Converged => s.converged += 1,
        }
        s.total_events += 1;
        s.total_payload += e.payload_size;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub solution: DistSolution,
    pub trace: ProtocolTrace,
}

/// Runs the engine under the token-passing protocol.
///
/// The engine calls are the same, in the same order, as in
/// [`crate::dist::solve_distributed`], so the allocations agree exactly.
pub fn run_protocol(instance: &Instance, d0: &[f64], config: &DistConfig) -> Result<ProtocolRun> {
    let mut engine = Engine::new(instance, d0, config)?;
    let order = engine.schedule().to_vec();
    let np = instance.num_providers();
    let block = instance.num_apps() * instance.num_resources();
    let nk = instance.num_resources();

    let mut events = Vec::new();
    for n in 0..np {
        events.push(ProtocolEvent {
            round: 0,
            kind: EventKind::Broadcast,
            sender: n,
            receiver: None,
            payload_size: instance.native_apps(n).len() * nk,
        });
    }

    let mut objective = Vec::new();
    let mut rounds = Vec::new();
    let mut converged = false;
    for round in 0..config.max_rounds {
        for (i, &n) in order.iter().enumerate() {
            engine.step_provider(n);
            events.push(ProtocolEvent {
                round,
                kind: EventKind::AllocationUpdate,
                sender: n,
                receiver: None,
                payload_size: block,
            });
            events.push(ProtocolEvent {
                round,
                kind: EventKind::Handoff,
                sender: n,
                receiver: Some(order[(i + 1) % np]),
                payload_size: block,
            });
        }
        let last = order[np - 1];
        let rec = engine.finish_round();
        events.push(ProtocolEvent {
            round,
            kind: EventKind::MultiplierUpdate,
            sender: last,
            receiver: None,
            payload_size: block,
        });
        if let Some(o) = rec.objective {
            objective.push(o);
        }
        let done = rec.kkt_residual < config.kkt_tol;
        if config.record_rounds {
            rounds.push(rec);
        }
        if done {
            events.push(ProtocolEvent {
                round,
                kind: EventKind::Converged,
                sender: last,
                receiver: None,
                payload_size: 0,
            });
            converged = true;
            break;
        }
    }

    let trace = ProtocolTrace {
        stats: message_stats(&events),
        events,
        rounds: engine.state.round,
        converged,
    };
    let report = engine.report(SolverKind::Protocol, objective, converged);
    if converged {
        Ok(ProtocolRun {
            solution: DistSolution {
                report,
                state: engine.state,
                schedule: order,
                rounds,
            },
            trace,
        })
    } else {
        Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.final_residual,
            best: Box::new(report),
            state: Some(Box::new(engine.state)),
            trace: Some(Box::new(trace)),
        })
    }
}

/// Writes one event per line.
pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &ProtocolTrace) -> Result<()> {
    for e in &trace.events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses the output of [`write_trace_jsonl`].
pub fn read_trace_jsonl(text: &str) -> Result<Vec<ProtocolEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
